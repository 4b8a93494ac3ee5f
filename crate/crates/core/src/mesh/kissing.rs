//! Graded meshes of kissing disks, truncated at |x₁| = δ.
//!
//! Boundary arcs are sampled on the exact circles with spacing tied to the local
//! thickness H(x₁); annulus and core are triangulated separately by constrained
//! Delaunay refinement and glued along the shared Γ₀ vertices.

use std::collections::HashMap;
use std::f64::consts::PI;

use spade::{AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};

use super::{BoundaryEdge, GradingSpec, Mesh, Triangle};
use crate::error::{Error, Result};
use crate::geometry::{circle_height, BoundaryTag, CuspGeometry, Point, RegionTag};

/// Boundary spacing is at most H(x₁) / `ACROSS_THICKNESS`.
pub const ACROSS_THICKNESS: f64 = 5.0;
const ANGLE_LIMIT_DEG: f64 = 25.0;

type Cdt = ConstrainedDelaunayTriangulation<Point2<f64>>;

/// Dyadic band of x₁ counted from R0/2 toward the cusp (band 0 is x₁ ≥ R0/2).
pub fn band_index(geom: &CuspGeometry, x1: f64) -> i32 {
    let x0 = 0.5 * geom.r0;
    let x = x1.abs();
    if x >= x0 {
        0
    } else {
        (x0 / x).log2().ceil() as i32
    }
}

struct Sizing<'a> {
    geom: &'a CuspGeometry,
    h: f64,
    ratio: f64,
}

impl Sizing<'_> {
    fn at(&self, p: Point) -> f64 {
        let g = self.geom;
        let x = p[0].abs();
        if p[1] >= g.r0 || x >= g.r0 {
            return self.h;
        }
        let xe = x.max(g.delta_trunc);
        let thick = circle_height(g.r0, xe) - circle_height(g.r1, xe);
        let mut s = self.h.min(self.h * self.ratio.powi(band_index(g, xe))).min(thick / ACROSS_THICKNESS);
        if x < g.delta_trunc {
            s = s.max(0.5 * (g.delta_trunc - x)).min(self.h);
        }
        s
    }
}

/// Angles in [a, b] on a circle, spaced by the sizing function, endpoints included.
fn sample_arc(center: Point, r: f64, a: f64, b: f64, size: &Sizing) -> Vec<f64> {
    let at = |phi: f64| [center[0] + r * phi.cos(), center[1] + r * phi.sin()];
    let mut phis = vec![a];
    let mut cum = vec![0.0];
    let mut phi = a;
    while phi < b {
        let s = size.at(at(phi));
        let step = (s / (8.0 * r)).min(b - phi);
        let mid = size.at(at(phi + 0.5 * step));
        phi += step;
        phis.push(phi);
        cum.push(cum.last().unwrap() + r * step / mid);
    }
    *phis.last_mut().unwrap() = b;
    let total = *cum.last().unwrap();
    let n = total.ceil().max(1.0) as usize;
    let mut out = vec![a];
    let mut k = 0;
    for j in 1..n {
        let target = total * j as f64 / n as f64;
        while cum[k + 1] < target {
            k += 1;
        }
        let w = (target - cum[k]) / (cum[k + 1] - cum[k]);
        out.push(phis[k] + w * (phis[k + 1] - phis[k]));
    }
    out.push(b);
    out
}

fn circle_point(center: Point, r: f64, phi: f64) -> Point {
    [center[0] + r * phi.cos(), center[1] + r * phi.sin()]
}

struct Pslg {
    points: Vec<Point>,
    index: HashMap<(u64, u64), usize>,
    edges: Vec<[usize; 2]>,
}

impl Pslg {
    fn new() -> Self {
        Pslg { points: Vec::new(), index: HashMap::new(), edges: Vec::new() }
    }

    fn id(&mut self, p: Point) -> usize {
        let key = (p[0].to_bits(), p[1].to_bits());
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        self.points.push(p);
        self.index.insert(key, self.points.len() - 1);
        self.points.len() - 1
    }

    fn chain(&mut self, pts: &[Point]) -> Vec<usize> {
        let ids: Vec<usize> = pts.iter().map(|&p| self.id(p)).collect();
        for w in ids.windows(2) {
            self.edges.push([w[0], w[1]]);
        }
        ids
    }

    /// Refined constrained triangulation of the faces enclosed by the constraints.
    fn triangulate(&self, h: f64) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
        let verts: Vec<Point2<f64>> = self.points.iter().map(|p| Point2::new(p[0], p[1])).collect();
        let mut cdt = Cdt::bulk_load_cdt(verts, self.edges.clone())
            .map_err(|e| Error::MeshFailure(format!("triangulation input rejected: {e:?}")))?;
        let params = RefinementParameters::<f64>::new()
            .exclude_outer_faces(true)
            .keep_constraint_edges()
            .with_angle_limit(AngleLimit::from_deg(ANGLE_LIMIT_DEG))
            .with_max_allowed_area(0.25 * 3f64.sqrt() * h * h)
            .with_max_additional_vertices(20 * self.points.len() + 1_000_000);
        let result = cdt.refine(params);
        if !result.refinement_complete {
            return Err(Error::MeshFailure("Delaunay refinement ran out of vertices".into()));
        }
        let excluded: std::collections::HashSet<usize> = result.excluded_faces.iter().map(|f| f.index()).collect();
        let points = cdt.vertices().map(|v| [v.position().x, v.position().y]).collect();
        let mut tris = Vec::new();
        for face in cdt.inner_faces() {
            if excluded.contains(&face.fix().index()) {
                continue;
            }
            let v = face.vertices().map(|v| v.fix().index());
            tris.push(v);
        }
        Ok((points, tris))
    }
}

/// Mesh of the truncated kissing domain in the cusp chart (𝒫 at the origin).
pub fn build_kissing_mesh(geom: &CuspGeometry, h: f64, grading: &GradingSpec) -> Result<Mesh> {
    if !(grading.delta_trunc > 0.0) {
        return Err(Error::MeshFailure("kissing meshes need delta_trunc > 0".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("mesh size h must be positive, got {h}")));
    }
    let geom = CuspGeometry::new(geom.r0, geom.r1, grading.delta_trunc)?;
    let size = Sizing { geom: &geom, h, ratio: grading.ratio };
    let (r0, r1, delta) = (geom.r0, geom.r1, geom.delta_trunc);
    let c0 = [0.0, r0];
    let c1 = [0.0, r1];
    let a0 = (delta / r0).asin();
    let a1 = (delta / r1).asin();

    let outer: Vec<Point> = sample_arc(c1, r1, -0.5 * PI + a1, 1.5 * PI - a1, &size)
        .into_iter()
        .map(|p| circle_point(c1, r1, p))
        .collect();
    let long: Vec<Point> = sample_arc(c0, r0, -0.5 * PI + a0, 1.5 * PI - a0, &size)
        .into_iter()
        .map(|p| circle_point(c0, r0, p))
        .collect();
    let bottom: Vec<Point> = sample_arc(c0, r0, 1.5 * PI - a0, 1.5 * PI + a0, &size)
        .into_iter()
        .map(|p| circle_point(c0, r0, p))
        .collect();
    let cut = |lo: Point, hi: Point| -> Vec<Point> {
        let n = ACROSS_THICKNESS as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                if k == 0 {
                    lo
                } else if k == n {
                    hi
                } else {
                    [lo[0] + t * (hi[0] - lo[0]), lo[1] + t * (hi[1] - lo[1])]
                }
            })
            .collect()
    };
    let right_cut = cut(outer[0], long[0]);
    let left_cut = cut(*outer.last().unwrap(), *long.last().unwrap());

    let mut ann = Pslg::new();
    ann.chain(&long);
    ann.chain(&outer);
    ann.chain(&right_cut);
    ann.chain(&left_cut);
    let (ann_pts, ann_tris) = ann.triangulate(h)?;

    // the bottom arc ends where the long arc starts; close the loop on the exact point
    let mut core_loop = long.clone();
    core_loop.extend_from_slice(&bottom[1..bottom.len() - 1]);
    let mut closed = core_loop.clone();
    closed.push(core_loop[0]);
    let mut core = Pslg::new();
    core.chain(&closed);
    let (core_pts, core_tris) = core.triangulate(h)?;

    // glue: vertices keyed by exact coordinates, numbered in first-use order
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut vertices: Vec<Point> = Vec::new();
    let mut id = |p: Point, vertices: &mut Vec<Point>| -> usize {
        *index.entry((p[0].to_bits(), p[1].to_bits())).or_insert_with(|| {
            vertices.push(p);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(ann_tris.len() + core_tris.len());
    for (pts, tris, region) in [(&ann_pts, &ann_tris, RegionTag::Annulus), (&core_pts, &core_tris, RegionTag::Core)] {
        for t in tris {
            let v = t.map(|i| id(pts[i], &mut vertices));
            let area = super::tri_area(vertices[v[0]], vertices[v[1]], vertices[v[2]]);
            let v = if area > 0.0 { v } else { [v[0], v[2], v[1]] };
            triangles.push(Triangle { v, region });
        }
    }
    let key = |p: Point| (p[0].to_bits(), p[1].to_bits());
    let mut boundary_edges = Vec::new();
    for (pts, tag) in [
        (&outer, BoundaryTag::Gamma1),
        (&closed, BoundaryTag::Gamma0),
        (&right_cut, BoundaryTag::Cut),
        (&left_cut, BoundaryTag::Cut),
    ] {
        for w in pts.windows(2) {
            match (index.get(&key(w[0])), index.get(&key(w[1]))) {
                (Some(&a), Some(&b)) => boundary_edges.push(BoundaryEdge { v: [a, b], tag }),
                _ => {
                    return Err(Error::MeshFailure(format!("{tag:?} vertex near {:?} missing from triangulation", w[0])))
                }
            }
        }
    }
    Ok(Mesh::from_parts(vertices, triangles, boundary_edges))
}
