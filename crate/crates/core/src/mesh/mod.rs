//! Tagged triangular meshes: generation, validation, sub-meshes, point location and text I/O.

mod kissing;
mod rings;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, CuspGeometry, Domain, DomainKind, Point, RegionTag};

pub use kissing::{band_index, build_kissing_mesh, ACROSS_THICKNESS};

/// Smallest angle accepted by the generators, in degrees.
pub const MIN_ANGLE_DEG: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triangle {
    pub v: [usize; 3],
    pub region: RegionTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub v: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<Triangle>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Longest edge.
    pub h_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradingSpec {
    pub delta_trunc: f64,
    pub ratio: f64,
}

impl GradingSpec {
    pub fn new(delta_trunc: f64, ratio: f64) -> Result<Self> {
        if !(delta_trunc >= 0.0) || !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "grading needs delta_trunc >= 0 and ratio in (0,1), got {delta_trunc}, {ratio}"
            )));
        }
        Ok(GradingSpec { delta_trunc, ratio })
    }
}

/// A region of a parent mesh with the map back to parent vertex indices.
#[derive(Clone, Debug)]
pub struct RegionMesh {
    pub mesh: Mesh,
    pub parent: Vec<usize>,
}

impl RegionMesh {
    /// Scatter sub-mesh vertex values into a parent-sized vector.
    pub fn scatter(&self, values: &[f64], parent_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; parent_len];
        for (i, &p) in self.parent.iter().enumerate() {
            out[p] = values[i];
        }
        out
    }

    /// Gather parent vertex values onto the sub-mesh.
    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        self.parent.iter().map(|&p| values[p]).collect()
    }
}

pub fn generate_mesh(domain: &Domain, h: f64, grading: Option<&GradingSpec>) -> Result<Mesh> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("mesh size h must be positive, got {h}")));
    }
    let mesh = match domain.spec.kind {
        DomainKind::Concentric | DomainKind::Offset => rings::ring_mesh(domain, h)?,
        DomainKind::Kissing => {
            let g = grading.ok_or_else(|| {
                Error::MeshFailure("kissing domains need a grading specification".into())
            })?;
            let geom = CuspGeometry::new(domain.spec.core.radius, domain.spec.outer.radius, g.delta_trunc)?;
            let mut m = build_kissing_mesh(&geom, h, g)?;
            let p = domain.tangency.expect("kissing domain has a tangency point");
            let c = domain.spec.core.center;
            let d = (c[0] - p[0]).hypot(c[1] - p[1]);
            let u = [(c[0] - p[0]) / d, (c[1] - p[1]) / d];
            for x in m.vertices.iter_mut() {
                let (a, b) = (x[0], x[1]);
                *x = [p[0] + u[1] * a + u[0] * b, p[1] - u[0] * a + u[1] * b];
            }
            m
        }
    };
    let diag = validate_mesh(&mesh);
    if diag.min_angle_deg < MIN_ANGLE_DEG {
        return Err(Error::MeshFailure(format!(
            "minimum angle {:.2} deg below {MIN_ANGLE_DEG}",
            diag.min_angle_deg
        )));
    }
    Ok(mesh)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeshDiagnostics {
    pub min_angle_deg: f64,
    pub h_max: f64,
    pub negative_area: Vec<usize>,
    pub nonmanifold_edges: usize,
    pub untagged_boundary_edges: usize,
    pub untagged_interface_edges: usize,
    pub stray_tagged_edges: usize,
    pub cross_region_edges: usize,
    pub unused_vertices: usize,
}

impl MeshDiagnostics {
    pub fn passed(&self) -> bool {
        self.issues().is_empty()
    }

    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.negative_area.is_empty() {
            out.push(format!("{} triangles with non-positive area", self.negative_area.len()));
        }
        if self.nonmanifold_edges > 0 {
            out.push(format!("{} edges shared by more than two triangles", self.nonmanifold_edges));
        }
        if self.untagged_boundary_edges > 0 {
            out.push(format!("{} boundary edges without a tag", self.untagged_boundary_edges));
        }
        if self.untagged_interface_edges > 0 {
            out.push(format!("{} core/annulus interface edges not tagged Gamma0", self.untagged_interface_edges));
        }
        if self.stray_tagged_edges > 0 {
            out.push(format!("{} tagged edges that are not mesh edges", self.stray_tagged_edges));
        }
        if self.cross_region_edges > 0 {
            out.push(format!("{} edges join core and annulus interiors", self.cross_region_edges));
        }
        if self.unused_vertices > 0 {
            out.push(format!("{} vertices not used by any triangle", self.unused_vertices));
        }
        out
    }
}

/// Collects every invariant violation instead of stopping at the first.
pub fn validate_mesh(mesh: &Mesh) -> MeshDiagnostics {
    let mut d = MeshDiagnostics { min_angle_deg: 180.0, ..Default::default() };
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if signed_area(mesh, t) <= 0.0 {
            d.negative_area.push(t);
        }
        d.min_angle_deg = d.min_angle_deg.min(min_angle(mesh, tri.v));
    }
    let edges = mesh.edge_map();
    let mut tagged: BTreeMap<(usize, usize), BoundaryTag> = BTreeMap::new();
    for e in &mesh.boundary_edges {
        let key = ordered(e.v[0], e.v[1]);
        tagged.insert(key, e.tag);
        if !edges.contains_key(&key) {
            d.stray_tagged_edges += 1;
        }
    }
    let mut core_only = vec![true; mesh.vertices.len()];
    let mut annulus_only = vec![true; mesh.vertices.len()];
    let mut used = vec![false; mesh.vertices.len()];
    for tri in &mesh.triangles {
        for &v in &tri.v {
            used[v] = true;
            match tri.region {
                RegionTag::Core => annulus_only[v] = false,
                RegionTag::Annulus => core_only[v] = false,
            }
        }
    }
    for (&(a, b), ts) in &edges {
        let len = dist(mesh.vertices[a], mesh.vertices[b]);
        d.h_max = d.h_max.max(len);
        match ts.len() {
            1 => {
                if !tagged.contains_key(&(a, b)) {
                    d.untagged_boundary_edges += 1;
                }
            }
            2 => {
                let (r0, r1) = (mesh.triangles[ts[0]].region, mesh.triangles[ts[1]].region);
                if r0 != r1 && tagged.get(&(a, b)) != Some(&BoundaryTag::Gamma0) {
                    d.untagged_interface_edges += 1;
                }
            }
            _ => d.nonmanifold_edges += 1,
        }
        let cross = (core_only[a] && annulus_only[b]) || (annulus_only[a] && core_only[b]);
        if cross && tagged.get(&(a, b)) != Some(&BoundaryTag::Gamma0) {
            d.cross_region_edges += 1;
        }
    }
    d.unused_vertices = used.iter().filter(|u| !**u).count();
    if mesh.triangles.is_empty() {
        d.min_angle_deg = 0.0;
    }
    d
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn signed_area(mesh: &Mesh, t: usize) -> f64 {
    let [a, b, c] = mesh.triangles[t].v;
    tri_area(mesh.vertices[a], mesh.vertices[b], mesh.vertices[c])
}

pub fn tri_area(p: Point, q: Point, r: Point) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

fn min_angle(mesh: &Mesh, v: [usize; 3]) -> f64 {
    let p = [mesh.vertices[v[0]], mesh.vertices[v[1]], mesh.vertices[v[2]]];
    let mut best = 180.0f64;
    for i in 0..3 {
        let a = p[i];
        let b = p[(i + 1) % 3];
        let c = p[(i + 2) % 3];
        let u = [b[0] - a[0], b[1] - a[1]];
        let w = [c[0] - a[0], c[1] - a[1]];
        let cos = (u[0] * w[0] + u[1] * w[1]) / (u[0].hypot(u[1]) * w[0].hypot(w[1]));
        best = best.min(cos.clamp(-1.0, 1.0).acos().to_degrees());
    }
    best
}

impl Mesh {
    pub(crate) fn from_parts(vertices: Vec<Point>, triangles: Vec<Triangle>, boundary_edges: Vec<BoundaryEdge>) -> Self {
        let mut m = Mesh { vertices, triangles, boundary_edges, h_max: 0.0 };
        m.h_max = m.longest_edge();
        m
    }

    fn longest_edge(&self) -> f64 {
        let mut h = 0.0f64;
        for tri in &self.triangles {
            for i in 0..3 {
                h = h.max(dist(self.vertices[tri.v[i]], self.vertices[tri.v[(i + 1) % 3]]));
            }
        }
        h
    }

    /// Undirected edge → adjacent triangles, in deterministic order.
    pub fn edge_map(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for i in 0..3 {
                map.entry(ordered(tri.v[i], tri.v[(i + 1) % 3])).or_default().push(t);
            }
        }
        map
    }

    pub fn area(&self, region: Option<RegionTag>) -> f64 {
        (0..self.triangles.len())
            .filter(|&t| region.map_or(true, |r| self.triangles[t].region == r))
            .map(|t| signed_area(self, t))
            .sum()
    }

    pub fn min_angle_deg(&self) -> f64 {
        self.triangles.iter().map(|t| min_angle(self, t.v)).fold(180.0, f64::min)
    }

    /// Sorted, deduplicated vertices on edges carrying `tag`.
    pub fn vertices_with_tag(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.tag == tag)
            .flat_map(|e| e.v)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn tag_mask(&self, tag: BoundaryTag) -> Vec<bool> {
        let mut mask = vec![false; self.vertices.len()];
        for v in self.vertices_with_tag(tag) {
            mask[v] = true;
        }
        mask
    }

    /// Triangles of one region; tagged edges are kept when they are edges of a kept triangle.
    pub fn submesh(&self, region: RegionTag) -> RegionMesh {
        let mut new_index = vec![usize::MAX; self.vertices.len()];
        let mut parent = Vec::new();
        let mut triangles = Vec::new();
        for tri in self.triangles.iter().filter(|t| t.region == region) {
            let mut v = [0; 3];
            for (k, &p) in tri.v.iter().enumerate() {
                if new_index[p] == usize::MAX {
                    new_index[p] = parent.len();
                    parent.push(p);
                }
                v[k] = new_index[p];
            }
            triangles.push(Triangle { v, region });
        }
        let vertices = parent.iter().map(|&p| self.vertices[p]).collect();
        let mut sub = Mesh { vertices, triangles, boundary_edges: Vec::new(), h_max: 0.0 };
        let edges = sub.edge_map();
        sub.boundary_edges = self
            .boundary_edges
            .iter()
            .filter_map(|e| {
                let (a, b) = (new_index[e.v[0]], new_index[e.v[1]]);
                (a != usize::MAX && b != usize::MAX && edges.contains_key(&ordered(a, b)))
                    .then_some(BoundaryEdge { v: [a, b], tag: e.tag })
            })
            .collect();
        sub.h_max = sub.longest_edge();
        RegionMesh { mesh: sub, parent }
    }

    /// Triangle containing `p` with barycentric coordinates (brute-force search).
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for (t, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = tri.v.map(|i| self.vertices[i]);
            let xmin = a[0].min(b[0]).min(c[0]);
            let xmax = a[0].max(b[0]).max(c[0]);
            let ymin = a[1].min(b[1]).min(c[1]);
            let ymax = a[1].max(b[1]).max(c[1]);
            let pad = 1e-12 * (xmax - xmin + ymax - ymin);
            if p[0] < xmin - pad || p[0] > xmax + pad || p[1] < ymin - pad || p[1] > ymax + pad {
                continue;
            }
            let area = tri_area(a, b, c);
            let l = [tri_area(p, b, c) / area, tri_area(a, p, c) / area, tri_area(a, b, p) / area];
            let worst = l.iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Some((t, l));
            }
            if best.as_ref().map_or(true, |b| worst > b.2) {
                best = Some((t, l, worst));
            }
        }
        best.filter(|b| b.2 > -1e-9).map(|b| (b.0, b.1))
    }

    /// P1 interpolation of vertex values at `p`.
    pub fn interpolate(&self, values: &[f64], p: Point) -> Option<f64> {
        self.locate(p).map(|(t, l)| {
            let v = self.triangles[t].v;
            l[0] * values[v[0]] + l[1] * values[v[1]] + l[2] * values[v[2]]
        })
    }

    /// Writes `<stem>.node`, `<stem>.ele` and `<stem>.edge`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let mut f = BufWriter::new(fs::File::create(stem.with_extension("node"))?);
        for (i, p) in self.vertices.iter().enumerate() {
            writeln!(f, "{i} {:.17e} {:.17e}", p[0], p[1])?;
        }
        f.flush()?;
        let mut f = BufWriter::new(fs::File::create(stem.with_extension("ele"))?);
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(f, "{i} {} {} {} {}", t.v[0], t.v[1], t.v[2], t.region.code())?;
        }
        f.flush()?;
        let mut f = BufWriter::new(fs::File::create(stem.with_extension("edge"))?);
        for (i, e) in self.boundary_edges.iter().enumerate() {
            writeln!(f, "{i} {} {} {}", e.v[0], e.v[1], e.tag.code())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read(stem: &Path) -> Result<Mesh> {
        fn fields(line: &str, n: usize, file: &str) -> Result<Vec<String>> {
            let f: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
            if f.len() != n {
                return Err(Error::Parse(format!("{file}: expected {n} columns in '{line}'")));
            }
            Ok(f)
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Parse(format!("bad number '{s}'")))
        }
        let mut vertices = Vec::new();
        for line in fs::read_to_string(stem.with_extension("node"))?.lines() {
            let f = fields(line, 3, "node")?;
            vertices.push([num(&f[1])?, num(&f[2])?]);
        }
        let mut triangles = Vec::new();
        for line in fs::read_to_string(stem.with_extension("ele"))?.lines() {
            let f = fields(line, 5, "ele")?;
            let region = RegionTag::from_code(num(&f[4])?)
                .ok_or_else(|| Error::Parse(format!("bad region code in '{line}'")))?;
            triangles.push(Triangle { v: [num(&f[1])?, num(&f[2])?, num(&f[3])?], region });
        }
        let mut boundary_edges = Vec::new();
        for line in fs::read_to_string(stem.with_extension("edge"))?.lines() {
            let f = fields(line, 4, "edge")?;
            let tag = BoundaryTag::from_code(num(&f[3])?)
                .ok_or_else(|| Error::Parse(format!("bad tag code in '{line}'")))?;
            boundary_edges.push(BoundaryEdge { v: [num(&f[1])?, num(&f[2])?], tag });
        }
        for t in &triangles {
            if t.v.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Parse("triangle references a missing vertex".into()));
            }
        }
        Ok(Mesh::from_parts(vertices, triangles, boundary_edges))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, DomainSpec};
    use std::f64::consts::PI;

    fn concentric(h: f64) -> Mesh {
        generate_mesh(&build_domain(DomainSpec::concentric(0.5, 1.0)).unwrap(), h, None).unwrap()
    }

    #[test]
    fn concentric_mesh_is_valid() {
        let m = concentric(0.1);
        let d = validate_mesh(&m);
        assert!(d.passed(), "{:?}", d.issues());
        assert!(m.h_max <= 0.1 + 1e-12, "h_max {}", m.h_max);
        assert!(d.min_angle_deg >= MIN_ANGLE_DEG);
        for v in m.vertices_with_tag(BoundaryTag::Gamma1) {
            let p = m.vertices[v];
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-12);
        }
        for v in m.vertices_with_tag(BoundaryTag::Gamma0) {
            let p = m.vertices[v];
            assert!((p[0].hypot(p[1]) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn core_area_converges_quadratically() {
        let e1 = (concentric(0.1).area(Some(RegionTag::Core)) - PI * 0.25).abs();
        let e2 = (concentric(0.05).area(Some(RegionTag::Core)) - PI * 0.25).abs();
        let ratio = e1 / e2;
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn offset_mesh_is_valid() {
        let dom = build_domain(DomainSpec::offset(0.4, 1.0, 0.3)).unwrap();
        let m = generate_mesh(&dom, 0.08, None).unwrap();
        let d = validate_mesh(&m);
        assert!(d.passed(), "{:?}", d.issues());
        assert!(m.h_max <= 0.08 + 1e-12);
        assert!((m.area(Some(RegionTag::Core)) - PI * 0.16).abs() < 0.01);
    }

    #[test]
    fn kissing_without_grading_is_rejected() {
        let dom = build_domain(DomainSpec::kissing(0.5, 1.0)).unwrap();
        assert!(matches!(generate_mesh(&dom, 0.1, None), Err(Error::MeshFailure(_))));
    }

    #[test]
    fn inverted_triangle_is_flagged() {
        let mut m = concentric(0.2);
        m.triangles[3].v.swap(0, 1);
        let d = validate_mesh(&m);
        assert_eq!(d.negative_area, vec![3]);
        assert!(!d.passed());
    }

    #[test]
    fn untagged_boundary_edge_is_flagged() {
        let mut m = concentric(0.2);
        let i = m.boundary_edges.iter().position(|e| e.tag == BoundaryTag::Gamma1).unwrap();
        m.boundary_edges.remove(i);
        let d = validate_mesh(&m);
        assert_eq!(d.untagged_boundary_edges, 1);
        assert!(!d.passed());
    }

    #[test]
    fn submesh_keeps_interface() {
        let m = concentric(0.1);
        let core = m.submesh(RegionTag::Core);
        let ann = m.submesh(RegionTag::Annulus);
        assert_eq!(core.mesh.vertices_with_tag(BoundaryTag::Gamma0).len(), m.vertices_with_tag(BoundaryTag::Gamma0).len());
        assert_eq!(ann.mesh.vertices_with_tag(BoundaryTag::Gamma0).len(), m.vertices_with_tag(BoundaryTag::Gamma0).len());
        assert!(ann.mesh.vertices_with_tag(BoundaryTag::Gamma1).len() > 0);
        assert!(core.mesh.vertices_with_tag(BoundaryTag::Gamma1).is_empty());
        assert!(validate_mesh(&core.mesh).passed());
        assert!(validate_mesh(&ann.mesh).passed());
        let total = core.mesh.area(None) + ann.mesh.area(None);
        assert!((total - m.area(None)).abs() < 1e-12);
    }

    #[test]
    fn locate_and_interpolate_linear_field() {
        let m = concentric(0.1);
        let f: Vec<f64> = m.vertices.iter().map(|p| 2.0 * p[0] - p[1] + 0.5).collect();
        for p in [[0.1, 0.2], [-0.7, 0.3], [0.0, -0.95]] {
            let v = m.interpolate(&f, p).unwrap();
            assert!((v - (2.0 * p[0] - p[1] + 0.5)).abs() < 1e-12);
        }
        assert!(m.locate([1.5, 0.0]).is_none());
    }

    #[test]
    fn text_round_trip() {
        let m = concentric(0.2);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("mesh");
        m.write(&stem).unwrap();
        let back = Mesh::read(&stem).unwrap();
        assert_eq!(m, back);
    }
}
