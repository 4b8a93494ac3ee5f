//! Ring ("zipper") meshes for concentric and offset disks.
//!
//! The core is covered by concentric rings around its centre; the annulus by the
//! circles with centre (1−t)c₀ + t c₁ and radius (1−t)r₀ + t r₁, which are nested
//! whenever the core sits strictly inside. Every ring carries a multiple of
//! `SYMMETRY` equally spaced points starting at angle zero, so concentric meshes
//! are invariant under rotation by 2π/`SYMMETRY` and angular pairs stay exactly
//! degenerate.

use std::f64::consts::PI;

use super::{tri_area, BoundaryEdge, Mesh, Triangle};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, Domain, Point, RegionTag};

const SYMMETRY: usize = 12;
const TANGENTIAL: f64 = 0.7;
const RADIAL: f64 = 0.62;

struct Ring {
    center: Point,
    radius: f64,
    n: usize,
    first: usize,
}

impl Ring {
    fn point(&self, i: usize) -> Point {
        if self.n == 1 {
            return self.center;
        }
        let a = 2.0 * PI * (i as f64) / (self.n as f64);
        [self.center[0] + self.radius * a.cos(), self.center[1] + self.radius * a.sin()]
    }
}

fn ring_count(radius: f64, spacing: f64) -> usize {
    let per_sector = (2.0 * PI * radius / (SYMMETRY as f64 * spacing)).ceil() as usize;
    SYMMETRY * per_sector.max(1)
}

pub(super) fn ring_mesh(domain: &Domain, h: f64) -> Result<Mesh> {
    let core = domain.spec.core;
    let outer = domain.spec.outer;
    let d = super::dist(core.center, outer.center);
    let tang = TANGENTIAL * h;
    let rad = RADIAL * h;

    let n_core = (core.radius / rad).ceil().max(1.0) as usize;
    let n_ann = ((outer.radius - core.radius + d) / rad).ceil().max(1.0) as usize;

    let mut rings: Vec<Ring> = Vec::new();
    let mut next = 0usize;
    rings.push(Ring { center: core.center, radius: 0.0, n: 1, first: 0 });
    next += 1;
    for k in 1..=n_core {
        let r = core.radius * k as f64 / n_core as f64;
        let n = ring_count(r, tang);
        rings.push(Ring { center: core.center, radius: r, n, first: next });
        next += n;
    }
    let gamma0 = rings.len() - 1;
    for k in 1..=n_ann {
        let t = k as f64 / n_ann as f64;
        let c = [
            (1.0 - t) * core.center[0] + t * outer.center[0],
            (1.0 - t) * core.center[1] + t * outer.center[1],
        ];
        let r = (1.0 - t) * core.radius + t * outer.radius;
        let n = ring_count(r, tang);
        rings.push(Ring { center: c, radius: r, n, first: next });
        next += n;
    }

    let mut vertices = Vec::with_capacity(next);
    for ring in &rings {
        for i in 0..ring.n {
            vertices.push(ring.point(i));
        }
    }

    let mut triangles = Vec::new();
    for k in 0..rings.len() - 1 {
        let region = if k < gamma0 { RegionTag::Core } else { RegionTag::Annulus };
        zip(&rings[k], &rings[k + 1], region, &vertices, &mut triangles)?;
    }

    let mut boundary_edges = Vec::new();
    for (ring, tag) in [(&rings[gamma0], BoundaryTag::Gamma0), (rings.last().unwrap(), BoundaryTag::Gamma1)] {
        for i in 0..ring.n {
            boundary_edges.push(BoundaryEdge { v: [ring.first + i, ring.first + (i + 1) % ring.n], tag });
        }
    }
    Ok(Mesh::from_parts(vertices, triangles, boundary_edges))
}

/// Triangulates the band between two closed rings, merging by angle with exact
/// integer comparisons so the pattern repeats in every symmetry sector.
fn zip(a: &Ring, b: &Ring, region: RegionTag, vertices: &[Point], out: &mut Vec<Triangle>) -> Result<()> {
    let (na, nb) = (a.n, b.n);
    let ia = |i: usize| a.first + i % na;
    let ib = |j: usize| b.first + j % nb;
    let (mut i, mut j) = (0usize, 0usize);
    let mut push = |v: [usize; 3]| -> Result<()> {
        let area = tri_area(vertices[v[0]], vertices[v[1]], vertices[v[2]]);
        let v = if area > 0.0 { v } else { [v[0], v[2], v[1]] };
        if area == 0.0 {
            return Err(Error::MeshFailure("degenerate triangle between rings".into()));
        }
        out.push(Triangle { v, region });
        Ok(())
    };
    if na == 1 {
        for j in 0..nb {
            push([a.first, ib(j), ib(j + 1)])?;
        }
        return Ok(());
    }
    while i < na || j < nb {
        let advance_a = if i == na {
            false
        } else if j == nb {
            true
        } else {
            (i + 1) * nb <= (j + 1) * na
        };
        if advance_a {
            push([ia(i), ia(i + 1), ib(j)])?;
            i += 1;
        } else {
            push([ia(i), ib(j + 1), ib(j)])?;
            j += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, DomainSpec};

    #[test]
    fn concentric_mesh_is_rotation_invariant() {
        let m = ring_mesh(&build_domain(DomainSpec::concentric(0.5, 1.0)).unwrap(), 0.1).unwrap();
        let (s, c) = (2.0 * PI / SYMMETRY as f64).sin_cos();
        let key = |p: Point| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        let mut set: Vec<_> = m.vertices.iter().map(|&p| key(p)).collect();
        set.sort();
        for &p in &m.vertices {
            let q = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            assert!(set.binary_search(&key(q)).is_ok());
        }
    }

    #[test]
    fn ring_counts_are_symmetric_multiples() {
        assert_eq!(ring_count(1e-3, 0.1), SYMMETRY);
        assert_eq!(ring_count(1.0, 0.1) % SYMMETRY, 0);
        assert!(2.0 * PI / ring_count(1.0, 0.1) as f64 <= 0.1);
    }
}
