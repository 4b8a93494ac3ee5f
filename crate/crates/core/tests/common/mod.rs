#![allow(dead_code)]

pub mod bessel;

use stiffspec::asymptotics::LimitMeshes;
use stiffspec::geometry::{build_domain, DomainSpec};
use stiffspec::mesh::{generate_mesh, Mesh};

pub const R0: f64 = 0.5;
pub const R1: f64 = 1.0;

pub fn concentric(h: f64) -> Mesh {
    generate_mesh(&build_domain(DomainSpec::concentric(R0, R1)).unwrap(), h, None).unwrap()
}

pub fn unit_disk(h: f64) -> Mesh {
    // a concentric mesh with both regions given unit coefficients is a mesh of the unit disk
    concentric(h)
}

pub fn limit_meshes(h: f64) -> LimitMeshes {
    LimitMeshes::new(concentric(h)).unwrap()
}
