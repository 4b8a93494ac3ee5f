//! Disk configurations: concentric, offset and internally tangent ("kissing").

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const TANGENCY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskSpec {
    pub center: Point,
    pub radius: f64,
}

impl DiskSpec {
    pub fn new(center: Point, radius: f64) -> Self {
        DiskSpec { center, radius }
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }

    /// Signed distance to the circle, negative inside.
    pub fn signed_distance(&self, x: Point) -> f64 {
        dist(x, self.center) - self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Concentric,
    Offset,
    Kissing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub core: DiskSpec,
    pub outer: DiskSpec,
}

impl DomainSpec {
    pub fn concentric(r0: f64, r1: f64) -> Self {
        DomainSpec {
            kind: DomainKind::Concentric,
            core: DiskSpec::new([0.0, 0.0], r0),
            outer: DiskSpec::new([0.0, 0.0], r1),
        }
    }

    /// Core shifted by `offset` along x1 inside an outer disk centred at the origin.
    pub fn offset(r0: f64, r1: f64, offset: f64) -> Self {
        DomainSpec {
            kind: DomainKind::Offset,
            core: DiskSpec::new([offset, 0.0], r0),
            outer: DiskSpec::new([0.0, 0.0], r1),
        }
    }

    /// Kissing disks in the cusp chart: tangency point at the origin, annulus opening upward.
    pub fn kissing(r0: f64, r1: f64) -> Self {
        DomainSpec {
            kind: DomainKind::Kissing,
            core: DiskSpec::new([0.0, r0], r0),
            outer: DiskSpec::new([0.0, r1], r1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionTag {
    Core,
    Annulus,
}

/// `Cut` marks the artificial truncation edges of kissing meshes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryTag {
    Gamma0,
    Gamma1,
    Cut,
}

impl RegionTag {
    pub fn code(self) -> u8 {
        match self {
            RegionTag::Core => 0,
            RegionTag::Annulus => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(RegionTag::Core),
            1 => Some(RegionTag::Annulus),
            _ => None,
        }
    }
}

impl BoundaryTag {
    pub fn code(self) -> u8 {
        match self {
            BoundaryTag::Gamma0 => 0,
            BoundaryTag::Gamma1 => 1,
            BoundaryTag::Cut => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(BoundaryTag::Gamma0),
            1 => Some(BoundaryTag::Gamma1),
            2 => Some(BoundaryTag::Cut),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub spec: DomainSpec,
    /// Tangency point for kissing disks.
    pub tangency: Option<Point>,
    /// dist(Γ₀, Γ₁); zero for kissing disks.
    pub gap: f64,
}

pub fn build_domain(spec: DomainSpec) -> Result<Domain> {
    let DomainSpec { kind, core, outer } = spec;
    if !(core.radius > 0.0 && outer.radius > 0.0) {
        return Err(Error::OverlapError("radii must be positive".into()));
    }
    if core.radius >= outer.radius {
        return Err(Error::OverlapError(format!(
            "core radius {} not smaller than outer radius {}",
            core.radius, outer.radius
        )));
    }
    let d = dist(core.center, outer.center);
    let gap = outer.radius - core.radius - d;
    match kind {
        DomainKind::Concentric => {
            if d > TANGENCY_TOL {
                return Err(Error::OverlapError(format!(
                    "concentric spec has centre offset {d:.3e}"
                )));
            }
            Ok(Domain { spec, tangency: None, gap })
        }
        DomainKind::Offset => {
            if gap <= 0.0 {
                return Err(Error::OverlapError(format!("gap {gap:.3e} is not positive")));
            }
            Ok(Domain { spec, tangency: None, gap })
        }
        DomainKind::Kissing => {
            if gap.abs() > TANGENCY_TOL || d == 0.0 {
                return Err(Error::TangencyViolation { defect: gap });
            }
            let u = [(core.center[0] - outer.center[0]) / d, (core.center[1] - outer.center[1]) / d];
            let p = [outer.center[0] + outer.radius * u[0], outer.center[1] + outer.radius * u[1]];
            Ok(Domain { spec, tangency: Some(p), gap: 0.0 })
        }
    }
}

impl Domain {
    pub fn classify_point(&self, x: Point) -> Result<RegionTag> {
        if self.spec.outer.signed_distance(x) > 0.0 {
            return Err(Error::OutsideDomain(x[0], x[1]));
        }
        if self.spec.core.signed_distance(x) < 0.0 {
            Ok(RegionTag::Core)
        } else {
            Ok(RegionTag::Annulus)
        }
    }

    pub fn core_area(&self) -> f64 {
        self.spec.core.area()
    }

    pub fn annulus_area(&self) -> f64 {
        self.spec.outer.area() - self.spec.core.area()
    }
}

/// Kissing disks in the cusp chart: 𝒫 at the origin, core centre (0, R0), outer centre (0, R1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuspGeometry {
    pub r0: f64,
    pub r1: f64,
    pub delta_trunc: f64,
}

impl CuspGeometry {
    pub fn new(r0: f64, r1: f64, delta_trunc: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0 < r1) {
            return Err(Error::InvalidConfig(format!("need 0 < R0 < R1, got R0={r0}, R1={r1}")));
        }
        if !(delta_trunc > 0.0 && delta_trunc < 0.5 * r0) {
            return Err(Error::InvalidConfig(format!(
                "delta_trunc must lie in (0, R0/2), got {delta_trunc}"
            )));
        }
        Ok(CuspGeometry { r0, r1, delta_trunc })
    }

    pub fn domain_spec(&self) -> DomainSpec {
        DomainSpec::kissing(self.r0, self.r1)
    }

    /// Curvature difference 1/R0 − 1/R1 that sets the principal thickness.
    pub fn kappa(&self) -> f64 {
        1.0 / self.r0 - 1.0 / self.r1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thickness {
    pub h0: f64,
    pub h1: f64,
    pub h: f64,
    pub hp: f64,
}

/// Height of a circle of radius `r` tangent to the x1-axis at the origin, lower arc.
pub fn circle_height(r: f64, x1: f64) -> f64 {
    let s = x1 * x1;
    s / (r + (r * r - s).sqrt())
}

pub fn thickness_profiles(geom: &CuspGeometry, x1: f64) -> Result<Thickness> {
    if x1.abs() >= geom.r0 {
        return Err(Error::OutOfChart { x1, limit: geom.r0 });
    }
    let h0 = circle_height(geom.r0, x1);
    let h1 = circle_height(geom.r1, x1);
    Ok(Thickness { h0, h1, h: h0 - h1, hp: 0.5 * geom.kappa() * x1 * x1 })
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
