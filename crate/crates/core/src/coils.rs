//! Magnetic field of the Helmholtz pulser coils.
//!
//! Each turn is treated as an infinitely thin circular loop; its field follows
//! from the complete elliptic integrals. Turns of one coil are coincident.
//!
//! For the Monte Carlo, the pair field per ampere is tabulated once on an
//! axisymmetric (axial, radial) grid and bilinearly interpolated; direct
//! evaluation stays the accuracy reference.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::elliptic::{ellip_ke, radial_combo};
use crate::error::{invalid, Error, Result};
use crate::units::MU_0;
use crate::vec3::Vec3;

/// Points closer than this fraction of the radius to a ring are rejected.
pub const ON_WIRE_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoilGeometry {
    /// Radius of each loop, m.
    pub loop_radius: f64,
    pub turns_per_coil: u32,
    /// Center-to-center distance of the two coils along the axis, m.
    pub separation: f64,
    /// Common axis (unit vector).
    pub axis: Vec3,
    /// Midpoint between the coils, m.
    pub center: Vec3,
}

impl CoilGeometry {
    /// The pulser pair: 50 mm diameter, 10 turns per coil, spaced by one radius along ŷ.
    pub fn helmholtz_preset() -> Self {
        Self::helmholtz(0.025, 10)
    }

    pub fn helmholtz(radius: f64, turns: u32) -> Self {
        Self {
            loop_radius: radius,
            turns_per_coil: turns,
            separation: radius,
            axis: Vec3::Y,
            center: Vec3::ZERO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.loop_radius > 0.0) || !self.loop_radius.is_finite() {
            return Err(invalid("coils.loop_radius_m", "must be positive"));
        }
        if self.turns_per_coil < 1 {
            return Err(invalid("coils.turns", "at least one turn per coil"));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(invalid("coils.separation_m", "must be positive"));
        }
        if (self.axis.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid("coils.axis", "must be a unit vector"));
        }
        if !self.center.is_finite() {
            return Err(invalid("coils.center_m", "must be finite"));
        }
        Ok(())
    }

    /// Centers of the two coils.
    pub fn coil_centers(&self) -> [Vec3; 2] {
        let half = self.axis * (0.5 * self.separation);
        [self.center - half, self.center + half]
    }

    /// (4/5)^{3/2} μ₀ n / a: textbook center field per ampere of an ideal Helmholtz pair.
    pub fn ideal_center_field_per_ampere(&self) -> f64 {
        0.8f64.powf(1.5) * MU_0 * self.turns_per_coil as f64 / self.loop_radius
    }
}

/// Field of one thin circular loop of radius `a` carrying `current`.
///
/// Positive current circulates right-handedly about `axis`, so the field at the
/// loop center points along `+axis`.
pub fn loop_field(a: f64, loop_center: Vec3, axis: Vec3, current: f64, point: Vec3) -> Result<Vec3> {
    if (axis.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain("loop axis must be a unit vector".into()));
    }
    let d = point - loop_center;
    let z = d.dot(axis);
    let radial = d - axis * z;
    let rho = radial.norm();
    let (b_axial, b_rho) = loop_field_cyl(a, current, rho, z)?;
    let mut b = axis * b_axial;
    if rho > 0.0 {
        b += radial * (b_rho / rho);
    }
    Ok(b)
}

/// (B_axial, B_ρ) of a loop of radius `a` at cylindrical position (ρ, z).
pub(crate) fn loop_field_cyl(a: f64, current: f64, rho: f64, z: f64) -> Result<(f64, f64)> {
    let d_plus = (a + rho).powi(2) + z * z;
    let d_minus = (a - rho).powi(2) + z * z;
    let dist = d_minus.sqrt();
    if dist < ON_WIRE_FRACTION * a {
        return Err(Error::OnWire { distance: dist });
    }
    let m = 4.0 * a * rho / d_plus;
    let (k, e) = ellip_ke(m);
    let pre = MU_0 * current / (2.0 * PI * d_plus.sqrt());
    let b_axial = pre * (k + (a * a - rho * rho - z * z) / d_minus * e);
    let b_rho = if rho == 0.0 {
        0.0
    } else {
        // −K + E (a²+ρ²+z²)/D₋ rewritten as G(m) / (2(1−m)) to survive small ρ
        let one_minus_m = d_minus / d_plus;
        pre * z / rho * radial_combo(m) / (2.0 * one_minus_m)
    };
    Ok((b_axial, b_rho))
}

/// Field of the coil pair with `current` in every turn.
pub fn pair_field(geom: &CoilGeometry, current: f64, point: Vec3) -> Result<Vec3> {
    let n = geom.turns_per_coil as f64;
    let mut b = Vec3::ZERO;
    for c in geom.coil_centers() {
        b += loop_field(geom.loop_radius, c, geom.axis, current * n, point)?;
    }
    Ok(b)
}

/// Position and field (or field per ampere) at that position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub point: Vec3,
    pub b: Vec3,
}

/// Field per ampere, b(r), at every grid point; B(r, t) = b(r) I(t).
pub fn field_scale_map(geom: &CoilGeometry, grid: &[Vec3]) -> Result<Vec<FieldSample>> {
    grid.iter()
        .map(|&p| pair_field(geom, 1.0, p).map(|b| FieldSample { point: p, b }))
        .collect()
}

/// Write samples as CSV with header `x,y,z,bx,by,bz`.
pub fn write_field_csv<W: Write>(mut w: W, samples: &[FieldSample]) -> std::io::Result<()> {
    writeln!(w, "x,y,z,bx,by,bz")?;
    for s in samples {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            s.point.x, s.point.y, s.point.z, s.b.x, s.b.y, s.b.z
        )?;
    }
    Ok(())
}

/// Axisymmetric lookup table of the pair field per ampere.
///
/// Stores (b_axial, b_ρ) on a uniform grid in (u, ρ), where u is the coordinate
/// along the coil axis measured from the pair center.
#[derive(Debug, Clone)]
pub struct FieldMap {
    geom: CoilGeometry,
    u_min: f64,
    du: f64,
    nu: usize,
    drho: f64,
    nrho: usize,
    axial: Vec<f64>,
    radial: Vec<f64>,
}

impl FieldMap {
    /// Tabulate the field inside a sphere (`center`, `radius`) with `cells` grid
    /// intervals along each coordinate.
    pub fn for_sphere(geom: &CoilGeometry, center: Vec3, radius: f64, cells: usize) -> Result<Self> {
        geom.validate()?;
        if cells < 2 {
            return Err(Error::Domain("field map needs at least 2 cells".into()));
        }
        let d = center - geom.center;
        let u0 = d.dot(geom.axis);
        let perp = (d - geom.axis * u0).norm();
        // small margin so interpolation never sees the exact boundary
        let pad = 1e-3 * radius;
        let u_min = u0 - radius - pad;
        let u_max = u0 + radius + pad;
        let rho_max = perp + radius + pad;
        let nu = cells + 1;
        let nrho = cells + 1;
        let du = (u_max - u_min) / cells as f64;
        let drho = rho_max / cells as f64;
        let mut axial = Vec::with_capacity(nu * nrho);
        let mut radial = Vec::with_capacity(nu * nrho);
        let n = geom.turns_per_coil as f64;
        let h = 0.5 * geom.separation;
        for i in 0..nu {
            let u = u_min + du * i as f64;
            for j in 0..nrho {
                let rho = drho * j as f64;
                let (a1, r1) = loop_field_cyl(geom.loop_radius, n, rho, u + h)?;
                let (a2, r2) = loop_field_cyl(geom.loop_radius, n, rho, u - h)?;
                axial.push(a1 + a2);
                radial.push(r1 + r2);
            }
        }
        Ok(Self { geom: *geom, u_min, du, nu, drho, nrho, axial, radial })
    }

    pub fn geometry(&self) -> &CoilGeometry {
        &self.geom
    }

    /// Interpolated field per ampere at `point`. Points outside the table fall back
    /// to direct evaluation.
    pub fn field_per_ampere(&self, point: Vec3) -> Result<Vec3> {
        let axis = self.geom.axis;
        let d = point - self.geom.center;
        let u = d.dot(axis);
        let radial = d - axis * u;
        let rho = radial.norm();
        let fu = (u - self.u_min) / self.du;
        let fr = rho / self.drho;
        if !(fu >= 0.0) || fu > (self.nu - 1) as f64 || fr > (self.nrho - 1) as f64 {
            return pair_field(&self.geom, 1.0, point);
        }
        let i = (fu as usize).min(self.nu - 2);
        let j = (fr as usize).min(self.nrho - 2);
        let tu = fu - i as f64;
        let tr = fr - j as f64;
        let idx = |i: usize, j: usize| i * self.nrho + j;
        let lerp2 = |t: &[f64]| {
            let a = t[idx(i, j)] * (1.0 - tr) + t[idx(i, j + 1)] * tr;
            let b = t[idx(i + 1, j)] * (1.0 - tr) + t[idx(i + 1, j + 1)] * tr;
            a * (1.0 - tu) + b * tu
        };
        let b_ax = lerp2(&self.axial);
        let b_rho = lerp2(&self.radial);
        let mut b = axis * b_ax;
        if rho > 0.0 {
            b += radial * (b_rho / rho);
        }
        Ok(b)
    }
}
