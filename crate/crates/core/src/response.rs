//! Incompressible plane-stress response shared by every invariant-based model.
//!
//! Given the first derivatives of `Ψ(I1, I2, I4v, I4w)` the second Piola-Kirchhoff stress is
//!
//! ```text
//! S = 2Ψ₁ I + 2Ψ₂ (I1 I − C) + 2Ψ₄ᵥ V0 + 2Ψ₄w W0 + p C⁻¹
//! ```
//!
//! and the Lagrange multiplier `p` follows from `S33 = 0`.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::kinematics::{
    invariants, DeformationGradient, InvariantSet, RightCauchyGreen, StructuralTensors,
};

/// First partial derivatives of the strain energy with respect to the invariants (MPa).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyDerivatives {
    pub d_i1: f64,
    pub d_i2: f64,
    pub d_i4v: f64,
    pub d_i4w: f64,
}

impl EnergyDerivatives {
    pub fn as_array(&self) -> [f64; 4] {
        [self.d_i1, self.d_i2, self.d_i4v, self.d_i4w]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            d_i1: a[0],
            d_i2: a[1],
            d_i4v: a[2],
            d_i4w: a[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneStressSolution {
    pub p: f64,
    pub s: Matrix3<f64>,
    pub sigma: Matrix3<f64>,
}

/// A strain energy expressed through `I1, I2, I4v, I4w`.
pub trait InvariantModel {
    fn energy_derivatives(&self, inv: &InvariantSet) -> Result<EnergyDerivatives>;
}

/// A model that can be driven by the virtual biaxial rig.
pub trait BiaxialModel: Sync {
    /// In-plane Cauchy stresses `(σxx, σyy)` at the plane-stress state `diag(λx, λy)`.
    fn biaxial_stress(&self, lambda_x: f64, lambda_y: f64) -> Result<(f64, f64)>;

    /// Strain energy relative to the reference state.
    fn biaxial_energy(&self, lambda_x: f64, lambda_y: f64) -> Result<f64>;
}

pub fn check_plane_stress_state(c: &RightCauchyGreen, dirs: &StructuralTensors) -> Result<()> {
    if !dirs.is_in_plane() {
        return Err(Error::Unsupported(
            "fiber directions must lie in the x-y plane".into(),
        ));
    }
    if !c.is_z_principal() {
        return Err(Error::Unsupported(
            "C must not couple the thickness direction (C13 = C23 = 0)".into(),
        ));
    }
    Ok(())
}

/// `p = −C33 [2Ψ₁ + 2Ψ₂ (I1 − C33)]`, the root of `S33 = 0`.
pub fn pressure_from_derivatives(d: &EnergyDerivatives, c33: f64, i1: f64) -> f64 {
    -c33 * (2.0 * d.d_i1 + 2.0 * d.d_i2 * (i1 - c33))
}

pub fn solve_pressure<M: InvariantModel + ?Sized>(
    model: &M,
    c: &RightCauchyGreen,
    inv: &InvariantSet,
    dirs: &StructuralTensors,
) -> Result<f64> {
    check_plane_stress_state(c, dirs)?;
    let d = model.energy_derivatives(inv)?;
    Ok(pressure_from_derivatives(&d, c.0[(2, 2)], inv.i1))
}

/// `S` for given derivatives and multiplier.
pub fn pk2_from_derivatives(
    d: &EnergyDerivatives,
    p: f64,
    c: &RightCauchyGreen,
    inv: &InvariantSet,
    dirs: &StructuralTensors,
) -> Matrix3<f64> {
    let id = Matrix3::identity();
    id * (2.0 * d.d_i1)
        + (id * inv.i1 - c.0) * (2.0 * d.d_i2)
        + dirs.v_tensor() * (2.0 * d.d_i4v)
        + dirs.w_tensor() * (2.0 * d.d_i4w)
        + c.inverse() * p
}

/// Plane-stress `S` as a function of `C` alone (`C33` already eliminated).
pub fn pk2_from_cauchy_green<M: InvariantModel + ?Sized>(
    model: &M,
    c: &RightCauchyGreen,
    dirs: &StructuralTensors,
) -> Result<(f64, Matrix3<f64>)> {
    check_plane_stress_state(c, dirs)?;
    let inv = invariants(c, dirs);
    let d = model.energy_derivatives(&inv)?;
    let p = pressure_from_derivatives(&d, c.0[(2, 2)], inv.i1);
    Ok((p, pk2_from_derivatives(&d, p, c, &inv, dirs)))
}

pub fn pk2_stress<M: InvariantModel + ?Sized>(
    model: &M,
    f: &DeformationGradient,
    dirs: &StructuralTensors,
) -> Result<PlaneStressSolution> {
    let det = f.det();
    if (det - 1.0).abs() > 1e-10 {
        return Err(Error::domain(format!(
            "plane-stress state must be isochoric, det F = {det}"
        )));
    }
    let c = f.right_cauchy_green()?;
    let (p, s) = pk2_from_cauchy_green(model, &c, dirs)?;
    let sigma = f.0 * s * f.0.transpose() / det;
    Ok(PlaneStressSolution { p, s, sigma })
}

/// Biaxial Cauchy stresses for any invariant model.
pub fn invariant_biaxial_stress<M: InvariantModel + ?Sized>(
    model: &M,
    dirs: &StructuralTensors,
    lambda_x: f64,
    lambda_y: f64,
) -> Result<(f64, f64)> {
    let f = DeformationGradient::plane_stress(lambda_x, lambda_y)?;
    let sol = pk2_stress(model, &f, dirs)?;
    Ok((sol.sigma[(0, 0)], sol.sigma[(1, 1)]))
}

/// Diagonal plane-stress state `diag(λx, λy, 1/(λx λy))` with its invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiaxialState {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub inv: InvariantSet,
    /// Squared x and y components of the two fibers.
    pub v_xx: f64,
    pub v_yy: f64,
    pub w_xx: f64,
    pub w_yy: f64,
}

impl BiaxialState {
    pub fn new(lambda_x: f64, lambda_y: f64, dirs: &StructuralTensors) -> Result<Self> {
        DeformationGradient::plane_stress(lambda_x, lambda_y)?;
        if !dirs.is_in_plane() {
            return Err(Error::Unsupported(
                "fiber directions must lie in the x-y plane".into(),
            ));
        }
        let cx = lambda_x * lambda_x;
        let cy = lambda_y * lambda_y;
        let cz = 1.0 / (cx * cy);
        let (v_xx, v_yy) = (dirs.v0.x * dirs.v0.x, dirs.v0.y * dirs.v0.y);
        let (w_xx, w_yy) = (dirs.w0.x * dirs.w0.x, dirs.w0.y * dirs.w0.y);
        let inv = InvariantSet {
            i1: cx + cy + cz,
            i2: cx * cy + cy * cz + cz * cx,
            i4v: cx * v_xx + cy * v_yy,
            i4w: cx * w_xx + cy * w_yy,
            j: 1.0,
        };
        Ok(Self {
            cx,
            cy,
            cz,
            inv,
            v_xx,
            v_yy,
            w_xx,
            w_yy,
        })
    }

    /// `∂σxx/∂(∂Ψ/∂I•)` and `∂σyy/∂(∂Ψ/∂I•)`; the stresses are linear in the derivatives.
    pub fn stress_weights(&self) -> ([f64; 4], [f64; 4]) {
        let (cx, cy, cz, i1) = (self.cx, self.cy, self.cz, self.inv.i1);
        let thickness = cz * (i1 - cz);
        (
            [
                2.0 * (cx - cz),
                2.0 * (cx * (i1 - cx) - thickness),
                2.0 * cx * self.v_xx,
                2.0 * cx * self.w_xx,
            ],
            [
                2.0 * (cy - cz),
                2.0 * (cy * (i1 - cy) - thickness),
                2.0 * cy * self.v_yy,
                2.0 * cy * self.w_yy,
            ],
        )
    }

    pub fn cauchy(&self, d: &EnergyDerivatives) -> (f64, f64) {
        let (gx, gy) = self.stress_weights();
        let d = d.as_array();
        let dot = |g: [f64; 4]| g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        (dot(gx), dot(gy))
    }
}
