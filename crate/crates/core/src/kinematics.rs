//! Deformation kinematics for incompressible membranes under biaxial load.
//!
//! All tensors are referred to the reference configuration. The through-thickness
//! direction is `z`; biaxial states are diagonal in the `x`/`y` axes of the rig.

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Tolerance used when checking unit fiber vectors and `det F = 1`.
const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationGradient(pub Matrix3<f64>);

impl DeformationGradient {
    /// Diagonal plane-stress incompressible gradient `diag(λx, λy, 1/(λx λy))`.
    pub fn plane_stress(lambda_x: f64, lambda_y: f64) -> Result<Self> {
        if !(lambda_x > 0.0 && lambda_y > 0.0) || !lambda_x.is_finite() || !lambda_y.is_finite() {
            return Err(Error::domain(format!(
                "stretches must be positive and finite, got ({lambda_x}, {lambda_y})"
            )));
        }
        Ok(Self(Matrix3::from_diagonal(&Vector3::new(
            lambda_x,
            lambda_y,
            1.0 / (lambda_x * lambda_y),
        ))))
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }

    pub fn right_cauchy_green(&self) -> Result<RightCauchyGreen> {
        right_cauchy_green(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RightCauchyGreen(pub Matrix3<f64>);

pub fn right_cauchy_green(f: &DeformationGradient) -> Result<RightCauchyGreen> {
    let det = f.det();
    if !(det > 0.0) {
        return Err(Error::domain(format!("det F must be positive, got {det}")));
    }
    Ok(RightCauchyGreen(f.0.transpose() * f.0))
}

impl RightCauchyGreen {
    /// Builds `C` from its in-plane block, with `C33 = 1/det(C_s)` and no out-of-plane shear.
    pub fn from_in_plane(cs: &Matrix2<f64>) -> Result<Self> {
        let det = cs.determinant();
        if !(det > 0.0) || cs[(0, 0)] <= 0.0 {
            return Err(Error::domain(format!(
                "in-plane C must be positive definite, det = {det}"
            )));
        }
        let mut c = Matrix3::zeros();
        c.fixed_view_mut::<2, 2>(0, 0).copy_from(cs);
        c[(2, 2)] = 1.0 / det;
        Ok(Self(c))
    }

    pub fn in_plane(&self) -> Matrix2<f64> {
        self.0.fixed_view::<2, 2>(0, 0).into_owned()
    }

    /// `cof C = det(C) C⁻ᵀ`.
    pub fn cofactor(&self) -> Matrix3<f64> {
        let inv = self.inverse();
        self.0.determinant() * inv.transpose()
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        self.0
            .try_inverse()
            .expect("right Cauchy-Green tensor is positive definite")
    }

    /// True when `C13 = C23 = 0`, i.e. the through-thickness axis is principal.
    pub fn is_z_principal(&self) -> bool {
        let scale = self.0.abs().max().max(1.0);
        [(0, 2), (1, 2), (2, 0), (2, 1)]
            .iter()
            .all(|&(i, j)| self.0[(i, j)].abs() <= 1e-12 * scale)
    }
}

/// Reference fiber directions `v0`, `w0` and their structural tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralTensors {
    pub v0: Vector3<f64>,
    pub w0: Vector3<f64>,
}

impl StructuralTensors {
    pub fn new(v0: Vector3<f64>, w0: Vector3<f64>) -> Result<Self> {
        for (name, v) in [("v0", &v0), ("w0", &w0)] {
            if (v.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::domain(format!(
                    "fiber {name} must be a unit vector, |{name}| = {}",
                    v.norm()
                )));
            }
        }
        Ok(Self { v0, w0 })
    }

    /// In-plane fibers at angles measured from the x-axis.
    pub fn from_angles(angle_v: f64, angle_w: f64) -> Self {
        Self {
            v0: in_plane_direction(angle_v),
            w0: in_plane_direction(angle_w),
        }
    }

    pub fn v_tensor(&self) -> Matrix3<f64> {
        self.v0 * self.v0.transpose()
    }

    pub fn w_tensor(&self) -> Matrix3<f64> {
        self.w0 * self.w0.transpose()
    }

    pub fn is_in_plane(&self) -> bool {
        self.v0.z.abs() <= UNIT_TOL && self.w0.z.abs() <= UNIT_TOL
    }
}

pub fn in_plane_direction(angle: f64) -> Vector3<f64> {
    Vector3::new(angle.cos(), angle.sin(), 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantSet {
    pub i1: f64,
    pub i2: f64,
    pub i4v: f64,
    pub i4w: f64,
    pub j: f64,
}

impl InvariantSet {
    pub const IDENTITY: InvariantSet = InvariantSet {
        i1: 3.0,
        i2: 3.0,
        i4v: 1.0,
        i4w: 1.0,
        j: 1.0,
    };

    /// Invariants for an incompressible state given only the four energy arguments.
    pub fn incompressible(i1: f64, i2: f64, i4v: f64, i4w: f64) -> Self {
        Self {
            i1,
            i2,
            i4v,
            i4w,
            j: 1.0,
        }
    }

    pub fn shifted(&self) -> ShiftedInvariants {
        shift_invariants(self)
    }
}

pub fn invariants(c: &RightCauchyGreen, dirs: &StructuralTensors) -> InvariantSet {
    let c = &c.0;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    InvariantSet {
        i1,
        i2,
        i4v: dirs.v0.dot(&(c * dirs.v0)),
        i4w: dirs.w0.dot(&(c * dirs.w0)),
        j: c.determinant().max(0.0).sqrt(),
    }
}

/// Invariants shifted so the reference state maps to the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedInvariants {
    pub j1: f64,
    pub j2: f64,
    pub j4v: f64,
    pub j4w: f64,
}

impl ShiftedInvariants {
    pub fn as_array(&self) -> [f64; 4] {
        [self.j1, self.j2, self.j4v, self.j4w]
    }
}

pub fn shift_invariants(inv: &InvariantSet) -> ShiftedInvariants {
    ShiftedInvariants {
        j1: inv.i1 - 3.0,
        j2: inv.i2 - 3.0,
        j4v: inv.i4v - 1.0,
        j4w: inv.i4w - 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenLagrangeStrain(pub Matrix3<f64>);

pub fn green_lagrange(c: &RightCauchyGreen) -> GreenLagrangeStrain {
    GreenLagrangeStrain((c.0 - Matrix3::identity()) * 0.5)
}

/// Stretch recovered from a normal Green-Lagrange strain component.
pub fn stretch_from_strain(e: f64) -> Result<f64> {
    let sq = 1.0 + 2.0 * e;
    if !(sq > 0.0) {
        return Err(Error::domain(format!(
            "strain {e} corresponds to a non-positive stretch"
        )));
    }
    Ok(sq.sqrt())
}
