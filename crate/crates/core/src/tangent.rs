//! Consistent plane-stress elasticity tensor `ℂ_s = 2 dS_s/dC_s`.
//!
//! The thickness stretch and the pressure are eliminated, so the tensor acts on the in-plane
//! right Cauchy-Green tensor alone. It is assembled as a weighted sum of dyadic products of
//! `I_s`, `C_s`, `C_s⁻¹`, `V0_s` and `W0_s`:
//!
//! ```text
//! ℂ_s = δ1 I⊗I + δ2 (C⁻¹⊗I + I⊗C⁻¹) + δ3 (C⊗I + I⊗C) + δ4 (C⊗C⁻¹ + C⁻¹⊗C)
//!     + δ5 C⊗C − δ6 𝕀 + δ7 V⊗V + δ8 W⊗W + δ9 C⁻¹⊗C⁻¹ + δ10 C⁻¹⊙C⁻¹
//!     + δ11 (I⊗V + V⊗I) + δ12 (I⊗W + W⊗I) + δ13 (C⁻¹⊗V + V⊗C⁻¹)
//!     + δ14 (C⁻¹⊗W + W⊗C⁻¹) + δ15 (C⊗V + V⊗C) + δ16 (C⊗W + W⊗C)
//!     + κ (V⊗W + W⊗V)
//! ```
//!
//! with `(A⊙B)_ijkl = (A_ik B_jl + A_il B_jk)/2`, `𝕀 = I⊙I`, and `κ = 4 ∂²Ψ/∂I4v∂I4w`.
//! In the coefficients `I1` stands for the in-plane trace `tr C_s`.
//!
//! Voigt storage follows the strain-like order `(xx, yy, xy)` with engineering shear strain,
//! so `D[a][b] = ℂ_s` at the index pairs `xx → 11`, `yy → 22`, `xy → 12`, and
//! `ΔS_voigt = ½ D ΔC_voigt` with `ΔC_voigt = (ΔC11, ΔC22, 2ΔC12)`.

use nalgebra::{Matrix2, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    invariants, DeformationGradient, InvariantSet, RightCauchyGreen, StructuralTensors,
};
use crate::material::NodeMaterialModel;
use crate::response::{self, EnergyDerivatives, InvariantModel};

/// Full in-plane fourth-order tensor, indexed `[i][j][k][l]`.
pub type Tensor4 = [[[[f64; 2]; 2]; 2]; 2];

const VOIGT: [(usize, usize); 3] = [(0, 0), (1, 1), (0, 1)];

/// An invariant model that also provides `∂²Ψ/∂I_a∂I_b`.
pub trait SecondOrderModel: InvariantModel {
    fn energy_hessian(&self, inv: &InvariantSet) -> Result<[[f64; 4]; 4]>;

    /// Distance of the state from the nearest switching point of the model (a clamp or a
    /// tension gate), where the Hessian jumps and finite differences are meaningless.
    fn kink_distance(&self, _inv: &InvariantSet) -> Result<f64> {
        Ok(f64::INFINITY)
    }
}

impl SecondOrderModel for NodeMaterialModel {
    fn energy_hessian(&self, inv: &InvariantSet) -> Result<[[f64; 4]; 4]> {
        NodeMaterialModel::energy_hessian(self, inv)
    }

    fn kink_distance(&self, inv: &InvariantSet) -> Result<f64> {
        let eval = self.evaluate_terms(inv)?;
        Ok(eval
            .mixed_input
            .iter()
            .fold(f64::INFINITY, |d, m| d.min(m.abs())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaCoefficients {
    /// `δ1 … δ16`, stored zero-based.
    pub delta: [f64; 16],
    /// Weight of the fiber cross product `V⊗W + W⊗V`.
    pub fiber_coupling: f64,
}

impl DeltaCoefficients {
    /// One-based accessor matching the usual numbering.
    pub fn get(&self, k: usize) -> f64 {
        self.delta[k - 1]
    }
}

/// Tangent in Voigt form, see the module documentation for the shear convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentTensor {
    pub voigt: Matrix3<f64>,
}

impl TangentTensor {
    pub fn from_voigt(voigt: Matrix3<f64>) -> Self {
        Self { voigt }
    }

    pub fn from_full(t: &Tensor4) -> Self {
        let mut voigt = Matrix3::zeros();
        for (a, &(i, j)) in VOIGT.iter().enumerate() {
            for (b, &(k, l)) in VOIGT.iter().enumerate() {
                voigt[(a, b)] = t[i][j][k][l];
            }
        }
        Self { voigt }
    }

    /// Expands to the full tensor using minor symmetry.
    pub fn to_full(&self) -> Tensor4 {
        let index = |i: usize, j: usize| if i == j { i } else { 2 };
        let mut t = [[[[0.0; 2]; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        t[i][j][k][l] = self.voigt[(index(i, j), index(k, l))];
                    }
                }
            }
        }
        t
    }

    pub fn asymmetry(&self) -> f64 {
        (self.voigt - self.voigt.transpose()).abs().max()
    }
}

pub fn frobenius(t: &Tensor4) -> f64 {
    t.iter()
        .flatten()
        .flatten()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// `‖a − b‖ / ‖b‖` over the full tensors.
pub fn relative_frobenius(a: &Tensor4, b: &Tensor4) -> f64 {
    let mut diff = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    diff[i][j][k][l] = a[i][j][k][l] - b[i][j][k][l];
                }
            }
        }
    }
    let scale = frobenius(b);
    if scale == 0.0 {
        frobenius(&diff)
    } else {
        frobenius(&diff) / scale
    }
}

/// The sixteen coefficients and the fiber coupling at one state. `inv.i1` is the full
/// three-dimensional trace; the coefficients use `tr C_s = I1 − C33`.
pub fn delta_coefficients(
    d: &EnergyDerivatives,
    hess: &[[f64; 4]; 4],
    inv: &InvariantSet,
    c33: f64,
) -> Result<DeltaCoefficients> {
    if !c33.is_finite() || c33 <= 0.0 {
        return Err(Error::domain(format!(
            "thickness component C33 = {c33} must be positive; the in-plane C is singular"
        )));
    }
    let a = inv.i1 - c33;
    let c = c33;
    let (p1, p2) = (d.d_i1, d.d_i2);
    let h11 = hess[0][0];
    let h12 = hess[0][1];
    let h22 = hess[1][1];
    let h14v = hess[0][2];
    let h14w = hess[0][3];
    let h24v = hess[1][2];
    let h24w = hess[1][3];

    let delta = [
        4.0 * (h11 + 2.0 * h12 * (a + c) + h22 * (a + c) * (a + c) + p2),
        4.0 * (-h11 * c - h12 * c * (2.0 * a + c) - h22 * a * c * (a + c) - p2 * c),
        4.0 * (-h12 - h22 * (a + c)),
        4.0 * (h12 * c + h22 * a * c),
        4.0 * h22,
        4.0 * p2,
        4.0 * hess[2][2],
        4.0 * hess[3][3],
        4.0 * (h11 * c * c + 2.0 * h12 * a * c * c + p1 * c + h22 * a * a * c * c + p2 * a * c),
        4.0 * (p1 * c + p2 * a * c),
        4.0 * (h14v + h24v * (a + c)),
        4.0 * (h14w + h24w * (a + c)),
        4.0 * (-h14v * c - h24v * a * c),
        4.0 * (-h14w * c - h24w * a * c),
        -4.0 * h24v,
        -4.0 * h24w,
    ];
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite tangent coefficient"));
    }
    Ok(DeltaCoefficients {
        delta,
        fiber_coupling: 4.0 * hess[2][3],
    })
}

fn outer(a: &Matrix2<f64>, b: &Matrix2<f64>) -> Tensor4 {
    let mut t = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    t[i][j][k][l] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    t
}

fn odot(a: &Matrix2<f64>, b: &Matrix2<f64>) -> Tensor4 {
    let mut t = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    t[i][j][k][l] = 0.5 * (a[(i, k)] * b[(j, l)] + a[(i, l)] * b[(j, k)]);
                }
            }
        }
    }
    t
}

fn axpy(out: &mut Tensor4, w: f64, t: &Tensor4) {
    if w == 0.0 {
        return;
    }
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[i][j][k][l] += w * t[i][j][k][l];
                }
            }
        }
    }
}

fn sym_outer(out: &mut Tensor4, w: f64, a: &Matrix2<f64>, b: &Matrix2<f64>) {
    axpy(out, w, &outer(a, b));
    axpy(out, w, &outer(b, a));
}

/// How the `𝕀` term and the fiber coupling enter the sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyForm {
    /// `−δ6 𝕀` plus the fiber coupling; agrees with finite differences.
    Consistent,
    /// `+δ6 𝕀` and no fiber coupling, as the coefficients are often tabulated.
    Tabulated,
}

pub fn assemble(
    delta: &DeltaCoefficients,
    c_s: &Matrix2<f64>,
    dirs: &StructuralTensors,
    form: AssemblyForm,
) -> Result<Tensor4> {
    let c_inv = c_s
        .try_inverse()
        .ok_or_else(|| Error::domain("in-plane C is singular"))?;
    let id = Matrix2::identity();
    let v = dirs.v_tensor().fixed_view::<2, 2>(0, 0).into_owned();
    let w = dirs.w_tensor().fixed_view::<2, 2>(0, 0).into_owned();
    let d = |k: usize| delta.get(k);

    let mut t = [[[[0.0; 2]; 2]; 2]; 2];
    axpy(&mut t, d(1), &outer(&id, &id));
    sym_outer(&mut t, d(2), &c_inv, &id);
    sym_outer(&mut t, d(3), c_s, &id);
    sym_outer(&mut t, d(4), c_s, &c_inv);
    axpy(&mut t, d(5), &outer(c_s, c_s));
    let identity_sign = match form {
        AssemblyForm::Consistent => -1.0,
        AssemblyForm::Tabulated => 1.0,
    };
    axpy(&mut t, identity_sign * d(6), &odot(&id, &id));
    axpy(&mut t, d(7), &outer(&v, &v));
    axpy(&mut t, d(8), &outer(&w, &w));
    axpy(&mut t, d(9), &outer(&c_inv, &c_inv));
    axpy(&mut t, d(10), &odot(&c_inv, &c_inv));
    sym_outer(&mut t, d(11), &id, &v);
    sym_outer(&mut t, d(12), &id, &w);
    sym_outer(&mut t, d(13), &c_inv, &v);
    sym_outer(&mut t, d(14), &c_inv, &w);
    sym_outer(&mut t, d(15), c_s, &v);
    sym_outer(&mut t, d(16), c_s, &w);
    if form == AssemblyForm::Consistent {
        sym_outer(&mut t, delta.fiber_coupling, &v, &w);
    }
    Ok(t)
}

fn admissible_state(f: &DeformationGradient, dirs: &StructuralTensors) -> Result<RightCauchyGreen> {
    let det = f.det();
    if (det - 1.0).abs() > 1e-10 {
        return Err(Error::domain(format!(
            "plane-stress state must be isochoric, det F = {det}"
        )));
    }
    let c = f.right_cauchy_green()?;
    response::check_plane_stress_state(&c, dirs)?;
    Ok(c)
}

/// Full in-plane tangent for any model with second derivatives.
pub fn tangent_tensor<M: SecondOrderModel + ?Sized>(
    model: &M,
    f: &DeformationGradient,
    dirs: &StructuralTensors,
    form: AssemblyForm,
) -> Result<Tensor4> {
    let c = admissible_state(f, dirs)?;
    let inv = invariants(&c, dirs);
    let d = model.energy_derivatives(&inv)?;
    let hess = model.energy_hessian(&inv)?;
    let delta = delta_coefficients(&d, &hess, &inv, c.0[(2, 2)])?;
    assemble(&delta, &c.in_plane(), dirs, form)
}

pub fn material_tangent<M: SecondOrderModel + ?Sized>(
    model: &M,
    f: &DeformationGradient,
    dirs: &StructuralTensors,
) -> Result<TangentTensor> {
    let t = tangent_tensor(model, f, dirs, AssemblyForm::Consistent)?;
    Ok(TangentTensor::from_full(&t))
}

/// In-plane `S_s` as a function of `C_s`, with `C33` and `p` re-solved.
pub fn in_plane_pk2<M: InvariantModel + ?Sized>(
    model: &M,
    c_s: &Matrix2<f64>,
    dirs: &StructuralTensors,
) -> Result<Matrix2<f64>> {
    let c = RightCauchyGreen::from_in_plane(c_s)?;
    let (_, s) = response::pk2_from_cauchy_green(model, &c, dirs)?;
    Ok(s.fixed_view::<2, 2>(0, 0).into_owned())
}

/// Central-difference tangent `2 dS_s/dC_s`; shear entries perturb `C12` and `C21` together.
pub fn finite_difference_tangent<M: InvariantModel + ?Sized>(
    model: &M,
    c_s: &Matrix2<f64>,
    dirs: &StructuralTensors,
    step: f64,
) -> Result<Tensor4> {
    let mut t = [[[[0.0; 2]; 2]; 2]; 2];
    for &(k, l) in &VOIGT {
        let mut bump = Matrix2::zeros();
        bump[(k, l)] = step;
        bump[(l, k)] = step;
        let plus = in_plane_pk2(model, &(c_s + bump), dirs)?;
        let minus = in_plane_pk2(model, &(c_s - bump), dirs)?;
        let ds = (plus - minus) / (2.0 * step);
        let factor = if k == l { 2.0 } else { 1.0 };
        for i in 0..2 {
            for j in 0..2 {
                t[i][j][k][l] = factor * ds[(i, j)];
                t[i][j][l][k] = factor * ds[(i, j)];
            }
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentCheck {
    pub relative_error: f64,
    pub asymmetry: f64,
}

/// Compares the assembled tangent with central differences at `F`.
pub fn check_tangent<M: SecondOrderModel + ?Sized>(
    model: &M,
    f: &DeformationGradient,
    dirs: &StructuralTensors,
    step: f64,
) -> Result<TangentCheck> {
    let c = admissible_state(f, dirs)?;
    let analytic = material_tangent(model, f, dirs)?;
    let fd = finite_difference_tangent(model, &c.in_plane(), dirs, step)?;
    Ok(TangentCheck {
        relative_error: relative_frobenius(&analytic.to_full(), &fd),
        asymmetry: analytic.asymmetry(),
    })
}

/// A random isochoric in-plane state with simple shear, `λx, λy ∈ [0.9, 1.3)`.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R) -> DeformationGradient {
    let (lx, ly) = (rng.gen_range(0.9..1.3), rng.gen_range(0.9..1.3));
    let shear = rng.gen_range(-0.15..0.15);
    let mut f = DeformationGradient(Matrix3::identity());
    f.0[(0, 0)] = lx;
    f.0[(1, 1)] = ly;
    f.0[(0, 1)] = shear;
    f.0[(2, 2)] = 1.0 / (lx * ly);
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentSweep {
    pub samples: usize,
    /// Draws discarded for lying within the kink margin.
    pub rejected: usize,
    pub max_relative_error: f64,
    pub max_asymmetry: f64,
    /// In-plane `F` (row major, 2×2) of the worst state.
    pub worst_state: [f64; 4],
}

/// Tangent-vs-finite-difference comparison at `samples` seeded random states at least
/// `margin` away from any kink.
pub fn tangent_sweep<M: SecondOrderModel + ?Sized>(
    model: &M,
    dirs: &StructuralTensors,
    samples: usize,
    seed: u64,
    margin: f64,
    step: f64,
) -> Result<TangentSweep> {
    if samples == 0 {
        return Err(Error::Config(
            "tangent sweep needs at least one sample".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sweep = TangentSweep {
        samples: 0,
        rejected: 0,
        max_relative_error: 0.0,
        max_asymmetry: 0.0,
        worst_state: [1.0, 0.0, 0.0, 1.0],
    };
    while sweep.samples < samples {
        if sweep.rejected > 100 * samples {
            return Err(Error::domain(format!(
                "no admissible states farther than {margin} from a kink after {} draws",
                sweep.rejected
            )));
        }
        let f = random_state(&mut rng);
        let inv = invariants(&f.right_cauchy_green()?, dirs);
        if model.kink_distance(&inv)? < margin {
            sweep.rejected += 1;
            continue;
        }
        let check = check_tangent(model, &f, dirs, step)?;
        if check.relative_error > sweep.max_relative_error || !check.relative_error.is_finite() {
            sweep.max_relative_error = check.relative_error;
            sweep.worst_state = [f.0[(0, 0)], f.0[(0, 1)], f.0[(1, 0)], f.0[(1, 1)]];
        }
        sweep.max_asymmetry = sweep.max_asymmetry.max(check.asymmetry);
        sweep.samples += 1;
    }
    Ok(sweep)
}
