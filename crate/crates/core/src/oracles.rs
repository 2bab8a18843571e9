//! Closed-form reference materials: HGO, GOH, Mooney-Rivlin and a two-dimensional Fung model.
//!
//! The invariant-based models share the incompressible plane-stress pipeline. Fiber terms are
//! tension-only: they vanish while their argument is in compression. The Fung model acts on
//! the in-plane Green-Lagrange strain directly and carries no pressure.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataproto::{residuals, summarize_residuals, Dataset, ErrorSummary};
use crate::error::{Error, Result};
use crate::kinematics::{InvariantSet, StructuralTensors};
use crate::material::logistic;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::response::{BiaxialModel, BiaxialState, EnergyDerivatives, InvariantModel};
use crate::tangent::SecondOrderModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HgoParams {
    pub mu: f64,
    pub k1: f64,
    pub k2: f64,
    pub angle_v: f64,
    pub angle_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GohParams {
    pub mu: f64,
    pub k1: f64,
    pub k2: f64,
    pub kappa: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrParams {
    pub c10: f64,
    pub c01: f64,
    pub c20: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FungParams {
    pub c1: f64,
    pub a1: f64,
    pub a2: f64,
    pub a4: f64,
}

impl Default for HgoParams {
    fn default() -> Self {
        Self {
            mu: 0.01,
            k1: 0.1,
            k2: 10.0,
            angle_v: FRAC_PI_4,
            angle_w: -FRAC_PI_4,
        }
    }
}

impl Default for GohParams {
    fn default() -> Self {
        Self {
            mu: 0.0102,
            k1: 0.513,
            k2: 59.1,
            kappa: 0.271,
            theta: 1.57,
        }
    }
}

impl Default for MrParams {
    fn default() -> Self {
        Self {
            c10: 0.05,
            c01: 0.01,
            c20: 0.2,
        }
    }
}

impl Default for FungParams {
    fn default() -> Self {
        Self {
            c1: 0.01,
            a1: 20.0,
            a2: 10.0,
            a4: 5.0,
        }
    }
}

impl FungParams {
    /// A parameter set whose energy is not convex in the in-plane strain.
    pub fn non_convex() -> Self {
        Self {
            c1: 0.00241,
            a1: -1.75,
            a2: -21.5,
            a4: 49.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleModel {
    Hgo(HgoParams),
    Goh(GohParams),
    Mr(MrParams),
    Fung(FungParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Hgo,
    Goh,
    Mr,
    Fung,
}

impl OracleKind {
    pub const ALL: [OracleKind; 4] = [
        OracleKind::Goh,
        OracleKind::Mr,
        OracleKind::Hgo,
        OracleKind::Fung,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Hgo => "hgo",
            OracleKind::Goh => "goh",
            OracleKind::Mr => "mr",
            OracleKind::Fung => "fung",
        }
    }

    pub fn default_model(self) -> OracleModel {
        match self {
            OracleKind::Hgo => OracleModel::Hgo(HgoParams::default()),
            OracleKind::Goh => OracleModel::Goh(GohParams::default()),
            OracleKind::Mr => OracleModel::Mr(MrParams::default()),
            OracleKind::Fung => OracleModel::Fung(FungParams::default()),
        }
    }
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hgo" => Ok(OracleKind::Hgo),
            "goh" => Ok(OracleKind::Goh),
            "mr" | "mooney-rivlin" | "mooney_rivlin" => Ok(OracleKind::Mr),
            "fung" => Ok(OracleKind::Fung),
            other => Err(Error::Config(format!("unknown oracle kind '{other}'"))),
        }
    }
}

/// `k1 x exp(k2 x²)` and its slope, zero in compression.
fn fiber_response(k1: f64, k2: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    let e = (k2 * x * x).exp();
    (k1 * x * e, k1 * e * (1.0 + 2.0 * k2 * x * x))
}

fn fiber_energy(k1: f64, k2: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        k1 / (2.0 * k2) * (k2 * x * x).exp_m1()
    }
}

impl GohParams {
    /// Dispersed fiber strain `κ I1 + (1 − 3κ) I4 − 1`.
    pub fn fiber_strain(&self, inv: &InvariantSet) -> f64 {
        self.kappa * inv.i1 + (1.0 - 3.0 * self.kappa) * inv.i4v - 1.0
    }
}

impl OracleModel {
    pub fn kind(&self) -> OracleKind {
        match self {
            OracleModel::Hgo(_) => OracleKind::Hgo,
            OracleModel::Goh(_) => OracleKind::Goh,
            OracleModel::Mr(_) => OracleKind::Mr,
            OracleModel::Fung(_) => OracleKind::Fung,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{} parameter {name} must be positive, got {v}",
                    self.kind()
                )))
            }
        };
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{} parameter {name} must be finite",
                    self.kind()
                )))
            }
        };
        match *self {
            OracleModel::Hgo(p) => {
                positive("mu", p.mu)?;
                positive("k1", p.k1)?;
                positive("k2", p.k2)?;
                finite("angle_v", p.angle_v)?;
                finite("angle_w", p.angle_w)
            }
            OracleModel::Goh(p) => {
                positive("mu", p.mu)?;
                positive("k1", p.k1)?;
                positive("k2", p.k2)?;
                if !(0.0..=1.0 / 3.0).contains(&p.kappa) {
                    return Err(Error::Config(format!(
                        "goh parameter kappa must lie in [0, 1/3], got {}",
                        p.kappa
                    )));
                }
                finite("theta", p.theta)
            }
            OracleModel::Mr(p) => {
                finite("c10", p.c10)?;
                finite("c01", p.c01)?;
                finite("c20", p.c20)
            }
            OracleModel::Fung(p) => {
                positive("c1", p.c1)?;
                finite("a1", p.a1)?;
                finite("a2", p.a2)?;
                finite("a4", p.a4)
            }
        }
    }

    /// Fiber directions of the invariant-based models; the Fung model has none.
    pub fn fibers(&self) -> Option<StructuralTensors> {
        match *self {
            OracleModel::Hgo(p) => Some(StructuralTensors::from_angles(p.angle_v, p.angle_w)),
            OracleModel::Goh(p) => Some(StructuralTensors::from_angles(p.theta, p.theta)),
            OracleModel::Mr(_) => Some(StructuralTensors::from_angles(
                0.0,
                std::f64::consts::FRAC_PI_2,
            )),
            OracleModel::Fung(_) => None,
        }
    }

    fn invariant_energy(&self, inv: &InvariantSet) -> f64 {
        let j = inv.shifted().as_array();
        match *self {
            OracleModel::Hgo(p) => {
                p.mu * j[0] + fiber_energy(p.k1, p.k2, j[2]) + fiber_energy(p.k1, p.k2, j[3])
            }
            OracleModel::Goh(p) => {
                p.mu * j[0] + 0.5 * fiber_energy(p.k1, p.k2, p.fiber_strain(inv))
            }
            OracleModel::Mr(p) => p.c10 * j[0] + p.c01 * j[1] + p.c20 * j[0] * j[0],
            OracleModel::Fung(_) => unreachable!("Fung is not invariant-based"),
        }
    }

    pub fn to_document(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("oracle document serializes");
        s.push('\n');
        s
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let m: OracleModel = serde_json::from_str(text).map_err(|e| {
            Error::parse(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(&text).map_err(|e| e.at(path.display().to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_document()).map_err(|e| Error::io(path, e))
    }

    /// Second Piola-Kirchhoff `(Sxx, Syy)` of the Fung model at in-plane strains.
    fn fung_pk2(p: &FungParams, exx: f64, eyy: f64) -> (f64, f64) {
        let q = p.a1 * exx * exx + p.a2 * eyy * eyy + 2.0 * p.a4 * exx * eyy;
        let e = q.exp();
        (
            p.c1 * e * (p.a1 * exx + p.a4 * eyy),
            p.c1 * e * (p.a2 * eyy + p.a4 * exx),
        )
    }
}

impl InvariantModel for OracleModel {
    fn energy_derivatives(&self, inv: &InvariantSet) -> Result<EnergyDerivatives> {
        let j = inv.shifted().as_array();
        Ok(match *self {
            OracleModel::Hgo(p) => EnergyDerivatives {
                d_i1: p.mu,
                d_i2: 0.0,
                d_i4v: fiber_response(p.k1, p.k2, j[2]).0,
                d_i4w: fiber_response(p.k1, p.k2, j[3]).0,
            },
            OracleModel::Goh(p) => {
                let (g, _) = fiber_response(0.5 * p.k1, p.k2, p.fiber_strain(inv));
                EnergyDerivatives {
                    d_i1: p.mu + p.kappa * g,
                    d_i2: 0.0,
                    d_i4v: (1.0 - 3.0 * p.kappa) * g,
                    d_i4w: 0.0,
                }
            }
            OracleModel::Mr(p) => EnergyDerivatives {
                d_i1: p.c10 + 2.0 * p.c20 * j[0],
                d_i2: p.c01,
                d_i4v: 0.0,
                d_i4w: 0.0,
            },
            OracleModel::Fung(_) => {
                return Err(Error::Unsupported(
                    "the Fung model is two-dimensional and has no invariant form".into(),
                ))
            }
        })
    }
}

impl SecondOrderModel for OracleModel {
    fn energy_hessian(&self, inv: &InvariantSet) -> Result<[[f64; 4]; 4]> {
        let j = inv.shifted().as_array();
        let mut h = [[0.0; 4]; 4];
        match *self {
            OracleModel::Hgo(p) => {
                h[2][2] = fiber_response(p.k1, p.k2, j[2]).1;
                h[3][3] = fiber_response(p.k1, p.k2, j[3]).1;
            }
            OracleModel::Goh(p) => {
                let (_, slope) = fiber_response(0.5 * p.k1, p.k2, p.fiber_strain(inv));
                let w = [p.kappa, 0.0, 1.0 - 3.0 * p.kappa, 0.0];
                for a in 0..4 {
                    for b in 0..4 {
                        h[a][b] = w[a] * w[b] * slope;
                    }
                }
            }
            OracleModel::Mr(p) => h[0][0] = 2.0 * p.c20,
            OracleModel::Fung(_) => {
                return Err(Error::Unsupported(
                    "the Fung model is two-dimensional and has no invariant form".into(),
                ))
            }
        }
        Ok(h)
    }

    fn kink_distance(&self, inv: &InvariantSet) -> Result<f64> {
        let j = inv.shifted().as_array();
        Ok(match *self {
            OracleModel::Hgo(_) => j[2].abs().min(j[3].abs()),
            OracleModel::Goh(p) => p.fiber_strain(inv).abs(),
            OracleModel::Mr(_) | OracleModel::Fung(_) => f64::INFINITY,
        })
    }
}

impl BiaxialModel for OracleModel {
    fn biaxial_stress(&self, lambda_x: f64, lambda_y: f64) -> Result<(f64, f64)> {
        oracle_stress(self, lambda_x, lambda_y)
    }

    fn biaxial_energy(&self, lambda_x: f64, lambda_y: f64) -> Result<f64> {
        oracle_energy(self, lambda_x, lambda_y)
    }
}

/// In-plane Cauchy stresses at `diag(λx, λy)`.
pub fn oracle_stress(model: &OracleModel, lambda_x: f64, lambda_y: f64) -> Result<(f64, f64)> {
    match model {
        OracleModel::Fung(p) => {
            crate::kinematics::DeformationGradient::plane_stress(lambda_x, lambda_y)?;
            let exx = 0.5 * (lambda_x * lambda_x - 1.0);
            let eyy = 0.5 * (lambda_y * lambda_y - 1.0);
            let (sxx, syy) = OracleModel::fung_pk2(p, exx, eyy);
            Ok((lambda_x * lambda_x * sxx, lambda_y * lambda_y * syy))
        }
        _ => {
            let dirs = model.fibers().expect("invariant model has fibers");
            let state = BiaxialState::new(lambda_x, lambda_y, &dirs)?;
            Ok(state.cauchy(&model.energy_derivatives(&state.inv)?))
        }
    }
}

/// Strain energy at `diag(λx, λy)`, zero in the reference state.
pub fn oracle_energy(model: &OracleModel, lambda_x: f64, lambda_y: f64) -> Result<f64> {
    match model {
        OracleModel::Fung(p) => {
            crate::kinematics::DeformationGradient::plane_stress(lambda_x, lambda_y)?;
            let exx = 0.5 * (lambda_x * lambda_x - 1.0);
            let eyy = 0.5 * (lambda_y * lambda_y - 1.0);
            let q = p.a1 * exx * exx + p.a2 * eyy * eyy + 2.0 * p.a4 * exx * eyy;
            Ok(0.5 * p.c1 * q.exp_m1())
        }
        _ => {
            let dirs = model.fibers().expect("invariant model has fibers");
            let state = BiaxialState::new(lambda_x, lambda_y, &dirs)?;
            Ok(model.invariant_energy(&state.inv))
        }
    }
}

// ---------------------------------------------------------------------------
// Fitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    /// Extra simplex restarts from each local optimum.
    #[serde(default = "default_polish")]
    pub polish: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_restarts() -> usize {
    20
}
fn default_max_evals() -> usize {
    3000
}
fn default_polish() -> usize {
    3
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: default_restarts(),
            max_evals: default_max_evals(),
            polish: default_polish(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: OracleKind,
    pub errors: ErrorSummary,
    pub converged: bool,
    pub evaluations: usize,
    pub best_restart: usize,
}

/// Maps an unconstrained search vector to parameters and back.
fn decode(kind: OracleKind, x: &[f64], scale: f64) -> OracleModel {
    match kind {
        OracleKind::Mr => OracleModel::Mr(MrParams {
            c10: scale * x[0],
            c01: scale * x[1],
            c20: scale * x[2],
        }),
        OracleKind::Hgo => OracleModel::Hgo(HgoParams {
            mu: x[0].exp(),
            k1: x[1].exp(),
            k2: x[2].exp(),
            angle_v: x[3],
            angle_w: x[4],
        }),
        OracleKind::Goh => OracleModel::Goh(GohParams {
            mu: x[0].exp(),
            k1: x[1].exp(),
            k2: x[2].exp(),
            kappa: logistic(x[3]) / 3.0,
            theta: x[4],
        }),
        OracleKind::Fung => OracleModel::Fung(FungParams {
            c1: x[0].exp(),
            a1: x[1],
            a2: x[2],
            a4: x[3],
        }),
    }
}

fn random_start(kind: OracleKind, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    let ln_s = scale.ln();
    let angle = |rng: &mut ChaCha8Rng| {
        rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2)
    };
    match kind {
        OracleKind::Mr => (0..3).map(|_| rng.gen_range(0.0..1.0)).collect(),
        OracleKind::Hgo => vec![
            ln_s + rng.gen_range(-4.0..0.0),
            ln_s + rng.gen_range(-3.0..1.0),
            rng.gen_range(-2.0..4.5),
            angle(rng),
            angle(rng),
        ],
        OracleKind::Goh => vec![
            ln_s + rng.gen_range(-4.0..0.0),
            ln_s + rng.gen_range(-3.0..1.0),
            rng.gen_range(-2.0..4.5),
            rng.gen_range(-3.0..3.0),
            angle(rng),
        ],
        OracleKind::Fung => vec![
            ln_s + rng.gen_range(-5.0..0.0),
            rng.gen_range(-5.0..30.0),
            rng.gen_range(-5.0..30.0),
            rng.gen_range(-5.0..15.0),
        ],
    }
}

struct RestartOutcome {
    x: Vec<f64>,
    fx: f64,
    evals: usize,
    converged: bool,
}

/// Least-squares fit of one oracle family by restarted Nelder-Mead.
pub fn fit_oracle(
    kind: OracleKind,
    data: &Dataset,
    config: &FitConfig,
) -> Result<(OracleModel, FitReport)> {
    data.require_non_empty("fitting")?;
    if config.restarts == 0 || config.max_evals == 0 {
        return Err(Error::Config(
            "restarts and max_evals must be at least 1".into(),
        ));
    }
    let scale = data.peak_stress().max(1e-12);
    let objective = |x: &[f64]| -> f64 {
        let m = decode(kind, x, scale);
        let mut sum = 0.0;
        for r in &data.records {
            match oracle_stress(&m, r.lambda_x, r.lambda_y) {
                Ok((sxx, syy)) => {
                    let (dx, dy) = ((sxx - r.sigma_xx) / scale, (syy - r.sigma_yy) / scale);
                    sum += 0.5 * (dx * dx + dy * dy);
                }
                Err(_) => return f64::INFINITY,
            }
        }
        sum / data.len() as f64
    };
    let opts = NelderMeadOptions {
        max_evals: config.max_evals,
        f_tol: 1e-22,
        x_tol: 1e-11,
        initial_step: 0.2,
    };

    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(k as u64));
            let x0 = random_start(kind, &mut rng, scale);
            let mut r = nelder_mead(objective, &x0, &opts);
            let mut evals = r.evals;
            for _ in 0..config.polish {
                let next = nelder_mead(objective, &r.x, &opts);
                evals += next.evals;
                let improved = next.fx < r.fx;
                let done = !(next.fx < r.fx * (1.0 - 1e-9));
                if improved {
                    r = next;
                }
                if done {
                    break;
                }
            }
            RestartOutcome {
                x: r.x,
                fx: r.fx,
                evals,
                converged: r.converged,
            }
        })
        .collect();

    let (best_restart, best) = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.fx.total_cmp(&b.1.fx).then(a.0.cmp(&b.0)))
        .expect("at least one restart");
    let model = decode(kind, &best.x, scale);
    let res = residuals(&model, data)?;
    let report = FitReport {
        kind,
        errors: summarize_residuals(data, &res),
        converged: best.converged && best.fx.is_finite(),
        evaluations: outcomes.iter().map(|o| o.evals).sum(),
        best_restart,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataproto::{generate_synthetic, LoadingProtocol};
    use crate::kinematics::DeformationGradient;
    use crate::response::invariant_biaxial_stress;
    use crate::tangent::check_tangent;

    fn all_defaults() -> Vec<OracleModel> {
        OracleKind::ALL.iter().map(|k| k.default_model()).collect()
    }

    #[test]
    fn reference_state_is_stress_and_energy_free() {
        let mut models = all_defaults();
        models.push(OracleModel::Fung(FungParams::non_convex()));
        for m in models {
            assert_eq!(oracle_stress(&m, 1.0, 1.0).unwrap(), (0.0, 0.0), "{m:?}");
            assert_eq!(oracle_energy(&m, 1.0, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn mooney_rivlin_neo_hookean_limit() {
        let m = OracleModel::Mr(MrParams {
            c10: 0.5,
            c01: 0.0,
            c20: 0.0,
        });
        let (sxx, syy) = oracle_stress(&m, 1.1, 1.1).unwrap();
        let exact = 1.21 - 1.1f64.powi(-4);
        assert!((sxx - exact).abs() < 1e-14 && (syy - exact).abs() < 1e-14);
        assert!((sxx - 0.52699).abs() < 1e-5);
        let inv = InvariantSet::incompressible(5.0, 3.0, 1.0, 1.0);
        assert_eq!(m.invariant_energy(&inv), 1.0);
    }

    #[test]
    fn fast_path_matches_general_pipeline() {
        for m in all_defaults()
            .into_iter()
            .filter(|m| m.kind() != OracleKind::Fung)
        {
            for &(lx, ly) in &[(1.1, 1.05), (1.15, 1.0), (1.0, 1.2), (1.2, 1.2)] {
                let fast = oracle_stress(&m, lx, ly).unwrap();
                let general = invariant_biaxial_stress(&m, &m.fibers().unwrap(), lx, ly).unwrap();
                assert!((fast.0 - general.0).abs() <= 1e-13 * general.0.abs().max(1.0));
                assert!((fast.1 - general.1).abs() <= 1e-13 * general.1.abs().max(1.0));
            }
        }
    }

    /// `∂Ψ/∂E` along the constrained path equals the PK2 stress; Cauchy is `λ² S`.
    fn conjugacy_error(m: &OracleModel, exx: f64, eyy: f64) -> f64 {
        let stretch = |e: f64| (1.0 + 2.0 * e).sqrt();
        let psi = |ex: f64, ey: f64| oracle_energy(m, stretch(ex), stretch(ey)).unwrap();
        let h = 1e-6 * (1.0 + exx.abs().max(eyy.abs()));
        let sx = (psi(exx + h, eyy) - psi(exx - h, eyy)) / (2.0 * h);
        let sy = (psi(exx, eyy + h) - psi(exx, eyy - h)) / (2.0 * h);
        let (lx, ly) = (stretch(exx), stretch(eyy));
        let (cxx, cyy) = oracle_stress(m, lx, ly).unwrap();
        let ex = (lx * lx * sx - cxx).abs() / cxx.abs().max(1e-8);
        let ey = (ly * ly * sy - cyy).abs() / cyy.abs().max(1e-8);
        ex.max(ey)
    }

    #[test]
    fn goh_reference_parameters_match_energy_differences() {
        let m = OracleModel::Goh(GohParams::default());
        for e in [0.01, 0.02, 0.05] {
            let err = conjugacy_error(&m, e, e);
            assert!(err <= 1e-6, "E = {e}: {err}");
        }
    }

    #[test]
    fn every_oracle_is_work_conjugate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut models = all_defaults();
        models.push(OracleModel::Fung(FungParams::non_convex()));
        for m in models {
            for _ in 0..50 {
                let (ex, ey) = (rng.gen_range(0.005..0.15), rng.gen_range(0.005..0.15));
                let err = conjugacy_error(&m, ex, ey);
                assert!(err <= 1e-6, "{m:?} at ({ex}, {ey}): {err}");
            }
        }
    }

    #[test]
    fn goh_without_dispersion_matches_single_fiber_argument() {
        let goh = GohParams {
            kappa: 0.0,
            ..GohParams::default()
        };
        let hgo = OracleModel::Hgo(HgoParams {
            mu: goh.mu,
            k1: goh.k1 / 2.0,
            k2: goh.k2,
            angle_v: goh.theta,
            angle_w: goh.theta + std::f64::consts::FRAC_PI_2,
        });
        let goh_model = OracleModel::Goh(goh);
        let state = BiaxialState::new(1.1, 1.04, &goh_model.fibers().unwrap()).unwrap();
        assert_eq!(goh.fiber_strain(&state.inv), state.inv.i4v - 1.0);
        let d_goh = goh_model.energy_derivatives(&state.inv).unwrap();
        let d_hgo = hgo.energy_derivatives(&state.inv).unwrap();
        assert!((d_goh.d_i4v - d_hgo.d_i4v).abs() < 1e-15);
    }

    #[test]
    fn tension_only_fibers() {
        let m = OracleModel::Hgo(HgoParams {
            angle_v: 0.0,
            angle_w: 0.0,
            ..HgoParams::default()
        });
        let inv = InvariantSet::incompressible(3.1, 3.1, 0.9, 0.9);
        let d = m.energy_derivatives(&inv).unwrap();
        assert_eq!((d.d_i4v, d.d_i4w), (0.0, 0.0));
        let goh = OracleModel::Goh(GohParams::default());
        let d = goh
            .energy_derivatives(&InvariantSet::incompressible(3.0, 3.0, 0.9, 1.0))
            .unwrap();
        assert_eq!(d.d_i4v, 0.0);
    }

    #[test]
    fn oracle_hessians_give_consistent_tangents() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for m in all_defaults()
            .into_iter()
            .filter(|m| m.kind() != OracleKind::Fung)
        {
            let dirs = m.fibers().unwrap();
            for _ in 0..20 {
                let (lx, ly) = (rng.gen_range(1.02..1.2), rng.gen_range(1.02..1.2));
                let mut f = DeformationGradient::plane_stress(lx, ly).unwrap();
                f.0[(0, 1)] = rng.gen_range(-0.05..0.05);
                let c = check_tangent(&m, &f, &dirs, 1e-6).unwrap();
                assert!(c.relative_error < 1e-6, "{m:?}: {}", c.relative_error);
            }
        }
    }

    #[test]
    fn fung_non_convex_witness() {
        let m = OracleModel::Fung(FungParams::non_convex());
        let n = 21;
        let grid: Vec<f64> = (0..n)
            .map(|k| -0.1 + 0.2 * k as f64 / (n - 1) as f64)
            .collect();
        let psi = |ex: f64, ey: f64| {
            oracle_energy(&m, (1.0 + 2.0 * ex).sqrt(), (1.0 + 2.0 * ey).sqrt()).unwrap()
        };
        let mut negative = 0;
        for i in 1..n - 1 {
            for j in 0..n {
                let d2 = psi(grid[i + 1], grid[j]) - 2.0 * psi(grid[i], grid[j])
                    + psi(grid[i - 1], grid[j]);
                if d2 < 0.0 {
                    negative += 1;
                }
            }
        }
        assert!(negative > 0);
    }

    #[test]
    fn documents_round_trip_and_validate() {
        for m in all_defaults() {
            let back = OracleModel::from_document(&m.to_document()).unwrap();
            assert_eq!(back, m);
        }
        let text = r#"{"kind": "goh", "mu": 0.0102, "k1": 0.513, "k2": 59.1, "kappa": 0.271, "theta": 1.57}"#;
        assert_eq!(
            OracleModel::from_document(text).unwrap(),
            OracleKind::Goh.default_model()
        );
        let bad = r#"{"kind": "goh", "mu": 0.0102, "k1": 0.513, "k2": 59.1, "kappa": 0.5, "theta": 1.57}"#;
        assert!(matches!(
            OracleModel::from_document(bad),
            Err(Error::Config(_))
        ));
        assert!(OracleModel::from_document(r#"{"kind": "ogden"}"#).is_err());
    }

    fn dataset(m: &OracleModel, n: usize) -> Dataset {
        generate_synthetic(m, &LoadingProtocol::standard_set(1.15, n), m.kind().name()).unwrap()
    }

    #[test]
    fn mooney_rivlin_self_fit_recovers_parameters() {
        let truth = MrParams::default();
        let data = dataset(&OracleModel::Mr(truth), 20);
        let (fit, report) = fit_oracle(
            OracleKind::Mr,
            &data,
            &FitConfig {
                restarts: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let OracleModel::Mr(p) = fit else {
            panic!("wrong family")
        };
        for (got, want) in [(p.c10, truth.c10), (p.c01, truth.c01), (p.c20, truth.c20)] {
            assert!((got - want).abs() <= 0.01 * want.abs(), "{got} vs {want}");
        }
        assert!(report.errors.mae < 1e-6);
    }

    #[test]
    fn goh_self_fit_beats_mismatched_family() {
        let data = dataset(&OracleKind::Goh.default_model(), 20);
        let cfg = FitConfig {
            restarts: 8,
            ..Default::default()
        };
        let (_, goh) = fit_oracle(OracleKind::Goh, &data, &cfg).unwrap();
        let (_, mr) = fit_oracle(OracleKind::Mr, &data, &cfg).unwrap();
        assert!(goh.errors.mae <= 1e-4, "{}", goh.errors.mae);
        assert!(mr.errors.mae > goh.errors.mae);
    }

    #[test]
    fn fitting_is_deterministic() {
        let data = dataset(&OracleKind::Hgo.default_model(), 8);
        let cfg = FitConfig {
            restarts: 3,
            max_evals: 500,
            polish: 1,
            seed: 42,
        };
        let a = fit_oracle(OracleKind::Hgo, &data, &cfg).unwrap();
        let b = fit_oracle(OracleKind::Hgo, &data, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(fit_oracle(OracleKind::Hgo, &Dataset::default(), &cfg).is_err());
    }
}
