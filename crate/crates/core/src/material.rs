//! Polyconvex material model assembled from ten scalar neural ODEs.
//!
//! Four *direct* terms map each shifted invariant `J• = I• − I•(identity)` to a
//! derivative `∂Ψ/∂I•`. Six *mixed* terms take `α J_i + (1 − α) J_j` for every pair of
//! invariants and are clamped at zero, contributing `α` and `1 − α` times their
//! output to `∂Ψ/∂I_i` and `∂Ψ/∂I_j`. The `I1` and `I2` derivatives also receive a
//! non-negative bias so that the model can carry a reference stiffness.
//!
//! Every derivative function is monotone and fixes the origin, so every energy term is
//! convex in its argument and the energy is polyconvex by construction.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{invariants, DeformationGradient, InvariantSet, StructuralTensors};
use crate::node::{Activation, OdeSolution, ScalarNodeParams, DEFAULT_STEPS, HIDDEN};
use crate::quadrature::GaussLegendre;
use crate::response::{
    self, BiaxialModel, BiaxialState, EnergyDerivatives, InvariantModel, PlaneStressSolution,
};

pub const N_TERMS: usize = 10;
pub const N_MIXED: usize = 6;

pub const TERM_NAMES: [&str; N_TERMS] = [
    "I1", "I2", "I4v", "I4w", "I1_I2", "I1_I4v", "I1_I4w", "I2_I4v", "I2_I4w", "I4v_I4w",
];

pub const INVARIANT_NAMES: [&str; 4] = ["I1", "I2", "I4v", "I4w"];

/// Invariant indices combined by each mixed term, in node order after the direct terms.
pub const MIXED_PAIRS: [(usize, usize); N_MIXED] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Layout of the flat trainable parameter vector.
pub mod layout {
    use super::{N_MIXED, N_TERMS};
    use crate::node::N_WEIGHTS;

    pub const RAW_BIAS_1: usize = N_TERMS * N_WEIGHTS;
    pub const RAW_BIAS_2: usize = RAW_BIAS_1 + 1;
    pub const RAW_ALPHA: usize = RAW_BIAS_2 + 1;
    pub const FIBER_ANGLE_V: usize = RAW_ALPHA + N_MIXED;
    pub const FIBER_ANGLE_W: usize = FIBER_ANGLE_V + 1;
    pub const N_PARAMS: usize = FIBER_ANGLE_W + 1;

    pub fn node(term: usize) -> std::ops::Range<usize> {
        term * N_WEIGHTS..(term + 1) * N_WEIGHTS
    }
}

pub use layout::N_PARAMS;

/// Invariants slightly below their lower bound are accepted as round-off.
const INVARIANT_TOL: f64 = 1e-9;

pub const DEFAULT_QUADRATURE_ORDER: usize = 16;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Raw parameter whose softplus is `value`; `value = 0` maps to a raw value whose
/// softplus underflows to exactly zero.
pub fn inverse_softplus(value: f64) -> f64 {
    if value <= 0.0 {
        -1000.0
    } else if value > 30.0 {
        value
    } else {
        value.exp_m1().ln()
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub training_provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMaterialModel {
    /// Direct terms `I1, I2, I4v, I4w` followed by the mixed terms of [`MIXED_PAIRS`].
    pub nodes: [ScalarNodeParams; N_TERMS],
    pub raw_bias_1: f64,
    pub raw_bias_2: f64,
    pub raw_alpha: [f64; N_MIXED],
    pub fiber_angle_v: f64,
    pub fiber_angle_w: f64,
    pub metadata: ModelMetadata,
}

/// Every quantity of one model evaluation needed for derivatives and their pullbacks.
#[derive(Debug, Clone)]
pub struct TermEvaluation {
    pub shifted: [f64; 4],
    pub alpha: [f64; N_MIXED],
    pub mixed_input: [f64; N_MIXED],
    pub terms: Vec<OdeSolution>,
}

impl TermEvaluation {
    /// Clamp state of mixed term `k`: active (output forced to zero) when negative.
    pub fn clamp_active(&self, k: usize) -> bool {
        self.terms[4 + k].y < 0.0
    }
}

/// `∂Ψ/∂I` assembled from raw node outputs.
fn assemble_derivatives(
    direct: [f64; 4],
    mixed: [f64; N_MIXED],
    alpha: &[f64; N_MIXED],
    bias: (f64, f64),
) -> [f64; 4] {
    let mut d = direct;
    d[0] += bias.0;
    d[1] += bias.1;
    for (k, &(i, j)) in MIXED_PAIRS.iter().enumerate() {
        let t = mixed[k].max(0.0);
        d[i] += alpha[k] * t;
        d[j] += (1.0 - alpha[k]) * t;
    }
    d
}

fn check_domain(inv: &InvariantSet) -> Result<()> {
    let checks = [
        ("I1", inv.i1, 3.0 - INVARIANT_TOL),
        ("I2", inv.i2, 3.0 - INVARIANT_TOL),
        ("I4v", inv.i4v, 0.0),
        ("I4w", inv.i4w, 0.0),
    ];
    for (name, value, lower) in checks {
        if !value.is_finite() || value < lower {
            return Err(Error::domain(format!(
                "invariant {name} = {value} is outside its admissible domain (>= {lower})"
            )));
        }
    }
    Ok(())
}

impl NodeMaterialModel {
    pub fn zeros(activation: Activation, n_steps: usize) -> Self {
        Self {
            nodes: std::array::from_fn(|_| ScalarNodeParams::zeros(activation, n_steps)),
            raw_bias_1: inverse_softplus(0.0),
            raw_bias_2: inverse_softplus(0.0),
            raw_alpha: [0.0; N_MIXED],
            fiber_angle_v: 0.0,
            fiber_angle_w: FRAC_PI_2,
            metadata: ModelMetadata::default(),
        }
    }

    /// Freshly initialized model: small random weights, small biases, `α = ½`, fibers
    /// along `x` and `y`.
    pub fn new_random(seed: u64) -> Self {
        Self::new_random_with(seed, Activation::Tanh, DEFAULT_STEPS)
    }

    pub fn new_random_with(seed: u64, activation: Activation, n_steps: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(activation, n_steps);
        for node in model.nodes.iter_mut() {
            *node = ScalarNodeParams::random(&mut rng, activation, n_steps);
        }
        model.raw_bias_1 = inverse_softplus(0.01);
        model.raw_bias_2 = inverse_softplus(0.01);
        model.metadata.seed = Some(seed);
        model
    }

    pub fn bias_1(&self) -> f64 {
        softplus(self.raw_bias_1)
    }

    pub fn bias_2(&self) -> f64 {
        softplus(self.raw_bias_2)
    }

    pub fn alpha(&self) -> [f64; N_MIXED] {
        self.raw_alpha.map(logistic)
    }

    pub fn fibers(&self) -> StructuralTensors {
        StructuralTensors::from_angles(self.fiber_angle_v, self.fiber_angle_w)
    }

    fn mixed_inputs(shifted: &[f64; 4], alpha: &[f64; N_MIXED]) -> [f64; N_MIXED] {
        std::array::from_fn(|k| {
            let (i, j) = MIXED_PAIRS[k];
            alpha[k] * shifted[i] + (1.0 - alpha[k]) * shifted[j]
        })
    }

    fn term_inputs(
        &self,
        inv: &InvariantSet,
    ) -> Result<([f64; 4], [f64; N_MIXED], [f64; N_MIXED])> {
        check_domain(inv)?;
        let shifted = inv.shifted().as_array();
        let alpha = self.alpha();
        let mixed = Self::mixed_inputs(&shifted, &alpha);
        Ok((shifted, alpha, mixed))
    }

    fn term_input(shifted: &[f64; 4], mixed: &[f64; N_MIXED], term: usize) -> f64 {
        if term < 4 {
            shifted[term]
        } else {
            mixed[term - 4]
        }
    }

    /// Raw outputs of all ten nodes at their inputs.
    fn node_outputs(&self, shifted: &[f64; 4], mixed: &[f64; N_MIXED]) -> Result<[f64; N_TERMS]> {
        let mut out = [0.0; N_TERMS];
        for (t, node) in self.nodes.iter().enumerate() {
            out[t] = node
                .integrate(Self::term_input(shifted, mixed, t))
                .map_err(|e| e.at(format!("term {}", TERM_NAMES[t])))?;
        }
        Ok(out)
    }

    pub fn energy_derivatives(&self, inv: &InvariantSet) -> Result<EnergyDerivatives> {
        let (shifted, alpha, mixed) = self.term_inputs(inv)?;
        let out = self.node_outputs(&shifted, &mixed)?;
        let direct = [out[0], out[1], out[2], out[3]];
        let mixed_out = std::array::from_fn(|k| out[4 + k]);
        Ok(EnergyDerivatives::from_array(assemble_derivatives(
            direct,
            mixed_out,
            &alpha,
            (self.bias_1(), self.bias_2()),
        )))
    }

    /// `∂²Ψ/∂I_a∂I_b` over `(I1, I2, I4v, I4w)`. Clamped mixed terms contribute nothing.
    pub fn energy_hessian(&self, inv: &InvariantSet) -> Result<[[f64; 4]; 4]> {
        let (shifted, alpha, mixed) = self.term_inputs(inv)?;
        let mut h = [[0.0; 4]; 4];
        for (t, node) in self.nodes.iter().enumerate() {
            let (y, slope) = node
                .integrate_with_input_sensitivity(Self::term_input(&shifted, &mixed, t))
                .map_err(|e| e.at(format!("term {}", TERM_NAMES[t])))?;
            if t < 4 {
                h[t][t] += slope;
                continue;
            }
            let k = t - 4;
            if y < 0.0 {
                continue;
            }
            let (i, j) = MIXED_PAIRS[k];
            let a = alpha[k];
            h[i][i] += a * a * slope;
            h[j][j] += (1.0 - a) * (1.0 - a) * slope;
            h[i][j] += a * (1.0 - a) * slope;
            h[j][i] += a * (1.0 - a) * slope;
        }
        Ok(h)
    }

    /// Full evaluation with every node's input and weight sensitivities.
    pub fn evaluate_terms(&self, inv: &InvariantSet) -> Result<TermEvaluation> {
        let (shifted, alpha, mixed) = self.term_inputs(inv)?;
        let mut terms = Vec::with_capacity(N_TERMS);
        for (t, node) in self.nodes.iter().enumerate() {
            terms.push(
                node.integrate_with_param_gradient(Self::term_input(&shifted, &mixed, t))
                    .map_err(|e| e.at(format!("term {}", TERM_NAMES[t])))?,
            );
        }
        Ok(TermEvaluation {
            shifted,
            alpha,
            mixed_input: mixed,
            terms,
        })
    }

    pub fn derivatives_from(&self, eval: &TermEvaluation) -> EnergyDerivatives {
        let direct = std::array::from_fn(|a| eval.terms[a].y);
        let mixed = std::array::from_fn(|k| eval.terms[4 + k].y);
        EnergyDerivatives::from_array(assemble_derivatives(
            direct,
            mixed,
            &eval.alpha,
            (self.bias_1(), self.bias_2()),
        ))
    }

    /// Accumulates `Σ_a psi_bar[a] · ∂(∂Ψ/∂I_a)/∂params` into `grad` and returns the
    /// cotangents of the shifted invariants, which callers chain to the fiber angles.
    pub fn pullback_derivatives(
        &self,
        eval: &TermEvaluation,
        psi_bar: [f64; 4],
        grad: &mut [f64],
    ) -> [f64; 4] {
        debug_assert_eq!(grad.len(), N_PARAMS);
        let mut j_bar = [0.0; 4];
        grad[layout::RAW_BIAS_1] += psi_bar[0] * logistic(self.raw_bias_1);
        grad[layout::RAW_BIAS_2] += psi_bar[1] * logistic(self.raw_bias_2);

        for a in 0..4 {
            let sol = &eval.terms[a];
            axpy(psi_bar[a], &sol.dy_dtheta, &mut grad[layout::node(a)]);
            j_bar[a] += psi_bar[a] * sol.dy_dx;
        }

        for (k, &(i, j)) in MIXED_PAIRS.iter().enumerate() {
            let sol = &eval.terms[4 + k];
            if sol.y < 0.0 {
                continue;
            }
            let a = eval.alpha[k];
            let t_bar = a * psi_bar[i] + (1.0 - a) * psi_bar[j];
            axpy(t_bar, &sol.dy_dtheta, &mut grad[layout::node(4 + k)]);
            let m_bar = t_bar * sol.dy_dx;
            let alpha_bar =
                sol.y * (psi_bar[i] - psi_bar[j]) + m_bar * (eval.shifted[i] - eval.shifted[j]);
            grad[layout::RAW_ALPHA + k] += alpha_bar * a * (1.0 - a);
            j_bar[i] += m_bar * a;
            j_bar[j] += m_bar * (1.0 - a);
        }
        j_bar
    }

    /// Energy as the sum of one-dimensional integrals of every derivative function.
    pub fn strain_energy(&self, inv: &InvariantSet, order: usize) -> Result<EnergyValue> {
        let (shifted, alpha, mixed) = self.term_inputs(inv)?;
        let rule = GaussLegendre::new(order)?;
        let mut psi = self.bias_1() * shifted[0] + self.bias_2() * shifted[1];
        for (t, node) in self.nodes.iter().enumerate() {
            let upper = Self::term_input(&shifted, &mixed, t);
            let integral = if t < 4 {
                rule.integrate(0.0, upper, |u| node.integrate(u))
            } else if upper > 0.0 {
                rule.integrate(0.0, upper, |u| node.integrate(u).map(|y| y.max(0.0)))
            } else {
                Ok(0.0)
            };
            psi += integral.map_err(|e| e.at(format!("term {}", TERM_NAMES[t])))?;
        }
        let _ = alpha;
        Ok(EnergyValue {
            psi,
            quadrature_order: order,
        })
    }

    pub fn pk2_stress(
        &self,
        f: &DeformationGradient,
        dirs: &StructuralTensors,
    ) -> Result<PlaneStressSolution> {
        response::pk2_stress(self, f, dirs)
    }

    /// Biaxial Cauchy stresses and their Jacobians with respect to the flat parameters.
    pub fn biaxial_stress_jacobian(&self, lambda_x: f64, lambda_y: f64) -> Result<BiaxialJacobian> {
        let f = DeformationGradient::plane_stress(lambda_x, lambda_y)?;
        let c = f.right_cauchy_green()?;
        let dirs = self.fibers();
        let inv = invariants(&c, &dirs);
        let eval = self.evaluate_terms(&inv)?;
        let d = self.derivatives_from(&eval).as_array();

        let (cx, cy, cz) = (c.0[(0, 0)], c.0[(1, 1)], c.0[(2, 2)]);
        let i1 = inv.i1;
        let (sv, cv) = self.fiber_angle_v.sin_cos();
        let (sw, cw) = self.fiber_angle_w.sin_cos();
        let thickness = cz * (i1 - cz);
        let g_xx = [
            2.0 * (cx - cz),
            2.0 * (cx * (i1 - cx) - thickness),
            2.0 * cx * cv * cv,
            2.0 * cx * cw * cw,
        ];
        let g_yy = [
            2.0 * (cy - cz),
            2.0 * (cy * (i1 - cy) - thickness),
            2.0 * cy * sv * sv,
            2.0 * cy * sw * sw,
        ];
        let sigma_xx: f64 = g_xx.iter().zip(&d).map(|(g, d)| g * d).sum();
        let sigma_yy: f64 = g_yy.iter().zip(&d).map(|(g, d)| g * d).sum();

        let sin2v = (2.0 * self.fiber_angle_v).sin();
        let sin2w = (2.0 * self.fiber_angle_w).sin();
        let row = |g: [f64; 4], c_own: f64, sign: f64| -> Vec<f64> {
            let mut grad = vec![0.0; N_PARAMS];
            let j_bar = self.pullback_derivatives(&eval, g, &mut grad);
            grad[layout::FIBER_ANGLE_V] +=
                j_bar[2] * (cy - cx) * sin2v + sign * 2.0 * d[2] * c_own * sin2v;
            grad[layout::FIBER_ANGLE_W] +=
                j_bar[3] * (cy - cx) * sin2w + sign * 2.0 * d[3] * c_own * sin2w;
            grad
        };
        Ok(BiaxialJacobian {
            sigma_xx,
            sigma_yy,
            d_sigma_xx: row(g_xx, cx, -1.0),
            d_sigma_yy: row(g_yy, cy, 1.0),
        })
    }

    pub fn to_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(N_PARAMS);
        for node in &self.nodes {
            p.extend_from_slice(&node.to_flat());
        }
        p.push(self.raw_bias_1);
        p.push(self.raw_bias_2);
        p.extend_from_slice(&self.raw_alpha);
        p.push(self.fiber_angle_v);
        p.push(self.fiber_angle_w);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), N_PARAMS, "model expects {N_PARAMS} parameters");
        for (t, node) in self.nodes.iter_mut().enumerate() {
            node.set_flat(&p[layout::node(t)]);
        }
        self.raw_bias_1 = p[layout::RAW_BIAS_1];
        self.raw_bias_2 = p[layout::RAW_BIAS_2];
        self.raw_alpha
            .copy_from_slice(&p[layout::RAW_ALPHA..layout::RAW_ALPHA + N_MIXED]);
        self.fiber_angle_v = p[layout::FIBER_ANGLE_V];
        self.fiber_angle_w = p[layout::FIBER_ANGLE_W];
    }

    pub fn activation(&self) -> Activation {
        self.nodes[0].activation
    }

    pub fn n_steps(&self) -> usize {
        self.nodes[0].n_steps
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    if a == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyValue {
    pub psi: f64,
    pub quadrature_order: usize,
}

#[derive(Debug, Clone)]
pub struct BiaxialJacobian {
    pub sigma_xx: f64,
    pub sigma_yy: f64,
    pub d_sigma_xx: Vec<f64>,
    pub d_sigma_yy: Vec<f64>,
}

impl InvariantModel for NodeMaterialModel {
    fn energy_derivatives(&self, inv: &InvariantSet) -> Result<EnergyDerivatives> {
        NodeMaterialModel::energy_derivatives(self, inv)
    }
}

impl BiaxialModel for NodeMaterialModel {
    fn biaxial_stress(&self, lambda_x: f64, lambda_y: f64) -> Result<(f64, f64)> {
        let state = BiaxialState::new(lambda_x, lambda_y, &self.fibers())?;
        Ok(state.cauchy(&self.energy_derivatives(&state.inv)?))
    }

    fn biaxial_energy(&self, lambda_x: f64, lambda_y: f64) -> Result<f64> {
        let f = DeformationGradient::plane_stress(lambda_x, lambda_y)?;
        let inv = invariants(&f.right_cauchy_green()?, &self.fibers());
        Ok(self.strain_energy(&inv, DEFAULT_QUADRATURE_ORDER)?.psi)
    }
}

// ---------------------------------------------------------------------------
// Model document

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Architecture {
    layers: Vec<usize>,
    activation: Activation,
    n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    schema_version: u32,
    architecture: Architecture,
    nodes: BTreeMap<String, Vec<Vec<Vec<f64>>>>,
    raw_bias_1: f64,
    raw_bias_2: f64,
    raw_alpha: Vec<f64>,
    fiber_angle_v: f64,
    fiber_angle_w: f64,
    #[serde(default)]
    metadata: ModelMetadata,
}

const LAYERS: [usize; 4] = [1, HIDDEN, HIDDEN, 1];

fn node_matrices(node: &ScalarNodeParams) -> Vec<Vec<Vec<f64>>> {
    vec![
        node.input.iter().map(|&w| vec![w]).collect(),
        node.hidden.iter().map(|row| row.to_vec()).collect(),
        vec![node.output.to_vec()],
    ]
}

fn check_shape(location: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::parse(
            location,
            format!("expected a {rows}x{cols} matrix"),
        ));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::parse(location, "weights must be finite"));
    }
    Ok(())
}

fn node_from_matrices(
    name: &str,
    mats: &[Vec<Vec<f64>>],
    activation: Activation,
    n_steps: usize,
) -> Result<ScalarNodeParams> {
    let base = format!("nodes.{name}");
    if mats.len() != 3 {
        return Err(Error::parse(&base, "expected three weight matrices"));
    }
    check_shape(&format!("{base}[0]"), &mats[0], HIDDEN, 1)?;
    check_shape(&format!("{base}[1]"), &mats[1], HIDDEN, HIDDEN)?;
    check_shape(&format!("{base}[2]"), &mats[2], 1, HIDDEN)?;
    let mut node = ScalarNodeParams::zeros(activation, n_steps);
    for r in 0..HIDDEN {
        node.input[r] = mats[0][r][0];
        node.hidden[r].copy_from_slice(&mats[1][r]);
    }
    node.output.copy_from_slice(&mats[2][0]);
    Ok(node)
}

impl NodeMaterialModel {
    pub fn to_document(&self) -> String {
        let doc = ModelDocument {
            schema_version: SCHEMA_VERSION,
            architecture: Architecture {
                layers: LAYERS.to_vec(),
                activation: self.activation(),
                n_steps: self.n_steps(),
            },
            nodes: TERM_NAMES
                .iter()
                .zip(&self.nodes)
                .map(|(name, node)| (name.to_string(), node_matrices(node)))
                .collect(),
            raw_bias_1: self.raw_bias_1,
            raw_bias_2: self.raw_bias_2,
            raw_alpha: self.raw_alpha.to_vec(),
            fiber_angle_v: self.fiber_angle_v,
            fiber_angle_w: self.fiber_angle_w,
            metadata: self.metadata.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("model document serializes");
        text.push('\n');
        text
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| {
            Error::parse(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(
                "schema_version",
                format!("unsupported version {}", doc.schema_version),
            ));
        }
        if doc.architecture.layers != LAYERS {
            return Err(Error::parse(
                "architecture.layers",
                format!("expected {LAYERS:?}, got {:?}", doc.architecture.layers),
            ));
        }
        if doc.architecture.n_steps == 0 {
            return Err(Error::parse("architecture.n_steps", "must be at least 1"));
        }
        if let Some(extra) = doc.nodes.keys().find(|k| !TERM_NAMES.contains(&k.as_str())) {
            return Err(Error::parse(format!("nodes.{extra}"), "unknown term"));
        }
        let mut nodes = Vec::with_capacity(N_TERMS);
        for name in TERM_NAMES {
            let mats = doc
                .nodes
                .get(name)
                .ok_or_else(|| Error::parse(format!("nodes.{name}"), "missing node"))?;
            nodes.push(node_from_matrices(
                name,
                mats,
                doc.architecture.activation,
                doc.architecture.n_steps,
            )?);
        }
        if doc.raw_alpha.len() != N_MIXED {
            return Err(Error::parse(
                "raw_alpha",
                format!("expected {N_MIXED} entries, got {}", doc.raw_alpha.len()),
            ));
        }
        let scalars = [
            ("raw_bias_1", doc.raw_bias_1),
            ("raw_bias_2", doc.raw_bias_2),
            ("fiber_angle_v", doc.fiber_angle_v),
            ("fiber_angle_w", doc.fiber_angle_w),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(Error::parse(name, "must be finite"));
            }
        }
        Ok(Self {
            nodes: nodes.try_into().expect("ten nodes"),
            raw_bias_1: doc.raw_bias_1,
            raw_bias_2: doc.raw_bias_2,
            raw_alpha: doc.raw_alpha.try_into().expect("six mixing weights"),
            fiber_angle_v: doc.fiber_angle_v,
            fiber_angle_w: doc.fiber_angle_w,
            metadata: doc.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_document()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Model with larger-than-initial weights so every term is visibly nonlinear.
    pub(crate) fn trained_like(seed: u64) -> NodeMaterialModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = NodeMaterialModel::new_random(seed);
        let mut p = m.to_params();
        for v in p[..layout::RAW_BIAS_1].iter_mut() {
            *v = rng.gen_range(-1.2..1.2);
        }
        p[layout::RAW_BIAS_1] = rng.gen_range(-3.0..0.0);
        p[layout::RAW_BIAS_2] = rng.gen_range(-3.0..0.0);
        for k in 0..N_MIXED {
            p[layout::RAW_ALPHA + k] = rng.gen_range(-2.0..2.0);
        }
        p[layout::FIBER_ANGLE_V] = rng.gen_range(-0.5..0.5);
        p[layout::FIBER_ANGLE_W] = rng.gen_range(1.0..2.0);
        m.set_params(&p);
        m
    }

    fn state(lx: f64, ly: f64, model: &NodeMaterialModel) -> InvariantSet {
        let f = DeformationGradient::plane_stress(lx, ly).unwrap();
        invariants(&f.right_cauchy_green().unwrap(), &model.fibers())
    }

    #[test]
    fn identity_derivatives_are_the_biases() {
        let m = trained_like(1);
        let d = m.energy_derivatives(&InvariantSet::IDENTITY).unwrap();
        assert_eq!(d.d_i1, m.bias_1());
        assert_eq!(d.d_i2, m.bias_2());
        assert_eq!(d.d_i4v, 0.0);
        assert_eq!(d.d_i4w, 0.0);
        let eval = m.evaluate_terms(&InvariantSet::IDENTITY).unwrap();
        assert!(eval.mixed_input.iter().all(|&u| u == 0.0));
        assert!(eval.terms.iter().all(|t| t.y == 0.0));
    }

    #[test]
    fn zero_weights_leave_identity_flows() {
        // A bias-free node with zero weights is the identity map, so the zero-weight
        // model is not neo-Hookean: each derivative picks up its shifted invariant.
        let mut m = NodeMaterialModel::zeros(Activation::Tanh, 20);
        m.raw_bias_1 = inverse_softplus(0.5);
        assert!((m.bias_1() - 0.5).abs() < 1e-15);
        assert_eq!(m.bias_2(), 0.0);
        let inv = InvariantSet::incompressible(5.0, 4.25, 4.0, 1.0);
        let d = m.energy_derivatives(&inv).unwrap();
        let s = inv.shifted().as_array();
        let mut expected = [s[0] + 0.5, s[1], s[2], s[3]];
        for &(i, j) in &MIXED_PAIRS {
            let t = 0.5 * s[i] + 0.5 * s[j];
            expected[i] += 0.5 * t;
            expected[j] += 0.5 * t;
        }
        for (a, b) in d.as_array().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        let h = m.energy_hessian(&inv).unwrap();
        assert!((h[0][0] - 1.0 - 3.0 * 0.25).abs() < 1e-14);
    }

    #[test]
    fn derivatives_match_term_by_term_recomputation() {
        let m = trained_like(4);
        let inv = InvariantSet::incompressible(5.0, 4.25, 4.0, 1.0);
        let d = m.energy_derivatives(&inv).unwrap().as_array();
        assert!(d.iter().all(|&v| v >= 0.0));
        let s = inv.shifted().as_array();
        let alpha = m.alpha();
        let mut expected = [
            m.nodes[0].integrate(s[0]).unwrap() + m.bias_1(),
            m.nodes[1].integrate(s[1]).unwrap() + m.bias_2(),
            m.nodes[2].integrate(s[2]).unwrap(),
            m.nodes[3].integrate(s[3]).unwrap(),
        ];
        for (k, &(i, j)) in MIXED_PAIRS.iter().enumerate() {
            let u = alpha[k] * s[i] + (1.0 - alpha[k]) * s[j];
            let y = m.nodes[4 + k].integrate(u).unwrap().max(0.0);
            expected[i] += alpha[k] * y;
            expected[j] += (1.0 - alpha[k]) * y;
        }
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn domain_violation_names_invariant() {
        let m = trained_like(2);
        let err = m
            .energy_derivatives(&InvariantSet::incompressible(2.5, 3.0, 1.0, 1.0))
            .unwrap_err();
        assert!(err.to_string().contains("I1"), "{err}");
        let err = m
            .energy_derivatives(&InvariantSet::incompressible(3.0, 3.0, 1.0, -0.1))
            .unwrap_err();
        assert!(err.to_string().contains("I4w"), "{err}");
    }

    fn fd_hessian(m: &NodeMaterialModel, inv: &InvariantSet, h: f64) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for b in 0..4 {
            let mut plus = *inv;
            let mut minus = *inv;
            let bump = |s: &mut InvariantSet, d: f64| match b {
                0 => s.i1 += d,
                1 => s.i2 += d,
                2 => s.i4v += d,
                _ => s.i4w += d,
            };
            bump(&mut plus, h);
            bump(&mut minus, -h);
            let dp = m.energy_derivatives(&plus).unwrap().as_array();
            let dm = m.energy_derivatives(&minus).unwrap().as_array();
            for a in 0..4 {
                out[a][b] = (dp[a] - dm[a]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        for seed in 0..40 {
            let m = trained_like(seed);
            let inv = state(rng.gen_range(1.02..1.3), rng.gen_range(1.02..1.3), &m);
            let eval = m.evaluate_terms(&inv).unwrap();
            let near_kink = (0..N_MIXED)
                .any(|k| eval.mixed_input[k].abs() < 1e-3 || eval.terms[4 + k].y.abs() < 1e-6);
            if near_kink {
                continue;
            }
            checked += 1;
            let h = m.energy_hessian(&inv).unwrap();
            let fd = fd_hessian(&m, &inv, 1e-5);
            for a in 0..4 {
                for b in 0..4 {
                    assert!((h[a][b] - h[b][a]).abs() <= 1e-12);
                    let tol = 1e-5 * h[a][b].abs().max(1e-3);
                    assert!(
                        (h[a][b] - fd[a][b]).abs() <= tol,
                        "seed {seed} ({a},{b}): {} vs {}",
                        h[a][b],
                        fd[a][b]
                    );
                }
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn hessian_at_identity_uses_slopes_at_zero() {
        let m = trained_like(8);
        let h = m.energy_hessian(&InvariantSet::IDENTITY).unwrap();
        let alpha = m.alpha();
        let slope = |t: usize| m.nodes[t].integrate_with_input_sensitivity(0.0).unwrap().1;
        let mut expected = [[0.0; 4]; 4];
        for a in 0..4 {
            expected[a][a] = slope(a);
        }
        for (k, &(i, j)) in MIXED_PAIRS.iter().enumerate() {
            let s = slope(4 + k);
            expected[i][i] += alpha[k] * alpha[k] * s;
            expected[j][j] += (1.0 - alpha[k]) * (1.0 - alpha[k]) * s;
            expected[i][j] += alpha[k] * (1.0 - alpha[k]) * s;
            expected[j][i] += alpha[k] * (1.0 - alpha[k]) * s;
        }
        for a in 0..4 {
            for b in 0..4 {
                assert!((h[a][b] - expected[a][b]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn energy_examples() {
        let m = trained_like(3);
        assert_eq!(
            m.strain_energy(&InvariantSet::IDENTITY, 16).unwrap().psi,
            0.0
        );

        // Integrals of identity flows are quadratic, so low orders are already exact.
        let mut zero = NodeMaterialModel::zeros(Activation::Tanh, 20);
        zero.raw_bias_1 = inverse_softplus(0.5);
        let inv = InvariantSet::incompressible(5.0, 4.25, 4.0, 1.0);
        let s = inv.shifted().as_array();
        let mut expected = 0.5 * s[0] + s.iter().map(|v| 0.5 * v * v).sum::<f64>();
        for &(i, j) in &MIXED_PAIRS {
            let u = 0.5 * s[i] + 0.5 * s[j];
            expected += 0.5 * u * u;
        }
        let psi = zero.strain_energy(&inv, 16).unwrap().psi;
        assert!((psi - expected).abs() < 1e-12, "{psi} vs {expected}");
    }

    #[test]
    fn energy_gradient_matches_derivatives() {
        const ORDER: usize = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..10 {
            let m = trained_like(seed);
            let inv = state(rng.gen_range(1.05..1.25), rng.gen_range(1.05..1.25), &m);
            let d = m.energy_derivatives(&inv).unwrap().as_array();
            let h = 1e-5;
            for a in 0..4 {
                let mut plus = inv;
                let mut minus = inv;
                match a {
                    0 => {
                        plus.i1 += h;
                        minus.i1 -= h;
                    }
                    1 => {
                        plus.i2 += h;
                        minus.i2 -= h;
                    }
                    2 => {
                        plus.i4v += h;
                        minus.i4v -= h;
                    }
                    _ => {
                        plus.i4w += h;
                        minus.i4w -= h;
                    }
                }
                let fd = (m.strain_energy(&plus, ORDER).unwrap().psi
                    - m.strain_energy(&minus, ORDER).unwrap().psi)
                    / (2.0 * h);
                assert!(
                    (fd - d[a]).abs() <= 1e-6 * d[a].abs().max(1.0),
                    "seed {seed} a {a}: {fd} vs {}",
                    d[a]
                );
            }
        }
    }

    #[test]
    fn energy_is_convex_along_each_invariant() {
        for seed in 0..5 {
            let m = trained_like(seed);
            let base = state(1.1, 1.05, &m);
            for a in 0..4 {
                let psi: Vec<f64> = (0..21)
                    .map(|k| {
                        let mut s = base;
                        let d = 0.02 * k as f64;
                        match a {
                            0 => s.i1 += d,
                            1 => s.i2 += d,
                            2 => s.i4v += d,
                            _ => s.i4w += d,
                        }
                        m.strain_energy(&s, 16).unwrap().psi
                    })
                    .collect();
                for w in psi.windows(3) {
                    assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-9);
                }
            }
        }
    }

    #[test]
    fn stress_free_reference_for_random_models() {
        for seed in 0..100 {
            let m = trained_like(seed);
            let sol = m
                .pk2_stress(
                    &DeformationGradient::plane_stress(1.0, 1.0).unwrap(),
                    &m.fibers(),
                )
                .unwrap();
            assert!(sol.s.abs().max() <= 1e-10);
            assert!(sol.sigma.abs().max() <= 1e-10);
        }
    }

    #[test]
    fn objectivity_under_in_plane_rotation() {
        use nalgebra::{Matrix3, Rotation3, Vector3};
        let m = trained_like(12);
        let f = DeformationGradient::plane_stress(1.15, 1.05).unwrap();
        let base = m.pk2_stress(&f, &m.fibers()).unwrap();
        for k in 0..12 {
            let q = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.5 * k as f64);
            let qf = DeformationGradient(q.matrix() * f.0);
            let rotated = m.pk2_stress(&qf, &m.fibers()).unwrap();
            let expected: Matrix3<f64> = q.matrix() * base.sigma * q.matrix().transpose();
            assert!((rotated.sigma - expected).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn work_conjugacy_of_stress() {
        // dΨ/dE_xx along the constrained biaxial path equals S_xx.
        for seed in 0..6 {
            let m = trained_like(seed);
            let (ex, ey) = (0.06, 0.04);
            let energy = |ex: f64, ey: f64| {
                let lx = (1.0 + 2.0 * ex).sqrt();
                let ly = (1.0 + 2.0 * ey).sqrt();
                m.strain_energy(&state(lx, ly, &m), 32).unwrap().psi
            };
            let h = 1e-5;
            let fd_x = (energy(ex + h, ey) - energy(ex - h, ey)) / (2.0 * h);
            let fd_y = (energy(ex, ey + h) - energy(ex, ey - h)) / (2.0 * h);
            let f =
                DeformationGradient::plane_stress((1.0 + 2.0 * ex).sqrt(), (1.0 + 2.0 * ey).sqrt())
                    .unwrap();
            let sol = m.pk2_stress(&f, &m.fibers()).unwrap();
            assert!((fd_x - sol.s[(0, 0)]).abs() <= 1e-6 * sol.s[(0, 0)].abs().max(1e-3));
            assert!((fd_y - sol.s[(1, 1)]).abs() <= 1e-6 * sol.s[(1, 1)].abs().max(1e-3));
        }
    }

    #[test]
    fn stress_jacobian_matches_general_pipeline_and_finite_differences() {
        let m = trained_like(21);
        let (lx, ly) = (1.12, 1.04);
        let jac = m.biaxial_stress_jacobian(lx, ly).unwrap();
        let (sxx, syy) = response::invariant_biaxial_stress(&m, &m.fibers(), lx, ly).unwrap();
        let (fxx, fyy) = m.biaxial_stress(lx, ly).unwrap();
        assert!((fxx - sxx).abs() < 1e-13 && (fyy - syy).abs() < 1e-13);
        assert!((jac.sigma_xx - sxx).abs() < 1e-13);
        assert!((jac.sigma_yy - syy).abs() < 1e-13);

        let p = m.to_params();
        let h = 1e-6;
        for k in (0..N_PARAMS).step_by(7).chain(layout::RAW_BIAS_1..N_PARAMS) {
            let mut plus = m.clone();
            let mut minus = m.clone();
            let mut q = p.clone();
            q[k] += h;
            plus.set_params(&q);
            q[k] -= 2.0 * h;
            minus.set_params(&q);
            let (px, py) = plus.biaxial_stress(lx, ly).unwrap();
            let (mx, my) = minus.biaxial_stress(lx, ly).unwrap();
            let fx = (px - mx) / (2.0 * h);
            let fy = (py - my) / (2.0 * h);
            assert!(
                (fx - jac.d_sigma_xx[k]).abs() <= 1e-5 * fx.abs().max(1e-4),
                "param {k}: {fx} vs {}",
                jac.d_sigma_xx[k]
            );
            assert!(
                (fy - jac.d_sigma_yy[k]).abs() <= 1e-5 * fy.abs().max(1e-4),
                "param {k}: {fy} vs {}",
                jac.d_sigma_yy[k]
            );
        }
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let m = trained_like(17);
        let back = NodeMaterialModel::from_document(&m.to_document()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.to_document(), back.to_document());
    }

    #[test]
    fn document_missing_node_is_named() {
        let m = trained_like(1);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_document()).unwrap();
        v["nodes"].as_object_mut().unwrap().remove("I2_I4w");
        let err = NodeMaterialModel::from_document(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("nodes.I2_I4w"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&m.to_document()).unwrap();
        v["nodes"]["I1"][1] = serde_json::json!([[1.0]]);
        let err = NodeMaterialModel::from_document(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("nodes.I1[1]"), "{err}");
    }

    #[test]
    fn raw_alpha_is_unconstrained() {
        let mut m = trained_like(1);
        m.raw_alpha[0] = 40.0;
        m.raw_alpha[1] = -55.5;
        let back = NodeMaterialModel::from_document(&m.to_document()).unwrap();
        assert_eq!(back.raw_alpha[1], -55.5);
        let a = back.alpha();
        assert!(a[0] <= 1.0 && a[1] >= 0.0);
    }
}
