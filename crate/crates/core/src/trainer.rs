//! Stress-matching loss, its exact gradient, Adam training and evaluation reports.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataproto::{stress_errors, Dataset, ErrorSummary, Protocol, Split};
use crate::error::{Error, Result};
use crate::material::layout::{self, N_PARAMS};
use crate::material::NodeMaterialModel;
use crate::optim::{Adam, AdamSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerChoice {
    Adam(AdamSettings),
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    Full,
    Size(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    /// Multiplies the learning rate linearly down to this fraction by the last iteration.
    #[serde(default = "defaults::final_lr_fraction")]
    pub final_lr_fraction: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::optimizer")]
    pub optimizer: OptimizerChoice,
    #[serde(default = "defaults::batch")]
    pub batch: Batch,
    #[serde(default)]
    pub seed: u64,
    /// Stop once the loss changed by less than this over `plateau_window` iterations.
    #[serde(default = "defaults::convergence_tol")]
    pub convergence_tol: f64,
    #[serde(default = "defaults::plateau_window")]
    pub plateau_window: usize,
    #[serde(default = "defaults::train_fiber_angles")]
    pub train_fiber_angles: bool,
    #[serde(default = "defaults::history_every")]
    pub history_every: usize,
}

mod defaults {
    use super::*;

    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn final_lr_fraction() -> f64 {
        1.0
    }
    pub fn max_iters() -> usize {
        5000
    }
    pub fn optimizer() -> OptimizerChoice {
        OptimizerChoice::Adam(AdamSettings::default())
    }
    pub fn batch() -> Batch {
        Batch::Full
    }
    pub fn convergence_tol() -> f64 {
        1e-12
    }
    pub fn plateau_window() -> usize {
        200
    }
    pub fn train_fiber_angles() -> bool {
        true
    }
    pub fn history_every() -> usize {
        10
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            final_lr_fraction: defaults::final_lr_fraction(),
            max_iters: defaults::max_iters(),
            optimizer: defaults::optimizer(),
            batch: defaults::batch(),
            seed: 0,
            convergence_tol: defaults::convergence_tol(),
            plateau_window: defaults::plateau_window(),
            train_fiber_angles: defaults::train_fiber_angles(),
            history_every: defaults::history_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "final_lr_fraction must lie in (0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.batch == Batch::Size(0) {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.history_every == 0 {
            return Err(Error::Config("history_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| {
            Error::parse(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn learning_rate_at(&self, iter: usize) -> f64 {
        if self.max_iters <= 1 {
            return self.learning_rate;
        }
        let t = iter as f64 / (self.max_iters - 1) as f64;
        self.learning_rate * (1.0 - t * (1.0 - self.final_lr_fraction))
    }
}

/// `mean_r [(Δσxx² + Δσyy²)/2]`.
pub fn loss(model: &NodeMaterialModel, data: &Dataset) -> Result<f64> {
    data.require_non_empty("loss")?;
    Ok(stress_errors(model, data)?.mse)
}

/// Loss and its gradient with respect to the flat parameter vector.
pub fn loss_and_gradient(model: &NodeMaterialModel, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    loss_and_gradient_on(model, data, None)
}

pub fn loss_gradient(model: &NodeMaterialModel, data: &Dataset) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(model, data)?.1)
}

fn loss_and_gradient_on(
    model: &NodeMaterialModel,
    data: &Dataset,
    subset: Option<&[usize]>,
) -> Result<(f64, Vec<f64>)> {
    data.require_non_empty("loss")?;
    let indices: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..data.len()).collect(),
    };
    let parts = indices
        .par_iter()
        .map(|&k| {
            let r = &data.records[k];
            let jac = model
                .biaxial_stress_jacobian(r.lambda_x, r.lambda_y)
                .map_err(|e| {
                    e.at(format!(
                        "record {k} ({} at {}, {})",
                        r.protocol, r.lambda_x, r.lambda_y
                    ))
                })?;
            let dx = jac.sigma_xx - r.sigma_xx;
            let dy = jac.sigma_yy - r.sigma_yy;
            let grad: Vec<f64> = jac
                .d_sigma_xx
                .iter()
                .zip(&jac.d_sigma_yy)
                .map(|(gx, gy)| dx * gx + dy * gy)
                .collect();
            Ok((0.5 * (dx * dx + dy * dy), grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = indices.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; N_PARAMS];
    for (l, g) in &parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub best_iteration: usize,
    /// Mean squared error of the returned snapshot on the training data (MPa²).
    pub total_mse: f64,
    pub per_protocol_mae: BTreeMap<Protocol, f64>,
    /// Loss of the current iterate, sampled every `history_every` iterations and at the end.
    pub history: Vec<(usize, f64)>,
    /// Best loss seen so far at the same iterations; never increases.
    pub best_history: Vec<(usize, f64)>,
    pub wall_clock_seconds: f64,
}

/// Trains all parameters with Adam (or plain gradient descent) and returns the best snapshot.
pub fn train(
    model: &NodeMaterialModel,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(NodeMaterialModel, TrainReport)> {
    config.validate()?;
    data.require_non_empty("training")?;
    let start = Instant::now();

    let mut params = model.to_params();
    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_iteration = 0;
    let mut history = Vec::new();
    let mut best_history = Vec::new();
    let mut losses: Vec<f64> = Vec::with_capacity(config.max_iters);

    let mask: Vec<bool> = (0..N_PARAMS)
        .map(|k| {
            config.train_fiber_angles || (k != layout::FIBER_ANGLE_V && k != layout::FIBER_ANGLE_W)
        })
        .collect();
    let mut adam = match config.optimizer {
        OptimizerChoice::Adam(s) => Some(Adam::new(N_PARAMS, s)),
        OptimizerChoice::GradientDescent => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();

    let mut stop_reason = StopReason::MaxIters;
    let mut iterations = 0;
    for iter in 0..config.max_iters {
        let evaluated = match config.batch {
            Batch::Full => loss_and_gradient_on(&current, data, None),
            Batch::Size(size) => {
                let size = size.min(data.len());
                if cursor + size > order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let batch = &order[cursor..cursor + size];
                cursor += size;
                loss_and_gradient_on(&current, data, Some(batch))
                    .and_then(|(_, g)| Ok((loss(&current, data)?, g)))
            }
        };
        let (full_loss, grad) = match evaluated {
            Ok(v) => v,
            // A blown-up ODE after an update is divergence, not a bad starting model.
            Err(e) if iter > 0 && matches!(e.root(), Error::NonFinite { .. }) => {
                return Err(Error::Diverged {
                    iteration: iter,
                    snapshot: Box::new(best),
                })
            }
            Err(e) => return Err(e),
        };
        iterations = iter + 1;
        if !full_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: iter,
                snapshot: Box::new(best),
            });
        }
        if full_loss < best_loss {
            best_loss = full_loss;
            best = current.clone();
            best_iteration = iter;
        }
        if iter % config.history_every == 0 {
            history.push((iter, full_loss));
            best_history.push((iter, best_loss));
        }
        losses.push(full_loss);
        if iter >= config.plateau_window
            && (losses[iter - config.plateau_window] - full_loss).abs() < config.convergence_tol
        {
            stop_reason = StopReason::Plateau;
            break;
        }
        if iter + 1 == config.max_iters {
            break;
        }

        let lr = config.learning_rate_at(iter);
        match adam.as_mut() {
            Some(opt) => opt.step(&mut params, &grad, lr, Some(&mask)),
            None => {
                for k in 0..N_PARAMS {
                    if mask[k] {
                        params[k] -= lr * grad[k];
                    }
                }
            }
        }
        current.set_params(&params);
    }
    if history.last().map(|h| h.0) != Some(iterations - 1) {
        history.push((iterations - 1, losses[iterations - 1]));
        best_history.push((iterations - 1, best_loss));
    }

    let errors = stress_errors(&best, data)?;
    let report = TrainReport {
        config: *config,
        iterations,
        stop_reason,
        best_iteration,
        total_mse: errors.mse,
        per_protocol_mae: errors.per_protocol_mae,
        history,
        best_history,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((best, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub train: ErrorSummary,
    pub validation: ErrorSummary,
}

pub fn evaluate<M: crate::response::BiaxialModel + ?Sized>(
    model: &M,
    split: &Split,
) -> Result<EvaluationReport> {
    Ok(EvaluationReport {
        train: stress_errors(model, &split.train)?,
        validation: stress_errors(model, &split.validation)?,
    })
}

/// Per-protocol MAE table, one row per model, protocols as columns.
pub fn mae_table(rows: &[(String, &ErrorSummary)]) -> String {
    let mut protocols: Vec<Protocol> = Vec::new();
    for (_, e) in rows {
        for p in e.per_protocol_mae.keys() {
            if !protocols.contains(p) {
                protocols.push(*p);
            }
        }
    }
    protocols.sort();
    let mut out = format!("{:<14}", "model");
    for p in &protocols {
        out.push_str(&format!(" {:>12}", p.tag()));
    }
    out.push_str(&format!(" {:>12}\n", "average"));
    for (name, e) in rows {
        out.push_str(&format!("{name:<14}"));
        for p in &protocols {
            match e.per_protocol_mae.get(p) {
                Some(v) => out.push_str(&format!(" {v:>12.4e}")),
                None => out.push_str(&format!(" {:>12}", "-")),
            }
        }
        out.push_str(&format!(" {:>12.4e}\n", e.mae));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataproto::{generate_synthetic, DataRecord, LoadingProtocol};
    use crate::material::{inverse_softplus, logistic, N_MIXED};
    use rand::Rng;

    fn perturbed_model(seed: u64, spread: f64) -> NodeMaterialModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = NodeMaterialModel::new_random(seed);
        let mut p = m.to_params();
        for v in p[..layout::RAW_BIAS_1].iter_mut() {
            *v = rng.gen_range(-spread..spread);
        }
        for k in 0..N_MIXED {
            p[layout::RAW_ALPHA + k] = rng.gen_range(-1.5..1.5);
        }
        p[layout::RAW_BIAS_1] = inverse_softplus(0.02);
        p[layout::RAW_BIAS_2] = inverse_softplus(0.01);
        p[layout::FIBER_ANGLE_V] = 0.3;
        p[layout::FIBER_ANGLE_W] = 1.2;
        m.set_params(&p);
        m
    }

    fn small_dataset(source: &NodeMaterialModel, n: usize) -> Dataset {
        generate_synthetic(source, &LoadingProtocol::standard_set(1.15, n), "node").unwrap()
    }

    #[test]
    fn generating_model_has_zero_loss_and_gradient() {
        let m = perturbed_model(1, 0.8);
        let data = small_dataset(&m, 4);
        let (l, g) = loss_and_gradient(&m, &data).unwrap();
        assert!(l < 1e-28, "{l}");
        assert!(g.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn zero_model_on_identity_records() {
        let m = NodeMaterialModel::zeros(crate::node::Activation::Tanh, 20);
        let data = Dataset {
            records: vec![
                DataRecord {
                    protocol: Protocol::Equibiaxial,
                    lambda_x: 1.0,
                    lambda_y: 1.0,
                    sigma_xx: 0.0,
                    sigma_yy: 0.0,
                };
                3
            ],
            source: "identity".into(),
        };
        assert_eq!(loss(&m, &data).unwrap(), 0.0);
        assert!(loss(&m, &Dataset::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let target = perturbed_model(7, 0.8);
        let data = Dataset {
            records: small_dataset(&target, 2).records,
            source: "node".into(),
        };
        assert_eq!(data.len(), 10);
        let m = perturbed_model(8, 0.8);
        let (_, g) = loss_and_gradient(&m, &data).unwrap();
        let p = m.to_params();
        let h = 1e-6;
        let mut probe = m.clone();
        let mut worst: f64 = 0.0;
        for k in 0..N_PARAMS {
            let mut q = p.clone();
            q[k] = p[k] + h;
            probe.set_params(&q);
            let lp = loss(&probe, &data).unwrap();
            q[k] = p[k] - h;
            probe.set_params(&q);
            let lm = loss(&probe, &data).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let scale = fd.abs().max(1e-9);
            worst = worst.max((g[k] - fd).abs() / scale);
            assert!(
                (g[k] - fd).abs() <= 1e-4 * scale,
                "param {k}: {} vs {fd}",
                g[k]
            );
        }
        assert!(worst <= 1e-4);
    }

    #[test]
    fn bias_gradient_follows_softplus_chain() {
        let target = perturbed_model(3, 0.5);
        let data = small_dataset(&target, 3);
        let m = perturbed_model(4, 0.5);
        let g = loss_gradient(&m, &data).unwrap();
        // ∂loss/∂H1 = mean_r Σ_c Δσ_c ∂σ_c/∂(∂Ψ/∂I1), and ∂σ/∂(∂Ψ/∂I1) is the stress weight.
        let mut d_h1 = 0.0;
        for r in &data.records {
            let state =
                crate::response::BiaxialState::new(r.lambda_x, r.lambda_y, &m.fibers()).unwrap();
            let (sxx, syy) =
                crate::response::BiaxialModel::biaxial_stress(&m, r.lambda_x, r.lambda_y).unwrap();
            let (gx, gy) = state.stress_weights();
            d_h1 += (sxx - r.sigma_xx) * gx[0] + (syy - r.sigma_yy) * gy[0];
        }
        d_h1 /= data.len() as f64;
        let expected = d_h1 * logistic(m.raw_bias_1);
        assert!((g[layout::RAW_BIAS_1] - expected).abs() <= 1e-12 * expected.abs().max(1e-12));
    }

    #[test]
    fn training_reduces_loss_deterministically() {
        let target = perturbed_model(11, 0.8);
        let data = small_dataset(&target, 5);
        let start = NodeMaterialModel::new_random(5);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_iters: 60,
            ..Default::default()
        };
        let (a, report) = train(&start, &data, &cfg).unwrap();
        let (b, _) = train(&start, &data, &cfg).unwrap();
        assert_eq!(a.to_document(), b.to_document());
        assert!(report.total_mse < loss(&start, &data).unwrap());
        assert!(report.history.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(report.best_history.windows(2).all(|w| w[1].1 <= w[0].1));
        assert_eq!(report.total_mse, loss(&a, &data).unwrap());
    }

    #[test]
    fn frozen_angles_and_minibatches() {
        let target = perturbed_model(12, 0.8);
        let data = small_dataset(&target, 5);
        let start = NodeMaterialModel::new_random(6);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_iters: 20,
            batch: Batch::Size(7),
            train_fiber_angles: false,
            seed: 3,
            ..Default::default()
        };
        let (m, _) = train(&start, &data, &cfg).unwrap();
        assert_eq!(m.fiber_angle_v, start.fiber_angle_v);
        assert_eq!(m.fiber_angle_w, start.fiber_angle_w);
        let (m2, _) = train(&start, &data, &cfg).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn divergence_returns_snapshot() {
        let target = perturbed_model(13, 0.8);
        let data = small_dataset(&target, 3);
        let start = NodeMaterialModel::new_random(7);
        let cfg = TrainConfig {
            learning_rate: 1e6,
            max_iters: 50,
            optimizer: OptimizerChoice::GradientDescent,
            ..Default::default()
        };
        match train(&start, &data, &cfg) {
            Err(Error::Diverged { snapshot, .. }) => {
                assert!(loss(&snapshot, &data).unwrap().is_finite());
            }
            other => panic!(
                "expected divergence, got {:?}",
                other.map(|r| r.1.total_mse)
            ),
        }
    }

    #[test]
    fn config_validation_and_document() {
        let cfg =
            TrainConfig::from_document(r#"{"learning_rate": 0.01, "max_iters": 10}"#).unwrap();
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(
            cfg.optimizer,
            OptimizerChoice::Adam(AdamSettings::default())
        );
        assert!(TrainConfig::from_document(r#"{"learning_rate": -1}"#).is_err());
        assert!(TrainConfig::from_document(r#"{"max_iters": 0}"#).is_err());
        assert!(TrainConfig::from_document(r#"{"unknown": 1}"#).is_err());
        let text = serde_json::to_string(&TrainConfig::default()).unwrap();
        assert_eq!(
            TrainConfig::from_document(&text).unwrap(),
            TrainConfig::default()
        );
    }

    #[test]
    fn evaluation_against_generator_is_zero() {
        let m = perturbed_model(2, 0.8);
        let data = small_dataset(&m, 10);
        let split =
            crate::dataproto::split(&data, &crate::dataproto::SplitRule::ByPathFraction(0.8))
                .unwrap();
        let report = evaluate(&m, &split).unwrap();
        assert_eq!(report.train.mae, 0.0);
        assert_eq!(report.validation.mae, 0.0);
        let table = mae_table(&[("node".into(), &report.validation)]);
        assert!(table.contains("offx") && table.contains("node"));
    }
}
