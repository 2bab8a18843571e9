//! Scalar neural ODEs.
//!
//! A node maps an input `x` to `H(1)` where `dH/dt = f(H)`, `H(0) = x` and `f` is a
//! bias-free `1 → 5 → 5 → 1` network. Because `f(0) = 0` and scalar trajectories never
//! cross, the map is monotone and fixes the origin.
//!
//! Integration is classical RK4 on a uniform grid over `[0, 1]`. Sensitivities are
//! derivatives of the discrete RK4 map, not of the exact flow, so they are exact for
//! what [`ScalarNodeParams::integrate`] actually returns.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of both hidden layers.
pub const HIDDEN: usize = 5;
/// Number of weights in one node: `(5×1) + (5×5) + (1×5)`.
pub const N_WEIGHTS: usize = HIDDEN + HIDDEN * HIDDEN + HIDDEN;
pub const DEFAULT_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Identity activation; only useful for closed-form checks.
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activated value `a = h(z)`.
    #[inline]
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarNodeParams {
    /// First layer, shape 5×1.
    pub input: [f64; HIDDEN],
    /// Second layer, shape 5×5, `hidden[row][col]`.
    pub hidden: [[f64; HIDDEN]; HIDDEN],
    /// Output layer, shape 1×5.
    pub output: [f64; HIDDEN],
    pub activation: Activation,
    pub n_steps: usize,
}

/// Result of an integration with full parameter sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub y: f64,
    pub dy_dx: f64,
    /// `∂y/∂θ`, ordered layer-major then row-major (see [`ScalarNodeParams::to_flat`]).
    pub dy_dtheta: [f64; N_WEIGHTS],
}

/// Activations of one right-hand-side evaluation.
#[derive(Debug, Clone, Copy)]
struct RhsCache {
    u: f64,
    a1: [f64; HIDDEN],
    a2: [f64; HIDDEN],
}

impl ScalarNodeParams {
    pub fn zeros(activation: Activation, n_steps: usize) -> Self {
        Self {
            input: [0.0; HIDDEN],
            hidden: [[0.0; HIDDEN]; HIDDEN],
            output: [0.0; HIDDEN],
            activation,
            n_steps,
        }
    }

    /// Uniform weights in `[-0.5, 0.5] / fan_in`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, activation: Activation, n_steps: usize) -> Self {
        let mut p = Self::zeros(activation, n_steps);
        for w in p.input.iter_mut() {
            *w = rng.gen_range(-0.5..0.5);
        }
        let scale = 1.0 / HIDDEN as f64;
        for row in p.hidden.iter_mut() {
            for w in row.iter_mut() {
                *w = rng.gen_range(-0.5..0.5) * scale;
            }
        }
        for w in p.output.iter_mut() {
            *w = rng.gen_range(-0.5..0.5) * scale;
        }
        p
    }

    /// Network whose weight product is `gain`, so with a linear activation `f(H) = gain·H`.
    pub fn linear_gain(gain: f64, n_steps: usize) -> Self {
        let mut p = Self::zeros(Activation::Linear, n_steps);
        p.input[0] = 1.0;
        p.hidden[0][0] = 1.0;
        p.output[0] = gain;
        p
    }

    pub fn to_flat(&self) -> [f64; N_WEIGHTS] {
        let mut flat = [0.0; N_WEIGHTS];
        flat[..HIDDEN].copy_from_slice(&self.input);
        for (r, row) in self.hidden.iter().enumerate() {
            flat[HIDDEN + r * HIDDEN..HIDDEN + (r + 1) * HIDDEN].copy_from_slice(row);
        }
        flat[HIDDEN + HIDDEN * HIDDEN..].copy_from_slice(&self.output);
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), N_WEIGHTS, "node expects {N_WEIGHTS} weights");
        self.input.copy_from_slice(&flat[..HIDDEN]);
        for (r, row) in self.hidden.iter_mut().enumerate() {
            row.copy_from_slice(&flat[HIDDEN + r * HIDDEN..HIDDEN + (r + 1) * HIDDEN]);
        }
        self.output
            .copy_from_slice(&flat[HIDDEN + HIDDEN * HIDDEN..]);
    }

    #[inline]
    fn forward(&self, u: f64) -> (f64, RhsCache) {
        let act = self.activation;
        let mut a1 = [0.0; HIDDEN];
        for (a, w) in a1.iter_mut().zip(&self.input) {
            *a = act.apply(w * u);
        }
        let mut a2 = [0.0; HIDDEN];
        let mut f = 0.0;
        for i in 0..HIDDEN {
            let z: f64 = self.hidden[i].iter().zip(&a1).map(|(w, a)| w * a).sum();
            a2[i] = act.apply(z);
            f += self.output[i] * a2[i];
        }
        (f, RhsCache { u, a1, a2 })
    }

    /// `f'(u)` from cached activations.
    #[inline]
    fn slope_at(&self, cache: &RhsCache) -> f64 {
        let act = self.activation;
        let mut d1 = [0.0; HIDDEN];
        for k in 0..HIDDEN {
            d1[k] = act.slope(cache.a1[k]) * self.input[k];
        }
        let mut total = 0.0;
        for i in 0..HIDDEN {
            let z: f64 = self.hidden[i].iter().zip(&d1).map(|(w, d)| w * d).sum();
            total += self.output[i] * act.slope(cache.a2[i]) * z;
        }
        total
    }

    /// Pulls the cotangent `c` of `f(u)` back onto the weights (accumulated into
    /// `grad`) and returns the cotangent of `u`.
    #[inline]
    fn pullback(&self, cache: &RhsCache, c: f64, grad: &mut [f64; N_WEIGHTS]) -> f64 {
        let act = self.activation;
        let out = HIDDEN + HIDDEN * HIDDEN;
        let mut z2_bar = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            grad[out + i] += c * cache.a2[i];
            z2_bar[i] = c * self.output[i] * act.slope(cache.a2[i]);
        }
        let mut u_bar = 0.0;
        for k in 0..HIDDEN {
            let mut a1_bar = 0.0;
            for i in 0..HIDDEN {
                grad[HIDDEN + i * HIDDEN + k] += z2_bar[i] * cache.a1[k];
                a1_bar += self.hidden[i][k] * z2_bar[i];
            }
            let z1_bar = a1_bar * act.slope(cache.a1[k]);
            grad[k] += z1_bar * cache.u;
            u_bar += self.input[k] * z1_bar;
        }
        u_bar
    }

    pub fn rhs(&self, h: f64) -> f64 {
        self.forward(h).0
    }

    /// `(f(h), f'(h))`.
    pub fn rhs_with_slope(&self, h: f64) -> (f64, f64) {
        let (f, cache) = self.forward(h);
        (f, self.slope_at(&cache))
    }

    fn step_size(&self) -> Result<f64> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        Ok(1.0 / self.n_steps as f64)
    }

    pub fn integrate(&self, x: f64) -> Result<f64> {
        let dt = self.step_size()?;
        let mut h = x;
        for step in 0..self.n_steps {
            let k1 = self.rhs(h);
            let k2 = self.rhs(h + 0.5 * dt * k1);
            let k3 = self.rhs(h + 0.5 * dt * k2);
            let k4 = self.rhs(h + dt * k3);
            h += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            check_finite(step, h)?;
        }
        Ok(h)
    }

    /// `(y, dy/dx)` by integrating the variational equation `ds/dt = f'(H) s` on the
    /// same RK4 stages.
    pub fn integrate_with_input_sensitivity(&self, x: f64) -> Result<(f64, f64)> {
        let dt = self.step_size()?;
        let (mut h, mut s) = (x, 1.0);
        for step in 0..self.n_steps {
            let (k1, d1) = self.rhs_with_slope(h);
            let m1 = d1 * s;
            let (k2, d2) = self.rhs_with_slope(h + 0.5 * dt * k1);
            let m2 = d2 * (s + 0.5 * dt * m1);
            let (k3, d3) = self.rhs_with_slope(h + 0.5 * dt * k2);
            let m3 = d3 * (s + 0.5 * dt * m2);
            let (k4, d4) = self.rhs_with_slope(h + dt * k3);
            let m4 = d4 * (s + dt * m3);
            h += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            s += dt / 6.0 * (m1 + 2.0 * m2 + 2.0 * m3 + m4);
            check_finite(step, h)?;
            check_finite(step, s)?;
        }
        Ok((h, s))
    }

    /// Output, input sensitivity and weight gradient by reverse-mode differentiation of
    /// the unrolled RK4 recurrence.
    pub fn integrate_with_param_gradient(&self, x: f64) -> Result<OdeSolution> {
        let dt = self.step_size()?;
        let mut tape: Vec<[RhsCache; 4]> = Vec::with_capacity(self.n_steps);
        let mut h = x;
        for step in 0..self.n_steps {
            let (k1, c1) = self.forward(h);
            let (k2, c2) = self.forward(h + 0.5 * dt * k1);
            let (k3, c3) = self.forward(h + 0.5 * dt * k2);
            let (k4, c4) = self.forward(h + dt * k3);
            h += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            check_finite(step, h)?;
            tape.push([c1, c2, c3, c4]);
        }

        let mut grad = [0.0; N_WEIGHTS];
        let mut adj = 1.0;
        for [c1, c2, c3, c4] in tape.iter().rev() {
            let mut h_bar = adj;
            let k4_bar = adj * dt / 6.0;
            let mut k3_bar = adj * dt / 3.0;
            let mut k2_bar = adj * dt / 3.0;
            let mut k1_bar = adj * dt / 6.0;

            let u4_bar = self.pullback(c4, k4_bar, &mut grad);
            h_bar += u4_bar;
            k3_bar += dt * u4_bar;

            let u3_bar = self.pullback(c3, k3_bar, &mut grad);
            h_bar += u3_bar;
            k2_bar += 0.5 * dt * u3_bar;

            let u2_bar = self.pullback(c2, k2_bar, &mut grad);
            h_bar += u2_bar;
            k1_bar += 0.5 * dt * u2_bar;

            h_bar += self.pullback(c1, k1_bar, &mut grad);
            adj = h_bar;
        }

        Ok(OdeSolution {
            y: h,
            dy_dx: adj,
            dy_dtheta: grad,
        })
    }
}

#[inline]
fn check_finite(step: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { step, value })
    }
}
