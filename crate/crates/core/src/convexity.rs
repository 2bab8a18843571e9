//! Monotonicity scans of the derivative functions and energy-grid convexity checks.
//!
//! The energy grid is laid over the in-plane Green-Lagrange strains `(Exx, Eyy)` and the
//! check looks at second differences along each strain axis. Along an axis the invariants
//! are convex or linear in the strain, so a polyconvex invariant energy is convex there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::stretch_from_strain;
use crate::material::{NodeMaterialModel, N_TERMS, TERM_NAMES};
use crate::response::BiaxialModel;

/// Second differences below this are convexity violations (MPa).
pub const SECOND_DIFFERENCE_TOL: f64 = -1e-9;
/// `(y2 − y1)(x2 − x1)` below this is a monotonicity violation.
pub const MONOTONICITY_TOL: f64 = -1e-12;

pub const DEFAULT_GRID: usize = 21;
pub const DEFAULT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    /// Strain values shared by both axes.
    pub strains: Vec<f64>,
    /// `psi[i][j]` at `Exx = strains[i]`, `Eyy = strains[j]`.
    pub psi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Exx,
    Eyy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridViolation {
    pub axis: Axis,
    pub exx: f64,
    pub eyy: f64,
    pub second_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCheck {
    pub min_second_difference: f64,
    pub violations: Vec<GridViolation>,
}

impl GridCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_grid_shape(n: usize, range: f64) -> Result<()> {
    if n < 3 {
        return Err(Error::Config(format!(
            "an energy grid needs at least 3 points per axis, got {n}"
        )));
    }
    if !(range > 0.0 && range < 0.5) {
        return Err(Error::Config(format!(
            "strain range must lie in (0, 0.5), got {range}"
        )));
    }
    Ok(())
}

/// `Ψ` on an `n × n` grid over `[−range, range]²`.
pub fn energy_grid<M: BiaxialModel + ?Sized>(
    model: &M,
    n: usize,
    range: f64,
) -> Result<EnergyGrid> {
    check_grid_shape(n, range)?;
    let strains: Vec<f64> = (0..n)
        .map(|k| -range + 2.0 * range * k as f64 / (n - 1) as f64)
        .collect();
    let stretches = strains
        .iter()
        .map(|&e| stretch_from_strain(e))
        .collect::<Result<Vec<_>>>()?;
    let mut psi = Vec::with_capacity(n);
    for (i, &lx) in stretches.iter().enumerate() {
        let row = stretches
            .iter()
            .enumerate()
            .map(|(j, &ly)| {
                model.biaxial_energy(lx, ly).map_err(|e| {
                    e.at(format!(
                        "energy grid point ({}, {})",
                        strains[i], strains[j]
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        psi.push(row);
    }
    Ok(EnergyGrid { strains, psi })
}

pub fn check_energy_grid(grid: &EnergyGrid, tol: f64) -> GridCheck {
    let n = grid.strains.len();
    let mut min = f64::INFINITY;
    let mut violations = Vec::new();
    let mut visit = |axis: Axis, i: usize, j: usize, d2: f64| {
        min = min.min(d2);
        if d2 < tol || !d2.is_finite() {
            violations.push(GridViolation {
                axis,
                exx: grid.strains[i],
                eyy: grid.strains[j],
                second_difference: d2,
            });
        }
    };
    for i in 1..n - 1 {
        for j in 0..n {
            let d2 = grid.psi[i + 1][j] - 2.0 * grid.psi[i][j] + grid.psi[i - 1][j];
            visit(Axis::Exx, i, j, d2);
        }
    }
    for i in 0..n {
        for j in 1..n - 1 {
            let d2 = grid.psi[i][j + 1] - 2.0 * grid.psi[i][j] + grid.psi[i][j - 1];
            visit(Axis::Eyy, i, j, d2);
        }
    }
    GridCheck {
        min_second_difference: min,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub term: String,
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
}

/// Checks every node map on `n` evenly spaced inputs over `[lo, hi]`; mixed terms are clamped.
pub fn monotonicity_scan(
    model: &NodeMaterialModel,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<Vec<MonotonicityViolation>> {
    if n < 2 || !(hi > lo) {
        return Err(Error::Config(format!(
            "monotonicity scan needs n >= 2 and hi > lo, got n = {n}, [{lo}, {hi}]"
        )));
    }
    let xs: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    let mut out = Vec::new();
    for t in 0..N_TERMS {
        let node = &model.nodes[t];
        let ys = xs
            .iter()
            .map(|&x| {
                node.integrate(x)
                    .map(|y| if t >= 4 { y.max(0.0) } else { y })
                    .map_err(|e| e.at(format!("term {}", TERM_NAMES[t])))
            })
            .collect::<Result<Vec<_>>>()?;
        for k in 0..n - 1 {
            if (ys[k + 1] - ys[k]) * (xs[k + 1] - xs[k]) < MONOTONICITY_TOL {
                out.push(MonotonicityViolation {
                    term: TERM_NAMES[t].to_string(),
                    x1: xs[k],
                    x2: xs[k + 1],
                    y1: ys[k],
                    y2: ys[k + 1],
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub monotonicity_violations: Vec<MonotonicityViolation>,
    pub energy: GridCheck,
    pub grid_points: usize,
    pub strain_range: f64,
}

impl ConvexityReport {
    pub fn passed(&self) -> bool {
        self.monotonicity_violations.is_empty() && self.energy.passed()
    }
}

/// Full check of a node model: derivative monotonicity plus the energy grid.
pub fn check_node_model(
    model: &NodeMaterialModel,
    n: usize,
    range: f64,
) -> Result<ConvexityReport> {
    check_grid_shape(n, range)?;
    let monotonicity_violations = monotonicity_scan(model, -1.0, 2.0, 301)?;
    let grid = energy_grid(model, n, range)?;
    Ok(ConvexityReport {
        monotonicity_violations,
        energy: check_energy_grid(&grid, SECOND_DIFFERENCE_TOL),
        grid_points: n,
        strain_range: range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::Activation;
    use crate::oracles::{FungParams, OracleKind, OracleModel};

    #[test]
    fn degenerate_grids_rejected() {
        let m = OracleKind::Mr.default_model();
        assert!(energy_grid(&m, 1, 0.1).is_err());
        assert!(energy_grid(&m, 2, 0.1).is_err());
        assert!(energy_grid(&m, 5, 0.6).is_err());
    }

    #[test]
    fn identity_point_has_zero_energy() {
        let m = NodeMaterialModel::new_random(1);
        let g = energy_grid(&m, 5, 0.1).unwrap();
        assert_eq!(g.strains[2], 0.0);
        assert_eq!(g.psi[2][2], 0.0);
    }

    #[test]
    fn random_node_models_are_convex_and_monotone() {
        for seed in 0..5 {
            let m = NodeMaterialModel::new_random(seed);
            let report = check_node_model(&m, 11, 0.2).unwrap();
            assert!(report.passed(), "seed {seed}: {report:?}");
        }
        let m = NodeMaterialModel::zeros(Activation::Tanh, 20);
        assert!(check_node_model(&m, 5, 0.1).unwrap().passed());
    }

    #[test]
    fn convex_oracles_pass_and_fung_witness_fails() {
        for kind in [OracleKind::Mr, OracleKind::Hgo, OracleKind::Goh] {
            let g = energy_grid(&kind.default_model(), 21, 0.1).unwrap();
            assert!(
                check_energy_grid(&g, SECOND_DIFFERENCE_TOL).passed(),
                "{kind}"
            );
        }
        let fung = OracleModel::Fung(FungParams::non_convex());
        let g = energy_grid(&fung, 21, 0.1).unwrap();
        let check = check_energy_grid(&g, SECOND_DIFFERENCE_TOL);
        assert!(!check.passed());
        assert!(check.min_second_difference < 0.0);
    }

    #[test]
    fn concave_grid_is_flagged() {
        let grid = EnergyGrid {
            strains: vec![-0.1, 0.0, 0.1],
            psi: vec![vec![0.0, 1.0, 0.0]; 3],
        };
        let check = check_energy_grid(&grid, SECOND_DIFFERENCE_TOL);
        assert_eq!(check.violations.len(), 3);
        assert!(check.violations.iter().all(|v| v.axis == Axis::Eyy));
    }
}
