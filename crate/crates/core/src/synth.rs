//! Synthetic cycling data with a planted, known relation between the
//! capacity-difference variance feature and cycle life, for end-to-end
//! verification without laboratory data.
//!
//! Construction per cell:
//!
//! 1. fade follows the power law `Q(n) = Q₀·(1 − a·nᵇ)` with per-cell `(a, b)`
//!    drawn from the configured ranges, giving the realized cycle life `L` at
//!    the end-of-life threshold;
//! 2. the planted relation `log10 L = c + β·log10 Var(ΔQ)` plus Gaussian
//!    noise `ε` on `log10 L` fixes the target feature value
//!    `Var* = 10^((log10 L − c − ε)/β)`;
//! 3. discharge curves at the two feature cycles share a fixed smooth
//!    monotone base shape `D(t) = t − κ·sin(2πt)/(2π)`; the later cycle adds
//!    a bump `P(t) = sin²(πt)` whose weight solves a quadratic so the
//!    variance of ΔQ over the voltage grid equals `Var*` exactly.
//!
//! Curve samples are placed exactly on the grid points (plus one margin
//! sample at each end), so feature extraction reproduces the planted values
//! to rounding. All randomness flows from one seed through per-cell
//! generator streams, making generation order irrelevant.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use crate::dataset::{validate_cell, CellRecord, CycleCurve, Dataset};
use crate::error::{Error, Result};
use crate::features::{DEFAULT_CYCLE_A, DEFAULT_CYCLE_B};
use crate::scalar::Scalar;

/// Base-shape plateau curvature; |κ| < 1 keeps the discharge curve strictly
/// monotone with slope at least `1 − κ`.
const SHAPE_KAPPA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_cells: usize,
    pub seed: u64,
    pub groups: usize,
    pub nominal_capacity: f64,
    /// Power-law rate `a`, drawn uniformly per cell.
    pub fade_rate_range: (f64, f64),
    /// Power-law exponent `b`, drawn uniformly per cell.
    pub fade_exponent_range: (f64, f64),
    /// β in `log10(cycle life) = c + β·log10(Var(ΔQ))`.
    pub planted_slope: f64,
    /// c in the planted relation.
    pub planted_intercept: f64,
    /// Standard deviation of the Gaussian noise on log10 cycle life.
    pub noise_sigma: f64,
    /// End-of-life threshold fraction used for planting.
    pub threshold_fraction: f64,
    pub max_cycle: u32,
    /// Feature grid the variance is calibrated on.
    pub v_high: f64,
    pub v_low: f64,
    pub n_grid_points: usize,
    /// Curves extend this far beyond the grid at both ends.
    pub curve_margin_v: f64,
    /// Cycles whose curves are emitted (the ΔQ pair).
    pub cycle_a: u32,
    pub cycle_b: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_cells: 24,
            seed: 0,
            groups: 4,
            nominal_capacity: 1.1,
            fade_rate_range: (1.7e-5, 6.5e-5),
            fade_exponent_range: (1.2, 1.6),
            planted_slope: -0.5,
            planted_intercept: 0.9,
            noise_sigma: 0.05,
            threshold_fraction: 0.8,
            max_cycle: 3000,
            v_high: 3.5,
            v_low: 2.0,
            n_grid_points: 1000,
            curve_margin_v: 0.05,
            cycle_a: DEFAULT_CYCLE_A,
            cycle_b: DEFAULT_CYCLE_B,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Synth(m));
        if self.n_cells < 2 {
            return err(format!("n_cells must be at least 2, got {}", self.n_cells));
        }
        if self.groups == 0 || self.groups > self.n_cells {
            return err(format!(
                "groups must lie in [1, n_cells], got {}",
                self.groups
            ));
        }
        if self.nominal_capacity <= 0.0 {
            return err("nominal_capacity must be positive".into());
        }
        if self.fade_rate_range.0 < 0.0 || self.fade_rate_range.1 < self.fade_rate_range.0 {
            return err(format!(
                "fade_rate_range must be ordered and nonnegative, got {:?}",
                self.fade_rate_range
            ));
        }
        if self.fade_exponent_range.0 <= 0.0
            || self.fade_exponent_range.1 < self.fade_exponent_range.0
        {
            return err(format!(
                "fade_exponent_range must be ordered and positive, got {:?}",
                self.fade_exponent_range
            ));
        }
        if self.planted_slope == 0.0 {
            return err("planted_slope must be nonzero".into());
        }
        if self.noise_sigma < 0.0 {
            return err("noise_sigma must be nonnegative".into());
        }
        if !(0.0 < self.threshold_fraction && self.threshold_fraction <= 1.0) {
            return err(format!(
                "threshold_fraction must lie in (0, 1], got {}",
                self.threshold_fraction
            ));
        }
        if self.v_high <= self.v_low || self.n_grid_points < 2 {
            return err("voltage grid is invalid".into());
        }
        if self.curve_margin_v <= 0.0 {
            return err("curve_margin_v must be positive".into());
        }
        if self.cycle_b >= self.cycle_a {
            return err("cycle_b must precede cycle_a".into());
        }
        Ok(())
    }
}

/// Per-cell entry of the ground-truth table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cell_id: String,
    pub group_id: String,
    pub true_var_dq: f64,
    /// Noiseless cycle life implied by the planted relation at `true_var_dq`.
    pub true_cycle_life: f64,
}

fn base_shape(t: f64) -> f64 {
    t - SHAPE_KAPPA * (2.0 * PI * t).sin() / (2.0 * PI)
}

fn bump(t: f64) -> f64 {
    let s = (PI * t).sin();
    s * s
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n
}

struct CellPlan {
    fade_rate: f64,
    fade_exponent: f64,
    realized_cycle_life: f64,
    var_target: f64,
    noiseless_cycle_life: f64,
}

fn plan_cell(spec: &SynthSpec, index: usize) -> Result<CellPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let a = if spec.fade_rate_range.0 == spec.fade_rate_range.1 {
        spec.fade_rate_range.0
    } else {
        rng.random_range(spec.fade_rate_range.0..=spec.fade_rate_range.1)
    };
    let b = if spec.fade_exponent_range.0 == spec.fade_exponent_range.1 {
        spec.fade_exponent_range.0
    } else {
        rng.random_range(spec.fade_exponent_range.0..=spec.fade_exponent_range.1)
    };
    let eps = if spec.noise_sigma > 0.0 {
        Normal::new(0.0, spec.noise_sigma)
            .expect("sigma > 0")
            .sample(&mut rng)
    } else {
        0.0
    };
    if a <= 0.0 {
        return Err(Error::Synth(format!(
            "cell {index}: fade rate 0 never crosses the end-of-life threshold"
        )));
    }
    // EOL crossing of Q0(1 − a·n^b) = τ·Q0  →  n = ((1−τ)/a)^(1/b)
    let life = ((1.0 - spec.threshold_fraction) / a).powf(1.0 / b);
    if !life.is_finite() || life + 3.0 > spec.max_cycle as f64 {
        return Err(Error::Synth(format!(
            "cell {index}: no end-of-life crossing before max_cycle {} (analytic life {life:.1})",
            spec.max_cycle
        )));
    }
    if life <= spec.cycle_a as f64 + 10.0 {
        return Err(Error::Synth(format!(
            "cell {index}: cycle life {life:.1} inside the feature window (cycle {}); \
             lower fade_rate_range",
            spec.cycle_a
        )));
    }
    let log_life = life.log10();
    let log_var = (log_life - spec.planted_intercept - eps) / spec.planted_slope;
    let var_target = 10f64.powf(log_var);
    let noiseless_cycle_life = 10f64.powf(spec.planted_intercept + spec.planted_slope * log_var);
    Ok(CellPlan {
        fade_rate: a,
        fade_exponent: b,
        realized_cycle_life: life,
        var_target,
        noiseless_cycle_life,
    })
}

fn group_of(spec: &SynthSpec, index: usize) -> String {
    format!("batch_{:02}", index % spec.groups)
}

fn cell_id_of(index: usize) -> String {
    format!("synth_{index:04}")
}

/// Generates one cell deterministically from the spec seed and cell index.
pub fn generate_cell<F: Scalar>(spec: &SynthSpec, index: usize) -> Result<CellRecord<F>> {
    spec.validate()?;
    let plan = plan_cell(spec, index)?;
    let q0 = spec.nominal_capacity;
    let fade = |n: f64| q0 * (1.0 - plan.fade_rate * n.powf(plan.fade_exponent));

    // fade series at integer cycles through the crossing
    let n_end = (plan.realized_cycle_life.ceil() as u32 + 2).min(spec.max_cycle);
    let mut fade_series = Vec::with_capacity(n_end as usize);
    for n in 1..=n_end {
        let q = fade(n as f64);
        if q <= 0.0 {
            return Err(Error::Synth(format!(
                "cell {index}: fade reaches zero capacity at cycle {n}"
            )));
        }
        fade_series.push((n, F::cast(q)));
    }

    // voltage samples: margin endpoint, grid points, margin endpoint
    let v_top = spec.v_high + spec.curve_margin_v;
    let v_bottom = spec.v_low - spec.curve_margin_v;
    let span = v_top - v_bottom;
    let mut voltages = Vec::with_capacity(spec.n_grid_points + 2);
    voltages.push(v_top);
    for i in 0..spec.n_grid_points {
        let t = i as f64 / (spec.n_grid_points - 1) as f64;
        voltages.push(spec.v_high + t * (spec.v_low - spec.v_high));
    }
    voltages.push(v_bottom);

    let t_of = |v: f64| (v_top - v) / span;
    // base/bump values on the grid only (the calibration target)
    let d_grid: Vec<f64> = voltages[1..=spec.n_grid_points]
        .iter()
        .map(|&v| base_shape(t_of(v)))
        .collect();
    let p_grid: Vec<f64> = voltages[1..=spec.n_grid_points]
        .iter()
        .map(|&v| bump(t_of(v)))
        .collect();

    let c_a = fade(spec.cycle_a as f64);
    let c_b = fade(spec.cycle_b as f64);
    let dc = c_a - c_b; // negative: capacity fades
    let var_p = variance(&p_grid);
    let var_d = variance(&d_grid);
    let cov_dp = covariance(&d_grid, &p_grid);
    // Var(dc·D + w·P) = Var* → var_p·w² + 2·dc·cov·w + dc²·var_d − Var* = 0
    let qa = var_p;
    let qb = 2.0 * dc * cov_dp;
    let qc = dc * dc * var_d - plan.var_target;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return Err(Error::Synth(format!(
            "cell {index}: planted variance {:.3e} unreachable (base-shape floor {:.3e}); \
             raise planted_intercept or shrink fade ranges",
            plan.var_target,
            dc * dc * (var_d - cov_dp * cov_dp / var_p)
        )));
    }
    let sq = disc.sqrt();
    let w1 = (-qb + sq) / (2.0 * qa);
    let w2 = (-qb - sq) / (2.0 * qa);
    let w = if w1.abs() <= w2.abs() { w1 } else { w2 };

    let make_curve = |cycle: u32, capacity: f64, bump_weight: f64| -> CycleCurve<F> {
        let q: Vec<F> = voltages
            .iter()
            .map(|&v| {
                let t = t_of(v);
                F::cast(capacity * base_shape(t) + bump_weight * bump(t))
            })
            .collect();
        CycleCurve {
            cycle_number: cycle,
            voltage: voltages.iter().map(|&v| F::cast(v)).collect(),
            discharge_capacity: q,
        }
    };

    let mut cycles = BTreeMap::new();
    cycles.insert(spec.cycle_b, make_curve(spec.cycle_b, c_b, 0.0));
    cycles.insert(spec.cycle_a, make_curve(spec.cycle_a, c_a, w));

    let cell = CellRecord {
        cell_id: cell_id_of(index),
        group_id: group_of(spec, index),
        nominal_capacity: F::cast(q0),
        cycles,
        fade_series,
    };
    let violations = validate_cell(&cell);
    if !violations.is_empty() {
        return Err(Error::Synth(format!(
            "cell {index}: shape perturbation {w:.4} breaks curve invariants: {}",
            violations.join("; ")
        )));
    }
    Ok(cell)
}

pub(crate) fn ground_truth_for(spec: &SynthSpec, index: usize) -> Result<GroundTruth> {
    let plan = plan_cell(spec, index)?;
    Ok(GroundTruth {
        cell_id: cell_id_of(index),
        group_id: group_of(spec, index),
        true_var_dq: plan.var_target,
        true_cycle_life: plan.noiseless_cycle_life,
    })
}

/// Generates the full dataset and its ground-truth table. Deterministic per
/// seed; per-cell draws are independent of generation order.
pub fn generate_dataset<F: Scalar>(spec: &SynthSpec) -> Result<(Dataset<F>, Vec<GroundTruth>)> {
    spec.validate()?;
    let mut cells = Vec::with_capacity(spec.n_cells);
    let mut truth = Vec::with_capacity(spec.n_cells);
    for i in 0..spec.n_cells {
        cells.push(generate_cell(spec, i)?);
        truth.push(ground_truth_for(spec, i)?);
    }
    truth.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok((Dataset::new(cells)?, truth))
}

pub const GROUND_TRUTH_HEADER: &str = "cell_id,group_id,true_var_dq,true_cycle_life";

pub fn write_ground_truth(rows: &[GroundTruth], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from(GROUND_TRUTH_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.cell_id, r.group_id, r.true_var_dq, r.true_cycle_life
        ));
    }
    crate::dataset::write_text(path.as_ref(), &text)
}
