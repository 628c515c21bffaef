//! Predictor construction: capacity-difference vectors over a voltage grid,
//! scalar reductions and transforms, standardization, correlation screening,
//! and feature-matrix assembly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CellRecord, CycleCurve, CycleLifeLabel, Dataset};
use crate::error::{Error, Result};
use crate::linalg::ColMatrix;
use crate::scalar::{self, Scalar};

/// Uniform voltage grid, ordered high → low.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageGrid<F> {
    v_high: F,
    v_low: F,
    n_points: usize,
}

/// Default grid bounds and resolution for LFP discharge curves.
pub const DEFAULT_V_HIGH: f64 = 3.5;
pub const DEFAULT_V_LOW: f64 = 2.0;
pub const DEFAULT_GRID_POINTS: usize = 1000;

/// Tolerance for clamping grid endpoints that fall just outside the measured
/// curve: 1 mV.
pub const COVERAGE_TOLERANCE_V: f64 = 1e-3;

impl<F: Scalar> VoltageGrid<F> {
    pub fn new(v_high: F, v_low: F, n_points: usize) -> Result<Self> {
        if v_high <= v_low {
            return Err(Error::Feature(format!(
                "voltage grid requires v_high > v_low, got {v_high} and {v_low}"
            )));
        }
        if n_points < 2 {
            return Err(Error::Feature(format!(
                "voltage grid needs at least 2 points, got {n_points}"
            )));
        }
        Ok(VoltageGrid {
            v_high,
            v_low,
            n_points,
        })
    }

    pub fn v_high(&self) -> F {
        self.v_high
    }

    pub fn v_low(&self) -> F {
        self.v_low
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Grid points from `v_high` down to `v_low`; both endpoints exact.
    pub fn points(&self) -> Vec<F> {
        let n = self.n_points;
        let denom = F::from_usize(n - 1).unwrap();
        (0..n)
            .map(|i| {
                let t = F::from_usize(i).unwrap() / denom;
                self.v_high + t * (self.v_low - self.v_high)
            })
            .collect()
    }
}

impl VoltageGrid<f64> {
    pub fn default_grid() -> Self {
        VoltageGrid::new(DEFAULT_V_HIGH, DEFAULT_V_LOW, DEFAULT_GRID_POINTS).unwrap()
    }
}

/// Difference of discharge capacity over voltage between two cycles,
/// resampled on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaQ<F> {
    pub cell_id: String,
    pub values: Vec<F>,
    pub grid: VoltageGrid<F>,
    pub cycle_a: u32,
    pub cycle_b: u32,
}

/// Default cycle pair for the capacity-difference feature.
pub const DEFAULT_CYCLE_A: u32 = 100;
pub const DEFAULT_CYCLE_B: u32 = 10;

/// Per-column standardization parameters (population convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling<F> {
    pub mean: F,
    pub std: F,
}

impl<F: Scalar> ColumnScaling<F> {
    pub fn apply(&self, x: F) -> F {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: F) -> F {
        z * self.std + self.mean
    }
}

/// Transform applied to the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    #[default]
    Log10,
    Identity,
}

impl TargetTransform {
    pub fn forward<F: Scalar>(&self, y: F) -> Result<F> {
        match self {
            TargetTransform::Log10 => {
                if y <= F::zero() {
                    Err(Error::Feature(format!(
                        "log10 target transform requires positive values, got {y}"
                    )))
                } else {
                    Ok(y.log10())
                }
            }
            TargetTransform::Identity => Ok(y),
        }
    }

    pub fn inverse<F: Scalar>(&self, z: F) -> F {
        match self {
            TargetTransform::Log10 => F::cast(10.0).powf(z),
            TargetTransform::Identity => z,
        }
    }
}

impl fmt::Display for TargetTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetTransform::Log10 => write!(f, "log10"),
            TargetTransform::Identity => write!(f, "identity"),
        }
    }
}

/// Predictor matrix with named rows (cells) and columns (features), the
/// transformed target, and optional standardization metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<F> {
    rows: Vec<String>,
    columns: Vec<String>,
    values: ColMatrix<F>,
    target: Vec<F>,
    scaling: Option<Vec<ColumnScaling<F>>>,
    target_transform: TargetTransform,
}

impl<F: Scalar> FeatureMatrix<F> {
    pub fn new(
        rows: Vec<String>,
        columns: Vec<String>,
        values: ColMatrix<F>,
        target: Vec<F>,
        target_transform: TargetTransform,
    ) -> Result<Self> {
        if values.nrows() != rows.len() || values.ncols() != columns.len() {
            return Err(Error::Feature(format!(
                "matrix is {}x{} but {} rows and {} columns are named",
                values.nrows(),
                values.ncols(),
                rows.len(),
                columns.len()
            )));
        }
        if target.len() != rows.len() {
            return Err(Error::Feature(format!(
                "target length {} does not match {} rows",
                target.len(),
                rows.len()
            )));
        }
        let mut sorted = columns.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Feature("duplicate column names".into()));
        }
        Ok(FeatureMatrix {
            rows,
            columns,
            values,
            target,
            scaling: None,
            target_transform,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn target(&self) -> &[F] {
        &self.target
    }

    pub fn values(&self) -> &ColMatrix<F> {
        &self.values
    }

    pub fn column(&self, j: usize) -> &[F] {
        self.values.col(j)
    }

    pub fn value(&self, i: usize, j: usize) -> F {
        self.values.get(i, j)
    }

    pub fn scaling(&self) -> Option<&[ColumnScaling<F>]> {
        self.scaling.as_deref()
    }

    pub fn target_transform(&self) -> TargetTransform {
        self.target_transform
    }

    /// Row subset in the given order; scaling metadata is dropped because the
    /// subset's statistics differ.
    pub fn subset(&self, indices: &[usize]) -> FeatureMatrix<F> {
        FeatureMatrix {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            columns: self.columns.clone(),
            values: self.values.select_rows(indices),
            target: indices.iter().map(|&i| self.target[i]).collect(),
            scaling: None,
            target_transform: self.target_transform,
        }
    }

    pub fn row_index(&self, cell_id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == cell_id)
    }
}

/// Piecewise-linear interpolation of discharge capacity as a function of
/// voltage, evaluated at the grid points (high → low). Grid points outside
/// the measured range by at most 1 mV are clamped to the nearest endpoint;
/// anything further is a coverage error.
pub fn interp_q_on_grid<F: Scalar>(curve: &CycleCurve<F>, grid: &VoltageGrid<F>) -> Result<Vec<F>> {
    let v = &curve.voltage;
    let q = &curve.discharge_capacity;
    if v.len() < 2 {
        return Err(Error::Coverage {
            context: format!("cycle {}", curve.cycle_number),
            message: "curve has fewer than 2 samples".into(),
        });
    }
    let tol = F::cast(COVERAGE_TOLERANCE_V);
    let v_max = v[0];
    let v_min = v[v.len() - 1];
    if grid.v_high() > v_max + tol || grid.v_low() < v_min - tol {
        return Err(Error::Coverage {
            context: format!("cycle {}", curve.cycle_number),
            message: format!(
                "grid [{}, {}] extends beyond curve range [{}, {}] by more than {} V",
                grid.v_low(),
                grid.v_high(),
                v_min,
                v_max,
                COVERAGE_TOLERANCE_V
            ),
        });
    }
    let mut out = Vec::with_capacity(grid.n_points());
    // voltage is strictly decreasing: walk the segment index forward as the
    // grid descends
    let mut seg = 0usize;
    for gv in grid.points() {
        let gv = if gv > v_max {
            v_max
        } else if gv < v_min {
            v_min
        } else {
            gv
        };
        while seg + 2 < v.len() && v[seg + 1] > gv {
            seg += 1;
        }
        let (v0, v1) = (v[seg], v[seg + 1]);
        let (q0, q1) = (q[seg], q[seg + 1]);
        let t = (v0 - gv) / (v0 - v1);
        out.push(q0 + t * (q1 - q0));
    }
    Ok(out)
}

/// Capacity difference between `cycle_a` and `cycle_b` on the grid.
pub fn delta_q<F: Scalar>(
    cell: &CellRecord<F>,
    cycle_a: u32,
    cycle_b: u32,
    grid: &VoltageGrid<F>,
) -> Result<DeltaQ<F>> {
    let curve = |cycle: u32| -> Result<&CycleCurve<F>> {
        cell.cycles.get(&cycle).ok_or_else(|| Error::MissingCycle {
            cell_id: cell.cell_id.clone(),
            cycle,
        })
    };
    let qa = interp_q_on_grid(curve(cycle_a)?, grid).map_err(|e| attach_cell(e, &cell.cell_id))?;
    let qb = interp_q_on_grid(curve(cycle_b)?, grid).map_err(|e| attach_cell(e, &cell.cell_id))?;
    let values = qa.iter().zip(&qb).map(|(&a, &b)| a - b).collect();
    Ok(DeltaQ {
        cell_id: cell.cell_id.clone(),
        values,
        grid: grid.clone(),
        cycle_a,
        cycle_b,
    })
}

fn attach_cell(e: Error, cell_id: &str) -> Error {
    match e {
        Error::Coverage { context, message } => Error::Coverage {
            context: format!("cell {cell_id}, {context}"),
            message,
        },
        other => other,
    }
}

/// Scalar reduction of a capacity-difference vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Variance,
    Minimum,
    Mean,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reduction::Variance => write!(f, "var"),
            Reduction::Minimum => write!(f, "min"),
            Reduction::Mean => write!(f, "mean"),
        }
    }
}

/// Reduces a capacity-difference vector to one number. Variance uses the
/// population convention (divide by n).
pub fn scalar_feature<F: Scalar>(dq: &DeltaQ<F>, kind: Reduction) -> F {
    assert!(!dq.values.is_empty(), "delta-q vector must be nonempty");
    match kind {
        Reduction::Variance => scalar::population_variance(&dq.values),
        Reduction::Minimum => dq
            .values
            .iter()
            .fold(F::infinity(), |acc, &v| acc.min(v)),
        Reduction::Mean => scalar::mean(&dq.values),
    }
}

/// Scalar transform applied to a feature value. Log and root take |x| first
/// because capacity-difference features are negative-valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Log10Abs,
    SqrtAbs,
    Reciprocal,
    Identity,
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Log10Abs => write!(f, "log10_abs"),
            Transform::SqrtAbs => write!(f, "sqrt_abs"),
            Transform::Reciprocal => write!(f, "reciprocal"),
            Transform::Identity => write!(f, "identity"),
        }
    }
}

/// Applies a transform; `feature` names the column in domain errors.
pub fn transform_feature<F: Scalar>(x: F, kind: Transform, feature: &str) -> Result<F> {
    let domain_err = || Error::Domain {
        feature: feature.to_string(),
        transform: kind.to_string(),
        value: x.to_f64().unwrap_or(f64::NAN),
    };
    match kind {
        Transform::Log10Abs => {
            if x == F::zero() {
                Err(domain_err())
            } else {
                Ok(x.abs().log10())
            }
        }
        Transform::SqrtAbs => Ok(x.abs().sqrt()),
        Transform::Reciprocal => {
            if x == F::zero() {
                Err(domain_err())
            } else {
                Ok(F::one() / x)
            }
        }
        Transform::Identity => Ok(x),
    }
}

/// Standardizes every column to mean 0 and population standard deviation 1,
/// recording the statistics so later predictions can reuse them.
pub fn standardize<F: Scalar>(fm: &FeatureMatrix<F>) -> Result<FeatureMatrix<F>> {
    let mut values = fm.values.clone();
    let mut scaling = Vec::with_capacity(fm.n_cols());
    for j in 0..fm.n_cols() {
        let col = values.col_mut(j);
        let mean = scalar::mean(col);
        let std = scalar::population_std(col);
        if std == F::zero() {
            return Err(Error::ConstantColumn {
                name: fm.columns[j].clone(),
            });
        }
        for v in col.iter_mut() {
            *v = (*v - mean) / std;
        }
        scaling.push(ColumnScaling { mean, std });
    }
    Ok(FeatureMatrix {
        rows: fm.rows.clone(),
        columns: fm.columns.clone(),
        values,
        target: fm.target.clone(),
        scaling: Some(scaling),
        target_transform: fm.target_transform,
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson_correlation<F: Scalar>(feature: &[F], target: &[F]) -> Result<F> {
    if feature.len() != target.len() {
        return Err(Error::Feature(format!(
            "correlation inputs differ in length: {} vs {}",
            feature.len(),
            target.len()
        )));
    }
    if feature.len() < 3 {
        return Err(Error::Feature(
            "correlation needs at least 3 observations".into(),
        ));
    }
    let mx = scalar::mean(feature);
    let my = scalar::mean(target);
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    let mut syy = F::zero();
    for (&x, &y) in feature.iter().zip(target) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(Error::Feature(
            "correlation undefined for zero-variance input".into(),
        ));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Declarative feature specification; a list of these fully determines the
/// feature-matrix columns and is what run configurations serialize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// One scalar column: `transform(reduction(ΔQ_{a−b}))`.
    Scalar {
        reduction: Reduction,
        transform: Transform,
        #[serde(default = "default_cycle_a")]
        cycle_a: u32,
        #[serde(default = "default_cycle_b")]
        cycle_b: u32,
    },
    /// One column per grid voltage holding the raw capacity difference, for
    /// fits over the ordered voltage domain.
    RawDeltaQ {
        #[serde(default = "default_cycle_a")]
        cycle_a: u32,
        #[serde(default = "default_cycle_b")]
        cycle_b: u32,
    },
}

fn default_cycle_a() -> u32 {
    DEFAULT_CYCLE_A
}

fn default_cycle_b() -> u32 {
    DEFAULT_CYCLE_B
}

impl FeatureSpec {
    pub fn column_names<F: Scalar>(&self, grid: &VoltageGrid<F>) -> Vec<String> {
        match self {
            FeatureSpec::Scalar {
                reduction,
                transform,
                cycle_a,
                cycle_b,
            } => {
                let base = format!("{reduction}_dq_{cycle_a}_{cycle_b}");
                match transform {
                    Transform::Identity => vec![base],
                    t => vec![format!("{t}_{base}")],
                }
            }
            FeatureSpec::RawDeltaQ { .. } => grid
                .points()
                .iter()
                .map(|v| format!("dq_{:.4}", v.to_f64().unwrap()))
                .collect(),
        }
    }
}

/// Builds the feature matrix for every non-censored labeled cell, rows
/// ordered by `cell_id`, target transformed cycle life.
pub fn assemble_feature_matrix<F: Scalar>(
    dataset: &Dataset<F>,
    labels: &[CycleLifeLabel<F>],
    specs: &[FeatureSpec],
    grid: &VoltageGrid<F>,
    target_transform: TargetTransform,
) -> Result<FeatureMatrix<F>> {
    if specs.is_empty() {
        return Err(Error::Feature("no feature specs given".into()));
    }
    let label_map: BTreeMap<&str, &CycleLifeLabel<F>> = labels
        .iter()
        .filter(|l| !l.censored)
        .map(|l| (l.cell_id.as_str(), l))
        .collect();

    let mut rows = Vec::new();
    let mut target = Vec::new();
    for cell in dataset.cells() {
        if let Some(label) = label_map.get(cell.cell_id.as_str()) {
            rows.push(cell.cell_id.clone());
            target.push(target_transform.forward(label.cycle_life)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::Feature(
            "no non-censored labeled cells to assemble".into(),
        ));
    }

    let mut columns = Vec::new();
    for spec in specs {
        columns.extend(spec.column_names(grid));
    }

    let mut data: Vec<Vec<F>> = vec![Vec::with_capacity(columns.len()); rows.len()];
    // cache ΔQ per (cell, cycle pair) so scalar and raw specs share work
    for (ri, cell_id) in rows.iter().enumerate() {
        let cell = dataset.cell(cell_id).unwrap();
        let mut dq_cache: BTreeMap<(u32, u32), DeltaQ<F>> = BTreeMap::new();
        for spec in specs {
            let (a, b) = match spec {
                FeatureSpec::Scalar {
                    cycle_a, cycle_b, ..
                }
                | FeatureSpec::RawDeltaQ { cycle_a, cycle_b } => (*cycle_a, *cycle_b),
            };
            if let std::collections::btree_map::Entry::Vacant(e) = dq_cache.entry((a, b)) {
                e.insert(delta_q(cell, a, b, grid)?);
            }
            let dq = &dq_cache[&(a, b)];
            match spec {
                FeatureSpec::Scalar {
                    reduction,
                    transform,
                    ..
                } => {
                    let name = &spec.column_names(grid)[0];
                    let raw = scalar_feature(dq, *reduction);
                    let v = transform_feature(raw, *transform, name)
                        .map_err(|e| attach_domain_cell(e, cell_id))?;
                    data[ri].push(v);
                }
                FeatureSpec::RawDeltaQ { .. } => data[ri].extend_from_slice(&dq.values),
            }
        }
    }

    let ncols = columns.len();
    let values = ColMatrix::from_fn(rows.len(), ncols, |i, j| data[i][j]);
    FeatureMatrix::new(rows, columns, values, target, target_transform)
}

fn attach_domain_cell(e: Error, cell_id: &str) -> Error {
    match e {
        Error::Domain {
            feature,
            transform,
            value,
        } => Error::Domain {
            feature: format!("{feature} (cell {cell_id})"),
            transform,
            value,
        },
        other => other,
    }
}

/// Writes a feature matrix as `cell_id,<feature names...>,target`.
pub fn write_feature_matrix<F: Scalar>(fm: &FeatureMatrix<F>, path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("cell_id");
    for c in fm.columns() {
        text.push(',');
        text.push_str(c);
    }
    text.push_str(",target\n");
    for i in 0..fm.n_rows() {
        text.push_str(&fm.rows[i]);
        for j in 0..fm.n_cols() {
            text.push_str(&format!(",{}", fm.value(i, j)));
        }
        text.push_str(&format!(",{}\n", fm.target[i]));
    }
    crate::dataset::write_text(path.as_ref(), &text)
}

/// Writes capacity-difference vectors, one row per cell, columns the grid
/// voltages to 4 decimals.
pub fn write_delta_q_matrix<F: Scalar>(dqs: &[DeltaQ<F>], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("cell_id");
    if let Some(first) = dqs.first() {
        for v in first.grid.points() {
            text.push_str(&format!(",{:.4}", v.to_f64().unwrap()));
        }
    }
    text.push('\n');
    for dq in dqs {
        text.push_str(&dq.cell_id);
        for v in &dq.values {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    crate::dataset::write_text(path.as_ref(), &text)
}
