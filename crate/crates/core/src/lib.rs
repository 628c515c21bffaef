//! Interpretable battery cycle-life prediction from early cycling data.
//!
//! The pipeline goes from per-cycle discharge curves to a fitted, inspectable
//! linear model: capacity-difference features over a voltage grid, scalar
//! reductions and transforms, regularized fits (OLS, elastic net, fused
//! lasso), group-aware cross-validation, and residual/uncertainty
//! diagnostics. A synthetic-data generator with a planted
//! feature–lifetime relation makes the whole chain verifiable at desk scale.
//!
//! The numeric core is generic over the scalar type via [`scalar::Scalar`]
//! (`f32` or `f64`); the `*64` aliases at the crate root cover the common
//! case.
//!
//! ```
//! use cyclelife::features::{
//!     assemble_feature_matrix, FeatureSpec, Reduction, TargetTransform, Transform, VoltageGrid,
//! };
//! use cyclelife::model_selection::{fit_final, grid_search_cv, CvSettings, FitterSpec};
//! use cyclelife::solvers::predict;
//! use cyclelife::synth::{generate_dataset, SynthSpec};
//!
//! # fn main() -> cyclelife::Result<()> {
//! // synthesize cells with a planted feature–lifetime relation
//! let spec = SynthSpec { n_cells: 24, groups: 6, n_grid_points: 120, ..SynthSpec::default() };
//! let (dataset, _truth) = generate_dataset::<f64>(&spec)?;
//! let labels = dataset.labels(0.8)?;
//!
//! // one scalar feature: log10 |Var(ΔQ_{100−10})| on the voltage grid
//! let grid = VoltageGrid::new(3.5, 2.0, 120)?;
//! let features = [FeatureSpec::Scalar {
//!     reduction: Reduction::Variance,
//!     transform: Transform::Log10Abs,
//!     cycle_a: 100,
//!     cycle_b: 10,
//! }];
//! let fm = assemble_feature_matrix(&dataset, &labels, &features, &grid, TargetTransform::Log10)?;
//!
//! // grouped 5-fold cross-validation over an elastic-net grid, then the final fit
//! let cv_grid = [(1e-6, 1.0), (1e-3, 1.0), (0.1, 0.5)];
//! let settings = CvSettings { k: 5, seed: 7, ..CvSettings::default() };
//! let fitter = FitterSpec::elastic_net();
//! let cv = grid_search_cv(&fm, &dataset.group_map(), &cv_grid, &settings, &fitter)?;
//! let model = fit_final(&fm, &cv, &fitter)?;
//!
//! // predictions come back on the cycles scale
//! let cycles = predict(&model, &fm)?;
//! assert_eq!(cycles.len(), dataset.len());
//! # Ok(())
//! # }
//! ```

pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod linalg;
pub mod model_selection;
pub mod scalar;
pub mod solvers;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete aliases for the default `f64` pipeline.
pub type Dataset64 = dataset::Dataset<f64>;
pub type CellRecord64 = dataset::CellRecord<f64>;
pub type CycleLifeLabel64 = dataset::CycleLifeLabel<f64>;
pub type VoltageGrid64 = features::VoltageGrid<f64>;
pub type DeltaQ64 = features::DeltaQ<f64>;
pub type FeatureMatrix64 = features::FeatureMatrix<f64>;
pub type LinearModel64 = solvers::LinearModel<f64>;
pub type ENConfig64 = solvers::ENConfig<f64>;
pub type FusedLassoConfig64 = solvers::FusedLassoConfig<f64>;
pub type CVResult64 = model_selection::CVResult<f64>;
pub type MetricsReport64 = diagnostics::MetricsReport<f64>;
