//! Penalized Poisson regression with B-spline smooths, used to carry
//! general-population mortality over to insured populations.

pub mod basis;
pub mod design;
pub mod model;
pub mod pirls;
pub mod select;

pub use basis::{SmoothBasis, SmoothSpec};
pub use design::{build_design, Design, GroupStructure, ModelLayout, TargetRecord, TrainingRecord};
pub use model::{fit_gam, predict_insured_rates, GamModel, Prediction};
pub use pirls::{fit_pirls, penalized_log_likelihood, penalized_score, PirlsConfig, PirlsFit};
pub use select::{lambda_grid, select_smoothing, Selection};
