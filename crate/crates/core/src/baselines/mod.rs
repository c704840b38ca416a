//! Classical comparison models: one-step persistence, historical average,
//! vector autoregression and random forest.
//!
//! Every baseline returns one prediction row per requested target bin, in
//! the same order, so the output plugs straight into a
//! [`PredictionSet`](crate::metrics::PredictionSet).

mod forest;
mod naive;
mod var;

pub use forest::{
    rf_fit, rf_fit_matrix, rf_predict, rf_predict_matrix, window_features, ForestConfig,
    ForestModel, Node, RegressionTree,
};
pub use naive::{historical_average, one_step, HaPrediction, HaRule};
pub use var::{var_fit, var_predict, VarModel};
