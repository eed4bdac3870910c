//! Classical comparison generators: a Gaussian mixture over the day
//! space with BIC model-order selection, and the Tao Vanilla multiple
//! linear regression benchmark.

pub mod gmm;
pub mod tao;

pub use gmm::{fit_gmm, gmm_sample, CovarianceKind, GmmFit, GmmFitOptions, GmmModel};
pub use tao::{tao_design_row, tao_fit, tao_predict, TaoInput, TaoModel, TAO_COLUMNS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("empty data")]
    EmptyData,
}
