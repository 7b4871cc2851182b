//! Sparse sensor selection and observer design for LTI plants.

pub mod analysis;
pub mod design;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod sdp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Sdp(#[from] sdp::SdpError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Lmi(#[from] lmi::LmiError),
    #[error(transparent)]
    Design(#[from] design::DesignError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
}
