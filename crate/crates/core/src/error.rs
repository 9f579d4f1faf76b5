use thiserror::Error;

use crate::classifier::ClassifierError;
use crate::corrnet::CorrError;
use crate::hypembed::EmbedError;
use crate::market_data::DataError;
use crate::netmeasures::MeasureError;
use crate::sigtest::SigTestError;

/// Crate-wide error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Corr(#[from] CorrError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    SigTest(#[from] SigTestError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

impl Error {
    /// True for failures of numerical routines rather than of the input data.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Measure(e) | Error::Corr(CorrError::Measure(e)) => e.is_numeric(),
            Error::Embed(e) => e.is_numeric(),
            Error::Classifier(e) => e.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
