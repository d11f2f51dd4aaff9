use thiserror::Error;

use crate::correlators::CorrelatorError;
use crate::spectral::SpectralError;
use crate::spin_system::SpinError;
use crate::su2::Su2Error;
use crate::tensor_ops::TensorError;
use crate::thermo::ThermoError;

/// Crate-wide error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Su2(#[from] Su2Error),
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Correlator(#[from] CorrelatorError),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
}
