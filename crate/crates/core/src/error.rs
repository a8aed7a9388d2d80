use thiserror::Error;

/// Errors produced by the estimation kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("operator is not Hermitian (max |M - M^T| = {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("quadrature did not converge: best estimate {best:e}, error estimate {error:e}")]
    QuadratureNonConvergence { best: f64, error: f64 },

    #[error(
        "moment targets (mu_t = {mu_t}, sigma_t2 = {sigma_t2}) are not attainable by a displaced \
         half-Gaussian: {reason} (residual {residual:e})"
    )]
    UnreachableMoments {
        mu_t: f64,
        sigma_t2: f64,
        residual: f64,
        reason: &'static str,
    },

    #[error("photon-count tail mass {tail:e} above k_max = {k_max} exceeds 1e-8; increase k_max")]
    PnrTailTooLarge { k_max: usize, tail: f64 },

    #[error("cutoff did not converge below {max_cutoff} (last relative change {last_change:e})")]
    CutoffNotConverged { max_cutoff: usize, last_change: f64 },

    #[error("{0} is not supported for this prior")]
    Unsupported(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite",
        })
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}
