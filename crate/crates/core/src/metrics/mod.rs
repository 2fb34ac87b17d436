//! Training losses and unmixing quality metrics.

mod loss;
mod unmix;

pub use loss::{mse_loss, sad_loss, Loss, COS_CLAMP};
pub(crate) use unmix::mean_std;
pub use unmix::{
    aggregate_errors, format_mean_std, match_endmembers, rmse_abundances, rmse_per_endmember,
    sad_endmembers, spectral_angle, ErrorSummary, Permutation, MAX_MATCH_ENDMEMBERS,
};
