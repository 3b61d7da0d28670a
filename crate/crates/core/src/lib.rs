//! Independence tests for mixed continuous and count data.
//!
//! The statistics compare the joint empirical Laplace transform / probability
//! generating function of a sample with the product of its marginals under a
//! weighted L2 norm. See the crate README for an overview.

pub mod empirical;
pub mod error;
pub mod inference;
pub mod quadrature;
pub mod sampling;
pub mod statistics;
mod summation;
pub mod transforms;
pub mod variance;

pub use error::{Error, Result};
pub use statistics::{
    d_statistic, evaluate, i_statistic, standardized_i, t_statistic, t_terms, whole_line_kernel,
    DDomain, DSigma, PreparedStatistic, Shuffle, StatValue, StatisticKind, TTerms,
};
pub use transforms::{MixedSample, Mode, TransformPoint, WeightParams};
pub use variance::sigma_hat_sq;
