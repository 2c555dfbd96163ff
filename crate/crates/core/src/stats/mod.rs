//! Chi-square test of independence, Welch's t-test and the random-intercept mixed model.

mod convenience;
mod mixed;
mod special;
mod tests_of_difference;

use thiserror::Error;

pub use convenience::{
    moc_convenience, ConvenienceOptions, ConvenienceSamples, OdJourney, MAX_IN_VEHICLE_MIN, MAX_SPEED_MPH,
};
pub use mixed::{
    fit_random_intercept, fit_random_intercept_with, load_mixed_observations, write_mixed_observations, EmOptions,
    MixedModelFit, MixedObservation, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE,
};
pub use special::{beta_inc, chi_square_sf, gamma_q, ln_gamma, student_t_two_sided};
pub use tests_of_difference::{chi_square, welch_t, ChiSquareResult, ContingencyTable, WelchResult, MIN_EXPECTED};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("invalid contingency table: {0}")]
    InvalidTable(String),
    #[error("degenerate margin: {0} sums to zero")]
    DegenerateMargin(String),
    #[error("insufficient sample: need at least 2 observations per group, got {0}")]
    InsufficientSample(usize),
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("singular design: the flag must take both values 0 and 1")]
    SingularDesign,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}
