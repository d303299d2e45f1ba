//! Crate-wide error type.

/// Errors raised by the physics, dynamics, imaging, and fitting modules.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Axial confinement requires a_z + q_z^2/2 >= 0.
    #[error("unstable confinement: a_z + q_z^2/2 = {0} < 0")]
    UnstableConfinement(f64),

    /// A precondition on an input value failed.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two-ion integration became invalid (ions closer than 1 nm).
    #[error("ion collision: |z1 - z2| = {0:.3e} m < 1 nm; integration invalid")]
    IonCollision(f64),

    /// The integration diverged (non-finite or runaway coordinates).
    #[error("numerical instability: {0}")]
    Instability(String),

    /// Not enough post-settle data for the requested estimator.
    #[error("insufficient window: {0}")]
    InsufficientWindow(String),

    /// Ensemble members were produced with inconsistent configurations.
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    /// An operation that needs an RF-resolved trajectory got a secular-mode one.
    #[error("trajectory was integrated in secular mode; full-Mathieu mode required")]
    SecularModeInput,

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    /// The optimizer hit its iteration cap without meeting the tolerances.
    #[error("fit did not converge within {0} iterations")]
    NoConvergence(usize),

    /// Input data carry no usable signal (e.g. a flat profile).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A resonance scan whose maximum is not interior to the frequency range.
    #[error("resonance not bracketed by the scan")]
    ResonanceNotBracketed,

    /// Fewer data points than the operation requires.
    #[error("insufficient points: {0}")]
    InsufficientPoints(String),

    /// No physical solution exists for the requested inversion.
    #[error("out of range: {0}")]
    OutOfRange(String),
}

pub type Result<T> = std::result::Result<T, Error>;
