use thiserror::Error;

pub type Result<T> = std::result::Result<T, HomogError>;

#[derive(Debug, Clone, Error)]
pub enum HomogError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular sample at node {node} (condition number {cond:.3e})")]
    SingularSample { node: usize, cond: f64 },
    #[error("right-hand side has nonzero mean ({0:.3e})")]
    NonZeroMeanRHS(f64),
    #[error("no convergence after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("symbol b(θ) is rank deficient (α₀ = {0:.3e})")]
    RankDeficientSymbol(f64),
    #[error("potential v has nonzero mean ({0:.3e})")]
    NonZeroMeanPotential(f64),
    #[error("ground state changes sign or vanishes (min value {0:.3e}); refine the cell grid")]
    NonPositiveGroundState(f64),
    #[error("ground state is degenerate (spectral gap {0:.3e})")]
    DegenerateGroundState(f64),
    #[error("ε = {eps} is not commensurate with the grid (ε/h = {ratio}, length/ε = {cells})")]
    IndivisibleEpsilon { eps: f64, ratio: f64, cells: f64 },
    #[error("operator is not positive definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("λ calibration diverged (λ > {0:.3e})")]
    CalibrationDiverged(f64),
    #[error("smoothing window of {window} nodes exceeds the extension margin of {margin} nodes")]
    WindowExceedsMargin { window: usize, margin: usize },
    #[error("Lanczos iteration did not converge (relative change {0:.3e})")]
    NonConvergedSVD(f64),
    #[error("eigendecomposition failed")]
    EigFailure,
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("contour tail estimate {tail:.3e} exceeds tolerance for t = {t}")]
    TailTooLarge { tail: f64, t: f64 },
    #[error("time grid too coarse: interpolation error estimate {estimate:.3e} > {limit:.3e}")]
    TimeGridTooCoarse { estimate: f64, limit: f64 },
    #[error("subdomain is empty (δ₀ = {0})")]
    EmptySubdomain(f64),
    #[error("non-positive value {0:.3e} in rate fit")]
    NonPositiveValue(f64),
    #[error("report incomplete: {0}")]
    ReportIncomplete(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl HomogError {
    /// True for errors caused by bad configuration rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HomogError::InvalidInput(_)
                | HomogError::IndivisibleEpsilon { .. }
                | HomogError::EmptySubdomain(_)
                | HomogError::WindowExceedsMargin { .. }
                | HomogError::NonZeroMeanRHS(_)
                | HomogError::NonZeroMeanPotential(_)
                | HomogError::RankDeficientSymbol(_)
                | HomogError::Unsupported(_)
        )
    }
}
