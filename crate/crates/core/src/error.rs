use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "degenerate spectrum: singular values {0} and {1} are closer than the distinctness gap"
    )]
    DegenerateSpectrum(f64, f64),

    #[error("bad spectrum: {0}")]
    BadSpectrum(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("numerical rank is {found}, expected {expected}")]
    RankMismatch { expected: usize, found: usize },

    #[error("no pivoting gives a leading block with condition number <= {cap:e} (best {cond:e})")]
    IllConditionedPivot { cond: f64, cap: f64 },

    #[error("leading block X11 is singular or ill-conditioned (condition {0:e})")]
    SingularX11(f64),

    #[error("Gram combination of the blocks is numerically singular")]
    SingularGram,

    #[error("matrix is not of full rank (rank {rank}, min dimension {min_dim})")]
    NotFullRank { rank: usize, min_dim: usize },

    #[error("matrix is not of full column rank (rank {rank}, columns {cols})")]
    NotFullColumnRank { rank: usize, cols: usize },

    #[error("rank drift: base rank {base}, perturbed ranks {plus} / {minus}")]
    RankDrift {
        base: usize,
        plus: usize,
        minus: usize,
    },

    #[error("perturbed matrix left the chart: {0}")]
    ChartInvalid(String),

    #[error("singular input matrix")]
    SingularInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }

    /// True for the failures a fresh random draw can cure.
    pub fn is_numerical_degeneracy(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSpectrum(..)
                | Error::RankDrift { .. }
                | Error::IllConditionedPivot { .. }
                | Error::ChartInvalid(_)
                | Error::SingularX11(_)
                | Error::SingularGram
        )
    }
}
