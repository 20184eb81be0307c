use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("degenerate 6D rotation representation{}", location_suffix(*frame, *joint))]
    DegenerateRepresentation {
        frame: Option<usize>,
        joint: Option<usize>,
    },

    #[error("matrix is not a proper rotation: {0}")]
    InvalidRotation(String),

    #[error("metric unavailable: {0}")]
    MetricUnavailable(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn location_suffix(frame: Option<usize>, joint: Option<usize>) -> String {
    match (frame, joint) {
        (Some(t), Some(j)) => format!(" at frame {t}, joint {j}"),
        (None, Some(j)) => format!(" at joint {j}"),
        (Some(t), None) => format!(" at frame {t}"),
        (None, None) => String::new(),
    }
}

pub(crate) fn ensure_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
