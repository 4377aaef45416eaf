//! Target models: deterministic toys with known temporal structure and an
//! adapter for external models behind a line-delimited JSON protocol.

mod anomaly;
mod external;
mod sentiment;

pub use anomaly::{explanation_window, ToyAnomalyModel, DEFAULT_WINDOW};
pub use external::{ExternalModel, Request, Response, DEFAULT_TIMEOUT};
pub use sentiment::{ToySentimentModel, NEGATIVE_WORDS, NEGATORS, POSITIVE_WORDS};
