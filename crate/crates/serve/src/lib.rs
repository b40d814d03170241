//! HTTP classification service and command-line front end.
//!
//! One immutable [`ModelSnapshot`] serves every request; promotions publish a
//! new snapshot through [`ModelSlot::hot_swap`] without blocking readers.

mod app;
mod config;
mod model;
mod requests;

pub use app::{
    pipeline_status, router, serve, start_run, AppState, ApiError, ClassifyResponse, FeedbackRequest, ModelInfo, PipelineStatus,
    RunSummary, TriggerFlags, TriggerRequest, TOKEN_HEADER,
};
pub use config::{AppConfig, ServeConfig};
pub use model::{EvalSummary, ModelSlot, ModelSnapshot};
pub use requests::{new_request_id, LoggedRequest, RequestLog};
