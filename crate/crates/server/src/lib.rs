//! HTTP API and command-line front ends for the discourse pipeline. Both
//! are thin layers over [`discourse_core::pipeline::Pipeline`].

pub mod api;
pub mod cli;

use std::path::Path;

use axum::Router;
use tower_http::services::{ServeDir, ServeFile};

pub use api::{router, AppState};

/// The API router, plus the dashboard build served under `/` when
/// `static_dir` is set.
pub fn app(state: AppState, static_dir: Option<&Path>) -> Router {
    let router = api::router(state);
    match static_dir {
        Some(dir) => {
            let spa = ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html")));
            router.fallback_service(spa)
        }
        None => router,
    }
}
