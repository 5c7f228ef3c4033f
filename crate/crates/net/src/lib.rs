//! Network side of the change detector: probing chat-completions
//! endpoints, surveying fleets, polling into the store, and an in-process
//! simulator server.

pub mod client;
pub mod config;
pub mod cost;
pub mod error;
pub mod poll;
pub mod sim;
pub mod survey;
pub mod webhook;
pub mod wire;

pub use client::{ProbeOutcome, ProbeSuccess, Prober};
pub use config::{EndpointConfig, Fleet, RetryPolicy};
pub use cost::{run_remote_lt_test, RemoteTest};
pub use error::{NetError, Result};
pub use poll::{poll_loop, PollConfig, PollStats};
pub use sim::{serve, Behavior, SimServer, SimServerConfig};
pub use survey::{survey, SurveyEntry, SurveyReport};
pub use webhook::post_event;
