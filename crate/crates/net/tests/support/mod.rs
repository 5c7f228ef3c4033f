#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::Duration;

use logtrack_core::simulator::SyntheticModel;
use logtrack_net::{serve, Behavior, EndpointConfig, RetryPolicy, SimServer, SimServerConfig};

pub fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

pub fn model(top_k: usize, sigma: f64, seed: u64) -> SyntheticModel {
    SyntheticModel::random(64, 2.0, sigma, top_k, seed).unwrap()
}

pub fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        backoff_secs: vec![0.01],
        max_retry_after_secs: 0.05,
    }
}

pub async fn server(m: SyntheticModel, behavior: Behavior) -> SimServer {
    let mut cfg = SimServerConfig::new(m);
    cfg.behavior = behavior;
    serve(cfg, local()).await.unwrap()
}

pub fn endpoint(id: &str, s: &SimServer) -> EndpointConfig {
    let mut e = EndpointConfig::new(id, s.base_url(), "sim");
    e.retry = fast_retry();
    e.timeout_secs = 5.0;
    e
}

/// Base URL on which nothing listens.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind(local()).unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/v1")
}

pub fn secs(s: f64) -> Duration {
    Duration::from_secs_f64(s)
}
