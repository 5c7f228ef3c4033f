use std::net::SocketAddr;

use thiserror::Error;

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Core(#[from] logtrack_core::Error),

    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },

    #[error("http error: {0}")]
    Http(String),

    #[error("probe failed: {0}")]
    Probe(String),

    #[error("config error: {0}")]
    Config(String),
}

impl NetError {
    pub fn code(&self) -> &'static str {
        match self {
            NetError::Core(e) => e.code(),
            NetError::Bind { .. } => "bind",
            NetError::Http(_) => "http",
            NetError::Probe(_) => "probe",
            NetError::Config(_) => "config",
        }
    }
}

impl From<reqwest::Error> for NetError {
    fn from(e: reqwest::Error) -> Self {
        NetError::Http(e.to_string())
    }
}
