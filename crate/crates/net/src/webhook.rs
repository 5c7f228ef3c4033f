use std::time::Duration;

use logtrack_core::ChangeEvent;

use crate::error::{NetError, Result};

/// POSTs the event as JSON; any non-2xx status is an error.
pub async fn post_event(client: &reqwest::Client, url: &str, event: &ChangeEvent<f64>) -> Result<()> {
    let resp = client
        .post(url)
        .timeout(Duration::from_secs(10))
        .json(event)
        .send()
        .await?;
    if !resp.status().is_success() {
        return Err(NetError::Http(format!("webhook {url} answered {}", resp.status())));
    }
    Ok(())
}
