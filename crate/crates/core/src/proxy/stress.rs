//! Load driver: concurrent simulated users against a proxy backed by the mock upstream.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;

use super::mock::MockUpstream;
use super::{app, ProxyState, Upstream, CONVERSATION_HEADER};
use crate::service::Knoll;

#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    /// Requests whose routing failed and were forwarded without knowledge.
    pub router_errors: usize,
    /// Requests that did not come back with a successful upstream response.
    pub request_errors: usize,
    pub delivered: usize,
    pub wall_ms: f64,
}

impl LatencyReport {
    pub fn from_samples(mut latencies_ms: Vec<f64>) -> Self {
        latencies_ms.sort_by(f64::total_cmp);
        let n = latencies_ms.len();
        let mean = if n == 0 {
            0.0
        } else {
            latencies_ms.iter().sum::<f64>() / n as f64
        };
        Self {
            samples: n,
            mean_ms: mean,
            p50_ms: percentile(&latencies_ms, 50.0),
            p95_ms: percentile(&latencies_ms, 95.0),
            max_ms: latencies_ms.last().copied().unwrap_or(0.0),
            router_errors: 0,
            request_errors: 0,
            delivered: 0,
            wall_ms: 0.0,
        }
    }

    pub fn errors(&self) -> usize {
        self.router_errors + self.request_errors
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs `n_users` concurrent loops of `requests_per_user` chat requests each.
/// User `u` talks in conversation `user-u` and cycles through `queries`.
pub async fn stress_test(
    knoll: Arc<Knoll>,
    n_users: usize,
    requests_per_user: usize,
    queries: &[String],
) -> std::io::Result<LatencyReport> {
    let mock = MockUpstream::default();
    let (upstream_url, upstream_task) = mock.spawn().await?;
    let state = ProxyState::new(knoll, Upstream::new(upstream_url));
    let metrics = state.metrics.clone();

    let listener = TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    let url = format!("http://{}/v1/chat/completions", listener.local_addr()?);
    let proxy_task = tokio::spawn(async move {
        let _ = axum::serve(listener, app(state)).await;
    });

    let client = reqwest::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(std::io::Error::other)?;
    let queries: Arc<Vec<String>> = Arc::new(if queries.is_empty() {
        vec!["hello".to_owned()]
    } else {
        queries.to_vec()
    });

    let started = Instant::now();
    let mut users = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let client = client.clone();
        let url = url.clone();
        let queries = queries.clone();
        users.push(tokio::spawn(async move {
            let mut ok = 0usize;
            for r in 0..requests_per_user {
                let query = &queries[(u + r) % queries.len()];
                let body = json!({
                    "model": "mock",
                    "messages": [{ "role": "user", "content": query }],
                });
                let sent = client
                    .post(&url)
                    .header(CONVERSATION_HEADER, format!("user-{u}"))
                    .json(&body)
                    .send()
                    .await;
                if let Ok(resp) = sent {
                    if resp.status().is_success() && resp.bytes().await.is_ok() {
                        ok += 1;
                    }
                }
            }
            ok
        }));
    }
    let mut delivered = 0;
    for user in users {
        delivered += user.await.unwrap_or(0);
    }
    let wall = started.elapsed();

    proxy_task.abort();
    upstream_task.abort();

    let mut report = LatencyReport::from_samples(metrics.latencies_ms());
    report.router_errors = metrics.router_errors();
    report.delivered = delivered;
    report.request_errors = n_users * requests_per_user - delivered;
    report.wall_ms = wall.as_secs_f64() * 1_000.0;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let data: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&data, 50.0), 50.0);
        assert_eq!(percentile(&data, 95.0), 95.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn report_stats() {
        let r = LatencyReport::from_samples(vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!(r.samples, 4);
        assert_eq!(r.mean_ms, 2.5);
        assert_eq!(r.p50_ms, 2.0);
        assert_eq!(r.max_ms, 4.0);
    }
}
