//! OpenAI-compatible chat-completions proxy.
//!
//! For each request the last user message is routed, the selected knowledge
//! not yet sent in the conversation is prepended with the injection template,
//! and the request is forwarded upstream. The modules that were deemed
//! relevant ("chips") travel back in the `X-Knoll-Modules` header, in a
//! `knoll_modules` field on non-streaming bodies, and as the first event of a
//! streamed response.
//!
//! Routing never breaks a chat: if the router fails, the prompt is forwarded
//! untouched and `X-Knoll-Warning` is set.

mod api;
pub mod mock;
pub mod stress;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use futures::StreamExt;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::prompts::{INJECTION_TEMPLATE, MODULE_CONTENTS_PLACEHOLDER};
use crate::router::{ConversationId, QueryContext, RankedDoc, RoutingResult};
use crate::service::Knoll;

/// Request body cap. A module may hold up to 5 MB of text, and JSON escaping inflates it.
pub const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;

pub const CONVERSATION_HEADER: &str = "x-knoll-conversation";
pub const MODULES_HEADER: &str = "x-knoll-modules";
pub const WARNING_HEADER: &str = "x-knoll-warning";
pub const MODULES_FIELD: &str = "knoll_modules";
pub const CONVERSATION_FIELD: &str = "conversation_id";

/// Prepends the injection template with `docs` serialized as
/// `[<breadcrumb>]\n<body>` blocks, one blank line apart, then a blank line
/// and the user's prompt. With no documents the prompt is returned unchanged.
pub fn build_injection_prompt(docs: &[RankedDoc], user_prompt: &str) -> String {
    if docs.is_empty() {
        return user_prompt.to_owned();
    }
    let blocks: Vec<String> = docs
        .iter()
        .map(|d| {
            format!(
                "[{}]\n{}",
                d.doc.breadcrumb,
                d.doc.body.trim_end_matches(['\n', '\r'])
            )
        })
        .collect();
    let mut out = INJECTION_TEMPLATE.replace(MODULE_CONTENTS_PLACEHOLDER, &blocks.join("\n\n"));
    out.push_str("\n\n");
    out.push_str(user_prompt);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chip {
    pub module_id: String,
    pub module_name: String,
    pub score: f64,
}

pub fn chips_for(result: &RoutingResult) -> Vec<Chip> {
    result
        .module_scores()
        .into_iter()
        .map(|(id, name, score)| Chip {
            module_id: id.to_string(),
            module_name: name,
            score,
        })
        .collect()
}

/// JSON with every non-ASCII character escaped, so it is a valid header value.
pub fn chips_header_value(chips: &[Chip]) -> String {
    let json = serde_json::to_string(chips).expect("chips serialize");
    ascii_json(&json)
}

fn ascii_json(json: &str) -> String {
    let mut out = String::with_capacity(json.len());
    for c in json.chars() {
        if c.is_ascii() {
            out.push(c);
        } else {
            let mut units = [0u16; 2];
            for unit in c.encode_utf16(&mut units) {
                out.push_str(&format!("\\u{unit:04x}"));
            }
        }
    }
    out
}

/// Router timing collected by the proxy.
#[derive(Debug, Default)]
pub struct RouterMetrics {
    latencies_ms: Mutex<Vec<f64>>,
    router_errors: AtomicUsize,
}

impl RouterMetrics {
    fn record(&self, elapsed: Duration, ok: bool) {
        self.latencies_ms
            .lock()
            .push(elapsed.as_secs_f64() * 1_000.0);
        if !ok {
            self.router_errors.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn latencies_ms(&self) -> Vec<f64> {
        self.latencies_ms.lock().clone()
    }

    pub fn router_errors(&self) -> usize {
        self.router_errors.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.latencies_ms.lock().clear();
        self.router_errors.store(0, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone)]
pub struct Upstream {
    /// Base URL of the OpenAI-compatible API, e.g. `https://host/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
}

impl Upstream {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
        }
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Clone)]
pub struct ProxyState {
    pub knoll: Arc<Knoll>,
    pub upstream: Upstream,
    pub http: reqwest::Client,
    pub metrics: Arc<RouterMetrics>,
}

impl ProxyState {
    pub fn new(knoll: Arc<Knoll>, upstream: Upstream) -> Self {
        Self {
            knoll,
            upstream,
            http: reqwest::Client::new(),
            metrics: Arc::new(RouterMetrics::default()),
        }
    }
}

/// Chat endpoint plus the registry API.
pub fn app(state: ProxyState) -> axum::Router {
    axum::Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .merge(api::routes())
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: ProxyState) -> std::io::Result<()> {
    axum::serve(listener, app(state)).await
}

/// Text of a message's `content`, which is either a string or a list of parts.
fn message_text(content: &Value) -> Option<String> {
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts
                .iter()
                .filter(|p| p["type"] == "text")
                .filter_map(|p| p["text"].as_str())
                .collect();
            (!texts.is_empty()).then(|| texts.join("\n"))
        }
        _ => None,
    }
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (
        status,
        axum::Json(json!({ "error": { "message": message.into() } })),
    )
        .into_response()
}

fn header_text(value: &str) -> HeaderValue {
    let clean: String = value
        .chars()
        .map(|c| {
            if c.is_ascii() && !c.is_ascii_control() {
                c
            } else {
                ' '
            }
        })
        .collect();
    HeaderValue::from_str(&clean).unwrap_or_else(|_| HeaderValue::from_static("invalid"))
}

struct Routed {
    chips: Vec<Chip>,
    warning: Option<String>,
}

async fn chat_completions(
    State(state): State<ProxyState>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    handle_chat_completion(&state, &headers, &body).await
}

pub async fn handle_chat_completion(
    state: &ProxyState,
    headers: &HeaderMap,
    body: &[u8],
) -> Response {
    let mut request: Value = match serde_json::from_slice(body) {
        Ok(v @ Value::Object(_)) => v,
        Ok(_) => {
            return error_response(
                StatusCode::BAD_REQUEST,
                "request body must be a JSON object",
            )
        }
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("invalid JSON: {e}")),
    };
    if !request["messages"].is_array() {
        return error_response(StatusCode::BAD_REQUEST, "request has no messages array");
    }

    let conversation = headers
        .get(CONVERSATION_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
        .or_else(|| request[CONVERSATION_FIELD].as_str().map(str::to_owned))
        .filter(|s| !s.is_empty())
        .map(ConversationId::from);
    if let Some(obj) = request.as_object_mut() {
        obj.remove(CONVERSATION_FIELD);
    }
    let streaming = request["stream"].as_bool().unwrap_or(false);

    let routed = inject(state, &mut request, conversation.as_ref()).await;
    forward(state, headers, &request, streaming, routed).await
}

/// Routes the last user message and rewrites it in place.
async fn inject(
    state: &ProxyState,
    request: &mut Value,
    conversation: Option<&ConversationId>,
) -> Routed {
    let messages = request["messages"].as_array_mut().expect("checked above");
    let Some(last_user) = messages.iter().rposition(|m| m["role"] == "user") else {
        return Routed {
            chips: Vec::new(),
            warning: None,
        };
    };
    let Some(query) = message_text(&messages[last_user]["content"]) else {
        return Routed {
            chips: Vec::new(),
            warning: None,
        };
    };

    let router = state.knoll.router();
    let previous = conversation.and_then(|id| router.conversations().previous_query(id));
    let mut qc = QueryContext::new(query.clone()).with_previous(previous);
    qc.conversation_id = conversation.cloned();

    let started = Instant::now();
    let outcome = state.knoll.route(&qc).await;
    state.metrics.record(started.elapsed(), outcome.is_ok());
    if let Some(id) = conversation {
        router.conversations().set_previous_query(id, query.clone());
    }

    match outcome {
        Ok(result) => {
            if !result.injected.is_empty() {
                messages[last_user]["content"] =
                    Value::String(build_injection_prompt(&result.injected, &query));
            }
            Routed {
                chips: chips_for(&result),
                warning: None,
            }
        }
        Err(e) => {
            tracing::warn!(error = %e, "routing failed; forwarding prompt without knowledge");
            Routed {
                chips: Vec::new(),
                warning: Some(format!("knowledge unavailable: {e}")),
            }
        }
    }
}

async fn forward(
    state: &ProxyState,
    headers: &HeaderMap,
    request: &Value,
    streaming: bool,
    routed: Routed,
) -> Response {
    let mut outbound = state
        .http
        .post(state.upstream.completions_url())
        .json(request);
    match &state.upstream.api_key {
        Some(key) => outbound = outbound.bearer_auth(key),
        None => {
            if let Some(auth) = headers.get(header::AUTHORIZATION) {
                outbound = outbound.header(header::AUTHORIZATION, auth.clone());
            }
        }
    }

    let mut response = match outbound.send().await {
        Ok(upstream) => relay(upstream, streaming, &routed.chips).await,
        Err(e) => error_response(
            StatusCode::BAD_GATEWAY,
            format!("upstream unreachable: {e}"),
        ),
    };
    let headers = response.headers_mut();
    headers.insert(
        HeaderName::from_static(MODULES_HEADER),
        header_text(&chips_header_value(&routed.chips)),
    );
    if let Some(warning) = &routed.warning {
        headers.insert(
            HeaderName::from_static(WARNING_HEADER),
            header_text(warning),
        );
    }
    response
}

async fn relay(upstream: reqwest::Response, streaming: bool, chips: &[Chip]) -> Response {
    let status =
        StatusCode::from_u16(upstream.status().as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
    let content_type = upstream
        .headers()
        .get(reqwest::header::CONTENT_TYPE)
        .cloned();

    if streaming && status.is_success() {
        let prologue = format!(
            "data: {}\n\n",
            json!({ "object": "knoll.modules", MODULES_FIELD: chips })
        );
        let body =
            futures::stream::once(
                async move { Ok::<Bytes, reqwest::Error>(Bytes::from(prologue)) },
            )
            .chain(upstream.bytes_stream());
        return Response::builder()
            .status(status)
            .header(header::CONTENT_TYPE, "text/event-stream")
            .header(header::CACHE_CONTROL, "no-cache")
            .body(Body::from_stream(body))
            .expect("static response parts");
    }

    let bytes = match upstream.bytes().await {
        Ok(b) => b,
        Err(e) => return error_response(StatusCode::BAD_GATEWAY, format!("upstream body: {e}")),
    };
    let mut builder = Response::builder().status(status);
    if status.is_success() {
        if let Ok(Value::Object(mut obj)) = serde_json::from_slice::<Value>(&bytes) {
            obj.insert(MODULES_FIELD.to_owned(), json!(chips));
            return builder
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(Value::Object(obj).to_string()))
                .expect("static response parts");
        }
    }
    if let Some(ct) = content_type {
        builder = builder.header(header::CONTENT_TYPE, ct);
    }
    builder
        .body(Body::from(bytes))
        .expect("static response parts")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::ContentHash;
    use crate::registry::ModuleId;
    use crate::router::Document;

    fn ranked(breadcrumb: &str, body: &str, score: f64) -> RankedDoc {
        RankedDoc {
            doc: Arc::new(Document {
                module_id: ModuleId::from("m"),
                module_name: "Doc".into(),
                index: 0,
                breadcrumb: breadcrumb.into(),
                body: body.into(),
                content_hash: ContentHash::of(body),
                is_clipping: false,
            }),
            score,
        }
    }

    #[test]
    fn no_docs_leaves_prompt_alone() {
        assert_eq!(build_injection_prompt(&[], "hi"), "hi");
    }

    #[test]
    fn one_doc_layout() {
        let out = build_injection_prompt(&[ranked("Doc > A", "body\n", 0.9)], "hi");
        let expected =
            INJECTION_TEMPLATE.replace("${MODULE CONTENTS}$", "[Doc > A]\nbody") + "\n\nhi";
        assert_eq!(out, expected);
        assert!(out.ends_with("Knowledge: [Doc > A]\nbody\n\nhi"));
    }

    #[test]
    fn ascii_header_escaping() {
        let chips = vec![Chip {
            module_id: "m".into(),
            module_name: "Café 東京 🍜".into(),
            score: 0.5,
        }];
        let header = chips_header_value(&chips);
        assert!(header.is_ascii());
        let back: Vec<Chip> = serde_json::from_str(&header).unwrap();
        assert_eq!(back, chips);
    }

    #[test]
    fn message_content_shapes() {
        assert_eq!(message_text(&json!("plain")), Some("plain".into()));
        assert_eq!(
            message_text(
                &json!([{"type": "text", "text": "a"}, {"type": "image_url"}, {"type": "text", "text": "b"}])
            ),
            Some("a\nb".into())
        );
        assert_eq!(message_text(&json!(null)), None);
    }
}
