//! JSON API over the registry, used by the web UI and the CLI.

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

use super::ProxyState;
use crate::registry::{
    ClippingFormat, ModuleId, NewModule, RegistryError, ShareToken, Visibility, DEFAULT_OWNER,
};
use crate::sources::{SourceError, SourceLocator};

pub const OWNER_HEADER: &str = "x-knoll-owner";

pub(super) fn routes() -> axum::Router<ProxyState> {
    axum::Router::new()
        .route("/modules", get(list_modules).post(create_module))
        .route("/modules/{id}", get(get_module))
        .route("/modules/{id}/toggle", post(toggle_module))
        .route("/modules/{id}/share", post(share_module))
        .route("/modules/{id}/visibility", post(set_visibility))
        .route("/modules/{id}/refresh", post(refresh_module))
        .route("/import/{token}", post(import_module))
        .route("/clippings", get(list_clippings).post(add_clipping))
        .route("/clippings/export", get(export_clippings))
        .route("/activation", get(activation))
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": { "message": self.message } })),
        )
            .into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = match &e {
            RegistryError::EmptyName | RegistryError::EmptyClipping => StatusCode::BAD_REQUEST,
            RegistryError::NameConflict { .. } => StatusCode::CONFLICT,
            RegistryError::NotFound(_) | RegistryError::TokenNotFound => StatusCode::NOT_FOUND,
            RegistryError::BudgetExceeded { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            RegistryError::ClippingTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            RegistryError::AccessDenied(_) | RegistryError::NotOwner(_) => StatusCode::FORBIDDEN,
            RegistryError::Io(_)
            | RegistryError::Manifest(_)
            | RegistryError::CorruptContent(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<SourceError> for ApiError {
    fn from(e: SourceError) -> Self {
        match e {
            SourceError::Registry(inner) => inner.into(),
            SourceError::InvalidLocator { .. } | SourceError::NotRefreshable(_) => {
                Self::new(StatusCode::BAD_REQUEST, e.to_string())
            }
            SourceError::UnsupportedMedia(_) => {
                Self::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, e.to_string())
            }
            SourceError::Fetch { .. } => Self::new(StatusCode::BAD_GATEWAY, e.to_string()),
        }
    }
}

type ApiResult<T = Json<Value>> = Result<T, ApiError>;

fn owner(headers: &HeaderMap) -> String {
    headers
        .get(OWNER_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.is_empty())
        .unwrap_or(DEFAULT_OWNER)
        .to_owned()
}

#[derive(Deserialize)]
struct CreateModule {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    example_queries: Vec<String>,
    #[serde(default = "private")]
    visibility: Visibility,
    #[serde(default)]
    source: Option<SourceLocator>,
    #[serde(default)]
    content: String,
}

fn private() -> Visibility {
    Visibility::Private
}

async fn create_module(
    State(state): State<ProxyState>,
    headers: HeaderMap,
    Json(req): Json<CreateModule>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut new = NewModule::inline(req.name, req.visibility, req.content)
        .description(req.description)
        .owner(owner(&headers));
    new.example_queries = req.example_queries;
    if let Some(source) = req.source {
        new = new.source(source);
    }
    let module = state.knoll.create_module(new).await?;
    Ok((StatusCode::CREATED, Json(json!(module.summary()))))
}

#[derive(Deserialize)]
struct ListQuery {
    query: Option<String>,
}

/// With `query`, searches public modules; otherwise lists the caller's own.
async fn list_modules(
    State(state): State<ProxyState>,
    headers: HeaderMap,
    Query(q): Query<ListQuery>,
) -> Json<Value> {
    let registry = state.knoll.registry();
    match q.query {
        Some(keyword) => Json(json!(registry.search_modules(&keyword))),
        None => Json(json!(registry.list_modules(&owner(&headers)))),
    }
}

async fn get_module(
    State(state): State<ProxyState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult {
    let id = ModuleId::from(id);
    let module = state.knoll.registry().get(&id)?;
    if module.owner == owner(&headers) {
        return Ok(Json(json!(*module)));
    }
    if module.visibility == Visibility::Public {
        return Ok(Json(json!(module.summary())));
    }
    Err(RegistryError::AccessDenied(id).into())
}

#[derive(Deserialize)]
struct Toggle {
    active: bool,
}

async fn toggle_module(
    State(state): State<ProxyState>,
    Path(id): Path<String>,
    Json(t): Json<Toggle>,
) -> ApiResult {
    let set = state
        .knoll
        .registry()
        .toggle_module(&ModuleId::from(id), t.active)?;
    Ok(Json(json!(set)))
}

async fn share_module(
    State(state): State<ProxyState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult {
    let token = state
        .knoll
        .registry()
        .share_module(&ModuleId::from(id), &owner(&headers))?;
    Ok(Json(json!({ "token": token })))
}

#[derive(Deserialize)]
struct SetVisibility {
    visibility: Visibility,
}

async fn set_visibility(
    State(state): State<ProxyState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(v): Json<SetVisibility>,
) -> ApiResult {
    let id = ModuleId::from(id);
    let registry = state.knoll.registry();
    if registry.get(&id)?.owner != owner(&headers) {
        return Err(RegistryError::NotOwner(id).into());
    }
    let module = registry.set_visibility(&id, v.visibility)?;
    Ok(Json(json!(module.summary())))
}

async fn refresh_module(State(state): State<ProxyState>, Path(id): Path<String>) -> ApiResult {
    let outcome = state.knoll.refresh_module(&ModuleId::from(id)).await?;
    Ok(Json(json!(outcome)))
}

#[derive(Deserialize, Default)]
struct Import {
    name: Option<String>,
}

async fn import_module(
    State(state): State<ProxyState>,
    headers: HeaderMap,
    Path(token): Path<String>,
    body: Option<Json<Import>>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(req) = body.unwrap_or_default();
    let module = state.knoll.registry().import_by_token(
        &ShareToken::from(token.as_str()),
        &owner(&headers),
        req.name,
    )?;
    Ok((StatusCode::CREATED, Json(json!(module.summary()))))
}

#[derive(Deserialize)]
struct AddClipping {
    text: String,
    #[serde(default)]
    source_url: Option<String>,
}

async fn add_clipping(
    State(state): State<ProxyState>,
    Json(c): Json<AddClipping>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let clipping = state.knoll.registry().add_clipping(&c.text, c.source_url)?;
    Ok((StatusCode::CREATED, Json(json!(clipping))))
}

async fn list_clippings(State(state): State<ProxyState>) -> Json<Value> {
    Json(json!(state.knoll.registry().personal_module().clippings))
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export_clippings(
    State(state): State<ProxyState>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<String> {
    let format = match q.format.as_deref() {
        None => ClippingFormat::PlainText,
        Some(f) => f
            .parse()
            .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?,
    };
    Ok(state.knoll.registry().export_clippings(format))
}

async fn activation(State(state): State<ProxyState>) -> Json<Value> {
    Json(json!(state.knoll.registry().activation_set()))
}
