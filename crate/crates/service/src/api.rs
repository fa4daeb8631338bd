//! HTTP+JSON API over [`Service`].
//!
//! Every response carries an `x-schema-version` header; errors are JSON
//! bodies `{"code": ..., "message": ...}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ErrorKind, ServiceError};
use crate::service::{AddKnowledge, CreateProject, Decision, FeedbackRequest, Service, API_SCHEMA_VERSION};

pub const SCHEMA_HEADER: &str = "x-schema-version";

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, axum::Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

/// JSON body extractor whose rejections are 422 with an error code.
pub struct Json<T>(pub T);

#[axum::async_trait]
impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Json<T> {
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Self(v)),
            Err(e) => Err(ServiceError::invalid("schema_violation", rejection_message(e))),
        }
    }
}

fn rejection_message(e: JsonRejection) -> String {
    match e {
        JsonRejection::JsonDataError(d) => {
            // the source chain names the offending field
            let mut msg = d.body_text();
            let mut src = std::error::Error::source(&d);
            while let Some(s) = src {
                msg = s.to_string();
                src = s.source();
            }
            msg
        }
        other => other.body_text(),
    }
}

type ApiResult<T> = Result<T, ServiceError>;

fn ok<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, axum::Json(value)).into_response()
}

/// Run blocking service work off the async executor.
async fn blocking<T, F>(svc: &Arc<Service>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> ApiResult<T> + Send + 'static,
{
    let svc = svc.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ServiceError::internal("worker_panicked", e.to_string()))?
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/:id", get(get_project))
        .route("/projects/:id/plan", post(plan))
        .route("/projects/:id/approve", post(approve))
        .route("/projects/:id/run", post(run))
        .route("/projects/:id/storyboard", get(storyboard))
        .route("/artifacts/:hash", get(artifact))
        .route("/feedback", post(feedback))
        .route("/experience", get(experience))
        .route("/experience/:id/history", get(history))
        .route("/knowledge", get(knowledge).post(add_knowledge))
        .fallback(|| async { ServiceError::not_found("no_route", "no such endpoint") })
        .layer(axum::middleware::map_response(|mut r: Response| async move {
            r.headers_mut().insert(SCHEMA_HEADER, HeaderValue::from(API_SCHEMA_VERSION));
            r
        }))
        .with_state(service)
}

type Svc = State<Arc<Service>>;

async fn create_project(State(svc): Svc, Json(req): Json<CreateProject>) -> ApiResult<Response> {
    let p = blocking(&svc, move |s| s.create_project(req)).await?;
    Ok(ok(StatusCode::CREATED, &p))
}

async fn list_projects(State(svc): Svc) -> ApiResult<Response> {
    let all = blocking(&svc, |s| Ok(s.list_projects())).await?;
    Ok(ok(StatusCode::OK, &all))
}

async fn get_project(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    let view = blocking(&svc, move |s| s.get_project(&id)).await?;
    Ok(ok(StatusCode::OK, &view))
}

async fn plan(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    let p = blocking(&svc, move |s| s.plan(&id)).await?;
    Ok(ok(StatusCode::OK, &p))
}

/// The body is optional; an empty body approves.
async fn approve(State(svc): Svc, Path(id): Path<String>, body: axum::body::Bytes) -> ApiResult<Response> {
    let decision = if body.iter().all(u8::is_ascii_whitespace) {
        Decision::Approve
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::invalid("schema_violation", e.to_string()))?
    };
    let out = blocking(&svc, move |s| s.decide(&id, decision)).await?;
    Ok(ok(StatusCode::OK, &out))
}

/// Admits the run and executes it on the blocking pool; the response is
/// sent as soon as the project is `Running`.
async fn run(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    let ticket = blocking(&svc, move |s| s.start_run(&id)).await?;
    let run_id = ticket.run_id.clone();
    let project_id = ticket.project_id.clone();
    let worker = svc.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = worker.execute(ticket) {
            tracing::error!(error = %e, "recording run outcome failed");
        }
    });
    Ok(ok(
        StatusCode::ACCEPTED,
        &json!({ "project_id": project_id, "run_id": run_id, "status": "Running" }),
    ))
}

async fn storyboard(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    let sb = blocking(&svc, move |s| s.storyboard(&id)).await?;
    Ok(ok(StatusCode::OK, &sb))
}

async fn artifact(State(svc): Svc, Path(hash): Path<String>) -> ApiResult<Response> {
    let (meta, bytes) = blocking(&svc, move |s| s.artifact(&hash)).await?;
    Ok(([(header::CONTENT_TYPE, meta.media_type.mime())], bytes).into_response())
}

async fn feedback(State(svc): Svc, Json(req): Json<FeedbackRequest>) -> ApiResult<Response> {
    let out = blocking(&svc, move |s| s.feedback(req)).await?;
    Ok(ok(StatusCode::OK, &out))
}

#[derive(Deserialize)]
struct CategoryQuery {
    category: Option<String>,
}

async fn experience(State(svc): Svc, Query(q): Query<CategoryQuery>) -> ApiResult<Response> {
    let entries = blocking(&svc, move |s| s.experience(q.category.as_deref())).await?;
    Ok(ok(StatusCode::OK, &entries))
}

async fn history(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    let h = blocking(&svc, move |s| s.experience_history(&id)).await?;
    Ok(ok(StatusCode::OK, &h))
}

#[derive(Deserialize)]
struct TagQuery {
    tag: Option<String>,
}

async fn knowledge(State(svc): Svc, Query(q): Query<TagQuery>) -> ApiResult<Response> {
    let entries = blocking(&svc, move |s| Ok(s.knowledge(q.tag.as_deref()))).await?;
    Ok(ok(StatusCode::OK, &entries))
}

async fn add_knowledge(State(svc): Svc, Json(req): Json<AddKnowledge>) -> ApiResult<Response> {
    let entries = blocking(&svc, move |s| s.add_knowledge(req)).await?;
    Ok(ok(StatusCode::CREATED, &entries))
}

/// Serve until the process is interrupted. Runs left `Running` by a previous
/// process are resumed in the background first.
pub async fn serve(service: Arc<Service>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let recovering = service.clone();
    tokio::task::spawn_blocking(move || {
        for r in recovering.recover() {
            if let Err(e) = r {
                tracing::error!(error = %e, "resuming an interrupted run failed");
            }
        }
    });
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
