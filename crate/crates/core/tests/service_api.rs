//! REST contract of the session service, driven through the router.

mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tir::backend::{BackendDescriptor, BackendError, BackendRegistry, GeneratedImage, GenerationRequest, Generator};
use tir::service::{router, AppState, SessionView, ViewStatus};
use tir::sim::{ErrorModel, SimGenerator};
use tir::store::Store;

use common::RecordingCritic;

const PROMPT: &str = "A realistic photo of a scene with a red car on the left and a blue bench on the right";

struct SlowGenerator(SimGenerator);

impl Generator for SlowGenerator {
    fn descriptor(&self) -> &BackendDescriptor {
        self.0.descriptor()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GeneratedImage, BackendError> {
        std::thread::sleep(Duration::from_millis(300));
        self.0.generate(request)
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    app: Router,
    store: Arc<Store>,
    critic: Arc<RecordingCritic>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let critic = Arc::new(RecordingCritic::new());
    let mut registry = BackendRegistry::with_sim(ErrorModel::uniform(0.6, 0.2));
    registry.add_critic("recording", critic.clone());
    registry.add_generator("slow", Arc::new(SlowGenerator(SimGenerator::new("slow", ErrorModel::default()))));
    let app = router(Arc::new(AppState::new(registry, store.clone())));
    Fixture {
        _dir: dir,
        app,
        store,
        critic,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn view(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, SessionView) {
    let (status, bytes) = call(app, method, uri, body).await;
    assert!(status.is_success(), "{status}: {}", String::from_utf8_lossy(&bytes));
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn consistent(f: &Fixture, v: &SessionView) {
    let stored = f.store.load_trajectory(&v.session_id).unwrap();
    assert_eq!(*v, SessionView::from_trajectory(&stored, false));
}

#[tokio::test]
async fn stepping_to_completion() {
    let f = fixture();
    let body = json!({"prompt": PROMPT, "config": {"max_iterations": 3, "seed": 2, "critic_id": "recording"}});
    let (status, created) = view(&f.app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created.rounds.len(), 1);
    assert_eq!(created.status, ViewStatus::AwaitingHuman);
    consistent(&f, &created);

    let id = created.session_id.clone();
    for expected in 2..=4 {
        let (_, v) = view(&f.app, "POST", &format!("/sessions/{id}/step"), None).await;
        assert_eq!(v.rounds.len(), expected);
        consistent(&f, &v);
        let (_, fetched) = view(&f.app, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(fetched, v);
    }
    let (_, done) = view(&f.app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(done.status, ViewStatus::Finished);

    let (status, _) = call(&f.app, "POST", &format!("/sessions/{id}/step"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&f.app, "POST", &format!("/sessions/{id}/feedback"), Some(json!({"text": "late"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let url = &done.rounds[3].image_url;
    let resp = f.app.clone().oneshot(Request::get(url).body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/svg+xml");
}

#[tokio::test]
async fn human_feedback_reaches_the_next_instruction() {
    let f = fixture();
    let body = json!({"prompt": PROMPT, "config": {"critic_id": "recording", "seed": 9}});
    let (_, created) = view(&f.app, "POST", "/sessions", Some(body)).await;
    let id = created.session_id;

    let note = json!({"text": "the umbrella is still torn", "author": "ana"});
    let (status, _) = call(&f.app, "POST", &format!("/sessions/{id}/feedback"), Some(note)).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, after) = view(&f.app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(after.human_feedback.len(), 1);
    assert_eq!(after.human_feedback[0].after_round, 0);
    consistent(&f, &after);

    view(&f.app, "POST", &format!("/sessions/{id}/step"), None).await;
    let sent = f.critic.taken();
    assert_eq!(sent.len(), 1);
    let history = sent[0]
        .split_once("History of Prompt Refinements and Feedback:")
        .and_then(|(_, rest)| rest.split_once("Current Image Analysis:"))
        .map(|(h, _)| h)
        .expect("history section");
    assert!(history.contains("the umbrella is still torn"), "{history}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_steps_are_serialized() {
    let f = fixture();
    let body = json!({"prompt": PROMPT, "config": {"generator_id": "slow", "max_iterations": 3}});
    let (_, created) = view(&f.app, "POST", "/sessions", Some(body)).await;
    let uri = format!("/sessions/{}/step", created.session_id);

    let (a, b) = tokio::join!(call(&f.app, "POST", &uri, None), call(&f.app, "POST", &uri, None));
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);

    let (_, v) = view(&f.app, "GET", &format!("/sessions/{}", created.session_id), None).await;
    assert_eq!(v.rounds.len(), 2);
    let indices: Vec<usize> = v.rounds.iter().map(|r| r.index).collect();
    assert_eq!(indices, [0, 1]);
}

#[tokio::test]
async fn request_validation() {
    let f = fixture();
    let (status, body) = call(
        &f.app,
        "POST",
        "/sessions",
        Some(json!({"prompt": PROMPT, "config": {"critic_id": "gpt-9"}})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["field"], "critic_id");

    let (status, _) = call(&f.app, "POST", "/sessions", Some(json!({"prompt": ""}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&f.app, "POST", "/sessions/s-nothing/step", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&f.app, "GET", "/blobs/zz", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    for (score, expected) in [(2, StatusCode::UNPROCESSABLE_ENTITY), (1, StatusCode::NO_CONTENT), (0, StatusCode::NO_CONTENT)] {
        let ann = json!({"case_id": "s-1", "annotator_id": "a", "score": score});
        assert_eq!(call(&f.app, "POST", "/annotations", Some(ann)).await.0, expected);
    }
    assert_eq!(f.store.annotations().unwrap().len(), 2);
}

#[tokio::test]
async fn zero_iterations() {
    let f = fixture();
    let (status, v) = view(&f.app, "POST", "/sessions", Some(json!({"prompt": PROMPT, "config": {"max_iterations": 0}}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v.status, ViewStatus::Finished);
    assert_eq!(v.rounds.len(), 1);
}
