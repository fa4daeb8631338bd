//! The HTTP API against a live server on a loopback port.

use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use reqwest::blocking::{Client, Response};
use serde_json::{json, Value};

use storyreel_core::domain::{ContentHash, MediaType};
use storyreel_core::workflow::{CrashingRunLog, FileRunLog};
use storyreel_service::api::{router, SCHEMA_HEADER};
use storyreel_service::{Service, ServiceConfig};

const STORY: &str = "Lina finds Ember, a sleeping dragon, under the old castle. \
She brings Ember bread and sings to it every night. \
Ember wakes and the villagers panic in the square. \
At dawn Lina and Ember fly over the valley together.";

fn config(dir: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::default();
    c.service.data_dir = dir.to_path_buf();
    c.service.fixed_clock_ms = Some(1_700_000_000_000);
    c.engine.retry.initial_backoff_ms = 1;
    c
}

struct Api {
    base: String,
    client: Client,
    service: Arc<Service>,
}

impl Api {
    fn start(dir: &Path) -> Self {
        let service = Arc::new(Service::open(config(dir)).unwrap());
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let app = router(service.clone());
        thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let l = tokio::net::TcpListener::from_std(listener).unwrap();
                axum::serve(l, app).await.unwrap();
            });
        });
        Self {
            base,
            client: Client::new(),
            service,
        }
    }

    fn get(&self, path: &str) -> Response {
        self.client.get(format!("{}{path}", self.base)).send().unwrap()
    }

    fn post(&self, path: &str, body: Value) -> Response {
        self.client.post(format!("{}{path}", self.base)).json(&body).send().unwrap()
    }

    fn post_empty(&self, path: &str) -> Response {
        self.client.post(format!("{}{path}", self.base)).send().unwrap()
    }

    /// POST and expect `status`; returns the JSON body.
    fn expect(&self, path: &str, body: Value, status: u16) -> Value {
        let r = self.post(path, body);
        assert_eq!(r.status().as_u16(), status, "{path}");
        r.json().unwrap()
    }

    fn create(&self, budget: u32) -> String {
        let body = self.expect(
            "/projects",
            json!({ "proposal": { "id": "dragon", "text": STORY, "style_id": "ink", "target_shot_budget": budget } }),
            201,
        );
        assert_eq!(body["status"], "Draft");
        body["id"].as_str().unwrap().to_string()
    }

    fn wait_until_settled(&self, id: &str) -> Value {
        let start = Instant::now();
        loop {
            let p: Value = self.get(&format!("/projects/{id}")).json().unwrap();
            if p["status"] != "Running" {
                return p;
            }
            assert!(start.elapsed() < Duration::from_secs(60), "run did not finish");
            thread::sleep(Duration::from_millis(20));
        }
    }
}

fn error_code(r: Response) -> String {
    r.json::<Value>().unwrap()["code"].as_str().unwrap().to_string()
}

#[test]
fn create_plan_approve_run_reaches_completed() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::start(dir.path());
    let id = api.create(3);

    let planned = api.expect(&format!("/projects/{id}/plan"), json!(null), 200);
    assert_eq!(planned["status"], "AwaitingApproval");
    assert_eq!(planned["workflow_versions"]["versions"][0]["nodes"].as_array().unwrap().len(), 9);

    let r = api.post_empty(&format!("/projects/{id}/run"));
    assert_eq!(r.status().as_u16(), 409);
    assert_eq!(error_code(r), "workflow_not_approved");

    let approved = api.expect(&format!("/projects/{id}/approve"), json!({ "decision": "approve" }), 200);
    assert_eq!(approved["project"]["workflow_versions"]["versions"][0]["status"], "Approved");
    assert_eq!(approved["project"]["status"], "AwaitingApproval");

    let r = api.post_empty(&format!("/projects/{id}/run"));
    assert_eq!(r.status().as_u16(), 202);
    let project = api.wait_until_settled(&id);
    assert_eq!(project["status"], "Completed", "{project}");
    let states = project["node_states"].as_object().unwrap();
    assert_eq!(states.len(), 9);
    assert!(states.values().all(|s| s["state"] == "done"));
    assert_eq!(project["runs"], json!([format!("{id}-run-1")]));

    let sb: Value = api.get(&format!("/projects/{id}/storyboard")).json().unwrap();
    let shots = sb["shots"].as_array().unwrap();
    assert_eq!(shots.len(), 3);
    for (i, shot) in shots.iter().enumerate() {
        assert_eq!(shot["index"], i);
        for stage in ["composed", "character_consistent", "styled"] {
            assert!(shot["images"][stage]["content_hash"].is_string(), "{stage} of shot {i}");
        }
        assert_eq!(shot["review"]["accepted"], true);
    }
    assert_eq!(sb["script_ref"], project["current_script"]);

    // the manifest and a styled image come back verified and typed
    let manifest_hash = sb["manifest"]["content_hash"].as_str().unwrap();
    let r = api.get(&format!("/artifacts/{manifest_hash}"));
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(r.headers()["content-type"], MediaType::Json.mime());
    assert_eq!(r.headers()[SCHEMA_HEADER], "1");
    let bytes = r.bytes().unwrap();
    assert_eq!(ContentHash::of(&bytes).as_str(), manifest_hash);
    let manifest: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(manifest["encoder"]["clip_commands"].as_array().unwrap().len(), 3);

    let styled = shots[0]["images"]["styled"]["content_hash"].as_str().unwrap();
    let r = api.get(&format!("/artifacts/{styled}"));
    assert_eq!(r.headers()["content-type"], MediaType::ImageRaster.mime());
    assert!(r.bytes().unwrap().starts_with(b"P6"));

    // a completed project is terminal
    let r = api.post_empty(&format!("/projects/{id}/plan"));
    assert_eq!(r.status().as_u16(), 409);
    assert_eq!(error_code(r), "invalid_transition");
    let listed: Value = api.get("/projects").json().unwrap();
    assert_eq!(listed.as_array().unwrap().len(), 1);
}

#[test]
fn state_machine_and_request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::start(dir.path());
    let id = api.create(2);

    let r = api.post_empty(&format!("/projects/{id}/run"));
    assert_eq!(r.status().as_u16(), 409);
    let body: Value = r.json().unwrap();
    assert_eq!(body["code"], "invalid_transition");
    assert!(body["message"].as_str().unwrap().contains("Draft"));

    let r = api.post_empty(&format!("/projects/{id}/approve"));
    assert_eq!(r.status().as_u16(), 409);

    let r = api.get("/projects/p-9999");
    assert_eq!(r.status().as_u16(), 404);
    assert_eq!(r.headers()[SCHEMA_HEADER], "1");
    assert_eq!(error_code(r), "project_not_found");

    let r = api.post("/projects", json!({ "proposal": { "text": "   " } }));
    assert_eq!(r.status().as_u16(), 422);
    assert_eq!(error_code(r), "schema_violation");
    let r = api.post("/projects", json!({ "proposal": { "text": STORY, "target_shot_budget": 0 } }));
    assert_eq!(r.status().as_u16(), 422);
    let r = api.post("/projects", json!({ "story": STORY }));
    assert_eq!(r.status().as_u16(), 422);
    let r = api.post("/projects", json!({ "proposal": { "text": STORY, "style_id": "ink" }, "style": { "id": "oil", "display_name": "Oil", "lambda_ct": 0.5 } }));
    assert_eq!(r.status().as_u16(), 422);
    let r = api.post(&format!("/projects/{id}/approve"), json!({ "decision": "maybe" }));
    assert_eq!(r.status().as_u16(), 422);

    let r = api.get(&format!("/projects/{id}/storyboard"));
    assert_eq!(r.status().as_u16(), 409);
    assert_eq!(error_code(r), "storyboard_not_ready");
    assert_eq!(api.get("/nowhere").status().as_u16(), 404);

    // nothing above changed the project
    let p: Value = api.get(&format!("/projects/{id}")).json().unwrap();
    assert_eq!(p["status"], "Draft");
    assert_eq!(p["node_states"], json!({}));
    assert_eq!(api.get("/projects").json::<Value>().unwrap().as_array().unwrap().len(), 1);
}

#[test]
fn repeated_feedback_updates_one_entry_and_keeps_history() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::start(dir.path());
    let text = "plan the number of shots for the whole story before splitting actions";
    let body = json!({
        "category": "workflow",
        "target": { "kind": "workflow_node", "node_id": "action_generation" },
        "text": text,
        "scores": { "kind": "script", "scores": { "completeness": 92.0, "fidelity": 32.0, "logical_coherence": 85.0 } },
    });

    let first = api.expect("/feedback", body.clone(), 200);
    assert_eq!(first["review_id"], "review-1");
    assert_eq!(first["overall"]["reported"], 71.2);
    assert_eq!(first["update"]["outcome"], "Inserted");
    assert_eq!(first["update"]["version"], 1);
    let entry = first["update"]["entry_id"].as_str().unwrap().to_string();

    let second = api.expect("/feedback", body.clone(), 200);
    assert_eq!(second["update"]["outcome"], "Updated");
    assert_eq!(second["update"]["version"], 2);
    assert_eq!(second["update"]["entry_id"], entry.as_str());
    let third = api.expect("/feedback", body, 200);
    assert_eq!(third["update"]["version"], 3);

    let history: Value = api.get(&format!("/experience/{entry}/history")).json().unwrap();
    let versions: Vec<u64> = history.as_array().unwrap().iter().map(|h| h["version"].as_u64().unwrap()).collect();
    assert_eq!(versions, [1, 2, 3]);
    assert_eq!(history[2]["feedback_id"], "review-3-feedback");

    let listed: Value = api.get("/experience?category=Workflow").json().unwrap();
    assert_eq!(listed.as_array().unwrap().len(), 1);
    assert_eq!(listed[0]["provenance"].as_array().unwrap().len(), 3);
    assert!(listed[0].get("embedding").is_none());
    assert_eq!(api.get("/experience?category=image").json::<Value>().unwrap(), json!([]));
    let r = api.get("/experience?category=sound");
    assert_eq!(r.status().as_u16(), 422);
    assert_eq!(error_code(r), "bad_category");
    let r = api.get("/experience/nope/history");
    assert_eq!(r.status().as_u16(), 404);
    assert_eq!(error_code(r), "entry_not_found");
}

#[test]
fn feedback_errors_store_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::start(dir.path());
    let node = |id: &str| json!({ "kind": "workflow_node", "node_id": id });

    let r = api.post("/feedback", json!({ "category": "Image", "target": node("title"), "text": "x" }));
    assert_eq!(r.status().as_u16(), 422);
    assert_eq!(error_code(r), "category_mismatch");
    let r = api.post("/feedback", json!({ "category": "Workflow", "target": node("ghost"), "text": "x" }));
    assert_eq!(r.status().as_u16(), 404);
    assert_eq!(error_code(r), "unknown_target");
    let r = api.post(
        "/feedback",
        json!({ "category": "Workflow", "target": node("title"), "scores": { "kind": "script", "scores": { "completeness": 101.0, "fidelity": 0.0, "logical_coherence": 0.0 } } }),
    );
    assert_eq!(r.status().as_u16(), 422);
    assert_eq!(error_code(r), "score_out_of_range");
    let image = json!({ "kind": "image_artifact", "artifact": { "content_hash": "ab".repeat(32), "media_type": "ImageRaster" } });
    let r = api.post("/feedback", json!({ "category": "Image", "target": image, "text": "x" }));
    assert_eq!(r.status().as_u16(), 404);

    assert_eq!(api.get("/experience").json::<Value>().unwrap(), json!([]));
    // the next accepted review is still the first one
    let ok = api.expect("/feedback", json!({ "category": "Utility", "target": { "kind": "utility_report", "report_id": "segmenter" }, "text": "" }), 200);
    assert_eq!(ok["review_id"], "review-1");
    assert!(ok["update"].is_null());
}

#[test]
fn rejecting_a_plan_returns_to_draft_and_records_workflow_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::start(dir.path());
    let id = api.create(3);
    api.expect(&format!("/projects/{id}/plan"), json!(null), 200);

    let comment = "add global shot number planning during the action division step";
    let out = api.expect(&format!("/projects/{id}/approve"), json!({ "decision": "reject", "comment": comment }), 200);
    assert_eq!(out["project"]["status"], "Draft");
    assert_eq!(out["update"]["outcome"], "Inserted");

    let entries: Value = api.get("/experience?category=Workflow").json().unwrap();
    assert_eq!(entries.as_array().unwrap().len(), 1);
    assert_eq!(entries[0]["provenance"], json!([format!("{id}-v1-rejected")]));

    // the next plan is version 2 and picks up the shot budget binding
    let planned = api.expect(&format!("/projects/{id}/plan"), json!(null), 200);
    let versions = planned["workflow_versions"]["versions"].as_array().unwrap();
    assert_eq!(versions.len(), 2);
    assert_eq!(versions[1]["version"], 2);
    let actions = versions[1]["nodes"].as_array().unwrap().iter().find(|n| n["id"] == "action_generation").unwrap();
    assert_eq!(actions["input_bindings"]["shot_budget"], json!({ "literal": { "value": "global" } }));
    assert!(versions[0]["nodes"].as_array().unwrap().iter().all(|n| n["input_bindings"].get("shot_budget").is_none()));

    // rejecting without a comment stores nothing
    let out = api.expect(&format!("/projects/{id}/approve"), json!({ "decision": "reject" }), 200);
    assert!(out["update"].is_null());
    assert_eq!(api.get("/experience").json::<Value>().unwrap().as_array().unwrap().len(), 1);
}

#[test]
fn knowledge_upload_and_listing() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::start(dir.path());
    let builtin = api.get("/knowledge").json::<Value>().unwrap().as_array().unwrap().len();
    assert!(builtin > 0, "utility instructions are indexed");

    let doc = json!({ "doc_id": "framing", "text": "A close view frames a face.\n\nA wide shot frames the valley.", "tags": ["screenwriting"] });
    let created = api.expect("/knowledge", doc.clone(), 201);
    assert_eq!(created[0]["id"], "framing#0");
    let tagged: Value = api.get("/knowledge?tag=screenwriting").json().unwrap();
    assert_eq!(tagged.as_array().unwrap().len(), created.as_array().unwrap().len());
    assert_eq!(tagged[0]["source_doc_id"], "framing");
    assert_eq!(api.get("/knowledge").json::<Value>().unwrap().as_array().unwrap().len(), builtin + tagged.as_array().unwrap().len());

    let r = api.post("/knowledge", doc);
    assert_eq!(r.status().as_u16(), 409);
    assert_eq!(error_code(r), "duplicate_doc");
    let r = api.post("/knowledge", json!({ "doc_id": "blank", "text": "  ...  " }));
    assert_eq!(r.status().as_u16(), 422);
    assert_eq!(error_code(r), "empty_text");
    let r = api.post("/knowledge", json!({ "doc_id": "x" }));
    assert_eq!(r.status().as_u16(), 422);
}

#[test]
fn artifacts_are_verified_before_they_are_served() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::start(dir.path());
    let store = &api.service.studio().store;
    let good = store.put(b"hello storyboard", MediaType::Text).unwrap();
    let bad = store.put(b"soon corrupted", MediaType::Json).unwrap();

    let r = api.get(&format!("/artifacts/{}", good.content_hash));
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(r.headers()["content-type"], MediaType::Text.mime());
    assert_eq!(r.bytes().unwrap().as_ref(), b"hello storyboard");

    let h = bad.content_hash.as_str();
    let blob = dir.path().join("artifacts").join(&h[..2]).join(&h[2..]).join("blob");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&blob, bytes).unwrap();
    let r = api.get(&format!("/artifacts/{h}"));
    assert_eq!(r.status().as_u16(), 500);
    assert_eq!(error_code(r), "integrity_error");

    let r = api.get(&format!("/artifacts/{}", "0".repeat(64)));
    assert_eq!(r.status().as_u16(), 404);
    assert_eq!(error_code(r), "artifact_not_found");
    let r = api.get("/artifacts/not-a-hash");
    assert_eq!(r.status().as_u16(), 422);
    assert_eq!(error_code(r), "bad_hash");
}

fn completed_manifest(dir: &Path, interrupt_after: Option<usize>) -> Vec<u8> {
    {
        let svc = Service::open(config(dir)).unwrap();
        let id = svc
            .create_project(serde_json::from_value(json!({ "proposal": { "id": "dragon", "text": STORY, "style_id": "ink", "target_shot_budget": 3 } })).unwrap())
            .unwrap()
            .id;
        svc.plan(&id).unwrap();
        svc.decide(&id, storyreel_service::service::Decision::Approve).unwrap();
        let ticket = svc.start_run(&id).unwrap();
        match interrupt_after {
            None => {
                svc.execute(ticket).unwrap();
            }
            Some(limit) => {
                // the process dies part-way through the run
                let path = dir.join("runs").join(format!("{}.log", ticket.run_id));
                let mut log = CrashingRunLog::new(FileRunLog::new(&path), limit);
                let seed = svc.config().engine.seed;
                assert!(svc
                    .studio()
                    .run(&ticket.workflow, &ticket.proposal, &ticket.style, &ticket.run_id, seed, &mut log)
                    .is_err());
            }
        }
    }
    let svc = Service::open(config(dir)).unwrap();
    let before = svc.get_project("p-0001").unwrap();
    if interrupt_after.is_some() {
        assert_eq!(before.project.status.to_string(), "Running");
        assert!(before.node_states.values().any(|s| !s.is_done()));
        let recovered = svc.recover();
        assert_eq!(recovered.len(), 1);
        assert_eq!(recovered[0].as_ref().unwrap().status.to_string(), "Completed");
    }
    assert!(svc.recover().is_empty());
    svc.manifest("p-0001").unwrap().1
}

#[test]
fn interrupted_runs_resume_on_restart_to_the_same_manifest() {
    let reference = completed_manifest(tempfile::tempdir().unwrap().path(), None);
    for limit in [3, 8] {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(completed_manifest(dir.path(), Some(limit)), reference, "interrupted after {limit} records");
    }
}
