//! The `storyreel` binary in local mode.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const STORY: &str = "Lina finds Ember, a sleeping dragon, under the old castle. \
She brings Ember bread and sings to it every night. \
At dawn Lina and Ember fly over the valley together.";

fn storyreel(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_storyreel"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .env("STORYREEL_SERVICE__FIXED_CLOCK_MS", "1700000000000")
        .env("STORYREEL_RETRY__INITIAL_BACKOFF_MS", "1")
        .output()
        .unwrap()
}

fn ok(data: &Path, args: &[&str]) -> String {
    let out = storyreel(data, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// init, plan, approve, run, export-manifest; returns the project id.
fn demo(data: &Path, manifest: &Path) -> String {
    let id = ok(data, &["init", "--text", STORY, "--budget", "3", "--style", "ink"]).trim().to_string();
    assert_eq!(id, "p-0001");
    ok(data, &["plan", &id]);
    ok(data, &["approve", &id]);
    let ran = ok(data, &["run", &id]);
    assert!(ran.contains("Completed"), "{ran}");
    ok(data, &["export-manifest", &id, "--out", manifest.to_str().unwrap()]);
    id
}

/// Every file under `root` by relative path. The artifact index is compared
/// as a set of lines: parallel nodes may store artifacts in either order.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                let mut bytes = std::fs::read(&p).unwrap();
                if rel.ends_with("index.log") {
                    let text = String::from_utf8(bytes).unwrap();
                    let mut lines: Vec<&str> = text.lines().collect();
                    lines.sort_unstable();
                    bytes = lines.join("\n").into_bytes();
                }
                out.insert(rel, bytes);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn scripted_demo_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    demo(&a.path().join("data"), &a.path().join("manifest.json"));
    demo(&b.path().join("data"), &b.path().join("manifest.json"));

    let ta = tree(a.path());
    let tb = tree(b.path());
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (path, bytes) in &ta {
        assert!(tb[path] == *bytes, "{path} differs");
    }
    let manifest: Value = serde_json::from_slice(&ta["manifest.json"]).unwrap();
    assert_eq!(manifest["encoder"]["clip_commands"].as_array().unwrap().len(), 3);
    assert!(ta.contains_key("data/runs/p-0001-run-1.log"));
    assert!(ta.contains_key("data/projects.log"));
}

#[test]
fn storyboard_export_writes_three_images_per_shot_and_the_script() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let id = demo(&data, &tmp.path().join("m.json"));
    let out = tmp.path().join("board");
    ok(&data, &["storyboard", &id, "--export", out.to_str().unwrap()]);

    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 3 * 3 + 1);
    for i in 0..3 {
        for stage in ["composed", "consistent", "styled"] {
            let name = format!("shot_{i}_{stage}.ppm");
            assert!(names.contains(&name), "{name} missing from {names:?}");
            assert!(std::fs::read(out.join(&name)).unwrap().starts_with(b"P6"));
        }
    }
    let script: Value = serde_json::from_slice(&std::fs::read(out.join("script.json")).unwrap()).unwrap();
    let shots: usize = script["actions"].as_array().unwrap().iter().map(|a| a["shots"].as_array().unwrap().len()).sum();
    assert_eq!(shots, 3);

    let status: Value = serde_json::from_str(&ok(&data, &["status", &id])).unwrap();
    assert_eq!(status["status"], "Completed");
    assert_eq!(status["node_states"].as_object().unwrap().len(), 9);
}

#[test]
fn errors_exit_nonzero_with_their_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let id = ok(&data, &["init", "--text", STORY, "--budget", "2"]).trim().to_string();

    let out = storyreel(&data, &["run", &id]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error[invalid_transition]") && err.contains("Draft"), "{err}");

    ok(&data, &["plan", &id]);
    let out = storyreel(&data, &["run", &id]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("AwaitingApproval"));

    let out = storyreel(&data, &["status", "p-0404"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("project_not_found"));

    let out = storyreel(&data, &["init", "--text", "  "]);
    assert_eq!(out.status.code(), Some(2));
    let out = storyreel(&data, &["export-manifest", &id, "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn feedback_and_knowledge_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let args = [
        "feedback",
        "--category",
        "workflow",
        "--target",
        "node:action_generation",
        "--text",
        "plan shots for the whole story first",
        "--scores",
        "92,32,85",
    ];
    let first: Value = serde_json::from_str(&ok(&data, &args)).unwrap();
    assert_eq!(first["update"]["outcome"], "Inserted");
    assert_eq!(first["overall"]["reported"], 71.2);
    let second: Value = serde_json::from_str(&ok(&data, &args)).unwrap();
    assert_eq!(second["update"]["outcome"], "Updated");
    assert_eq!(second["update"]["version"], 2);

    let out = storyreel(&data, &["feedback", "--category", "image", "--target", "node:title", "--text", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("category_mismatch"));
    let out = storyreel(&data, &["feedback", "--category", "image", "--target", "shot:1", "--text", "x"]);
    assert_eq!(out.status.code(), Some(2));

    let doc = tmp.path().join("lighting.md");
    std::fs::write(&doc, "Warm key light suits tender scenes.").unwrap();
    let added = ok(&data, &["knowledge", "add", "--doc-id", "lighting", "--file", doc.to_str().unwrap(), "--tag", "craft"]);
    assert!(added.contains("indexed 1 chunk"), "{added}");
    let out = storyreel(&data, &["knowledge", "add", "--doc-id", "lighting", "--file", doc.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn serve_hosts_the_api_over_the_data_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let id = ok(&data, &["init", "--text", STORY, "--budget", "2"]).trim().to_string();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_storyreel"))
        .arg("--data-dir")
        .arg(&data)
        .args(["serve", "--bind", &format!("127.0.0.1:{port}")])
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}/projects/{id}");
    let start = std::time::Instant::now();
    let project: Value = loop {
        match reqwest::blocking::get(&url) {
            Ok(r) => break r.json().unwrap(),
            Err(_) if start.elapsed().as_secs() < 20 => std::thread::sleep(std::time::Duration::from_millis(50)),
            Err(e) => panic!("server did not come up: {e}"),
        }
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(project["status"], "Draft");
    assert_eq!(project["proposal"]["target_shot_budget"], 2);
}
