use std::path::PathBuf;

use storyreel_core::config::{EngineConfig, ProviderKind};
use storyreel_service::config::ServiceSection;
use storyreel_service::{Service, ServiceConfig};

fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn empty_config_is_all_defaults() {
    let c = ServiceConfig::from_parts("", env(&[])).unwrap();
    assert_eq!(c.engine, EngineConfig::default());
    assert_eq!(c.service, ServiceSection::default());
    assert_eq!(c.engine.retrieval.tau_update, 0.60);
    assert_eq!(c.engine.video.min_shot_ms, 2000);
}

#[test]
fn file_values_and_environment_overrides_combine() {
    let text = r#"
seed = 7

[retrieval]
tau_update = 0.7
k_knowledge = 5

[providers]
kind = "http"
base_url = "http://models.local:9000"

[service]
data_dir = "/srv/storyreel"
"#;
    let c = ServiceConfig::from_parts(
        text,
        env(&[
            ("STORYREEL_RETRIEVAL__TAU_UPDATE", "0.5"),
            ("STORYREEL_IMAGE__DEFAULT_LAMBDA_CT", "1"),
            ("STORYREEL_VIDEO__NARRATOR_VOICE", "1234"),
            ("STORYREEL_SERVICE__BIND", "0.0.0.0:9000"),
            ("STORYREEL_SERVICE__FIXED_CLOCK_MS", "99"),
            ("STORYREEL_PROVIDER_TOKEN", "not a config key"),
            ("STORYREEL_LOG", "debug"),
            ("HOME", "/root"),
        ]),
    )
    .unwrap();
    assert_eq!(c.engine.seed, 7);
    assert_eq!(c.engine.retrieval.tau_update, 0.5);
    assert_eq!(c.engine.retrieval.k_knowledge, 5);
    assert_eq!(c.engine.retrieval.k_experience, 3);
    assert_eq!(c.engine.image.default_lambda_ct, 1.0);
    assert_eq!(c.engine.video.narrator_voice, "1234");
    assert_eq!(c.engine.providers.kind, ProviderKind::Http);
    assert_eq!(c.engine.providers.base_url, "http://models.local:9000");
    assert_eq!(c.service.bind, "0.0.0.0:9000");
    assert_eq!(c.service.data_dir, PathBuf::from("/srv/storyreel"));
    assert_eq!(c.service.fixed_clock_ms, Some(99));
    assert_eq!(c.service.templates_dir(), PathBuf::from("/srv/storyreel/templates"));
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    assert!(ServiceConfig::from_parts("[retrieval]\ntau = 0.5\n", env(&[])).is_err());
    assert!(ServiceConfig::from_parts("[service]\nport = 1\n", env(&[])).is_err());
    assert!(ServiceConfig::from_parts("seed = \"many\"\n", env(&[])).is_err());
    assert!(ServiceConfig::from_parts("", env(&[("STORYREEL_RETRIEVAL__BOGUS", "1")])).is_err());
    assert!(ServiceConfig::from_parts("", env(&[("STORYREEL_RETRIEVAL__K_KNOWLEDGE", "three")])).is_err());
    assert!(ServiceConfig::from_parts("seed = ", env(&[])).is_err());
}

#[test]
fn template_and_utility_directories_are_loaded_and_templates_reload() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::default();
    config.service.data_dir = dir.path().to_path_buf();
    let templates = dir.path().join("templates");
    let utilities = dir.path().join("utilities");
    std::fs::create_dir_all(&templates).unwrap();
    std::fs::create_dir_all(&utilities).unwrap();
    std::fs::write(
        templates.join("tagline.toml"),
        "id = \"tagline\"\ncategory = \"prompt\"\nbody = \"Write a tagline for {title}.\"\n",
    )
    .unwrap();
    std::fs::write(
        utilities.join("subtitles.json"),
        r#"{"id": "subtitler", "capability": "TextGeneration", "usage_instructions": "Subtitle writer: turns narration into timed subtitle lines.",
            "io_signature": {"inputs": ["Text"], "outputs": ["Text"]}, "provider": "mock"}"#,
    )
    .unwrap();

    let svc = Service::open(config.clone()).unwrap();
    let t = svc.studio().templates.get("tagline").unwrap();
    assert_eq!(t.required_slots.iter().collect::<Vec<_>>(), ["title"]);
    assert!(svc.studio().utilities.get("subtitler").is_some());
    assert!(svc.studio().krag.contains_doc("utility:subtitler"));
    assert_eq!(svc.reload_templates().unwrap(), 0, "nothing changed");

    std::fs::write(
        templates.join("tagline.toml"),
        "id = \"tagline\"\ncategory = \"prompt\"\nbody = \"Write a short tagline for {title} in {tone}.\"\n",
    )
    .unwrap();
    assert_eq!(svc.reload_templates().unwrap(), 1);
    assert_eq!(svc.studio().templates.get("tagline").unwrap().required_slots.len(), 2);
    drop(svc);

    // reopening does not register the utility twice
    let svc = Service::open(config.clone()).unwrap();
    assert!(svc.studio().utilities.get("subtitler").is_some());
    drop(svc);

    std::fs::write(templates.join("broken.toml"), "id = \"broken\"\ncategory = \"prompt\"\nbody = \"{unclosed\"\n").unwrap();
    let err = Service::open(config).err().unwrap();
    assert_eq!(err.code, "bad_template");
}
