use std::path::Path;
use std::time::{Duration, Instant};

use misalign::collector::{
    build_prompt, collect, cross_targets, read_responses, ChatClient, CollectOptions, CollectorConfig, MockReply,
    MockScript, MockServer, PromptTemplates,
};
use misalign::survey::{load_manifest, Subgroup};
use misalign::ErrorClass;

fn fixture_questions() -> Vec<misalign::survey::QuestionSpec> {
    load_manifest(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/questions.json")).unwrap()
}

fn golden_prompt(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts").join(name);
    std::fs::read_to_string(p).unwrap().trim_end_matches('\n').to_string()
}

fn fast_config(url: &str) -> CollectorConfig {
    CollectorConfig {
        endpoint_url: url.to_string(),
        samples_per_pair: 4,
        requests_per_second: 0.0,
        concurrency: 3,
        initial_backoff_ms: 1,
        max_backoff_ms: 20,
        ..Default::default()
    }
}

#[test]
fn prompts_match_golden_files() {
    let q = &fixture_questions()[0];
    let t = PromptTemplates::default();
    assert_eq!(
        build_prompt(q, &Subgroup::new("region", "northeast"), &t).unwrap(),
        golden_prompt("region_northeast.txt")
    );
    assert_eq!(
        build_prompt(q, &Subgroup::new("age", "65+"), &t).unwrap(),
        golden_prompt("age_65plus.txt")
    );
}

#[test]
fn always_a_fills_every_pair_with_option_zero() {
    let server = MockServer::start(MockScript {
        replies: vec![],
        cycle: false,
        default: MockReply::content("A"),
    })
    .unwrap();
    let cfg = fast_config(server.url());
    let client = cfg.http_client_with_key(None);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let targets = cross_targets(&fixture_questions(), &[Subgroup::new("region", "south")]);
    let s = collect(&targets, &cfg, &PromptTemplates::default(), &client, &out, &Default::default()).unwrap();
    assert_eq!((s.requests, s.parsed, s.unparsed), (12, 12, 0));
    let rs = read_responses(&out).unwrap();
    assert!(rs.iter().all(|r| r.parsed_option == Some(0) && r.attempt == 1));
    assert_eq!(server.request_count(), 12);
    // Every prompt the endpoint saw is one of the three built prompts.
    let prompts = server.prompts();
    for t in &targets {
        let p = build_prompt(&t.question, &t.subgroup, &PromptTemplates::default()).unwrap();
        assert_eq!(prompts.iter().filter(|x| **x == p).count(), 4);
    }
}

#[test]
fn retry_after_header_is_honoured() {
    let server = MockServer::start(MockScript {
        replies: vec![MockReply::status(429, Some(0.3))],
        cycle: false,
        default: MockReply::content("B"),
    })
    .unwrap();
    let cfg = CollectorConfig {
        samples_per_pair: 1,
        concurrency: 1,
        max_backoff_ms: 5_000,
        ..fast_config(server.url())
    };
    let client = cfg.http_client_with_key(Some("sk-test".into()));
    let dir = tempfile::tempdir().unwrap();
    let targets = cross_targets(&fixture_questions()[..1], &[Subgroup::new("region", "south")]);
    let start = Instant::now();
    let s = collect(
        &targets,
        &cfg,
        &PromptTemplates::default(),
        &client,
        dir.path().join("r.jsonl"),
        &Default::default(),
    )
    .unwrap();
    assert!(start.elapsed() >= Duration::from_millis(300));
    assert_eq!((s.requests, s.rate_limited, s.parsed), (2, 1, 1));
}

#[test]
fn server_errors_surface_with_pair_context() {
    let server = MockServer::start(MockScript {
        replies: vec![],
        cycle: false,
        default: MockReply::status(401, None),
    })
    .unwrap();
    let cfg = fast_config(server.url());
    let client = cfg.http_client_with_key(None);
    let dir = tempfile::tempdir().unwrap();
    let targets = cross_targets(&fixture_questions()[..1], &[Subgroup::new("region", "south")]);
    let err = collect(
        &targets,
        &cfg,
        &PromptTemplates::default(),
        &client,
        dir.path().join("r.jsonl"),
        &Default::default(),
    )
    .unwrap_err();
    assert_eq!(err.class(), ErrorClass::Upstream);
    let msg = err.to_string();
    assert!(msg.contains("crime_safety / region:south") && msg.contains("401"), "{msg}");
}

#[test]
fn persistent_5xx_gives_up() {
    let server = MockServer::start(MockScript {
        replies: vec![],
        cycle: false,
        default: MockReply::status(503, None),
    })
    .unwrap();
    let cfg = CollectorConfig {
        max_http_retries: 2,
        concurrency: 1,
        ..fast_config(server.url())
    };
    let client = cfg.http_client_with_key(None);
    let dir = tempfile::tempdir().unwrap();
    let targets = cross_targets(&fixture_questions()[..1], &[Subgroup::new("region", "south")]);
    let err = collect(
        &targets,
        &cfg,
        &PromptTemplates::default(),
        &client,
        dir.path().join("r.jsonl"),
        &Default::default(),
    )
    .unwrap_err();
    assert_eq!(err.class(), ErrorClass::Upstream);
    assert_eq!(server.request_count(), 3);
}

#[test]
fn secrets_never_reach_the_output() {
    let server = MockServer::start(MockScript {
        replies: vec![],
        cycle: false,
        default: MockReply::content("C"),
    })
    .unwrap();
    let cfg = fast_config(server.url());
    let client = cfg.http_client_with_key(Some("sk-very-secret-value".into()));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let targets = cross_targets(&fixture_questions()[..1], &[Subgroup::new("region", "south")]);
    collect(&targets, &cfg, &PromptTemplates::default(), &client, &out, &Default::default()).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(!text.contains("sk-very-secret-value"));
    assert!(!serde_json::to_string(&cfg).unwrap().contains("sk-very-secret-value"));
    assert!(!format!("{client:?}").contains("sk-very-secret-value"));
}

struct Echo;

impl ChatClient for Echo {
    fn complete(&self, _prompt: &str) -> Result<String, misalign::collector::CallError> {
        Ok("A".into())
    }
}

#[test]
fn budget_zero_issues_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let targets = cross_targets(&fixture_questions(), &[Subgroup::new("region", "south")]);
    let s = collect(
        &targets,
        &fast_config("http://unused"),
        &PromptTemplates::default(),
        &Echo,
        dir.path().join("r.jsonl"),
        &CollectOptions { request_budget: Some(0) },
    )
    .unwrap();
    assert!(s.interrupted);
    assert_eq!((s.requests, s.remaining_slots), (0, 12));
}
