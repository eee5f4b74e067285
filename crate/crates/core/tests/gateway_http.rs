mod common;

use std::time::Duration;

use common::{chat_body, StubServer};
use routecal::gateway::{Gateway, GatewayError, Message, ProviderConfig, Role};

fn gateway(server: &StubServer, key_var: &str) -> Gateway {
    let mut config = ProviderConfig::http(&server.url, key_var, "stub-model");
    config.retry.initial_backoff_ms = 10;
    config.retry.max_attempts = 3;
    config.timeout_secs = 5;
    Gateway::from_config(config).unwrap()
}

fn ask(gw: &Gateway, text: &str) -> Result<String, GatewayError> {
    gw.complete(&gw.request(Role::Decide, vec![Message::user(text)]))
}

#[test]
fn sends_chat_completion_body() {
    std::env::set_var("ROUTECAL_TEST_KEY_BODY", "k-body");
    let server = StubServer::start(vec![], "local1");
    let gw = gateway(&server, "ROUTECAL_TEST_KEY_BODY");
    assert_eq!(ask(&gw, "Which route?").unwrap(), "local1");
    let seen = server.seen();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer k-body"));
    assert_eq!(seen[0].body["model"], "stub-model");
    assert_eq!(seen[0].body["messages"][0]["role"], "user");
    assert_eq!(seen[0].body["messages"][0]["content"], "Which route?");
    assert_eq!(seen[0].body["temperature"], 0.0);
}

#[test]
fn server_errors_are_retried_until_exhausted() {
    std::env::set_var("ROUTECAL_TEST_KEY_5XX", "k");
    let script = vec![(500, "boom".to_string()); 3];
    let server = StubServer::start(script, "unused");
    let gw = gateway(&server, "ROUTECAL_TEST_KEY_5XX");
    match ask(&gw, "q") {
        Err(GatewayError::Exhausted { attempts: 3, last }) => assert!(matches!(*last, GatewayError::Server { status: 500, .. })),
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert_eq!(server.requests(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    std::env::set_var("ROUTECAL_TEST_KEY_4XX", "k");
    let server = StubServer::start(vec![(401, "{\"error\":\"bad key\"}".into())], "unused");
    let gw = gateway(&server, "ROUTECAL_TEST_KEY_4XX");
    let err = ask(&gw, "q").unwrap_err();
    assert!(matches!(err, GatewayError::Client { status: 401, .. }), "{err:?}");
    assert!(err.to_string().contains("check endpoint, model and key"));
    assert_eq!(server.requests(), 1);
}

#[test]
fn malformed_body_is_reported() {
    std::env::set_var("ROUTECAL_TEST_KEY_BAD", "k");
    let server = StubServer::start(vec![(200, "{\"choices\":[]}".into()), (200, "not json".into())], "unused");
    let gw = gateway(&server, "ROUTECAL_TEST_KEY_BAD");
    assert!(matches!(ask(&gw, "a"), Err(GatewayError::BadResponse(_))));
    assert!(matches!(ask(&gw, "b"), Err(GatewayError::BadResponse(_))));
}

#[test]
fn missing_key_variable_fails_before_sending() {
    let server = StubServer::start(vec![], "unused");
    let gw = gateway(&server, "ROUTECAL_TEST_KEY_UNSET_9f2c");
    let err = ask(&gw, "q").unwrap_err();
    assert!(err.to_string().contains("ROUTECAL_TEST_KEY_UNSET_9f2c"));
    assert_eq!(server.requests(), 0);
}

#[test]
fn rate_limit_spaces_requests() {
    std::env::set_var("ROUTECAL_TEST_KEY_RATE", "k");
    let server = StubServer::start(vec![], "ok");
    let mut config = ProviderConfig::http(&server.url, "ROUTECAL_TEST_KEY_RATE", "stub-model");
    config.rate_limit = Some(600);
    let gw = Gateway::from_config(config).unwrap();
    let start = std::time::Instant::now();
    for i in 0..4 {
        ask(&gw, &format!("q{i}")).unwrap();
    }
    assert!(start.elapsed() >= Duration::from_millis(290), "{:?}", start.elapsed());
}

#[test]
fn cache_survives_a_new_gateway() {
    std::env::set_var("ROUTECAL_TEST_KEY_CACHE", "secret-cache-key");
    let dir = tempfile::tempdir().unwrap();
    let server = StubServer::start(vec![(200, chat_body("expressway"))], "local1");
    let make = || {
        let mut config = ProviderConfig::http(&server.url, "ROUTECAL_TEST_KEY_CACHE", "stub-model");
        config.cache_dir = Some(dir.path().to_path_buf());
        Gateway::from_config(config).unwrap()
    };
    assert_eq!(ask(&make(), "same").unwrap(), "expressway");
    let second = make();
    assert_eq!(ask(&second, "same").unwrap(), "expressway");
    assert_eq!(second.stats().cache_hits, 1);
    assert_eq!(server.requests(), 1);
    assert_eq!(ask(&second, "different").unwrap(), "local1");
    assert_eq!(server.requests(), 2);
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!text.contains("secret-cache-key"));
    }
}
