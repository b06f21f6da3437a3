use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

use hivechat_core::event::read_jsonl;
use hivechat_core::orchestrator::OrchestratorConfig;
use hivechat_core::time::VirtualClock;
use hivechat_core::Timestamp;
use hivechat_server::{start, RunningServer};

type Socket =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

fn config(dir: &std::path::Path) -> OrchestratorConfig {
    OrchestratorConfig {
        listen: "127.0.0.1:0".into(),
        log_path: Some(dir.join("events.jsonl")),
        ..OrchestratorConfig::default()
    }
}

async fn boot(cfg: &OrchestratorConfig, clock: Arc<VirtualClock>) -> RunningServer {
    start(cfg, clock, false).await.unwrap()
}

async fn connect(server: &RunningServer, query: &str) -> Socket {
    let url = format!("ws://{}/ws?{query}", server.addr);
    let (socket, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    socket
}

async fn next(socket: &mut Socket) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), socket.next())
            .await
            .expect("frame within 5s")
            .expect("socket open")
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

/// Reads frames until one of type `kind` arrives.
async fn until(socket: &mut Socket, kind: &str) -> Value {
    loop {
        let v = next(socket).await;
        if v["type"] == kind {
            return v;
        }
    }
}

async fn send(socket: &mut Socket, v: Value) {
    socket
        .send(Message::Text(v.to_string().into()))
        .await
        .unwrap();
}

#[tokio::test]
async fn user_and_worker_exchange_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let clock = Arc::new(VirtualClock::new(Timestamp::from_secs(1_000)));
    let server = boot(&cfg, clock.clone()).await;

    let mut user = connect(&server, "user_id=alice").await;
    let welcome = next(&mut user).await;
    assert_eq!(welcome["type"], "welcome");
    let conv = welcome["conversation_id"].as_u64().unwrap();

    let mut worker = connect(&server, &format!("conversation_id={conv}&worker_id=w1")).await;
    assert_eq!(next(&mut worker).await["type"], "welcome");

    send(
        &mut user,
        json!({"id": 1, "type": "user_message", "text": "any sushi near me?"}),
    )
    .await;
    let ack = until(&mut user, "ack").await;
    assert_eq!(ack["id"], 1);
    let seen = until(&mut worker, "user_message").await;
    assert_eq!(seen["text"], "any sushi near me?");

    clock.advance_millis(2_000);
    send(
        &mut worker,
        json!({"id": 2, "type": "propose", "text": "Try Shiro's."}),
    )
    .await;
    let proposed = until(&mut user, "message_proposed").await;
    assert_eq!(proposed["author"], "w1");
    let ack = until(&mut worker, "ack").await;
    assert_eq!(ack["command"], "propose");

    // One active worker: the proposer's own upvote already clears the bar.
    let accepted = until(&mut user, "message_accepted").await;
    assert_eq!(accepted["message_id"], proposed["message_id"]);
    let points = until(&mut worker, "points_update").await;
    assert_eq!(points["worker_id"], "w1");

    let logged = read_jsonl(dir.path().join("events.jsonl")).unwrap();
    let kinds: Vec<&str> = logged.iter().map(|e| e.kind.name()).collect();
    for k in [
        "conversation_opened",
        "worker_joined",
        "user_message",
        "message_proposed",
        "message_accepted",
        "reward_granted",
    ] {
        assert!(kinds.contains(&k), "{k} missing from {kinds:?}");
    }
    server.shutdown();
}

#[tokio::test]
async fn unknown_command_gets_an_error_and_keeps_the_connection() {
    let dir = tempfile::tempdir().unwrap();
    let server = boot(
        &config(dir.path()),
        Arc::new(VirtualClock::new(Timestamp::ZERO)),
    )
    .await;
    let mut user = connect(&server, "user_id=bob").await;
    next(&mut user).await;
    send(&mut user, json!({"id": 9, "type": "teleport"})).await;
    let err = next(&mut user).await;
    assert_eq!(err["type"], "error");
    assert_eq!(err["id"], 9);
    send(&mut user, json!({"type": "upvote", "message_id": 1})).await;
    assert_eq!(next(&mut user).await["type"], "error", "users cannot vote");
    send(
        &mut user,
        json!({"id": 10, "type": "user_message", "text": "still here?"}),
    )
    .await;
    let ack = until(&mut user, "ack").await;
    assert_eq!(ack["id"], 10);
    server.shutdown();
}

#[tokio::test]
async fn restart_replays_the_log_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let clock = Arc::new(VirtualClock::new(Timestamp::from_secs(50)));
    let server = boot(&cfg, clock.clone()).await;
    let http = reqwest::Client::new();
    let base = format!("http://{}", server.addr);

    let opened: Value = http
        .post(format!("{base}/conversations"))
        .json(&json!({"user_id": "carol", "automation": false}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let conv = opened["conversation_id"].as_u64().unwrap();
    for w in ["w1", "w2", "w3"] {
        let r = http
            .post(format!("{base}/conversations/{conv}/join"))
            .json(&json!({"worker_id": w}))
            .send()
            .await
            .unwrap();
        assert!(r.status().is_success());
    }
    let cmd = |who: Value, command: Value| {
        let http = http.clone();
        let url = format!("{base}/conversations/{conv}/commands");
        async move {
            http.post(url)
                .json(&json!({"participant": who, "command": command}))
                .send()
                .await
                .unwrap()
        }
    };
    let user = json!({"role": "user", "id": "carol"});
    let w = |id: &str| json!({"role": "worker", "id": id});
    cmd(
        user.clone(),
        json!({"type": "user_message", "text": "hello"}),
    )
    .await;
    clock.advance_millis(1_000);
    let r = cmd(
        w("w1"),
        json!({"type": "propose", "text": "Hi! How can I help?"}),
    )
    .await;
    assert!(r.status().is_success());
    cmd(
        w("w2"),
        json!({"type": "add_fact", "text": "user is carol"}),
    )
    .await;
    clock.advance_millis(1_000);
    let snapshot: Value = http
        .get(format!("{base}/conversations/{conv}"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let pending = snapshot["messages"][1]["id"].as_u64().unwrap();
    cmd(w("w2"), json!({"type": "upvote", "message_id": pending})).await;
    let bad = cmd(w("w9"), json!({"type": "propose", "text": "intruder"})).await;
    assert_eq!(bad.status(), reqwest::StatusCode::CONFLICT);

    let before: Value = http
        .get(format!("{base}/conversations/{conv}"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let metrics_before: Value = http
        .get(format!("{base}/metrics"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let events_before = server.state.read(|o| o.engine().events().to_vec());
    server.shutdown();

    let server = boot(&cfg, clock.clone()).await;
    let base = format!("http://{}", server.addr);
    let after: Value = http
        .get(format!("{base}/conversations/{conv}"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let metrics_after: Value = http
        .get(format!("{base}/metrics"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(before, after);
    assert_eq!(metrics_before, metrics_after);
    assert_eq!(after["messages"][1]["state"], "accepted");
    let events_after = server.state.read(|o| o.engine().events().to_vec());
    assert_eq!(events_before, events_after);

    let history: Value = http
        .get(format!("{base}/users/carol/history"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(history[0]["facts"][0], "user is carol");
    assert_eq!(history[0]["transcript"].as_array().unwrap().len(), 2);
    server.shutdown();
}

#[tokio::test]
async fn scheduler_ticks_bring_bot_candidates_to_clients() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let clock = Arc::new(VirtualClock::new(Timestamp::from_secs(10)));
    let server = boot(&cfg, clock.clone()).await;
    let http = reqwest::Client::new();
    let base = format!("http://{}", server.addr);
    let opened: Value = http
        .post(format!("{base}/conversations"))
        .json(&json!({"user_id": "dana", "automation": true}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let conv = opened["conversation_id"].as_u64().unwrap();
    let mut worker = connect(&server, &format!("conversation_id={conv}&worker_id=w1")).await;
    next(&mut worker).await;
    let mut user = connect(&server, &format!("conversation_id={conv}&user_id=dana")).await;
    next(&mut user).await;
    send(
        &mut user,
        json!({"type": "user_message", "text": "what's the weather in Kabul on Friday?"}),
    )
    .await;
    until(&mut worker, "user_message").await;

    assert!(
        server.state.tick_due().await.is_empty(),
        "nothing due before the period"
    );
    clock.advance_millis(10_000);
    let reports = server.state.tick_due().await;
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].invoked.len(), 2);
    let proposed = until(&mut worker, "message_proposed").await;
    assert_eq!(proposed["role"], "bot");
    assert!(proposed["origin_bot"].is_string());
    server.shutdown();
}
