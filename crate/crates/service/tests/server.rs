use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use notepilot_service::config::ServiceConfig;
use notepilot_service::server::{self, ServeError};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

struct Client {
    lines: Lines<BufReader<OwnedReadHalf>>,
    write: OwnedWriteHalf,
}

impl Client {
    async fn connect(addr: &str) -> Self {
        let (read, write) = TcpStream::connect(addr).await.unwrap().into_split();
        Self { lines: BufReader::new(read).lines(), write }
    }

    async fn send(&mut self, v: Value) {
        self.write.write_all(format!("{v}\n").as_bytes()).await.unwrap();
    }

    async fn recv(&mut self) -> Option<Value> {
        let line = tokio::time::timeout(Duration::from_secs(5), self.lines.next_line()).await.expect("server reply");
        line.unwrap().map(|l| serde_json::from_str(&l).unwrap())
    }

    /// Reads until a message of type `ty` arrives, returning everything seen.
    async fn until(&mut self, ty: &str) -> Vec<Value> {
        let mut seen = Vec::new();
        loop {
            let m = self.recv().await.expect("connection open");
            let done = m["type"] == ty;
            seen.push(m);
            if done {
                return seen;
            }
        }
    }

    async fn hello(&mut self, token: &str, session: Option<&str>) -> Value {
        self.send(json!({"type": "hello", "version": 1, "token": token, "session": session})).await;
        self.recv().await.unwrap()
    }

    async fn command(&mut self, cmd_id: &str, command: Value) -> Value {
        self.send(json!({"type": "command", "cmd_id": cmd_id, "command": command})).await;
        self.until("ack").await.pop().unwrap()
    }
}

fn config(root: &Path, extra: &str) -> ServiceConfig {
    let text = format!(
        "listen = \"127.0.0.1:0\"\nroot = {root:?}\ntoken = \"secret\"\n{extra}\n[backend]\nmock_latency = {{ extraction = 40, derivation = 20, organize = 30 }}\n",
        root = root.display().to_string(),
    );
    ServiceConfig::parse(&text).unwrap()
}

async fn start(config: ServiceConfig) -> (String, std::sync::Arc<server::Registry>) {
    let server = server::bind(config).await.unwrap();
    let addr = server.local_addr().unwrap().to_string();
    let registry = server.registry();
    tokio::spawn(server.run());
    (addr, registry)
}

fn apply(parts: &mut BTreeMap<String, Value>, msgs: &[Value]) {
    for m in msgs {
        if m["type"] == "update" {
            parts.insert(m["part"].as_str().unwrap().to_string(), m["data"].clone());
        }
    }
}

#[tokio::test]
async fn hello_yields_welcome_then_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(config(dir.path(), "")).await;
    let mut c = Client::connect(&addr).await;
    let welcome = c.hello("secret", None).await;
    assert_eq!(welcome["type"], "welcome");
    assert_eq!(welcome["version"], 1);
    assert_eq!(welcome["created"], true);
    let id = welcome["session"].as_str().unwrap().to_string();
    assert!(id.starts_with("s-"));
    let snap = c.recv().await.unwrap();
    assert_eq!(snap["type"], "snapshot");
    assert_eq!(snap["session"], id.as_str());
    for part in ["status", "queue", "candidates", "notes"] {
        assert!(snap["parts"].get(part).is_some(), "missing part {part}: {snap}");
    }

    let ack = c.command("c1", json!({"cmd": "touch", "on": true})).await;
    assert_eq!(ack["accepted"], true);
    assert_eq!(ack["cmd_id"], "c1");
    assert!(dir.path().join("sessions").join(&id).join("manifest").is_file());
}

#[tokio::test]
async fn handshake_failures_close_the_connection() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, registry) = start(config(dir.path(), "")).await;

    let mut c = Client::connect(&addr).await;
    let e = c.hello("wrong", None).await;
    assert_eq!((e["type"].as_str(), e["code"].as_str()), (Some("error"), Some("unauthorized")));
    assert!(c.recv().await.is_none());

    let mut c = Client::connect(&addr).await;
    c.send(json!({"type": "hello", "version": 2, "token": "secret"})).await;
    assert_eq!(c.recv().await.unwrap()["code"], "unsupported_version");
    assert!(c.recv().await.is_none());

    let mut c = Client::connect(&addr).await;
    c.send(json!({"type": "command", "command": {"cmd": "touch", "on": true}})).await;
    assert_eq!(c.recv().await.unwrap()["code"], "bad_message");

    let mut c = Client::connect(&addr).await;
    assert_eq!(c.hello("secret", Some("s-missing")).await["code"], "unknown_session");

    assert!(registry.ids().is_empty(), "failed handshakes create no session");
}

#[tokio::test]
async fn malformed_lines_do_not_end_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(config(dir.path(), "")).await;
    let mut c = Client::connect(&addr).await;
    c.hello("secret", None).await;
    c.until("snapshot").await;
    c.send(json!({"type": "command", "command": {"cmd": "fly"}})).await;
    assert_eq!(c.until("error").await.pop().unwrap()["code"], "bad_message");
    let ack = c.command("c1", json!({"cmd": "input", "target": "back", "action": "click"})).await;
    assert_eq!(ack["accepted"], false);
    assert!(ack["error"].is_string());
}

#[tokio::test]
async fn duplicate_cmd_id_is_applied_once() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, registry) = start(config(dir.path(), "")).await;
    let mut c = Client::connect(&addr).await;
    let id = c.hello("secret", None).await["session"].as_str().unwrap().to_string();
    let first = c.command("same", json!({"cmd": "touch", "on": true})).await;
    let again = c.command("same", json!({"cmd": "touch", "on": true})).await;
    assert_eq!((first["accepted"].as_bool(), first["duplicate"].as_bool()), (Some(true), Some(false)));
    assert_eq!((again["accepted"].as_bool(), again["duplicate"].as_bool()), (Some(true), Some(true)));
    assert_eq!(first["seq"], again["seq"]);
    registry.shutdown().await;
    let log = std::fs::read_to_string(dir.path().join("sessions").join(&id).join("events.log")).unwrap();
    assert_eq!(log.matches("\ttouch\t").count(), 1, "{log}");
}

#[tokio::test]
async fn reconnecting_client_gets_equivalent_state() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, registry) = start(config(dir.path(), "")).await;
    let mut a = Client::connect(&addr).await;
    let id = a.hello("secret", None).await["session"].as_str().unwrap().to_string();
    let snap = a.recv().await.unwrap();
    let mut parts: BTreeMap<String, Value> = serde_json::from_value(snap["parts"].clone()).unwrap();

    let mut seen = Vec::new();
    a.send(json!({"type": "command", "cmd_id": "1", "command": {"cmd": "touch", "on": true}})).await;
    seen.extend(a.until("ack").await);
    a.send(json!({"type": "command", "cmd_id": "2", "command":
        {"cmd": "transcript", "text": "People in every city joined the rallies.", "start": 0, "end": 10}})).await;
    seen.extend(a.until("ack").await);
    // Wait for keywords from the mock.
    loop {
        let m = a.recv().await.unwrap();
        let found = m["type"] == "update" && m["part"] == "queue" && !m["data"]["keywords"].as_array().unwrap().is_empty();
        seen.push(m);
        if found {
            break;
        }
    }
    let live = registry.get(&id).unwrap().handle.snapshot().await.unwrap();
    apply(&mut parts, &seen);
    let last_seq = seen.iter().filter(|m| m["type"] == "update").filter_map(|m| m["seq"].as_u64()).max().unwrap();
    assert_eq!(last_seq, live.seq);
    a.send(json!({"type": "bye"})).await;
    assert!(a.recv().await.is_none());

    let mut b = Client::connect(&addr).await;
    let welcome = b.hello("secret", Some(&id)).await;
    assert_eq!(welcome["created"], false);
    assert_eq!(welcome["session"], id.as_str());
    let snap = b.recv().await.unwrap();
    assert_eq!(snap["seq"], live.seq);
    let rejoined: BTreeMap<String, Value> = serde_json::from_value(snap["parts"].clone()).unwrap();
    assert_eq!(rejoined, parts);
    assert_eq!(rejoined, live.parts);
}

#[tokio::test]
async fn play_demo_streams_the_configured_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("demo.trace");
    std::fs::write(&trace, "0\t100\tPeople in every city joined the rallies.\n150\t250\tSpeeches were given in each square.\n").unwrap();
    let extra = format!("demo_trace = {:?}", trace.display().to_string());
    let (addr, _) = start(config(dir.path(), &extra)).await;
    let mut c = Client::connect(&addr).await;
    c.hello("secret", None).await;
    c.command("t", json!({"cmd": "touch", "on": true})).await;
    let ack = c.command("d", json!({"cmd": "play_demo"})).await;
    assert_eq!(ack["accepted"], true, "{ack}");
    // Each sentence's keywords show up in the queue in turn.
    let mut words = std::collections::BTreeSet::new();
    while !words.contains("speeches") {
        let m = c.recv().await.unwrap();
        if m["type"] == "update" && m["part"] == "queue" {
            words.extend(m["data"]["keywords"].as_array().unwrap().iter().map(|k| k["word"].as_str().unwrap().to_string()));
        }
    }
    assert!(words.contains("rallies"), "{words:?}");
}

#[tokio::test]
async fn play_demo_without_a_trace_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(config(dir.path(), "")).await;
    let mut c = Client::connect(&addr).await;
    c.hello("secret", None).await;
    let ack = c.command("d", json!({"cmd": "play_demo"})).await;
    assert_eq!(ack["accepted"], false);
    assert!(ack["error"].as_str().unwrap().contains("no demo trace"));
}

#[tokio::test]
async fn port_in_use_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(config(dir.path(), "")).await;
    let mut again = config(dir.path(), "");
    again.listen = addr.clone();
    match server::bind(again).await {
        Err(e @ ServeError::AddrInUse { .. }) => assert!(e.to_string().contains(&addr), "{e}"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("second bind on {addr} succeeded"),
    }
}

#[tokio::test]
async fn hosted_backend_without_key_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "listen = \"127.0.0.1:0\"\nroot = {:?}\ntoken = \"t\"\n[backend]\nkind = \"hosted\"\nmodel = \"m\"\nendpoint_url = \"http://127.0.0.1:9\"\napi_key_env = \"NOTEPILOT_TEST_KEY_THAT_IS_UNSET\"\n",
        dir.path().display().to_string()
    );
    let err = server::bind(ServiceConfig::parse(&text).unwrap()).await.err().expect("bind fails");
    assert!(err.to_string().contains("NOTEPILOT_TEST_KEY_THAT_IS_UNSET"), "{err}");
}
