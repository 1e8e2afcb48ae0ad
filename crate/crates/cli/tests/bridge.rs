use std::sync::mpsc;
use std::time::{Duration, Instant};

use ergoswarm::harness::{Scenario, Simulation};
use ergoswarm::uibridge::{hello, ServerMessage};
use ergoswarm_cli::serve::{self, Bridge};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn scenario(duration: f64) -> Scenario {
    let text = format!(
        "schema = 1\nname = \"bridge-test\"\nduration = {duration}\nseed = 2\n\
         [[agents]]\nid = 0\nstart = [0.2, 0.3]\n\
         [[agents]]\nid = 1\nmodel = \"double-integrator\"\nstart = [0.7, 0.6]\n"
    );
    Scenario::from_toml(&text, None).unwrap()
}

/// A simulation that advances one tick per message on `step`.
struct Stepper {
    step: Option<mpsc::Sender<()>>,
    done: mpsc::Receiver<u64>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Stepper {
    fn tick(&self) -> u64 {
        self.step.as_ref().unwrap().send(()).unwrap();
        self.done.recv_timeout(Duration::from_secs(10)).unwrap()
    }

    fn finish(mut self) {
        drop(self.step.take());
        self.thread.take().unwrap().join().unwrap();
    }
}

async fn start(duration: f64) -> (Bridge, Stepper) {
    let sc = scenario(duration);
    let (bridge, mut observer) = serve::start("127.0.0.1:0", &hello(&sc)).await.unwrap();
    let (step_tx, step_rx) = mpsc::channel::<()>();
    let (done_tx, done_rx) = mpsc::channel();
    let thread = std::thread::spawn(move || {
        let mut sim = Simulation::new(sc).unwrap();
        while step_rx.recv().is_ok() && !sim.is_finished() {
            let f = sim.step(&mut observer).unwrap();
            done_tx.send(f.tick).unwrap();
        }
    });
    (
        bridge,
        Stepper {
            step: Some(step_tx),
            done: done_rx,
            thread: Some(thread),
        },
    )
}

/// Runs blocking stepper calls off the async runtime.
async fn tick(s: &Stepper) -> u64 {
    tokio::task::block_in_place(|| s.tick())
}

async fn connect(bridge: &Bridge) -> Ws {
    let before = bridge.client_count();
    let (ws, _) = connect_async(format!("ws://{}/ws", bridge.addr())).await.unwrap();
    tokio::time::timeout(Duration::from_secs(5), bridge.wait_for_clients(before + 1))
        .await
        .unwrap();
    ws
}

async fn next(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("timed out waiting for a message")
            .expect("socket closed")
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn next_of(ws: &mut Ws, kind: &str) -> Value {
    loop {
        let v = next(ws).await;
        if v["type"] == kind {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn hello_then_frames_in_order() {
    let (bridge, sim) = start(5.0).await;
    let mut ws = connect(&bridge).await;
    let h = next(&mut ws).await;
    assert_eq!(h["type"], "hello");
    assert_eq!(h["version"], 1);
    assert_eq!(h["scenario"], "bridge-test");
    assert_eq!(h["agents"][1], json!({"id": 1, "model": "double-integrator", "role": "regular"}));

    let mut last = None;
    for _ in 0..5 {
        let t = tick(&sim).await;
        let f = next_of(&mut ws, "frame").await;
        assert_eq!(f["frame"]["tick"], t);
        assert!(last.is_none_or(|l| t > l));
        last = Some(t);
        assert_eq!(f["phi"]["resolution"], json!([50, 50]));
        assert_eq!(f["reconstruction"]["values"].as_array().unwrap().len(), 2500);
    }
    sim.finish();
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn two_clients_get_identical_payloads() {
    let (bridge, sim) = start(5.0).await;
    let mut a = connect(&bridge).await;
    let mut b = connect(&bridge).await;
    assert_eq!(next(&mut a).await, next(&mut b).await);
    tick(&sim).await;
    assert_eq!(next_of(&mut a, "frame").await, next_of(&mut b, "frame").await);
    sim.finish();
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn late_client_gets_hello_then_current_frame() {
    let (bridge, sim) = start(5.0).await;
    for _ in 0..7 {
        tick(&sim).await;
    }
    let mut ws = connect(&bridge).await;
    assert_eq!(next(&mut ws).await["type"], "hello");
    let f = next(&mut ws).await;
    assert_eq!(f["type"], "frame");
    assert_eq!(f["frame"]["tick"], 6);
    sim.finish();
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn painted_command_is_acked_and_changes_phi_next_frame() {
    let (bridge, sim) = start(5.0).await;
    let mut ws = connect(&bridge).await;
    next(&mut ws).await;
    tick(&sim).await;
    let before = next_of(&mut ws, "frame").await;

    let points: Vec<[f64; 2]> = (0..20)
        .map(|i| [0.6 + 0.01 * (i % 5) as f64, 0.2 + 0.01 * (i / 5) as f64])
        .collect();
    send(&mut ws, json!({"type": "command", "nonce": "paint-1", "points": points})).await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    tick(&sim).await;

    let ack = next(&mut ws).await;
    assert_eq!(ack, json!({"type": "ack", "nonce": "paint-1", "tick": 1}));
    let after = next_of(&mut ws, "frame").await;
    assert_eq!(after["frame"]["tick"], 1);
    assert_eq!(after["frame"]["active_command"], json!(points));
    for j in 0..2 {
        assert_ne!(
            before["frame"]["agents"][j]["phi_digest"],
            after["frame"]["agents"][j]["phi_digest"]
        );
    }
    let cell = |f: &Value| f["phi"]["values"][10 * 50 + 30].as_f64().unwrap();
    assert!(cell(&after) > 10.0 * cell(&before));
    sim.finish();
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn double_send_in_one_tick_is_last_writer_wins() {
    let (bridge, sim) = start(5.0).await;
    let mut ws = connect(&bridge).await;
    next(&mut ws).await;
    send(&mut ws, json!({"type": "command", "nonce": "a", "points": [[0.1, 0.1]]})).await;
    send(&mut ws, json!({"type": "command", "nonce": "b", "points": [[0.9, 0.9]]})).await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    tick(&sim).await;
    assert_eq!(next(&mut ws).await, json!({"type": "ack", "nonce": "a", "tick": 0}));
    assert_eq!(next(&mut ws).await, json!({"type": "ack", "nonce": "b", "tick": 0}));
    let f = next_of(&mut ws, "frame").await;
    assert_eq!(f["frame"]["active_command"], json!([[0.9, 0.9]]));
    tick(&sim).await;
    // No second ack for either nonce.
    assert_eq!(next(&mut ws).await["type"], "frame");
    sim.finish();
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_messages_get_errors() {
    let (bridge, sim) = start(5.0).await;
    let mut ws = connect(&bridge).await;
    next(&mut ws).await;

    send(&mut ws, json!({"type": "command", "nonce": "e", "points": []})).await;
    assert_eq!(next(&mut ws).await, json!({"type": "error", "nonce": "e", "reason": "empty command"}));

    send(&mut ws, json!({"type": "command", "nonce": "o", "points": [[0.5, 0.5], [1.2, 0.5], [0.1, -0.1]]})).await;
    let e = next(&mut ws).await;
    assert_eq!(e["nonce"], "o");
    assert_eq!(e["offenders"], json!([1, 2]));

    ws.send(Message::Text("{not json".into())).await.unwrap();
    let e = next(&mut ws).await;
    assert_eq!(e["type"], "error");
    assert!(e["reason"].as_str().unwrap().starts_with("malformed message"));

    send(&mut ws, json!({"type": "teleport", "nonce": "t"})).await;
    let e = next(&mut ws).await;
    assert_eq!((e["type"].as_str(), e["nonce"].as_str()), (Some("error"), Some("t")));

    send(&mut ws, json!({"type": "command", "nonce": "c", "points": [[1.0000005, -0.0000005]]})).await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    tick(&sim).await;
    assert_eq!(next(&mut ws).await, json!({"type": "ack", "nonce": "c", "tick": 0}));
    assert_eq!(next_of(&mut ws, "frame").await["frame"]["active_command"], json!([[1.0, 0.0]]));
    sim.finish();
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn grid_request_returns_full_resolution() {
    let (bridge, sim) = start(5.0).await;
    let mut ws = connect(&bridge).await;
    next(&mut ws).await;
    send(&mut ws, json!({"type": "grid_request", "kind": "phi"})).await;
    assert_eq!(next(&mut ws).await, json!({"type": "error", "reason": "no frame yet"}));
    tick(&sim).await;
    next_of(&mut ws, "frame").await;
    for kind in ["phi", "reconstruction"] {
        send(&mut ws, json!({"type": "grid_request", "kind": kind})).await;
        let g = next_of(&mut ws, "grid").await;
        assert_eq!(g["kind"], kind);
        assert_eq!(g["grid"]["resolution"], json!([50, 50]));
        let total: f64 = g["grid"]["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((total / 2500.0 - 1.0).abs() < 1e-9);
    }
    sim.finish();
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stalled_client_does_not_slow_the_tick_loop() {
    let sc = scenario(30.0);
    let ticks = sc.ticks;
    let (bridge, mut observer) = serve::start("127.0.0.1:0", &hello(&sc)).await.unwrap();
    let _stalled = connect(&bridge).await;
    let mut reader = connect(&bridge).await;

    let started = Instant::now();
    let run = tokio::task::spawn_blocking(move || {
        let log = ergoswarm::harness::run_with(sc, &mut observer).unwrap();
        (log.frames.len(), observer)
    });
    let mut last = 0;
    loop {
        let v = next(&mut reader).await;
        if v["type"] == "frame" {
            let t = v["frame"]["tick"].as_u64().unwrap();
            assert!(t >= last);
            last = t;
            if t == ticks - 1 {
                break;
            }
        }
    }
    let (frames, observer) = run.await.unwrap();
    assert_eq!(frames as u64, ticks);
    assert!(started.elapsed() < Duration::from_secs(60));
    drop(observer);
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn command_after_the_run_is_refused() {
    let (bridge, sim) = start(0.2).await;
    let mut ws = connect(&bridge).await;
    next(&mut ws).await;
    tick(&sim).await;
    tick(&sim).await;
    sim.finish();
    send(&mut ws, json!({"type": "command", "nonce": "z", "points": [[0.5, 0.5]]})).await;
    let reply = next_of(&mut ws, "error").await;
    assert_eq!(reply, json!({"type": "error", "nonce": "z", "reason": "simulation finished"}));
    bridge.shutdown().await.unwrap();
}

#[test]
fn server_message_schema_matches_the_protocol_doc() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/protocol.md")).unwrap();
    let examples: Vec<&str> = doc
        .split("```json")
        .skip(1)
        .map(|s| s.split("```").next().unwrap().trim())
        .collect();
    assert!(examples.len() >= 6);
    for ex in examples {
        let v: Value = serde_json::from_str(ex).unwrap_or_else(|e| panic!("bad example {ex}: {e}"));
        match v["type"].as_str().unwrap() {
            "command" | "grid_request" => {
                ergoswarm::uibridge::parse_client(ex).unwrap();
            }
            "frame" => {}
            _ => {
                serde_json::from_value::<ServerMessage>(v).unwrap();
            }
        }
    }
}
