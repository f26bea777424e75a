use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use gridzero::scenario::two_step_congestion;
use gridzero_server::{bind, serve, ServeError};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

struct Server {
    base: String,
    scenario: String,
    unsafe_step: usize,
    horizon: usize,
    _stop: tokio::sync::oneshot::Sender<()>,
}

async fn start() -> Server {
    let case = two_step_congestion();
    let unsafe_step = case.root(gridzero::SAFE_THRESHOLD).t();
    let manager = Arc::new(case.manager(case.assist_config()));
    let listener = bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(serve(listener, manager, async {
        let _ = rx.await;
    }));
    Server { base: format!("http://{addr}"), scenario: case.chronics.name.clone(), unsafe_step, horizon: case.chronics.horizon(), _stop: tx }
}

async fn create(c: &Client, s: &Server, start_step: usize) -> (String, Value) {
    let r = c.post(format!("{}/sessions", s.base)).json(&json!({ "scenario": s.scenario, "seed": 1, "start_step": start_step })).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let body: Value = r.json().await.unwrap();
    (body["session"].as_str().unwrap().to_string(), body)
}

async fn get(c: &Client, url: String) -> (StatusCode, Value) {
    let r = c.get(url).send().await.unwrap();
    (r.status(), r.json().await.unwrap())
}

async fn post(c: &Client, url: String) -> (StatusCode, Value) {
    let r = c.post(url).send().await.unwrap();
    (r.status(), r.json().await.unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn fresh_session_reports_a_safe_snapshot() {
    let s = start().await;
    let c = Client::new();
    let (status, health) = get(&c, format!("{}/health", s.base)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["version"], 1);
    let (_, grid) = get(&c, format!("{}/grid", s.base)).await;
    assert!(grid["grid"]["lines"].as_array().unwrap().len() > 5);
    let (_, scen) = get(&c, format!("{}/scenarios", s.base)).await;
    assert_eq!(scen["scenarios"][0], s.scenario.as_str());

    let (id, created) = create(&c, &s, 0).await;
    assert_eq!(created["version"], 1);
    assert_eq!(created["state"]["t"], 0);
    let (status, state) = get(&c, format!("{}/sessions/{id}/state", s.base)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["version"], 1);
    assert_eq!(state["t"], 0);
    assert_eq!(state["verdict"]["safe"], true);
    assert!(state["observation"]["rho"].as_array().is_some());
    let (_, recs) = get(&c, format!("{}/sessions/{id}/recommendations", s.base)).await;
    assert_eq!(recs["safe"], true);
    assert!(recs["recommendations"].as_array().unwrap().is_empty());
    assert!(recs["note"].as_str().is_some());

    let (status, _) = post(&c, format!("{}/sessions/{id}/confirm/noop", s.base)).await;
    assert_eq!(status, StatusCode::OK);
    let (_, state) = get(&c, format!("{}/sessions/{id}/state", s.base)).await;
    assert_eq!(state["t"], 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_map_to_statuses_and_categories() {
    let s = start().await;
    let c = Client::new();
    let (status, body) = get(&c, format!("{}/sessions/s404/state", s.base)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["category"], "unknown_session");
    assert_eq!(body["version"], 1);

    let r = c.post(format!("{}/sessions", s.base)).header("content-type", "application/json").body("{not json").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["error"]["category"], "bad_request");

    let r = c.post(format!("{}/sessions", s.base)).json(&json!({ "scenario": "missing" })).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    let (id, _) = create(&c, &s, s.unsafe_step).await;
    let (status, body) = post(&c, format!("{}/sessions/{id}/simulate/t0-r9", s.base)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["category"], "stale");
    let (status, body) = post(&c, format!("{}/sessions/{id}/simulate/whatever", s.base)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["category"], "unknown_recommendation");
    let (status, _) = get(&c, format!("{}/sessions/{id}/recommendations?n=0", s.base)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_congestion_round_trip() {
    let s = start().await;
    let c = Client::new();
    let (id, created) = create(&c, &s, s.unsafe_step).await;
    assert_eq!(created["state"]["verdict"]["safe"], false);

    let t0 = std::time::Instant::now();
    let (status, list) = get(&c, format!("{}/sessions/{id}/recommendations", s.base)).await;
    assert!(t0.elapsed() < Duration::from_secs(1), "{:?}", t0.elapsed());
    assert_eq!(status, StatusCode::OK);
    let recs = list["recommendations"].as_array().unwrap();
    assert!(!recs.is_empty() && recs.len() <= 5);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r["rank"], i + 1);
    }
    let top = &recs[0];
    assert_eq!(top["outcome"]["plan"].as_array().unwrap().len(), 1, "{top}");
    assert!(top["description"].as_str().unwrap().starts_with("split substation"));
    let top_id = top["id"].as_str().unwrap().to_string();

    // what-if twice, state unchanged
    let (_, before) = get(&c, format!("{}/sessions/{id}/state", s.base)).await;
    let (status, sim) = post(&c, format!("{}/sessions/{id}/simulate/{top_id}", s.base)).await;
    assert_eq!(status, StatusCode::OK);
    let (_, again) = post(&c, format!("{}/sessions/{id}/simulate/{top_id}", s.base)).await;
    assert_eq!(sim["result"], again["result"]);
    let (_, after) = get(&c, format!("{}/sessions/{id}/state", s.base)).await;
    assert_eq!(before["observation"], after["observation"]);

    let (status, done) = post(&c, format!("{}/sessions/{id}/confirm/{top_id}", s.base)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(done["t"], s.unsafe_step + 1);
    assert_eq!(done["verdict"]["safe"], true);
    let (status, body) = post(&c, format!("{}/sessions/{id}/confirm/{top_id}", s.base)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["category"], "stale");

    // follow the assistant to the end of the scenario
    let mut confirmed = 1;
    loop {
        let (_, state) = get(&c, format!("{}/sessions/{id}/state", s.base)).await;
        if state["done"] == true {
            assert_eq!(state["done_reason"], "horizon_reached");
            assert_eq!(state["t"], s.horizon);
            break;
        }
        let (_, list) = get(&c, format!("{}/sessions/{id}/recommendations", s.base)).await;
        let pick = match list["recommendations"].as_array().unwrap().first() {
            Some(r) => {
                confirmed += 1;
                r["id"].as_str().unwrap().to_string()
            }
            None => "noop".to_string(),
        };
        let (status, _) = post(&c, format!("{}/sessions/{id}/confirm/{pick}", s.base)).await;
        assert_eq!(status, StatusCode::OK);
    }
    assert_eq!(confirmed, 2);
    let (status, body) = post(&c, format!("{}/sessions/{id}/confirm/noop", s.base)).await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(body["error"]["category"], "terminal");
}

/// Read server-sent events until `count` ids arrive.
async fn read_events(resp: &mut reqwest::Response, count: usize) -> Vec<(u64, String, Value)> {
    let mut buf = String::new();
    let mut out = Vec::new();
    while out.len() < count {
        let chunk = tokio::time::timeout(Duration::from_secs(5), resp.chunk()).await.expect("event arrives").unwrap().unwrap();
        buf.push_str(&String::from_utf8_lossy(&chunk));
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let (mut id, mut kind, mut data) = (None, String::new(), Value::Null);
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().ok();
                } else if let Some(v) = line.strip_prefix("event:") {
                    kind = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data = serde_json::from_str(v.trim()).unwrap();
                }
            }
            if let Some(id) = id {
                out.push((id, kind, data));
            }
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_pushes_and_replays() {
    let s = start().await;
    let c = Client::new();
    let (id, _) = create(&c, &s, 0).await;
    let mut live = c.get(format!("{}/sessions/{id}/events", s.base)).send().await.unwrap();
    assert_eq!(live.status(), StatusCode::OK);
    assert!(live.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let first = read_events(&mut live, 1).await;
    assert_eq!(first[0].0, 0);
    assert_eq!(first[0].1, "created");
    assert_eq!(first[0].2["version"], 1);

    post(&c, format!("{}/sessions/{id}/confirm/noop", s.base)).await;
    post(&c, format!("{}/sessions/{id}/confirm/noop", s.base)).await;
    let pushed = read_events(&mut live, 4).await;
    let seqs: Vec<u64> = pushed.iter().map(|e| e.0).collect();
    assert_eq!(seqs, vec![1, 2, 3, 4]);
    let kinds: Vec<&str> = pushed.iter().map(|e| e.1.as_str()).collect();
    assert_eq!(kinds, vec!["confirmed", "stepped", "confirmed", "stepped"]);
    let steps: Vec<u64> = pushed.iter().map(|e| e.2["t"].as_u64().unwrap()).collect();
    assert!(steps.windows(2).all(|w| w[0] <= w[1]), "{steps:?}");

    // reconnect after seq 2: only 3 and 4 are replayed
    let mut resumed = c.get(format!("{}/sessions/{id}/events", s.base)).header("Last-Event-ID", "2").send().await.unwrap();
    let replay = read_events(&mut resumed, 2).await;
    assert_eq!(replay.iter().map(|e| e.0).collect::<Vec<_>>(), vec![3, 4]);

    let (status, _) = get(&c, format!("{}/sessions/s999/events", s.base)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_sessions_are_isolated() {
    let s = start().await;
    let c = Client::new();
    let mut ids = Vec::new();
    for _ in 0..4 {
        ids.push(create(&c, &s, 0).await.0);
    }
    let mut tasks = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        let (c, base, id) = (c.clone(), s.base.clone(), id.clone());
        tasks.push(tokio::spawn(async move {
            for _ in 0..=k {
                let r = c.post(format!("{base}/sessions/{id}/confirm/noop")).send().await.unwrap();
                assert_eq!(r.status(), StatusCode::OK);
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    for (k, id) in ids.iter().enumerate() {
        let (_, state) = get(&c, format!("{}/sessions/{id}/state", s.base)).await;
        assert_eq!(state["t"], k + 1);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn busy_port_is_a_named_error() {
    let held = bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
    let addr = held.local_addr().unwrap();
    let err = bind(addr).await.unwrap_err();
    assert!(matches!(err, ServeError::PortBusy { .. }), "{err}");
    assert_eq!(err.category(), "port_busy");
}
