use std::sync::{Arc, Mutex};

use capsynth::adapter::{task_id, LabelBoard};
use capsynth::scheme::weibo;
use capsynth_service::{labeling_router, spawn_server, LabelingState};
use serde_json::{json, Value};

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn get(agent: &ureq::Agent, url: &str) -> (u16, Value) {
    let mut r = agent.get(url).call().unwrap();
    let status = r.status().as_u16();
    (status, serde_json::from_str(&r.body_mut().read_to_string().unwrap()).unwrap())
}

fn post(agent: &ureq::Agent, url: &str, body: Value) -> (u16, Value) {
    let bytes = serde_json::to_vec(&body).unwrap();
    let mut r = agent
        .post(url)
        .header("content-type", "application/json")
        .send(&bytes[..])
        .unwrap();
    let status = r.status().as_u16();
    (status, serde_json::from_str(&r.body_mut().read_to_string().unwrap()).unwrap())
}

#[test]
fn labeling_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    std::fs::write(&img, b"\x89PNG fake").unwrap();
    let rules = weibo().label_rules();
    let board = Arc::new(Mutex::new(LabelBoard::new(rules)));
    board.lock().unwrap().queue(
        1,
        &[
            ("a".into(), img.to_string_lossy().into_owned()),
            ("b".into(), "/nope.png".into()),
        ],
    );
    let snapshot = dir.path().join("board.json");
    let state = LabelingState {
        board: board.clone(),
        snapshot: Some(snapshot.clone()),
    };
    let server = spawn_server(labeling_router(state), "127.0.0.1:0".parse().unwrap()).unwrap();
    let base = server.url();
    let a = agent();

    let (s, v) = get(&a, &format!("{base}/v1/health"));
    assert_eq!((s, v["status"].as_str()), (200, Some("ok")));

    let (_, v) = get(&a, &format!("{base}/v1/labeling/rules"));
    assert!(v["rules"]["excluded_chars"].as_str().unwrap().contains('0'));

    let (_, v) = get(&a, &format!("{base}/v1/labeling/batch?round=1&limit=10&assignee=ann"));
    let tasks = v["tasks"].as_array().unwrap();
    assert_eq!(tasks.len(), 2);
    assert_eq!(tasks[0]["status"], "assigned");
    let url = tasks[0]["image_url"].as_str().unwrap();
    let mut r = a.get(format!("{base}{url}")).call().unwrap();
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(r.body_mut().read_to_vec().unwrap(), b"\x89PNG fake");
    let r = a.get(format!("{base}/v1/labeling/tasks/r1-b/image")).call().unwrap();
    assert_eq!(r.status().as_u16(), 404);

    let id = task_id(1, "a");
    let submit = |label: &str| {
        post(
            &a,
            &format!("{base}/v1/labeling/submit"),
            json!({"protocol_version": 1, "task_id": id, "label": label, "submitter": "ann"}),
        )
    };
    let (s, v) = submit("ab0c");
    assert_eq!(s, 200);
    assert_eq!(v["outcome"], "rejected");
    assert!(v["reason"].as_str().unwrap().contains('0'));
    let (_, v) = submit("abcd");
    assert_eq!(v["outcome"], "labeled");
    let (_, v) = submit("abcd");
    assert_eq!(v["outcome"], "unchanged");
    let (s, _) = submit("abce");
    assert_eq!(s, 409);
    let (s, _) = post(
        &a,
        &format!("{base}/v1/labeling/submit"),
        json!({"protocol_version": 1, "task_id": "r1-zzz", "label": "ABCD"}),
    );
    assert_eq!(s, 404);
    let (s, _) = post(
        &a,
        &format!("{base}/v1/labeling/submit"),
        json!({"protocol_version": 3, "task_id": id, "label": "ABCD"}),
    );
    assert_eq!(s, 400);

    let (_, v) = get(&a, &format!("{base}/v1/labeling/progress?round=1"));
    assert_eq!((v["total"].as_u64(), v["labeled"].as_u64(), v["rejections"].as_u64()), (Some(2), Some(1), Some(1)));

    assert_eq!(board.lock().unwrap().labels_for_round(1)["a"], "abcd");
    assert_eq!(LabelBoard::load(&snapshot).unwrap(), *board.lock().unwrap());
    server.shutdown().unwrap();
}
