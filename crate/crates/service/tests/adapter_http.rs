use std::net::SocketAddr;
use std::sync::Arc;

use capsynth::adapter::{
    codes, encode_predict_request, Adapter, AdapterError, Capability, FinetuneRequest, Gateway, HttpAdapter,
    HttpAdapterOptions, PredictItem, PredictRequest, StubAdapter, StubConfig, SynthesizeRequest, TrainRequest,
    BASE_MODEL_ID, ENVELOPE_CONTENT_TYPE,
};
use capsynth::ctc::greedy_decode;
use capsynth::dataset::{read_manifest, write_dataset, DatasetManifest, ManifestHeader, NewSample, Provenance, Split};
use capsynth_service::{adapter_router, spawn_server, ServerHandle};

fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn dataset(root: &std::path::Path, n: usize) -> DatasetManifest {
    let samples = (0..n)
        .map(|i| NewSample {
            sample_id: format!("{i:04}"),
            png: format!("png-{i}").into_bytes(),
            label: Some(["AB12", "S5XY", "QQ"][i % 3].to_string()),
            seed: None,
            split: Split::Train,
        })
        .collect();
    write_dataset(samples, ManifestHeader::new("d", "scheme", Provenance::Imitation), root).unwrap()
}

fn serve(cfg: StubConfig) -> (Arc<StubAdapter>, ServerHandle, HttpAdapter) {
    let stub = Arc::new(StubAdapter::new(cfg));
    let server = spawn_server(adapter_router(stub.clone()), local()).unwrap();
    let client = HttpAdapter::new(&server.url(), HttpAdapterOptions::default());
    (stub, server, client)
}

#[test]
fn health_reports_protocol_and_capabilities() {
    let (_, _server, client) = serve(StubConfig::default());
    let d = client.health().unwrap();
    assert_eq!(d.protocol_version, 1);
    assert_eq!(d.capabilities, Capability::ALL.to_vec());
    assert!(Gateway::connect(Arc::new(client)).is_ok());
}

#[test]
fn predict_over_http_is_greedy_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 30);
    let (stub, _server, client) = serve(StubConfig {
        confusions: vec![('S', '5')],
        max_batch: 7,
        ..StubConfig::default()
    });
    stub.register_manifest(&m);
    let items: Vec<PredictItem> = m
        .entries
        .iter()
        .map(|e| PredictItem {
            sample_id: e.sample_id.clone(),
            png: m.read_png(e).unwrap(),
        })
        .collect();
    let gateway = Gateway::connect(Arc::new(client)).unwrap();
    let remote = gateway.predict(BASE_MODEL_ID, &items, true).unwrap();
    let local = Gateway::connect(stub.clone()).unwrap().predict(BASE_MODEL_ID, &items, false).unwrap();
    assert_eq!(remote.len(), 30);
    for (r, l) in remote.iter().zip(&local) {
        assert_eq!(r.sample_id, l.sample_id);
        assert_eq!(r.text, l.text);
        assert_eq!(greedy_decode(r.logits.as_ref().unwrap()).label, r.text);
    }
}

#[test]
fn jobs_and_errors_cross_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 10);
    let path = m.manifest_path().to_string_lossy().into_owned();
    let (_, _server, client) = serve(StubConfig::default());
    let trained = client.train(&TrainRequest::new(path.clone())).unwrap();
    let tuned = client.finetune(&FinetuneRequest::new(trained.model_id.clone(), path.clone())).unwrap();
    assert!(tuned.trainable_params < trained.trainable_params);

    let err = client.train(&TrainRequest::new("/missing/manifest.jsonl")).unwrap_err();
    match err {
        AdapterError::Remote { code, message } => {
            assert_eq!(code, codes::MANIFEST_UNREADABLE);
            assert!(message.contains("/missing/manifest.jsonl"));
        }
        other => panic!("{other:?}"),
    }
    let err = client.finetune(&FinetuneRequest::new("nope", path.clone())).unwrap_err();
    assert!(matches!(err, AdapterError::Remote { ref code, .. } if code == codes::UNKNOWN_MODEL));
    let err = client
        .synthesize(&SynthesizeRequest::new(path, dir.path().to_string_lossy(), "syn"))
        .unwrap_err();
    assert!(matches!(err, AdapterError::Remote { ref code, .. } if code == codes::UNTRAINED_GENERATOR));
}

#[test]
fn identity_synthesis_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 5);
    let (_, _server, client) = serve(StubConfig {
        identity_generator: true,
        ..StubConfig::default()
    });
    let s = client
        .synthesize(&SynthesizeRequest::new(
            m.manifest_path().to_string_lossy(),
            dir.path().to_string_lossy(),
            "syn",
        ))
        .unwrap();
    let syn = read_manifest(std::path::Path::new(&s.manifest)).unwrap();
    assert_eq!(syn.header.provenance, Provenance::Synthetic);
    for (a, b) in m.entries.iter().zip(&syn.entries) {
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.label, b.label);
    }
}

#[test]
fn raw_protocol_errors() {
    let (stub, server, _) = serve(StubConfig {
        max_batch: 2,
        ..StubConfig::default()
    });
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    for png in [b"a".to_vec(), b"b".to_vec(), b"c".to_vec()] {
        stub.register(&png, "AB");
    }
    let req = PredictRequest {
        model_id: BASE_MODEL_ID.into(),
        return_logits: false,
        items: ["a", "b", "c"]
            .iter()
            .map(|s| PredictItem {
                sample_id: s.to_string(),
                png: s.as_bytes().to_vec(),
            })
            .collect(),
    };
    let body = encode_predict_request(&req);
    let mut resp = agent
        .post(format!("{}/v1/predict", server.url()))
        .header("content-type", ENVELOPE_CONTENT_TYPE)
        .send(&body[..])
        .unwrap();
    assert_eq!(resp.status().as_u16(), 413);
    let text = resp.body_mut().read_to_string().unwrap();
    assert!(text.contains(codes::BATCH_TOO_LARGE), "{text}");

    let mut resp = agent
        .post(format!("{}/v1/train", server.url()))
        .header("content-type", "application/json")
        .send(&br#"{"protocol_version":2,"manifest":"x"}"#[..])
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    assert!(resp.body_mut().read_to_string().unwrap().contains("unsupported_version"));

    let resp = agent.get(format!("{}/v1/jobs/none", server.url())).call().unwrap();
    assert_eq!(resp.status().as_u16(), 404);
}

#[test]
fn unreachable_adapter_is_a_transport_error() {
    let port = std::net::TcpListener::bind(local()).unwrap().local_addr().unwrap().port();
    let client = HttpAdapter::new(&format!("http://127.0.0.1:{port}"), HttpAdapterOptions::default());
    assert!(matches!(Gateway::connect(Arc::new(client)), Err(AdapterError::Transport(_))));
}
