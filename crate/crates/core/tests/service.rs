use std::future::IntoFuture;
use std::io::{Read, Write};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine as _;
use guided_search::attrseq::{save_checkpoint, ModelDims, SeqModel};
use guided_search::index::InvertedIndex;
use guided_search::pipeline::{Engine, IngestItem, KeywordTable, QueryResponse};
use guided_search::roi::{BBox, StubDetector};
use guided_search::service::{load_state, router, AppState, ErrorBody, ItemView, ServiceConfig};
use guided_search::synth::{self, CatalogConfig, SynthItem};
use guided_search::taxonomy::Taxonomy;
use guided_search::visfeat::{encode_ppm, DistanceWeights};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture(n: usize) -> (Vec<SynthItem>, Arc<AppState>) {
    let t = Arc::new(Taxonomy::example());
    let items = synth::catalog(&t, &CatalogConfig { items: n, seed: 61, ..CatalogConfig::default() });
    let model = SeqModel::random(ModelDims::with_vocab(t.vocab_size()), 2).unwrap();
    let det = Arc::new(StubDetector::new(synth::detection_map(&items)));
    let engine = Engine::new(t.clone(), model, det, KeywordTable::example(&t).unwrap()).unwrap();
    let mut idx = InvertedIndex::new(t, engine.index_config()).unwrap();
    for it in &items {
        engine
            .ingest(
                &mut idx,
                &IngestItem {
                    item_id: &it.item_id,
                    image: &it.image,
                    meta_text: &it.meta_text,
                    feature: Some(&it.feature),
                    category: None,
                },
            )
            .unwrap();
    }
    let state = Arc::new(AppState::new(Arc::new(engine), idx, 10, DistanceWeights::default()));
    (items, state)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
    let body = if body.is_null() { Body::empty() } else { Body::from(body.to_string()) };
    let req = Request::builder().method(method).uri(uri).body(body).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn image_b64(it: &SynthItem) -> String {
    base64::engine::general_purpose::STANDARD.encode(encode_ppm(&it.image))
}

#[tokio::test]
async fn health_and_taxonomy() {
    let (_, state) = fixture(10);
    let app = router(state);
    let (s, v) = call(&app, "GET", "/health", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok", "items": 10}));
    let (s, v) = call(&app, "GET", "/taxonomy", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["categories"][4], "skirt");
    assert_eq!(v["symbols"].as_array().unwrap().last().unwrap(), "<EOS>");
}

#[tokio::test]
async fn item_lookup() {
    let (items, state) = fixture(10);
    let app = router(state);
    let (s, v) = call(&app, "GET", &format!("/items/{}", items[3].item_id), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    let view: ItemView = serde_json::from_value(v).unwrap();
    assert_eq!(view.category, items[3].category);
    assert_eq!(view.attributes[0], items[3].category);
    let (s, v) = call(&app, "GET", "/items/nope", Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
    let (s, _) = call(&app, "GET", "/nowhere", Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn option_one_returns_k_results() {
    let (items, state) = fixture(10);
    let app = router(state.clone());
    let cat = &items[0].category;
    let same = items.iter().filter(|i| &i.category == cat).count();
    let body = json!({"option": 1, "image_b64": image_b64(&items[0]), "k": 5});
    let (s, v) = call(&app, "POST", "/search", body).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let resp: QueryResponse = serde_json::from_value(v).unwrap();
    assert_eq!(resp.option, 1);
    // Candidates are restricted to the decoded category.
    assert_eq!(resp.results.len(), 5.min(items.iter().filter(|i| i.category == resp.category).count()));
    assert!(same >= 1);
    assert_eq!(resp.sequence[0], resp.category);
}

#[tokio::test]
async fn option_one_fills_k_on_a_single_category_fixture() {
    let (items, state) = fixture(10);
    let app = router(state);
    let guided = json!({"option": 2, "image_b64": image_b64(&items[0]), "guided_category": items[0].category, "k": 5});
    let (_, v) = call(&app, "POST", "/search", guided).await;
    let n = items.iter().filter(|i| i.category == items[0].category).count();
    assert_eq!(v["results"].as_array().unwrap().len(), n.min(5));
}

#[tokio::test]
async fn option_three_out_of_bounds_is_client_error() {
    let (items, state) = fixture(5);
    let app = router(state);
    let w = items[0].image.width();
    let body = json!({"option": 3, "image_b64": image_b64(&items[0]), "roi": {"x": w - 2, "y": 0, "w": 5, "h": 5}});
    let (s, v) = call(&app, "POST", "/search", body).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_value(v).unwrap();
    assert_eq!(err.error, "invalid_request");
    let body = json!({"option": 2, "image_b64": image_b64(&items[0]), "guided_category": "hat"});
    let (s, v) = call(&app, "POST", "/search", body).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "unknown_category");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_searches_agree() {
    let (items, state) = fixture(30);
    let app = router(state.clone());
    let before = state.index().digest();
    let body = json!({"option": 3, "image_b64": image_b64(&items[2]), "roi": items[2].bbox, "k": 7});
    let handles: Vec<_> = (0..100)
        .map(|_| {
            let app = app.clone();
            let body = body.clone();
            tokio::spawn(async move { call(&app, "POST", "/search", body).await })
        })
        .collect();
    let mut responses = Vec::new();
    for h in handles {
        let (s, v) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        responses.push(v);
    }
    assert!(responses.windows(2).all(|w| w[0] == w[1]));
    for uri in ["/health", "/taxonomy", "/items/item-0001"] {
        call(&app, "GET", uri, Value::Null).await;
    }
    assert_eq!(state.index().digest(), before);
}

#[tokio::test]
async fn reindex_swaps_the_index() {
    let (_, state) = fixture(10);
    let app = router(state.clone());
    let dir = tempfile::tempdir().unwrap();
    let more = synth::catalog(&Taxonomy::example(), &CatalogConfig { items: 25, seed: 5, ..CatalogConfig::default() });
    let files = synth::write_catalog(&more, dir.path()).unwrap();
    let held = state.index();
    let (s, v) = call(&app, "POST", "/admin/reindex", json!({"manifest_path": files.manifest})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["items"], 25);
    assert_eq!(held.len(), 10);
    let (_, v) = call(&app, "GET", "/health", Value::Null).await;
    assert_eq!(v["items"], 25);

    let (s, v) = call(&app, "POST", "/admin/reindex", json!({"manifest_path": "/no/such/file"})).await;
    assert!(s.is_server_error() || s.is_client_error());
    assert!(v["error"].is_string());
    assert_eq!(state.index().len(), 25);
    let (s, _) = call(&app, "POST", "/admin/reindex", json!({"manifest": 1})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[test]
fn serves_over_tcp_from_files() {
    let (items, state) = fixture(12);
    let dir = tempfile::tempdir().unwrap();
    let index_path = dir.path().join("index.fpsi");
    let ckpt = dir.path().join("model.fpsm");
    state.index().save(&index_path).unwrap();
    save_checkpoint(state.engine().model(), state.engine().taxonomy(), &ckpt).unwrap();
    let det = dir.path().join("det.jsonl");
    std::fs::write(&det, guided_search::roi::detections_to_jsonl(&synth::detection_map(&items))).unwrap();

    let config = ServiceConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        taxonomy: None,
        index: index_path.clone(),
        checkpoint: ckpt,
        detector_fixture: Some(det),
        keywords: None,
        default_k: 4,
        default_weights: DistanceWeights::default(),
    };
    let loaded = Arc::new(load_state(&config).unwrap());
    assert_eq!(*loaded.index(), *state.index());

    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let server = tokio::spawn(axum::serve(listener, router(loaded)).into_future());
        let buf = tokio::task::spawn_blocking(move || {
            let mut stream = std::net::TcpStream::connect(addr).unwrap();
            stream
                .write_all(b"GET /health HTTP/1.1\r\nhost: x\r\nconnection: close\r\n\r\n")
                .unwrap();
            let mut buf = String::new();
            stream.read_to_string(&mut buf).unwrap();
            buf
        })
        .await
        .unwrap();
        assert!(buf.starts_with("HTTP/1.1 200"));
        assert!(buf.contains(r#""items":12"#));
        server.abort();
    });

    // Corrupt snapshot: startup fails with a diagnostic.
    let mut bytes = std::fs::read(&index_path).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    std::fs::write(&index_path, bytes).unwrap();
    let err = load_state(&config).err().unwrap();
    assert!(err.to_string().contains("snapshot"));
}

#[test]
fn default_k_is_used() {
    let (items, state) = fixture(20);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let app = router(state);
    let roi = BBox::full(&items[0].image);
    let (s, v) = rt.block_on(call(
        &app,
        "POST",
        "/search",
        json!({"option": 3, "roi": roi, "image_b64": image_b64(&items[0]), "guided_category": items[0].category}),
    ));
    assert_eq!(s, StatusCode::OK);
    let n = items.iter().filter(|i| i.category == items[0].category).count();
    assert_eq!(v["results"].as_array().unwrap().len(), n.min(10));
}
