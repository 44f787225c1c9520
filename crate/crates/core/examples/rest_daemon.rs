//! Serve a synthetic catalog over HTTP.
//!
//! `cargo run --example rest_daemon [addr]`, then for instance
//! `curl localhost:8080/health` or
//! `curl -d '{"option":2,"guided_category":"skirt","image_b64":"..."}' localhost:8080/search`.

use std::sync::Arc;

use guided_search::attrseq::{ModelDims, SeqModel};
use guided_search::index::InvertedIndex;
use guided_search::pipeline::{Engine, IngestItem, KeywordTable};
use guided_search::roi::StubDetector;
use guided_search::service::{router, AppState};
use guided_search::synth::{self, CatalogConfig};
use guided_search::taxonomy::Taxonomy;
use guided_search::visfeat::DistanceWeights;

#[tokio::main]
async fn main() -> guided_search::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let addr = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into());

    let t = Arc::new(Taxonomy::example());
    let items = synth::catalog(&t, &CatalogConfig::default());
    let model = SeqModel::random(ModelDims::with_vocab(t.vocab_size()), 0)?;
    let detector = Arc::new(StubDetector::new(synth::detection_map(&items)));
    let engine = Engine::new(t.clone(), model, detector, KeywordTable::example(&t)?)?;
    let mut index = InvertedIndex::new(t, engine.index_config())?;
    for it in &items {
        engine.ingest(
            &mut index,
            &IngestItem {
                item_id: &it.item_id,
                image: &it.image,
                meta_text: &it.meta_text,
                feature: Some(&it.feature),
                category: None,
            },
        )?;
    }

    let state = Arc::new(AppState::new(Arc::new(engine), index, 10, DistanceWeights::default()));
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!("serving {} items on http://{}", items.len(), listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
