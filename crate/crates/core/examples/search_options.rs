//! End to end: ingest a synthetic catalog, then query it with the automatic,
//! guided and region options.

use std::sync::Arc;

use guided_search::attrseq::{train, ModelDims, SeqModel, TrainConfig};
use guided_search::pipeline::{Engine, KeywordTable, QueryRequest, QueryResponse};
use guided_search::roi::{BBox, StubDetector};
use guided_search::synth::{self, CatalogConfig};
use guided_search::taxonomy::Taxonomy;
use guided_search::visfeat::encode_ppm;

fn show(label: &str, r: &QueryResponse) {
    println!("{label}: category {}  sequence {}", r.category, r.sequence.join(" "));
    if let Some(roi) = r.roi {
        println!("  roi {},{},{},{}", roi.x, roi.y, roi.w, roi.h);
    }
    for hit in &r.results {
        println!("  {:<10} {:.3}  {}  {}", hit.item_id, hit.distance, hit.match_count, hit.attributes.join(","));
    }
}

fn main() -> guided_search::Result<()> {
    let t = Arc::new(Taxonomy::example());
    let items = synth::catalog(&t, &CatalogConfig { items: 80, noise: 0.05, ..CatalogConfig::default() });
    let data: Vec<_> = items.iter().map(|i| i.training_example(&t)).collect::<Result<_, _>>()?;
    let dims = ModelDims { hidden_dim: 32, embed_dim: 16, ..ModelDims::with_vocab(t.vocab_size()) };
    let config = TrainConfig { max_epochs: 30, batch_size: 4, ..TrainConfig::default() };
    let model = train(SeqModel::random(dims, 8)?, &data, &[], &config)?.model;

    let detector = Arc::new(StubDetector::new(synth::detection_map(&items)));
    let engine = Engine::new(t.clone(), model, detector, KeywordTable::example(&t)?)?;
    let dir = tempfile::tempdir()?;
    let files = synth::write_catalog(&items, dir.path())?;
    let (index, report) = engine.build_index(&guided_search::pipeline::read_manifest(&files.manifest)?)?;
    println!("indexed {}, rejected {}", report.ingested.len(), report.rejected.len());

    let probe = &items[3];
    println!("probe {} is a {} ({})", probe.item_id, probe.category, probe.attributes.join(" "));
    let base = |r: QueryRequest| r.with_image(probe.image.clone()).with_feature(probe.feature.clone()).with_k(5);

    show("option 1", &engine.query(&index, &base(QueryRequest::auto()))?);
    let other = t.categories().iter().find(|c| **c != probe.category).unwrap();
    show("option 2", &engine.query(&index, &base(QueryRequest::guided(other.clone())))?);
    show("option 3", &engine.query(&index, &base(QueryRequest::region(probe.bbox)))?);

    let outside = BBox::new(probe.image.width() - 1, 0, 10, 10);
    match engine.query(&index, &base(QueryRequest::region(outside))) {
        Ok(_) => println!("unexpected success"),
        Err(e) => println!("region outside the image: {e}"),
    }
    println!("query image as PPM: {} bytes", encode_ppm(&probe.image).len());
    Ok(())
}
