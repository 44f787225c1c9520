//! Write a synthetic catalog plus a random checkpoint to a directory so the
//! command line can be tried on it.
//!
//! `cargo run --example synthetic_catalog -- /tmp/catalog [items]`

use std::path::PathBuf;

use guided_search::attrseq::{save_checkpoint, ModelDims, SeqModel};
use guided_search::synth::{self, CatalogConfig};
use guided_search::taxonomy::Taxonomy;

fn main() -> guided_search::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "catalog".into()));
    let items = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);

    let t = Taxonomy::example();
    let catalog = synth::catalog(&t, &CatalogConfig { items, ..CatalogConfig::default() });
    let files = synth::write_catalog(&catalog, &dir)?;
    let checkpoint = dir.join("model.fpsm");
    save_checkpoint(&SeqModel::random(ModelDims::with_vocab(t.vocab_size()), 0)?, &t, &checkpoint)?;

    let d = dir.display();
    println!("wrote {items} items to {d}");
    println!();
    println!("guided-search train-seq --manifest {} --checkpoint {d}/model.fpsm --epochs 50", files.dataset.display());
    println!("guided-search eval-seq --manifest {} --checkpoint {d}/model.fpsm", files.dataset.display());
    println!(
        "guided-search ingest --checkpoint {d}/model.fpsm --detector-fixture {} --manifest {} --index {d}/catalog.fpsi",
        files.detections.display(),
        files.manifest.display()
    );
    println!(
        "guided-search search --checkpoint {d}/model.fpsm --index {d}/catalog.fpsi --option 2 --guided skirt --image {d}/images/item-0000.ppm"
    );
    println!("guided-search eval-detector --pred {} --gt {}", files.detections.display(), files.ground_truth.display());
    Ok(())
}
