//! Train the attribute-sequence model on a synthetic catalog, report
//! precision/recall and NLL per split, and round-trip a checkpoint.
//!
//! `cargo run --release --example train_attributes [epochs]`

use guided_search::attrseq::{
    evaluate_pr, load_checkpoint, mean_nll, save_checkpoint, train, GenerateOptions, ModelDims, SeqModel,
    Split, TrainConfig, TrainingExample,
};
use guided_search::synth::{self, split_of, CatalogConfig};
use guided_search::taxonomy::Taxonomy;

fn main() -> guided_search::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let t = Taxonomy::example();
    let items = synth::catalog(&t, &CatalogConfig { items: 120, ..CatalogConfig::default() });

    let mut splits: [Vec<TrainingExample>; 3] = Default::default();
    for (i, it) in items.iter().enumerate() {
        let slot = Split::ALL.iter().position(|s| *s == split_of(i)).unwrap();
        splits[slot].push(it.training_example(&t)?);
    }

    let dims = ModelDims { hidden_dim: 32, embed_dim: 16, ..ModelDims::with_vocab(t.vocab_size()) };
    let config = TrainConfig { max_epochs: epochs, batch_size: 4, patience: 10, seed: 1, ..TrainConfig::default() };
    let outcome = train(SeqModel::random(dims, 1)?, &splits[0], &splits[1], &config)?;
    for e in outcome.history.iter().step_by(10) {
        println!("epoch {:>3}  train {:.3}  validation {:.3}", e.epoch, e.train_nll, e.validation_nll);
    }
    println!("best epoch {} of {}", outcome.best_epoch, outcome.history.len());

    println!("{:<12}{:>7}{:>11}{:>9}{:>9}", "split", "items", "precision", "recall", "NLL");
    let options = GenerateOptions::default();
    for (split, data) in Split::ALL.iter().zip(&splits) {
        let pr = evaluate_pr(&outcome.model, &t, data, &options)?;
        let nll = mean_nll(&outcome.model, data)?;
        println!("{:<12}{:>7}{:>11.3}{:>9.3}{:>9.3}", split.name(), data.len(), pr.precision, pr.recall, nll);
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.fpsm");
    save_checkpoint(&outcome.model, &t, &path)?;
    let reloaded = load_checkpoint(&t, &path)?;
    println!("checkpoint {} bytes, reload identical: {}", std::fs::metadata(&path)?.len(), reloaded == outcome.model);
    Ok(())
}
