//! Decode attributes for one image with and without a guided category.

use guided_search::attrseq::{train, DecodeMode, GenerateOptions, ModelDims, SeqModel, TrainConfig};
use guided_search::synth::{self, CatalogConfig};
use guided_search::taxonomy::Taxonomy;

fn main() -> guided_search::Result<()> {
    let t = Taxonomy::example();
    let items = synth::catalog(&t, &CatalogConfig { items: 40, noise: 0.05, ..CatalogConfig::default() });
    let data: Vec<_> = items.iter().map(|i| i.training_example(&t)).collect::<Result<_, _>>()?;
    let dims = ModelDims { hidden_dim: 32, embed_dim: 16, ..ModelDims::with_vocab(t.vocab_size()) };
    let config = TrainConfig { max_epochs: 40, batch_size: 4, ..TrainConfig::default() };
    let model = train(SeqModel::random(dims, 4)?, &data, &[], &config)?.model;

    let item = &items[0];
    let feature = item.feature.to_f64();
    println!("truth: {} {}", item.category, item.attributes.join(" "));

    let show = |label: &str, options: GenerateOptions| -> guided_search::Result<()> {
        let seq = model.generate(&t, &feature, &options)?;
        let probs: Vec<String> = seq.probabilities.iter().map(|p| format!("{p:.2}")).collect();
        println!("{label:<22} {}  ({})", seq.names(&t).join(" "), probs.join(" "));
        Ok(())
    };
    show("free", GenerateOptions::default())?;
    show("constrained", GenerateOptions::default().constrained())?;
    for guide in ["blouse", "pants", "bag"] {
        show(&format!("guided {guide}"), GenerateOptions::default().guided(guide).constrained())?;
    }
    for seed in 0..3 {
        let options = GenerateOptions {
            mode: DecodeMode::Sample { seed, temperature: 1.0 },
            ..GenerateOptions::default().constrained()
        };
        show(&format!("sampled seed {seed}"), options)?;
    }
    Ok(())
}
