use std::collections::HashSet;

use super::{DecodeMode, GenerateOptions, SeqModel, TrainingExample};
use crate::taxonomy::Taxonomy;
use crate::{Error, Result};

/// Mean per-image precision, recall and sequence NLL.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PrReport {
    pub precision: f64,
    pub recall: f64,
    pub nll: f64,
}

/// Precision and recall of one predicted attribute set.
///
/// An empty prediction scores `(0, 0)` against a non-empty ground truth;
/// two empty sets score `(1, 1)`.
pub fn set_precision_recall(predicted: &HashSet<usize>, truth: &HashSet<usize>) -> (f64, f64) {
    match (predicted.is_empty(), truth.is_empty()) {
        (true, true) => return (1.0, 1.0),
        (true, false) => return (0.0, 0.0),
        _ => {}
    }
    let hits = predicted.intersection(truth).count() as f64;
    let precision = hits / predicted.len() as f64;
    let recall = if truth.is_empty() {
        0.0
    } else {
        hits / truth.len() as f64
    };
    (precision, recall)
}

/// Greedy-decodes every item and compares the decoded attribute set (EOS
/// excluded) with the target's. `options.mode` and `options.guided` are
/// ignored: evaluation is always unguided greedy decoding.
pub fn evaluate_pr(
    model: &SeqModel,
    taxonomy: &Taxonomy,
    data: &[TrainingExample],
    options: &GenerateOptions,
) -> Result<PrReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let opts = GenerateOptions {
        mode: DecodeMode::Greedy,
        guided: None,
        ..options.clone()
    };
    let eos = taxonomy.eos();
    let (mut p_sum, mut r_sum, mut nll_sum) = (0.0, 0.0, 0.0);
    for ex in data {
        let decoded = model.generate(taxonomy, &ex.feature, &opts)?;
        let predicted: HashSet<usize> = decoded.attributes().iter().copied().collect();
        let truth: HashSet<usize> = ex.target.iter().copied().filter(|&s| s != eos).collect();
        let (p, r) = set_precision_recall(&predicted, &truth);
        p_sum += p;
        r_sum += r;
        nll_sum += model.sequence_nll(&ex.feature, &ex.target)?;
    }
    let n = data.len() as f64;
    Ok(PrReport {
        precision: p_sum / n,
        recall: r_sum / n,
        nll: nll_sum / n,
    })
}
