use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{softmax, SeqModel};
use crate::taxonomy::Taxonomy;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { seed: u64, temperature: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub mode: DecodeMode,
    /// Category forced as the first symbol instead of being decoded.
    pub guided: Option<String>,
    /// Maximum sequence length, EOS included. The last slot is always EOS.
    pub t_max: usize,
    /// Restrict each step to symbols the taxonomy grammar admits (category
    /// first, one class per applicable group). Off by default.
    pub constrain: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            mode: DecodeMode::Greedy,
            guided: None,
            t_max: 12,
            constrain: false,
        }
    }
}

impl GenerateOptions {
    pub fn guided(mut self, category: impl Into<String>) -> Self {
        self.guided = Some(category.into());
        self
    }

    pub fn constrained(mut self) -> Self {
        self.constrain = true;
        self
    }
}

/// A decoded attribute sequence, terminated by EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSequence {
    pub symbols: Vec<usize>,
    /// Probability each symbol had after masking, at the step it was
    /// emitted.
    pub probabilities: Vec<f64>,
}

impl AttributeSequence {
    /// Symbols without the trailing EOS.
    pub fn attributes(&self) -> &[usize] {
        &self.symbols[..self.symbols.len().saturating_sub(1)]
    }

    pub fn names<'t>(&self, taxonomy: &'t Taxonomy) -> Vec<&'t str> {
        self.symbols
            .iter()
            .map(|&s| taxonomy.symbol(s).expect("decoded symbols are in vocabulary"))
            .collect()
    }
}

impl SeqModel {
    /// Decodes an attribute sequence for an image feature.
    ///
    /// Symbols already emitted are masked out of later steps. With a guided
    /// category the first step emits it unconditionally and feeds it back as
    /// the next input.
    pub fn generate(
        &self,
        taxonomy: &Taxonomy,
        feature: &[f64],
        options: &GenerateOptions,
    ) -> Result<AttributeSequence> {
        if taxonomy.vocab_size() != self.dims.vocab_size {
            return Err(Error::dims(
                "taxonomy vocabulary",
                self.dims.vocab_size,
                taxonomy.vocab_size(),
            ));
        }
        if options.t_max < 2 {
            return Err(Error::InvalidInput("t_max must be at least 2".into()));
        }
        let guided = options
            .guided
            .as_deref()
            .map(|g| taxonomy.category_index(g))
            .transpose()?;
        let mut rng = match options.mode {
            DecodeMode::Sample { seed, temperature } => {
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "temperature must be positive, got {temperature}"
                    )));
                }
                Some(ChaCha8Rng::seed_from_u64(seed))
            }
            DecodeMode::Greedy => None,
        };

        let eos = self.eos();
        let mut hidden = self.encode(feature)?;
        let mut cell = Array1::zeros(self.dims.hidden_dim);
        let mut input = eos;
        let mut symbols = Vec::new();
        let mut probabilities = Vec::new();

        for t in 0..options.t_max {
            let out = self.step(input, hidden.view(), cell.view())?;
            hidden = out.hidden;
            cell = out.cell;
            let logits = match options.mode {
                DecodeMode::Sample { temperature, .. } => out.logits / temperature,
                DecodeMode::Greedy => out.logits,
            };
            let mut probs = softmax(logits.view());

            let mut allowed = if options.constrain {
                taxonomy.admissible_next(&symbols)
            } else {
                vec![true; self.dims.vocab_size]
            };
            for &s in &symbols {
                allowed[s] = false;
            }
            mask_and_normalize(&mut probs, &allowed);

            let chosen = if let (0, Some(g)) = (t, guided) {
                g
            } else if t + 1 == options.t_max {
                eos
            } else {
                match rng.as_mut() {
                    None => argmax(&probs),
                    Some(rng) => sample(&probs, rng),
                }
            };
            symbols.push(chosen);
            probabilities.push(probs[chosen]);
            if chosen == eos {
                break;
            }
            input = chosen;
        }

        Ok(AttributeSequence {
            symbols,
            probabilities,
        })
    }
}

/// Zeroes disallowed entries and renormalizes. If every allowed entry
/// underflowed to zero the allowed set becomes uniform.
fn mask_and_normalize(probs: &mut Array1<f64>, allowed: &[bool]) {
    for (p, &ok) in probs.iter_mut().zip(allowed) {
        if !ok {
            *p = 0.0;
        }
    }
    let sum = probs.sum();
    if sum > 0.0 {
        *probs /= sum;
    } else {
        let n = allowed.iter().filter(|&&a| a).count().max(1) as f64;
        for (p, &ok) in probs.iter_mut().zip(allowed) {
            *p = if ok { 1.0 / n } else { 0.0 };
        }
    }
}

fn argmax(probs: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn sample<R: Rng>(probs: &Array1<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_nonzero
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrseq::ModelDims;
    use crate::taxonomy::Taxonomy;

    fn tiny_taxonomy() -> Taxonomy {
        Taxonomy::from_json(
            r#"{"categories": ["t-shirt", "pants"],
                "groups": [{"name": "gender", "classes": ["male", "female"]}]}"#,
        )
        .unwrap()
    }

    fn model_for(t: &Taxonomy, seed: u64) -> SeqModel {
        SeqModel::random(
            ModelDims {
                feature_dim: 3,
                embed_dim: 4,
                hidden_dim: 6,
                vocab_size: t.vocab_size(),
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn guided_category_comes_first() {
        let t = tiny_taxonomy();
        let m = model_for(&t, 3);
        let seq = m
            .generate(&t, &[0.2, 0.1, -0.4], &GenerateOptions::default().guided("pants"))
            .unwrap();
        assert_eq!(seq.symbols[0], t.category_index("pants").unwrap());
        assert_eq!(*seq.symbols.last().unwrap(), t.eos());
        assert_eq!(seq.symbols.len(), seq.probabilities.len());
    }

    #[test]
    fn guided_non_category_is_an_error() {
        let t = tiny_taxonomy();
        let m = model_for(&t, 3);
        let err = m
            .generate(&t, &[0.0; 3], &GenerateOptions::default().guided("male"))
            .unwrap_err();
        assert!(matches!(err, Error::UnknownCategory(_)));
    }

    #[test]
    fn t_max_forces_termination() {
        let t = tiny_taxonomy();
        let m = SeqModel::zeros(ModelDims {
            feature_dim: 3,
            embed_dim: 2,
            hidden_dim: 2,
            vocab_size: t.vocab_size(),
        })
        .unwrap();
        let opts = GenerateOptions {
            t_max: 2,
            ..GenerateOptions::default()
        };
        // Uniform distribution, argmax picks index 0 first, then EOS is forced.
        let seq = m.generate(&t, &[0.0; 3], &opts).unwrap();
        assert_eq!(seq.symbols, vec![0, t.eos()]);
    }

    #[test]
    fn masking_prevents_repeats() {
        let t = tiny_taxonomy();
        for seed in 0..50 {
            let m = model_for(&t, seed);
            let seq = m
                .generate(
                    &t,
                    &[1.0, -1.0, 0.5],
                    &GenerateOptions {
                        mode: DecodeMode::Sample {
                            seed,
                            temperature: 1.0,
                        },
                        ..GenerateOptions::default()
                    },
                )
                .unwrap();
            let mut seen = std::collections::HashSet::new();
            assert!(seq.symbols.iter().all(|s| seen.insert(*s)));
            assert_eq!(seq.symbols.iter().filter(|&&s| s == t.eos()).count(), 1);
        }
    }

    #[test]
    fn constrained_decoding_starts_with_category() {
        let t = tiny_taxonomy();
        for seed in 0..20 {
            let m = model_for(&t, seed);
            let seq = m
                .generate(&t, &[0.3, 0.3, 0.3], &GenerateOptions::default().constrained())
                .unwrap();
            assert!(t.is_category(seq.symbols[0]));
            for &s in seq.attributes().iter().skip(1) {
                assert!(t.is_applicable(seq.symbols[0], s));
            }
        }
    }

    #[test]
    fn bad_temperature_is_rejected() {
        let t = tiny_taxonomy();
        let m = model_for(&t, 1);
        let opts = GenerateOptions {
            mode: DecodeMode::Sample {
                seed: 0,
                temperature: 0.0,
            },
            ..GenerateOptions::default()
        };
        assert!(m.generate(&t, &[0.0; 3], &opts).is_err());
    }
}
