//! Deterministic synthetic catalogs.
//!
//! Each item gets a random category and one class from every applicable
//! attribute group. Its dense feature is the normalized sum of fixed
//! per-symbol Gaussian prototypes plus noise, so attributes are learnable
//! from features. Its image is a flat background with one colored
//! rectangle where the item is, and the detector fixture reports that
//! rectangle plus, for about half the items, a higher-scoring decoy box of
//! another category.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attrseq::{DatasetEntry, Split, TrainingExample};
use crate::pipeline::ManifestEntry;
use crate::roi::{detections_to_jsonl, BBox, Detection, GroundTruthBox};
use crate::taxonomy::Taxonomy;
use crate::visfeat::{save_ppm, DenseFeature};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogConfig {
    pub items: usize,
    pub feature_dim: usize,
    pub width: u32,
    pub height: u32,
    /// Standard deviation of per-coordinate feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            items: 50,
            feature_dim: 64,
            width: 48,
            height: 40,
            noise: 0.1,
            seed: 7,
        }
    }
}

const COLORS: [(&str, [u8; 3]); 7] = [
    ("red", [200, 30, 30]),
    ("green", [40, 160, 60]),
    ("blue", [30, 60, 190]),
    ("brown", [128, 64, 32]),
    ("black", [20, 20, 20]),
    ("white", [235, 235, 235]),
    ("yellow", [220, 200, 40]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub item_id: String,
    pub category: String,
    /// One class per applicable group, in group order.
    pub attributes: Vec<String>,
    pub color: String,
    pub meta_text: String,
    pub image: RgbImage,
    /// Where the item really is.
    pub bbox: BBox,
    pub feature: DenseFeature,
    /// What the stub detector reports for this image.
    pub detections: Vec<Detection>,
}

impl SynthItem {
    /// Category, attributes in vocabulary order, EOS.
    pub fn target(&self, taxonomy: &Taxonomy) -> Result<Vec<usize>> {
        taxonomy.canonical_sequence(&self.category, &self.attributes)
    }

    pub fn training_example(&self, taxonomy: &Taxonomy) -> Result<TrainingExample> {
        Ok(TrainingExample {
            feature: self.feature.to_f64(),
            target: self.target(taxonomy)?,
        })
    }
}

/// Fixed prototype per vocabulary symbol (EOS excluded), drawn from `seed`.
pub fn prototypes(taxonomy: &Taxonomy, feature_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..taxonomy.eos())
        .map(|_| {
            (0..feature_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect()
}

/// Three decimals, so fixture files round-trip exactly.
fn score(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn random_box<R: Rng>(rng: &mut R, width: u32, height: u32) -> BBox {
    let w = rng.random_range(width / 3..=width * 2 / 3).max(1);
    let h = rng.random_range(height / 3..=height * 2 / 3).max(1);
    let x = rng.random_range(0..=width - w);
    let y = rng.random_range(0..=height - h);
    BBox::new(x, y, w, h)
}

pub fn catalog(taxonomy: &Taxonomy, config: &CatalogConfig) -> Vec<SynthItem> {
    let protos = prototypes(taxonomy, config.feature_dim, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ncat = taxonomy.num_categories();
    let mut items = Vec::with_capacity(config.items);
    for i in 0..config.items {
        let cat = rng.random_range(0..ncat);
        let category = taxonomy.categories()[cat].clone();
        let mut symbols = vec![cat];
        let mut attributes = Vec::new();
        for (g, group) in taxonomy.groups().iter().enumerate() {
            if !group.applies_to(&category) {
                continue;
            }
            let range = taxonomy.group_symbols(g);
            let s = rng.random_range(range);
            symbols.push(s);
            attributes.push(taxonomy.symbols()[s].clone());
        }

        let norm = (symbols.len() as f64).sqrt();
        let feature = (0..config.feature_dim)
            .map(|d| {
                let signal: f64 = symbols.iter().map(|&s| protos[s][d]).sum::<f64>() / norm;
                let noise: f64 = StandardNormal.sample(&mut rng);
                (signal + config.noise * noise) as f32
            })
            .collect();

        let (color, rgb) = COLORS[rng.random_range(0..COLORS.len())];
        let shade = rng.random_range(150..=210u8);
        let mut image = RgbImage::from_pixel(config.width, config.height, Rgb([shade; 3]));
        let bbox = random_box(&mut rng, config.width, config.height);
        for y in bbox.y..bbox.y + bbox.h {
            for x in bbox.x..bbox.x + bbox.w {
                image.put_pixel(x, y, Rgb(rgb));
            }
        }

        let mut detections = vec![Detection::new(bbox, category.clone(), score(rng.random_range(0.6..0.9)))];
        if ncat > 1 && rng.random_bool(0.5) {
            let other = (cat + rng.random_range(1..ncat)) % ncat;
            detections.push(Detection::new(
                random_box(&mut rng, config.width, config.height),
                taxonomy.categories()[other].clone(),
                score(rng.random_range(0.9..1.0)),
            ));
        }

        items.push(SynthItem {
            item_id: format!("item-{i:04}"),
            meta_text: format!("{color} {category} no. {i}"),
            color: color.to_string(),
            category,
            attributes,
            image,
            bbox,
            feature: DenseFeature(feature),
            detections,
        });
    }
    items
}

/// Stub-detector fixture for a catalog, keyed by item id.
pub fn detection_map(items: &[SynthItem]) -> BTreeMap<String, Vec<Detection>> {
    items
        .iter()
        .map(|it| (it.item_id.clone(), it.detections.clone()))
        .collect()
}

pub fn ground_truth(items: &[SynthItem]) -> Vec<GroundTruthBox> {
    items
        .iter()
        .map(|it| GroundTruthBox {
            image_id: it.item_id.clone(),
            bbox: it.bbox,
            category: it.category.clone(),
        })
        .collect()
}

/// Paths written by [`write_catalog`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogFiles {
    pub manifest: PathBuf,
    pub detections: PathBuf,
    pub ground_truth: PathBuf,
    pub dataset: PathBuf,
}

/// Split of the `i`-th item: eight in ten train, then one validation and
/// one test.
pub fn split_of(i: usize) -> Split {
    match i % 10 {
        8 => Split::Validation,
        9 => Split::Test,
        _ => Split::Train,
    }
}

/// Writes images (PPM), features, a manifest with relative paths, the
/// detector fixture and ground-truth boxes under `dir`.
pub fn write_catalog(items: &[SynthItem], dir: impl AsRef<Path>) -> Result<CatalogFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("features"))?;
    let mut manifest = String::new();
    let mut dataset = String::new();
    for (i, it) in items.iter().enumerate() {
        let image_path = PathBuf::from("images").join(format!("{}.ppm", it.item_id));
        let feature_path = PathBuf::from("features").join(format!("{}.fpsf", it.item_id));
        save_ppm(&it.image, dir.join(&image_path))?;
        it.feature.save(dir.join(&feature_path))?;
        let entry = ManifestEntry {
            item_id: it.item_id.clone(),
            image_path,
            meta_text: it.meta_text.clone(),
            feature_path: Some(feature_path.clone()),
            category: None,
        };
        manifest.push_str(&serde_json::to_string(&entry)?);
        manifest.push('\n');
        let labelled = DatasetEntry {
            item_id: it.item_id.clone(),
            feature_path,
            category: it.category.clone(),
            attributes: it.attributes.clone(),
            split: split_of(i),
        };
        dataset.push_str(&serde_json::to_string(&labelled)?);
        dataset.push('\n');
    }
    let files = CatalogFiles {
        manifest: dir.join("manifest.jsonl"),
        detections: dir.join("detections.jsonl"),
        ground_truth: dir.join("ground_truth.jsonl"),
        dataset: dir.join("dataset.jsonl"),
    };
    std::fs::write(&files.manifest, manifest)?;
    std::fs::write(&files.dataset, dataset)?;
    std::fs::write(&files.detections, detections_to_jsonl(&detection_map(items)))?;
    let mut gt = String::new();
    for g in ground_truth(items) {
        let line = serde_json::json!({
            "image_id": g.image_id,
            "category": g.category,
            "x": g.bbox.x, "y": g.bbox.y, "w": g.bbox.w, "h": g.bbox.h,
        });
        gt.push_str(&line.to_string());
        gt.push('\n');
    }
    std::fs::write(&files.ground_truth, gt)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_deterministic() {
        let t = Taxonomy::example();
        let cfg = CatalogConfig { items: 8, ..CatalogConfig::default() };
        assert_eq!(catalog(&t, &cfg), catalog(&t, &cfg));
        let other = CatalogConfig { seed: 8, ..cfg.clone() };
        assert_ne!(catalog(&t, &cfg), catalog(&t, &other));
    }

    #[test]
    fn items_are_consistent_with_the_taxonomy() {
        let t = Taxonomy::example();
        for it in catalog(&t, &CatalogConfig::default()) {
            let target = it.target(&t).unwrap();
            assert_eq!(t.symbols()[target[0]], it.category);
            assert_eq!(*target.last().unwrap(), t.eos());
            assert!(it.bbox.fits_within(it.image.width(), it.image.height()));
            assert_eq!(it.detections[0].category, it.category);
            assert!(it.meta_text.contains(&it.category));
        }
    }

    #[test]
    fn written_catalog_reads_back() {
        let t = Taxonomy::example();
        let items = catalog(&t, &CatalogConfig { items: 3, ..CatalogConfig::default() });
        let dir = tempfile::tempdir().unwrap();
        let files = write_catalog(&items, dir.path()).unwrap();
        let entries = crate::pipeline::read_manifest(&files.manifest).unwrap();
        assert_eq!(entries.len(), 3);
        let f = DenseFeature::load(entries[1].feature_path.as_ref().unwrap()).unwrap();
        assert_eq!(f, items[1].feature);
        let dets = crate::roi::read_detections(&files.detections).unwrap();
        assert_eq!(dets, detection_map(&items));
        assert_eq!(crate::roi::read_ground_truth(&files.ground_truth).unwrap(), ground_truth(&items));
        let ds = crate::attrseq::read_dataset(&files.dataset).unwrap();
        let ex = ds[2].to_example(&t).unwrap();
        assert_eq!(ex, items[2].training_example(&t).unwrap());
        assert_eq!(ds[2].split, Split::Train);
    }
}
