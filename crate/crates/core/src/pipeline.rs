//! Offline ingestion and online query composition.
//!
//! Offline, an item's category comes from its meta text (or an explicit
//! override), the attribute model decodes a sequence guided by that
//! category, detector boxes are filtered to the category to pick an ROI,
//! and the item is indexed under its attributes with a binary appearance
//! code and an ROI color histogram.
//!
//! Online, three query options differ only in where the category and ROI
//! come from:
//!
//! | option | category                          | ROI                          |
//! |--------|-----------------------------------|------------------------------|
//! | 1      | first symbol of unguided decoding | detector, filtered           |
//! | 2      | supplied by the user              | detector, filtered           |
//! | 3      | supplied, or as in option 1       | supplied by the user         |
//!
//! Every option searches with the category as a hard candidate filter.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attrseq::{AttributeSequence, GenerateOptions, SeqModel};
use crate::index::{IndexConfig, InvertedIndex, ItemRecord, SearchQuery};
use crate::roi::{guided_filter, select_roi, BBox, Detector};
use crate::taxonomy::Taxonomy;
use crate::visfeat::{binarize, color_histogram, load_image, DenseFeature, DistanceWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub keyword: String,
    pub category: String,
}

/// Ordered keyword → category table for meta-text category extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordTable {
    entries: Vec<(String, usize)>,
}

impl KeywordTable {
    /// Lowercases keywords; rejects empty, duplicate or unknown-category
    /// entries.
    pub fn new(entries: Vec<KeywordEntry>, taxonomy: &Taxonomy) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            let keyword = e.keyword.trim().to_lowercase();
            if keyword.is_empty() {
                return Err(Error::InvalidInput("empty keyword".into()));
            }
            if !seen.insert(keyword.clone()) {
                return Err(Error::InvalidInput(format!("duplicate keyword `{keyword}`")));
            }
            out.push((keyword, taxonomy.category_index(&e.category)?));
        }
        Ok(KeywordTable { entries: out })
    }

    pub fn from_json(text: &str, taxonomy: &Taxonomy) -> Result<Self> {
        Self::new(serde_json::from_str(text)?, taxonomy)
    }

    pub fn from_path(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, taxonomy)
    }

    /// The bundled table matching [`Taxonomy::example`].
    pub fn example(taxonomy: &Taxonomy) -> Result<Self> {
        Self::from_json(include_str!("../data/keywords.json"), taxonomy)
    }

    /// Identity table: every category name is its own keyword.
    pub fn from_category_names(taxonomy: &Taxonomy) -> Self {
        KeywordTable {
            entries: taxonomy
                .categories()
                .iter()
                .enumerate()
                .map(|(i, c)| (c.to_lowercase(), i))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(String, usize)] {
        &self.entries
    }
}

/// Case-insensitive substring match. The longest matching keyword wins;
/// equal lengths go to the earlier entry.
pub fn extract_category(meta_text: &str, table: &KeywordTable) -> Option<usize> {
    let text = meta_text.to_lowercase();
    let mut best: Option<&(String, usize)> = None;
    for entry in &table.entries {
        if text.contains(entry.0.as_str()) && best.is_none_or(|b| entry.0.len() > b.0.len()) {
            best = Some(entry);
        }
    }
    best.map(|e| e.1)
}

/// Seed of the fallback projection matrix. Changing it changes every
/// fallback feature.
pub const FALLBACK_SEED: u64 = 0x5eed_f00d;
const FALLBACK_GRID: u32 = 4;

/// Dense features for images that come without one: the image is cut into
/// a 4×4 grid, each cell's mean RGB (centered on mid-gray) forms a
/// 48-vector, and a fixed Gaussian matrix projects it to `dim` values.
#[derive(Debug, Clone)]
pub struct FallbackFeaturizer {
    dim: usize,
    projection: Vec<f32>,
}

impl FallbackFeaturizer {
    const INPUTS: usize = (FALLBACK_GRID * FALLBACK_GRID * 3) as usize;

    pub fn new(dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(FALLBACK_SEED);
        let projection = (0..dim * Self::INPUTS)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        FallbackFeaturizer { dim, projection }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn pooled(image: &RgbImage) -> [f32; Self::INPUTS] {
        let (w, h) = image.dimensions();
        let mut out = [0f32; Self::INPUTS];
        for gy in 0..FALLBACK_GRID {
            for gx in 0..FALLBACK_GRID {
                // Cells of images smaller than the grid collapse onto the
                // nearest pixel.
                let x0 = gx * w / FALLBACK_GRID;
                let y0 = gy * h / FALLBACK_GRID;
                let x1 = ((gx + 1) * w / FALLBACK_GRID).max(x0 + 1).min(w);
                let y1 = ((gy + 1) * h / FALLBACK_GRID).max(y0 + 1).min(h);
                let mut sum = [0f64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = image.get_pixel(x, y).0;
                        for c in 0..3 {
                            sum[c] += p[c] as f64;
                        }
                    }
                }
                let n = ((x1 - x0) * (y1 - y0)) as f64;
                let cell = ((gy * FALLBACK_GRID + gx) * 3) as usize;
                for c in 0..3 {
                    out[cell + c] = (sum[c] / n / 255.0 - 0.5) as f32;
                }
            }
        }
        out
    }

    pub fn compute(&self, image: &RgbImage) -> Result<DenseFeature> {
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::InvalidInput("empty image".into()));
        }
        let pooled = Self::pooled(image);
        let values = self
            .projection
            .chunks_exact(Self::INPUTS)
            .map(|row| row.iter().zip(&pooled).map(|(a, b)| a * b).sum())
            .collect();
        Ok(DenseFeature(values))
    }
}

/// Models and tables shared by ingestion and querying.
pub struct Engine {
    taxonomy: Arc<Taxonomy>,
    model: SeqModel,
    detector: Arc<dyn Detector>,
    keywords: KeywordTable,
    fallback: FallbackFeaturizer,
    t_max: usize,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("model", &self.model.dims())
            .field("keywords", &self.keywords.entries.len())
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// The model's input width is the dense feature width.
    pub fn new(
        taxonomy: Arc<Taxonomy>,
        model: SeqModel,
        detector: Arc<dyn Detector>,
        keywords: KeywordTable,
    ) -> Result<Self> {
        if model.dims().vocab_size != taxonomy.vocab_size() {
            return Err(Error::dims(
                "model vocabulary",
                taxonomy.vocab_size(),
                model.dims().vocab_size,
            ));
        }
        let dim = model.dims().feature_dim;
        Ok(Engine {
            taxonomy,
            model,
            detector,
            keywords,
            fallback: FallbackFeaturizer::new(dim),
            t_max: GenerateOptions::default().t_max,
        })
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.taxonomy
    }

    pub fn model(&self) -> &SeqModel {
        &self.model
    }

    pub fn keywords(&self) -> &KeywordTable {
        &self.keywords
    }

    pub fn feature_dim(&self) -> usize {
        self.model.dims().feature_dim
    }

    /// Index configuration with this engine's feature width.
    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            feature_dim: self.feature_dim(),
            ..IndexConfig::default()
        }
    }

    pub fn fallback_feature(&self, image: &RgbImage) -> Result<DenseFeature> {
        self.fallback.compute(image)
    }

    fn decode(&self, feature: &DenseFeature, guided: Option<usize>) -> Result<AttributeSequence> {
        let mut opts = GenerateOptions {
            t_max: self.t_max,
            ..GenerateOptions::default()
        }
        .constrained();
        if let Some(g) = guided {
            opts = opts.guided(self.taxonomy.categories()[g].clone());
        }
        self.model.generate(&self.taxonomy, &feature.to_f64(), &opts)
    }

    fn detect_roi(&self, image_id: Option<&str>, image: &RgbImage, category: usize) -> BBox {
        let full = BBox::full(image);
        let name = self.taxonomy.categories()[category].as_str();
        let kept = guided_filter(self.detector.detect(image_id, image), Some(name));
        select_roi(&kept, full)
            .clamp_to(image.width(), image.height())
            .unwrap_or(full)
    }

    fn feature_or_fallback(&self, feature: Option<&DenseFeature>, image: Option<&RgbImage>) -> Result<DenseFeature> {
        let feature = match (feature, image) {
            (Some(f), _) => f.clone(),
            (None, Some(img)) => self.fallback.compute(img)?,
            (None, None) => {
                return Err(Error::InvalidInput("either an image or a feature is required".into()))
            }
        };
        if feature.len() != self.feature_dim() {
            return Err(Error::dims("dense feature", self.feature_dim(), feature.len()));
        }
        Ok(feature)
    }

    /// Builds the index record for one catalog item without touching any
    /// index.
    pub fn prepare(&self, item: &IngestItem<'_>, config: IndexConfig) -> Result<ItemRecord> {
        if config.feature_dim != self.feature_dim() {
            return Err(Error::dims("index feature width", self.feature_dim(), config.feature_dim));
        }
        let category = match item.category {
            Some(c) => self.taxonomy.category_index(c)?,
            None => extract_category(item.meta_text, &self.keywords).ok_or_else(|| {
                Error::Rejected(format!(
                    "item `{}`: no category keyword in meta text",
                    item.item_id
                ))
            })?,
        };
        let feature = self.feature_or_fallback(item.feature, Some(item.image))?;
        let sequence = self.decode(&feature, Some(category))?;
        let roi = self.detect_roi(Some(item.item_id), item.image, category);
        let histogram = color_histogram(item.image, &roi, config.bins)?;
        Ok(ItemRecord {
            item_id: item.item_id.to_string(),
            category,
            attributes: sequence.attributes().to_vec(),
            code: binarize(&feature)?,
            histogram,
            roi,
            meta_text: item.meta_text.to_string(),
        })
    }

    /// Prepares and inserts one item. A rejected item leaves the index
    /// unchanged.
    pub fn ingest(&self, index: &mut InvertedIndex, item: &IngestItem<'_>) -> Result<ItemRecord> {
        let record = self.prepare(item, index.config())?;
        index.insert(record.clone())?;
        Ok(record)
    }

    /// Ingests every manifest entry, collecting per-item rejections instead
    /// of stopping.
    pub fn ingest_manifest(&self, index: &mut InvertedIndex, entries: &[ManifestEntry]) -> IngestReport {
        let mut report = IngestReport::default();
        for entry in entries {
            match self.ingest_entry(index, entry) {
                Ok(()) => report.ingested.push(entry.item_id.clone()),
                Err(e) => {
                    log::warn!("rejected {}: {e}", entry.item_id);
                    report.rejected.push(Rejection {
                        item_id: entry.item_id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        report
    }

    fn ingest_entry(&self, index: &mut InvertedIndex, entry: &ManifestEntry) -> Result<()> {
        let image = load_image(&entry.image_path)?;
        let feature = entry.feature_path.as_ref().map(DenseFeature::load).transpose()?;
        self.ingest(
            index,
            &IngestItem {
                item_id: &entry.item_id,
                image: &image,
                meta_text: &entry.meta_text,
                feature: feature.as_ref(),
                category: entry.category.as_deref(),
            },
        )?;
        Ok(())
    }

    /// A fresh index holding every accepted manifest entry.
    pub fn build_index(&self, entries: &[ManifestEntry]) -> Result<(InvertedIndex, IngestReport)> {
        let mut index = InvertedIndex::new(self.taxonomy.clone(), self.index_config())?;
        let report = self.ingest_manifest(&mut index, entries);
        Ok((index, report))
    }

    /// Runs one online query against `index`.
    pub fn query(&self, index: &InvertedIndex, request: &QueryRequest) -> Result<QueryResponse> {
        request.validate()?;
        if let Some(image) = &request.image {
            if image.width() == 0 || image.height() == 0 {
                return Err(Error::InvalidInput("empty image".into()));
            }
        }
        let guided = request
            .guided_category
            .as_deref()
            .map(|g| self.taxonomy.category_index(g))
            .transpose()?;
        let feature = self.feature_or_fallback(request.feature.as_ref(), request.image.as_ref())?;

        let sequence = self.decode(&feature, guided)?;
        let category = sequence.symbols[0];
        if !self.taxonomy.is_category(category) {
            return Err(Error::InvalidInput("decoded sequence does not start with a category".into()));
        }

        let roi = match (request.option, &request.image) {
            (QueryOption::Region, Some(image)) => {
                let roi = request.roi.expect("validated");
                if roi.w == 0 || roi.h == 0 || !roi.fits_within(image.width(), image.height()) {
                    return Err(Error::InvalidInput(format!(
                        "ROI {roi:?} outside {}x{} image",
                        image.width(),
                        image.height()
                    )));
                }
                Some(roi)
            }
            (_, Some(image)) => Some(self.detect_roi(None, image, category)),
            (_, None) => None,
        };
        let histogram = match (&request.image, roi) {
            (Some(image), Some(roi)) => Some(color_histogram(image, &roi, index.config().bins)?),
            _ => None,
        };

        let hits = index.search(
            &SearchQuery {
                code: binarize(&feature)?,
                histogram,
                attributes: sequence.attributes().to_vec(),
                guided: Some(category),
            },
            request.k,
            request.weights,
        )?;
        let names = |ids: &[usize]| -> Vec<String> {
            ids.iter()
                .map(|&s| self.taxonomy.symbols()[s].clone())
                .collect()
        };
        let results = hits
            .into_iter()
            .map(|h| {
                let item = index.get(&h.item_id).expect("hit comes from the index");
                RankedItem {
                    attributes: names(&item.attributes),
                    roi: item.roi,
                    item_id: h.item_id,
                    distance: h.distance,
                    match_count: h.match_count,
                }
            })
            .collect();
        Ok(QueryResponse {
            option: request.option.number(),
            category: self.taxonomy.categories()[category].clone(),
            sequence: names(&sequence.symbols),
            roi,
            results,
        })
    }
}

/// One catalog item handed to [`Engine::ingest`].
#[derive(Debug, Clone, Copy)]
pub struct IngestItem<'a> {
    pub item_id: &'a str,
    pub image: &'a RgbImage,
    pub meta_text: &'a str,
    /// Fallback feature is computed when absent.
    pub feature: Option<&'a DenseFeature>,
    /// Overrides keyword extraction.
    pub category: Option<&'a str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum QueryOption {
    /// Category decoded from the image.
    Auto,
    /// Category chosen by the user.
    Guided,
    /// Region drawn by the user.
    Region,
}

impl QueryOption {
    pub fn number(self) -> u8 {
        match self {
            QueryOption::Auto => 1,
            QueryOption::Guided => 2,
            QueryOption::Region => 3,
        }
    }
}

impl TryFrom<u8> for QueryOption {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(QueryOption::Auto),
            2 => Ok(QueryOption::Guided),
            3 => Ok(QueryOption::Region),
            _ => Err(format!("option must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<QueryOption> for u8 {
    fn from(o: QueryOption) -> u8 {
        o.number()
    }
}

#[derive(Debug, Clone)]
pub struct QueryRequest {
    pub option: QueryOption,
    pub image: Option<RgbImage>,
    /// Used instead of the fallback feature when present.
    pub feature: Option<DenseFeature>,
    /// Required for option 2, optional for 3, forbidden for 1.
    pub guided_category: Option<String>,
    /// Required for option 3, forbidden otherwise.
    pub roi: Option<BBox>,
    pub k: usize,
    pub weights: DistanceWeights,
}

impl QueryRequest {
    fn base(option: QueryOption) -> Self {
        QueryRequest {
            option,
            image: None,
            feature: None,
            guided_category: None,
            roi: None,
            k: 10,
            weights: DistanceWeights::default(),
        }
    }

    pub fn auto() -> Self {
        Self::base(QueryOption::Auto)
    }

    pub fn guided(category: impl Into<String>) -> Self {
        QueryRequest {
            guided_category: Some(category.into()),
            ..Self::base(QueryOption::Guided)
        }
    }

    pub fn region(roi: BBox) -> Self {
        QueryRequest {
            roi: Some(roi),
            ..Self::base(QueryOption::Region)
        }
    }

    pub fn with_image(mut self, image: RgbImage) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_feature(mut self, feature: DenseFeature) -> Self {
        self.feature = Some(feature);
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_weights(mut self, weights: DistanceWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if self.image.is_none() && self.feature.is_none() {
            return Err(Error::InvalidInput("either an image or a feature is required".into()));
        }
        match self.option {
            QueryOption::Auto if self.guided_category.is_some() => Err(Error::InvalidInput(
                "option 1 decodes its own category; use option 2 to guide".into(),
            )),
            QueryOption::Guided if self.guided_category.is_none() => {
                Err(Error::InvalidInput("option 2 requires a guided category".into()))
            }
            QueryOption::Region if self.roi.is_none() => {
                Err(Error::InvalidInput("option 3 requires an ROI".into()))
            }
            QueryOption::Region if self.image.is_none() => {
                Err(Error::InvalidInput("option 3 requires an image".into()))
            }
            QueryOption::Auto | QueryOption::Guided if self.roi.is_some() => Err(
                Error::InvalidInput("ROI is only accepted by option 3".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: String,
    pub distance: f64,
    pub match_count: usize,
    pub attributes: Vec<String>,
    pub roi: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub option: u8,
    /// Category used as the candidate filter.
    pub category: String,
    /// Decoded symbols, EOS included.
    pub sequence: Vec<String>,
    /// ROI of the query image; absent for feature-only queries.
    pub roi: Option<BBox>,
    pub results: Vec<RankedItem>,
}

/// One corpus manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub item_id: String,
    pub image_path: PathBuf,
    #[serde(default)]
    pub meta_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// Reads a JSON Lines manifest. Relative paths are resolved against the
/// manifest's directory; blank lines are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format("manifest", format!("line {}: {e}", n + 1)))?;
        entry.image_path = base.join(&entry.image_path);
        entry.feature_path = entry.feature_path.map(|p| base.join(p));
        out.push(entry);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub item_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub ingested: Vec<String>,
    pub rejected: Vec<Rejection>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrseq::ModelDims;
    use crate::roi::{Detection, NullDetector, StubDetector};
    use std::collections::BTreeMap;

    fn taxonomy() -> Arc<Taxonomy> {
        Arc::new(Taxonomy::example())
    }

    fn engine(detector: Arc<dyn Detector>) -> Engine {
        let t = taxonomy();
        let dims = ModelDims {
            feature_dim: 32,
            embed_dim: 8,
            hidden_dim: 8,
            vocab_size: t.vocab_size(),
        };
        let model = SeqModel::random(dims, 3).unwrap();
        let kw = KeywordTable::example(&t).unwrap();
        Engine::new(t, model, detector, kw).unwrap()
    }

    fn image() -> RgbImage {
        RgbImage::from_fn(20, 16, |x, y| image::Rgb([(x * 12) as u8, (y * 15) as u8, 90]))
    }

    #[test]
    fn keyword_extraction() {
        let t = taxonomy();
        let table = KeywordTable::example(&t).unwrap();
        let cardigan = t.category_index("cardigan").unwrap();
        assert_eq!(extract_category("brown cardigan knit top", &table), Some(cardigan));
        assert_eq!(extract_category("nothing relevant", &table), None);
        assert_eq!(extract_category("BROWN CARDIGAN", &table), Some(cardigan));
    }

    #[test]
    fn longest_keyword_wins() {
        let t = taxonomy();
        let table = KeywordTable::new(
            vec![
                KeywordEntry { keyword: "shirt".into(), category: "blouse".into() },
                KeywordEntry { keyword: "t-shirt".into(), category: "t-shirt".into() },
            ],
            &t,
        )
        .unwrap();
        let got = extract_category("cotton t-shirt, not a dress shirt", &table);
        assert_eq!(got, Some(t.category_index("t-shirt").unwrap()));
    }

    #[test]
    fn equal_length_goes_to_table_order() {
        let t = taxonomy();
        let table = KeywordTable::new(
            vec![
                KeywordEntry { keyword: "skirt".into(), category: "skirt".into() },
                KeywordEntry { keyword: "pants".into(), category: "pants".into() },
            ],
            &t,
        )
        .unwrap();
        let got = extract_category("pants or skirt", &table);
        assert_eq!(got, Some(t.category_index("skirt").unwrap()));
    }

    #[test]
    fn keyword_table_validation() {
        let t = taxonomy();
        let dup = vec![
            KeywordEntry { keyword: "Tee".into(), category: "t-shirt".into() },
            KeywordEntry { keyword: "tee".into(), category: "blouse".into() },
        ];
        assert!(KeywordTable::new(dup, &t).is_err());
        let empty = vec![KeywordEntry { keyword: " ".into(), category: "bag".into() }];
        assert!(KeywordTable::new(empty, &t).is_err());
        let unknown = vec![KeywordEntry { keyword: "hat".into(), category: "hat".into() }];
        assert!(KeywordTable::new(unknown, &t).is_err());
    }

    #[test]
    fn fallback_feature_is_deterministic() {
        let f = FallbackFeaturizer::new(32);
        let a = f.compute(&image()).unwrap();
        let b = FallbackFeaturizer::new(32).compute(&image()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
        let tiny = RgbImage::from_pixel(1, 1, image::Rgb([10, 20, 30]));
        assert_eq!(f.compute(&tiny).unwrap().len(), 32);
    }

    #[test]
    fn ingest_uses_matching_detection() {
        let boxes = BTreeMap::from([(
            "x".to_string(),
            vec![
                Detection::new(BBox::new(1, 1, 5, 5), "bag", 0.99),
                Detection::new(BBox::new(2, 3, 8, 6), "skirt", 0.8),
            ],
        )]);
        let e = engine(Arc::new(StubDetector::new(boxes)));
        let mut idx = InvertedIndex::new(e.taxonomy().clone(), e.index_config()).unwrap();
        let img = image();
        let rec = e
            .ingest(
                &mut idx,
                &IngestItem {
                    item_id: "x",
                    image: &img,
                    meta_text: "pleated skirt",
                    feature: None,
                    category: None,
                },
            )
            .unwrap();
        assert_eq!(rec.roi, BBox::new(2, 3, 8, 6));
        assert_eq!(rec.attributes[0], e.taxonomy().category_index("skirt").unwrap());
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn wrong_category_boxes_fall_back_to_full_image() {
        let boxes = BTreeMap::from([(
            "x".to_string(),
            vec![Detection::new(BBox::new(1, 1, 5, 5), "bag", 0.99)],
        )]);
        let e = engine(Arc::new(StubDetector::new(boxes)));
        let img = image();
        let item = IngestItem {
            item_id: "x",
            image: &img,
            meta_text: "skirt",
            feature: None,
            category: None,
        };
        let rec = e.prepare(&item, e.index_config()).unwrap();
        assert_eq!(rec.roi, BBox::full(&img));
    }

    #[test]
    fn unresolvable_category_is_rejected_atomically() {
        let e = engine(Arc::new(NullDetector));
        let mut idx = InvertedIndex::new(e.taxonomy().clone(), e.index_config()).unwrap();
        let img = image();
        let item = IngestItem {
            item_id: "x",
            image: &img,
            meta_text: "mystery object",
            feature: None,
            category: None,
        };
        assert!(matches!(e.ingest(&mut idx, &item), Err(Error::Rejected(_))));
        assert!(idx.is_empty());
        let wrong = DenseFeature(vec![0.0; 7]);
        let item = IngestItem { feature: Some(&wrong), meta_text: "bag", ..item };
        assert!(matches!(e.ingest(&mut idx, &item), Err(Error::DimensionMismatch { .. })));
        assert!(idx.is_empty());
    }

    #[test]
    fn option_field_rules() {
        let img = image();
        assert!(QueryRequest::auto().validate().is_err());
        assert!(QueryRequest::auto().with_image(img.clone()).validate().is_ok());
        let mut r = QueryRequest::auto().with_image(img.clone());
        r.guided_category = Some("bag".into());
        assert!(r.validate().is_err());
        let mut r = QueryRequest::guided("bag").with_image(img.clone());
        assert!(r.validate().is_ok());
        r.roi = Some(BBox::new(0, 0, 1, 1));
        assert!(r.validate().is_err());
        assert!(QueryRequest::region(BBox::new(0, 0, 2, 2))
            .with_feature(DenseFeature(vec![0.0; 32]))
            .validate()
            .is_err());
        assert!(QueryRequest::auto().with_image(img).with_k(0).validate().is_err());
    }

    #[test]
    fn region_outside_image_is_an_error() {
        let e = engine(Arc::new(NullDetector));
        let idx = InvertedIndex::new(e.taxonomy().clone(), e.index_config()).unwrap();
        let req = QueryRequest::region(BBox::new(15, 0, 10, 4)).with_image(image());
        assert!(e.query(&idx, &req).is_err());
    }

    #[test]
    fn guided_query_reports_its_guide() {
        let e = engine(Arc::new(NullDetector));
        let idx = InvertedIndex::new(e.taxonomy().clone(), e.index_config()).unwrap();
        let resp = e.query(&idx, &QueryRequest::guided("blouse").with_image(image())).unwrap();
        assert_eq!(resp.category, "blouse");
        assert_eq!(resp.sequence[0], "blouse");
        assert!(resp.results.is_empty());
    }
}
