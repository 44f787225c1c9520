//! Attribute-keyed inverted index.
//!
//! Every item is posted under each of its attribute symbols and under its
//! category. Search takes candidates from the postings (a hard filter on
//! the guided category when there is one, otherwise the union over the
//! query attributes) and ranks them exactly by
//! `(match_count desc, combined distance asc, item_id asc)`.
//!
//! Snapshot layout (little-endian):
//!
//! ```text
//! b"FPSI" | u32 version | [u8; 32] taxonomy hash
//! u32 F | u32 hue bins | u32 saturation bins | u32 value bins
//! u64 item count
//! per item:
//!   u32 len + UTF-8 item id
//!   u32 category
//!   u32 n + n x u32 attributes
//!   ceil(F/64) x u64 code words
//!   B x f64 histogram
//!   4 x u32 roi (x, y, w, h)
//!   u32 len + UTF-8 meta text
//! [u8; 32] SHA-256 of everything above
//! ```
//!
//! Postings are not stored; they are rebuilt from the records on load.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::roi::BBox;
use crate::taxonomy::Taxonomy;
use crate::visfeat::{BinaryCode, ColorHistogram, DistanceWeights, HistogramBins, PopcountPath};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexConfig {
    /// Appearance code length in bits.
    pub feature_dim: usize,
    pub bins: HistogramBins,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            feature_dim: crate::visfeat::DEFAULT_FEATURE_DIM,
            bins: HistogramBins::default(),
        }
    }
}

/// One indexed catalog item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRecord {
    pub item_id: String,
    pub category: usize,
    /// Attribute symbols, typically the decoded sequence with the category
    /// first. Treated as a set.
    pub attributes: Vec<usize>,
    pub code: BinaryCode,
    pub histogram: ColorHistogram,
    pub roi: BBox,
    pub meta_text: String,
}

impl ItemRecord {
    /// Postings keys: the attribute set plus the category.
    pub fn keys(&self) -> impl Iterator<Item = usize> + '_ {
        let extra = (!self.attributes.contains(&self.category)).then_some(self.category);
        self.attributes.iter().copied().chain(extra)
    }

    fn match_count(&self, query: &[usize]) -> usize {
        query.iter().filter(|q| self.keys().any(|k| k == **q)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub item_id: Arc<str>,
    pub match_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchQuery {
    pub code: BinaryCode,
    /// Without a histogram only the appearance term is used.
    pub histogram: Option<ColorHistogram>,
    pub attributes: Vec<usize>,
    pub guided: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub item_id: String,
    pub distance: f64,
    pub match_count: usize,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    taxonomy: Arc<Taxonomy>,
    config: IndexConfig,
    postings: BTreeMap<usize, Vec<Arc<str>>>,
    store: BTreeMap<Arc<str>, ItemRecord>,
}

impl PartialEq for InvertedIndex {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.taxonomy.content_hash() == other.taxonomy.content_hash()
            && self.postings == other.postings
            && self.store == other.store
    }
}

impl InvertedIndex {
    pub fn new(taxonomy: Arc<Taxonomy>, config: IndexConfig) -> Result<Self> {
        config.bins.check()?;
        if config.feature_dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        Ok(InvertedIndex {
            taxonomy,
            config,
            postings: BTreeMap::new(),
            store: BTreeMap::new(),
        })
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.taxonomy
    }

    pub fn config(&self) -> IndexConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemRecord> {
        self.store.get(item_id)
    }

    /// Records in ascending id order.
    pub fn items(&self) -> impl Iterator<Item = &ItemRecord> {
        self.store.values()
    }

    /// Sorted item ids posted under `symbol`.
    pub fn postings(&self, symbol: usize) -> &[Arc<str>] {
        self.postings.get(&symbol).map_or(&[], Vec::as_slice)
    }

    pub fn postings_keys(&self) -> impl Iterator<Item = usize> + '_ {
        self.postings.keys().copied()
    }

    fn check_record(&self, item: &ItemRecord) -> Result<()> {
        if item.code.len() != self.config.feature_dim {
            return Err(Error::dims("code length", self.config.feature_dim, item.code.len()));
        }
        if item.histogram.len() != self.config.bins.total() {
            return Err(Error::dims(
                "histogram bins",
                self.config.bins.total(),
                item.histogram.len(),
            ));
        }
        if !item.histogram.is_normalized() {
            return Err(Error::InvalidInput("item histogram is not normalized".into()));
        }
        if !self.taxonomy.is_category(item.category) {
            return Err(Error::UnknownCategory(format!("#{}", item.category)));
        }
        let mut seen = HashSet::new();
        for &a in &item.attributes {
            if !self.taxonomy.is_applicable(item.category, a) {
                let name = self.taxonomy.symbol(a).unwrap_or("?");
                return Err(Error::InvalidInput(format!(
                    "attribute `{name}` does not apply to category `{}`",
                    self.taxonomy.categories()[item.category]
                )));
            }
            if !seen.insert(a) {
                return Err(Error::InvalidInput(format!("attribute #{a} listed twice")));
            }
        }
        Ok(())
    }

    /// Adds an item. The index is unchanged on error.
    pub fn insert(&mut self, item: ItemRecord) -> Result<()> {
        if self.store.contains_key(item.item_id.as_str()) {
            return Err(Error::DuplicateItem(item.item_id));
        }
        self.check_record(&item)?;
        let id: Arc<str> = Arc::from(item.item_id.as_str());
        for key in item.keys() {
            let list = self.postings.entry(key).or_default();
            if let Err(pos) = list.binary_search(&id) {
                list.insert(pos, id.clone());
            }
        }
        self.store.insert(id, item);
        Ok(())
    }

    pub fn remove(&mut self, item_id: &str) -> Result<ItemRecord> {
        let (id, item) = self
            .store
            .remove_entry(item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
        for key in item.keys() {
            if let Some(list) = self.postings.get_mut(&key) {
                if let Ok(pos) = list.binary_search(&id) {
                    list.remove(pos);
                }
                if list.is_empty() {
                    self.postings.remove(&key);
                }
            }
        }
        Ok(item)
    }

    fn check_query_symbols(&self, attributes: &[usize], guided: Option<usize>) -> Result<()> {
        for &a in attributes {
            if a >= self.taxonomy.eos() {
                return Err(Error::UnknownSymbol(format!("#{a}")));
            }
        }
        if let Some(g) = guided {
            if !self.taxonomy.is_category(g) {
                return Err(Error::UnknownCategory(format!("#{g}")));
            }
        }
        Ok(())
    }

    /// Candidate items in ascending id order, each with how many query
    /// attributes it carries.
    pub fn candidates(&self, attributes: &[usize], guided: Option<usize>) -> Result<Vec<Candidate>> {
        self.check_query_symbols(attributes, guided)?;
        let mut query: Vec<usize> = attributes.to_vec();
        query.sort_unstable();
        query.dedup();

        let ids: Vec<Arc<str>> = match guided {
            Some(g) => self.postings(g).to_vec(),
            None => {
                let mut merged: Vec<Arc<str>> = query
                    .iter()
                    .flat_map(|&a| self.postings(a).iter().cloned())
                    .collect();
                merged.sort_unstable();
                merged.dedup();
                merged
            }
        };
        Ok(ids
            .into_iter()
            .map(|id| {
                let match_count = self.store[&id].match_count(&query);
                Candidate {
                    item_id: id,
                    match_count,
                }
            })
            .collect())
    }

    /// Top-`k` candidates under the ranking key.
    pub fn search(
        &self,
        query: &SearchQuery,
        k: usize,
        weights: DistanceWeights,
    ) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if query.code.len() != self.config.feature_dim {
            return Err(Error::dims("query code length", self.config.feature_dim, query.code.len()));
        }
        if let Some(h) = &query.histogram {
            if h.len() != self.config.bins.total() {
                return Err(Error::dims("query histogram bins", self.config.bins.total(), h.len()));
            }
            if !h.is_normalized() {
                return Err(Error::InvalidInput("query histogram is not normalized".into()));
            }
        }
        let candidates = self.candidates(&query.attributes, query.guided)?;

        let path = PopcountPath::detect();
        let bits = self.config.feature_dim as f64;
        let mut scored = Vec::with_capacity(candidates.len());
        for c in candidates {
            let item = &self.store[&c.item_id];
            let appearance = path.distance(query.code.words(), item.code.words()) as f64 / bits;
            let distance = match &query.histogram {
                Some(h) => {
                    weights.appearance() * appearance + weights.color() * h.l1(&item.histogram)? / 2.0
                }
                None => appearance,
            };
            scored.push((c.match_count, distance, c.item_id));
        }

        let order = |a: &(usize, f64, Arc<str>), b: &(usize, f64, Arc<str>)| {
            b.0.cmp(&a.0)
                .then(a.1.total_cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(match_count, distance, id)| SearchHit {
                item_id: id.to_string(),
                distance,
                match_count,
            })
            .collect())
    }

    /// Recomputes postings from the store and compares. Used by tests and
    /// after loading.
    pub fn check_consistency(&self) -> Result<()> {
        let mut rebuilt: BTreeMap<usize, Vec<Arc<str>>> = BTreeMap::new();
        for (id, item) in &self.store {
            for key in item.keys() {
                rebuilt.entry(key).or_default().push(id.clone());
            }
        }
        for list in rebuilt.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        if rebuilt != self.postings {
            return Err(Error::InvalidInput("postings disagree with store".into()));
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 4] = b"FPSI";
    const VERSION: u32 = 1;

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(Self::MAGIC);
        put_u32(&mut out, Self::VERSION);
        out.extend_from_slice(&self.taxonomy.content_hash());
        put_u32(&mut out, self.config.feature_dim as u32);
        put_u32(&mut out, self.config.bins.hue as u32);
        put_u32(&mut out, self.config.bins.saturation as u32);
        put_u32(&mut out, self.config.bins.value as u32);
        out.extend_from_slice(&(self.store.len() as u64).to_le_bytes());
        for item in self.store.values() {
            put_str(&mut out, &item.item_id);
            put_u32(&mut out, item.category as u32);
            put_u32(&mut out, item.attributes.len() as u32);
            for &a in &item.attributes {
                put_u32(&mut out, a as u32);
            }
            for w in item.code.words() {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for b in item.histogram.bins() {
                out.extend_from_slice(&b.to_le_bytes());
            }
            for v in [item.roi.x, item.roi.y, item.roi.w, item.roi.h] {
                put_u32(&mut out, v);
            }
            put_str(&mut out, &item.meta_text);
        }
        let digest: [u8; 32] = Sha256::digest(&out).into();
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_snapshot_bytes(bytes: &[u8], taxonomy: Arc<Taxonomy>) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(Error::format("snapshot", "truncated"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let digest: [u8; 32] = Sha256::digest(body).into();
        if digest != trailer {
            return Err(Error::format("snapshot", "checksum mismatch (corrupt or truncated)"));
        }
        let mut r = Reader { buf: body };
        if r.take(4)? != Self::MAGIC {
            return Err(Error::format("snapshot", "bad magic"));
        }
        let version = r.u32()?;
        if version != Self::VERSION {
            return Err(Error::format("snapshot", format!("unsupported version {version}")));
        }
        if r.take(32)? != taxonomy.content_hash() {
            return Err(Error::format("snapshot", "taxonomy hash mismatch"));
        }
        let feature_dim = r.u32()? as usize;
        let bins = HistogramBins {
            hue: r.u32()? as usize,
            saturation: r.u32()? as usize,
            value: r.u32()? as usize,
        };
        let config = IndexConfig { feature_dim, bins };
        let mut index = InvertedIndex::new(taxonomy, config)
            .map_err(|e| Error::format("snapshot", e.to_string()))?;
        let count = r.u64()?;
        let words = feature_dim.div_ceil(64);
        for _ in 0..count {
            let item_id = r.string()?;
            let category = r.u32()? as usize;
            let n = r.u32()? as usize;
            let mut attributes = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                attributes.push(r.u32()? as usize);
            }
            let mut code_words = Vec::with_capacity(words);
            for _ in 0..words {
                code_words.push(r.u64()?);
            }
            let code = BinaryCode::from_words(feature_dim, code_words)
                .map_err(|e| Error::format("snapshot", e.to_string()))?;
            let mut hist = Vec::with_capacity(bins.total());
            for _ in 0..bins.total() {
                hist.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            let histogram = ColorHistogram::new(hist, true)
                .map_err(|e| Error::format("snapshot", e.to_string()))?;
            let roi = BBox::new(r.u32()?, r.u32()?, r.u32()?, r.u32()?);
            let meta_text = r.string()?;
            index
                .insert(ItemRecord {
                    item_id,
                    category,
                    attributes,
                    code,
                    histogram,
                    roi,
                    meta_text,
                })
                .map_err(|e| Error::format("snapshot", e.to_string()))?;
        }
        if !r.buf.is_empty() {
            return Err(Error::format("snapshot", "trailing bytes"));
        }
        Ok(index)
    }

    /// Writes the snapshot next to `path` and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_snapshot_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: Arc<Taxonomy>) -> Result<Self> {
        Self::from_snapshot_bytes(&std::fs::read(path)?, taxonomy)
    }

    /// SHA-256 over the snapshot encoding; equal digests mean equal
    /// observable state.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_snapshot_bytes()).into()
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format("snapshot", "truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format("snapshot", "invalid UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Arc<Taxonomy>, InvertedIndex) {
        let t = Arc::new(Taxonomy::example());
        let cfg = IndexConfig {
            feature_dim: 16,
            bins: HistogramBins {
                hue: 2,
                saturation: 1,
                value: 1,
            },
        };
        let idx = InvertedIndex::new(t.clone(), cfg).unwrap();
        (t, idx)
    }

    fn item(t: &Taxonomy, id: &str, cat: &str, attrs: &[&str], code: u64) -> ItemRecord {
        ItemRecord {
            item_id: id.into(),
            category: t.category_index(cat).unwrap(),
            attributes: attrs.iter().map(|a| t.symbol_index(a).unwrap()).collect(),
            code: BinaryCode::from_words(16, vec![code]).unwrap(),
            histogram: ColorHistogram::new(vec![1.0, 0.0], true).unwrap(),
            roi: BBox::new(0, 0, 4, 4),
            meta_text: String::new(),
        }
    }

    #[test]
    fn insert_posts_under_attributes_and_category() {
        let (t, mut idx) = setup();
        idx.insert(item(&t, "a", "pants", &["female", "slim", "mini"], 1)).unwrap();
        let lists: Vec<_> = idx.postings_keys().collect();
        assert_eq!(lists.len(), 4);
        idx.check_consistency().unwrap();
    }

    #[test]
    fn duplicate_insert_leaves_index_unchanged() {
        let (t, mut idx) = setup();
        idx.insert(item(&t, "a", "pants", &["female"], 1)).unwrap();
        let before = idx.clone();
        assert!(matches!(
            idx.insert(item(&t, "a", "skirt", &["male"], 2)),
            Err(Error::DuplicateItem(_))
        ));
        assert_eq!(idx, before);
    }

    #[test]
    fn inapplicable_attribute_is_rejected() {
        let (t, mut idx) = setup();
        assert!(idx.insert(item(&t, "a", "pants", &["round"], 1)).is_err());
        assert!(idx.is_empty());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (t, mut idx) = setup();
        let mut it = item(&t, "a", "pants", &[], 1);
        it.code = BinaryCode::zeros(8);
        assert!(matches!(idx.insert(it), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn insert_then_remove_is_empty() {
        let (t, mut idx) = setup();
        let empty = idx.clone();
        idx.insert(item(&t, "a", "pants", &["female", "mini"], 1)).unwrap();
        idx.remove("a").unwrap();
        assert_eq!(idx, empty);
        assert!(matches!(idx.remove("a"), Err(Error::UnknownItem(_))));
    }

    #[test]
    fn guided_candidates_are_category_postings() {
        let (t, mut idx) = setup();
        idx.insert(item(&t, "p1", "pants", &["female"], 1)).unwrap();
        idx.insert(item(&t, "p2", "pants", &["male"], 1)).unwrap();
        for i in 0..3 {
            idx.insert(item(&t, &format!("s{i}"), "skirt", &["female"], 1)).unwrap();
        }
        let pants = t.category_index("pants").unwrap();
        let female = t.symbol_index("female").unwrap();
        let c = idx.candidates(&[female], Some(pants)).unwrap();
        let ids: Vec<&str> = c.iter().map(|c| &*c.item_id).collect();
        assert_eq!(ids, ["p1", "p2"]);
        assert_eq!(c[0].match_count, 1);
        assert_eq!(c[1].match_count, 0);
    }

    #[test]
    fn unguided_candidates_are_union() {
        let (t, mut idx) = setup();
        idx.insert(item(&t, "a", "t-shirt", &["long-sleeve"], 1)).unwrap();
        idx.insert(item(&t, "b", "t-shirt", &["sleeveless"], 1)).unwrap();
        let long = t.symbol_index("long-sleeve").unwrap();
        let c = idx.candidates(&[long], None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(&*c[0].item_id, "a");
        assert!(idx.candidates(&[t.eos()], None).is_err());
    }

    #[test]
    fn search_on_empty_index_is_empty() {
        let (_, idx) = setup();
        let q = SearchQuery {
            code: BinaryCode::zeros(16),
            histogram: None,
            attributes: vec![],
            guided: Some(0),
        };
        assert!(idx.search(&q, 5, DistanceWeights::default()).unwrap().is_empty());
        assert!(idx.search(&q, 0, DistanceWeights::default()).is_err());
    }

    #[test]
    fn exact_match_ranks_first() {
        let (t, mut idx) = setup();
        idx.insert(item(&t, "a", "skirt", &["mini"], 0b1111)).unwrap();
        idx.insert(item(&t, "b", "skirt", &["mini"], 0b1010)).unwrap();
        let target = idx.get("b").unwrap().clone();
        let q = SearchQuery {
            code: target.code.clone(),
            histogram: Some(target.histogram.clone()),
            attributes: target.attributes.clone(),
            guided: Some(target.category),
        };
        let hits = idx.search(&q, 2, DistanceWeights::default()).unwrap();
        assert_eq!(hits[0].item_id, "b");
        assert_eq!(hits[0].distance, 0.0);
        assert_eq!(hits.len(), 2);
    }

    #[test]
    fn snapshot_round_trip_and_rejection() {
        let (t, mut idx) = setup();
        idx.insert(item(&t, "a", "skirt", &["mini", "female"], 0b1111)).unwrap();
        idx.insert(item(&t, "b", "bag", &["others"], 0b1)).unwrap();
        let bytes = idx.to_snapshot_bytes();
        let back = InvertedIndex::from_snapshot_bytes(&bytes, t.clone()).unwrap();
        assert_eq!(back, idx);

        assert!(InvertedIndex::from_snapshot_bytes(&bytes[..bytes.len() - 5], t.clone()).is_err());
        let mut flipped = bytes.clone();
        flipped[60] ^= 0x40;
        assert!(InvertedIndex::from_snapshot_bytes(&flipped, t.clone()).is_err());

        let mut def = t.def().clone();
        def.categories.push("hat".into());
        let other = Arc::new(Taxonomy::new(def).unwrap());
        match InvertedIndex::from_snapshot_bytes(&bytes, other) {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("taxonomy")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
