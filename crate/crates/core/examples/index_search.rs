//! Build an inverted index directly from records, search it, and persist it.

use std::sync::Arc;

use guided_search::index::{IndexConfig, InvertedIndex, ItemRecord, SearchQuery};
use guided_search::roi::BBox;
use guided_search::taxonomy::Taxonomy;
use guided_search::visfeat::{BinaryCode, ColorHistogram, DistanceWeights, HistogramBins};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> guided_search::Result<()> {
    let t = Arc::new(Taxonomy::example());
    let config = IndexConfig { feature_dim: 128, bins: HistogramBins { hue: 4, saturation: 2, value: 2 } };
    let mut index = InvertedIndex::new(t.clone(), config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    for i in 0..500 {
        let cat = rng.random_range(0..t.num_categories());
        let category = &t.categories()[cat];
        let mut attributes = vec![cat];
        for (g, group) in t.groups().iter().enumerate() {
            if group.applies_to(category) {
                let range = t.group_symbols(g);
                attributes.push(rng.random_range(range));
            }
        }
        let mut bins: Vec<f64> = (0..config.bins.total()).map(|_| rng.random::<f64>()).collect();
        let sum: f64 = bins.iter().sum();
        bins.iter_mut().for_each(|b| *b /= sum);
        index.insert(ItemRecord {
            item_id: format!("sku-{i:04}"),
            category: cat,
            attributes,
            code: BinaryCode::from_words(128, vec![rng.random(), rng.random()])?,
            histogram: ColorHistogram::new(bins, true)?,
            roi: BBox::new(0, 0, 10, 10),
            meta_text: String::new(),
        })?;
    }
    for key in index.postings_keys().take(6) {
        println!("{:<14} {} items", t.symbol(key)?, index.postings(key).len());
    }

    let probe = index.get("sku-0042").unwrap().clone();
    let query = SearchQuery {
        code: probe.code.clone(),
        histogram: Some(probe.histogram.clone()),
        attributes: probe.attributes.clone(),
        guided: Some(probe.category),
    };
    println!("query: {}", probe.attributes.iter().map(|&a| t.symbol(a).unwrap()).collect::<Vec<_>>().join(" "));
    for hit in index.search(&query, 5, DistanceWeights::default())? {
        println!("  {:<9} matches {}  distance {:.3}", hit.item_id, hit.match_count, hit.distance);
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("catalog.fpsi");
    index.save(&path)?;
    let loaded = InvertedIndex::load(&path, t)?;
    println!("snapshot {} bytes, reload identical: {}", std::fs::metadata(&path)?.len(), loaded == index);
    Ok(())
}
