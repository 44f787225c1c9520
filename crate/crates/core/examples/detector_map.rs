//! Detection mAP over IoU thresholds, before and after dropping boxes
//! whose category disagrees with a guide.

use std::collections::BTreeMap;

use guided_search::roi::{evaluate_map, guided_filter, iou, select_roi, BBox};
use guided_search::synth::{self, CatalogConfig};
use guided_search::taxonomy::Taxonomy;

fn main() -> guided_search::Result<()> {
    let items = synth::catalog(&Taxonomy::example(), &CatalogConfig { items: 200, ..CatalogConfig::default() });
    let predictions = synth::detection_map(&items);
    let truth = synth::ground_truth(&items);
    let thresholds = [0.5, 0.6, 0.7, 0.8, 0.9];

    let guided: BTreeMap<_, _> = items
        .iter()
        .map(|it| (it.item_id.clone(), guided_filter(it.detections.clone(), Some(&it.category))))
        .collect();

    print!("{:<12}", "IoU");
    for t in thresholds {
        print!("{t:>7}");
    }
    println!();
    for (name, preds) in [("non-guided", &predictions), ("guided", &guided)] {
        print!("{name:<12}");
        for row in evaluate_map(preds, &truth, &thresholds)? {
            print!("{:>7.3}", row.map);
        }
        println!();
    }

    let it = items.iter().find(|i| i.detections.len() > 1).expect("catalog has decoys");
    let full = BBox::new(0, 0, it.image.width(), it.image.height());
    let plain = select_roi(&it.detections, full);
    let with_guide = select_roi(&guided_filter(it.detections.clone(), Some(&it.category)), full);
    println!(
        "{} ({}): top box IoU {:.2}, guided box IoU {:.2}",
        it.item_id,
        it.category,
        iou(&plain, &it.bbox),
        iou(&with_guide, &it.bbox)
    );
    Ok(())
}
