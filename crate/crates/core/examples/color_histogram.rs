//! HSV histograms over a region and the fused appearance/color distance.

use guided_search::roi::BBox;
use guided_search::visfeat::{binarize, color_histogram, combined_distance, rgb_to_hsv, DistanceWeights, HistogramBins};
use image::{Rgb, RgbImage};

fn swatch(color: [u8; 3]) -> RgbImage {
    let mut img = RgbImage::from_pixel(32, 32, Rgb([240, 240, 240]));
    for y in 8..24 {
        for x in 8..24 {
            img.put_pixel(x, y, Rgb(color));
        }
    }
    img
}

fn main() -> guided_search::Result<()> {
    for (name, rgb) in [("red", [200, 30, 30]), ("navy", [20, 30, 110]), ("grey", [128, 128, 128])] {
        let (h, s, v) = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
        println!("{name:<5} h {h:>6.1}  s {s:.2}  v {v:.2}");
    }

    let bins = HistogramBins::default();
    let roi = BBox::new(8, 8, 16, 16);
    let red = color_histogram(&swatch([200, 30, 30]), &roi, bins)?;
    let similar = color_histogram(&swatch([215, 40, 35]), &roi, bins)?;
    let navy = color_histogram(&swatch([20, 30, 110]), &roi, bins)?;
    let whole = color_histogram(&swatch([200, 30, 30]), &BBox::new(0, 0, 32, 32), bins)?;
    println!("L1 red/similar {:.3}", red.l1(&similar)?);
    println!("L1 red/navy     {:.3}", red.l1(&navy)?);
    println!("L1 red ROI/full {:.3}", red.l1(&whole)?);

    let code = binarize(&guided_search::visfeat::DenseFeature(vec![0.3, -0.2, 0.9, -0.1]))?;
    for w in [1.0, 0.7, 0.3, 0.0] {
        let weights = DistanceWeights::new(w)?;
        let d = combined_distance((&code, &red), (&code, &navy), weights)?;
        println!("appearance weight {w:.1}: same code, red vs navy -> {d:.3}");
    }
    Ok(())
}
