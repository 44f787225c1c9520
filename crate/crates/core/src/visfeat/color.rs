//! HSV color histograms over a region of an RGB raster.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::roi::BBox;
use crate::{Error, Result};

/// Hexcone RGB → HSV. Hue in degrees `[0, 360)`, saturation and value in
/// `[0, 1]`. Grays (including black) get hue 0 and saturation 0.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h >= 360.0 {
        h -= 360.0;
    }
    (h, s, v)
}

/// Bin counts per HSV axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBins {
    pub hue: usize,
    pub saturation: usize,
    pub value: usize,
}

impl Default for HistogramBins {
    fn default() -> Self {
        HistogramBins {
            hue: 8,
            saturation: 4,
            value: 4,
        }
    }
}

impl HistogramBins {
    pub fn total(&self) -> usize {
        self.hue * self.saturation * self.value
    }

    pub fn check(&self) -> Result<()> {
        if self.hue == 0 || self.saturation == 0 || self.value == 0 {
            return Err(Error::InvalidInput(format!("zero bin count in {self:?}")));
        }
        Ok(())
    }

    /// Flat bin of an HSV triple; each axis is split uniformly.
    pub fn bin_of(&self, h: f64, s: f64, v: f64) -> usize {
        let axis = |x: f64, n: usize| ((x * n as f64) as usize).min(n - 1);
        let hb = axis(h / 360.0, self.hue);
        let sb = axis(s, self.saturation);
        let vb = axis(v, self.value);
        (hb * self.saturation + sb) * self.value + vb
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    bins: Vec<f64>,
    normalized: bool,
}

impl ColorHistogram {
    /// Wraps bin masses; when `normalized` they must be non-negative and
    /// sum to 1 within 1e-9.
    pub fn new(bins: Vec<f64>, normalized: bool) -> Result<Self> {
        if bins.iter().any(|&b| !b.is_finite() || b < 0.0) {
            return Err(Error::InvalidInput("histogram bins must be finite and non-negative".into()));
        }
        if normalized {
            let sum: f64 = bins.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "normalized histogram sums to {sum}"
                )));
            }
        }
        Ok(ColorHistogram { bins, normalized })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// L1 distance between two histograms of equal length.
    pub fn l1(&self, other: &ColorHistogram) -> Result<f64> {
        if self.bins.len() != other.bins.len() {
            return Err(Error::dims("histogram bins", self.bins.len(), other.bins.len()));
        }
        Ok(self
            .bins
            .iter()
            .zip(&other.bins)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Normalized HSV histogram of the pixels inside `roi`.
pub fn color_histogram(image: &RgbImage, roi: &BBox, bins: HistogramBins) -> Result<ColorHistogram> {
    bins.check()?;
    if roi.w == 0 || roi.h == 0 {
        return Err(Error::InvalidInput("degenerate ROI".into()));
    }
    if !roi.fits_within(image.width(), image.height()) {
        return Err(Error::InvalidInput(format!(
            "ROI {roi:?} outside {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let mut counts = vec![0u64; bins.total()];
    for y in roi.y..roi.y + roi.h {
        for x in roi.x..roi.x + roi.w {
            let [r, g, b] = image.get_pixel(x, y).0;
            let (h, s, v) = rgb_to_hsv(r, g, b);
            counts[bins.bin_of(h, s, v)] += 1;
        }
    }
    let n = roi.area() as f64;
    Ok(ColorHistogram {
        bins: counts.into_iter().map(|c| c as f64 / n).collect(),
        normalized: true,
    })
}
