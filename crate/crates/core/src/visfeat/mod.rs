//! Appearance and color features.
//!
//! Dense appearance features are binarized by sign (strictly positive
//! values become 1) and compared by Hamming distance. Color is an HSV
//! histogram over the item's ROI. The two are fused into one distance in
//! `[0, 1]`:
//!
//! ```text
//! d = w · hamming / F + (1 − w) · L1(hist_q, hist_r) / 2
//! ```

mod color;
mod hamming;

pub use color::{color_histogram, rgb_to_hsv, ColorHistogram, HistogramBins};
pub use hamming::{hamming, hamming_with, scan, BinaryCode, PopcountPath};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::RgbImage;

use crate::{Error, Result};

/// Default appearance-feature width.
pub const DEFAULT_FEATURE_DIM: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeature(pub Vec<f32>);

impl DenseFeature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    const MAGIC: &'static [u8; 4] = b"FPSF";
    const VERSION: u32 = 1;

    /// `FPSF`, u32 version, u32 dim, then little-endian f32 values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.0.len() as u32).to_le_bytes())?;
        for v in &self.0 {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.0.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |d: &str| Error::format("feature", d);
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
        if version != Self::VERSION {
            return Err(bad("unsupported version"));
        }
        let dim = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != dim * 4 {
            return Err(bad("payload length does not match dimension"));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(DenseFeature(values))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Sign thresholding: bit `i` is set iff `values[i] > 0`.
pub fn binarize(feature: &DenseFeature) -> Result<BinaryCode> {
    if feature.0.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in dense feature".into()));
    }
    Ok(BinaryCode::from_bits(feature.0.iter().map(|&v| v > 0.0)))
}

/// Weight of the appearance term; color gets the remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceWeights {
    appearance: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        DistanceWeights { appearance: 0.7 }
    }
}

impl DistanceWeights {
    pub fn new(appearance: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&appearance) {
            return Err(Error::InvalidInput(format!(
                "appearance weight {appearance} outside [0, 1]"
            )));
        }
        Ok(DistanceWeights { appearance })
    }

    pub fn appearance(&self) -> f64 {
        self.appearance
    }

    pub fn color(&self) -> f64 {
        1.0 - self.appearance
    }
}

/// Fused appearance/color distance in `[0, 1]`.
pub fn combined_distance(
    query: (&BinaryCode, &ColorHistogram),
    reference: (&BinaryCode, &ColorHistogram),
    weights: DistanceWeights,
) -> Result<f64> {
    let (qc, qh) = query;
    let (rc, rh) = reference;
    if !qh.is_normalized() || !rh.is_normalized() {
        return Err(Error::InvalidInput("histograms must be normalized".into()));
    }
    let bits = qc.len();
    let ham = hamming(qc, rc)? as f64;
    let appearance = if bits == 0 { 0.0 } else { ham / bits as f64 };
    let color = qh.l1(rh)? / 2.0;
    Ok(weights.appearance() * appearance + weights.color() * color)
}

/// Decodes an in-memory image; binary PPM (P6) is always supported.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_image(&std::fs::read(path)?)
}

/// Encodes as binary PPM (P6, maxval 255).
pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.as_raw());
    out
}

pub fn save_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_ppm(image))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_thresholding() {
        let code = binarize(&DenseFeature(vec![0.5, -0.1, 0.0, 2.3])).unwrap();
        let bits: Vec<bool> = (0..4).map(|i| code.bit(i)).collect();
        assert_eq!(bits, [true, false, false, true]);
        assert_eq!(code.words(), &[0b1001]);
    }

    #[test]
    fn negative_zero_maps_to_zero_bit() {
        let code = binarize(&DenseFeature(vec![-0.0, 0.0])).unwrap();
        assert_eq!(code.count_ones(), 0);
    }

    #[test]
    fn all_negative_is_all_zero() {
        let code = binarize(&DenseFeature(vec![-1.0; 100])).unwrap();
        assert_eq!(code.count_ones(), 0);
        assert_eq!(code.len(), 100);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(binarize(&DenseFeature(vec![1.0, f32::NAN])).is_err());
    }

    #[test]
    fn feature_file_round_trip_and_errors() {
        let f = DenseFeature(vec![1.5, -2.0, 0.25]);
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"FPSF");
        assert_eq!(bytes.len(), 12 + 12);
        assert_eq!(DenseFeature::from_bytes(&bytes).unwrap(), f);
        assert!(DenseFeature::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(DenseFeature::from_bytes(&wrong).is_err());
    }

    fn hist(bins: &[f64]) -> ColorHistogram {
        ColorHistogram::new(bins.to_vec(), true).unwrap()
    }

    #[test]
    fn hand_computed_fusion() {
        // F = 8, Hamming 2, L1 = 0.4, w = 0.7 -> 0.7*0.25 + 0.3*0.2.
        let a = BinaryCode::from_bits([true, true, false, false, false, false, false, false]);
        let b = BinaryCode::zeros(8);
        let ha = hist(&[0.5, 0.3, 0.2]);
        let hb = hist(&[0.3, 0.3, 0.4]);
        let d = combined_distance((&a, &ha), (&b, &hb), DistanceWeights::new(0.7).unwrap()).unwrap();
        assert!((d - 0.235).abs() < 1e-12);
    }

    #[test]
    fn weight_extremes() {
        let a = BinaryCode::from_bits([true, false, true, false]);
        let b = BinaryCode::from_bits([true, true, true, true]);
        let h = hist(&[1.0, 0.0]);
        let g = hist(&[0.0, 1.0]);
        let only_code = combined_distance((&a, &h), (&b, &g), DistanceWeights::new(1.0).unwrap()).unwrap();
        assert_eq!(only_code, 0.5);
        let only_color = combined_distance((&a, &h), (&b, &h), DistanceWeights::new(0.0).unwrap()).unwrap();
        assert_eq!(only_color, 0.0);
    }

    #[test]
    fn fusion_rejects_mismatches() {
        let w = DistanceWeights::default();
        let h2 = hist(&[0.5, 0.5]);
        let h3 = hist(&[0.5, 0.25, 0.25]);
        let c4 = BinaryCode::zeros(4);
        let c5 = BinaryCode::zeros(5);
        assert!(combined_distance((&c4, &h2), (&c5, &h2), w).is_err());
        assert!(combined_distance((&c4, &h2), (&c4, &h3), w).is_err());
        assert!(DistanceWeights::new(1.5).is_err());
    }

    #[test]
    fn ppm_round_trip() {
        let img = RgbImage::from_fn(3, 2, |x, y| image::Rgb([x as u8 * 40, y as u8 * 90, 7]));
        let back = decode_image(&encode_ppm(&img)).unwrap();
        assert_eq!(back, img);
    }
}
