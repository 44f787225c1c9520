//! Binarize dense features and scan them with each popcount path.
//!
//! `cargo run --release --example hamming_scan [codes]`

use std::time::Instant;

use guided_search::visfeat::{binarize, hamming, scan, BinaryCode, DenseFeature, PopcountPath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> guided_search::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200_000);
    let bits = 1024;
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let feature = DenseFeature((0..bits).map(|_| rng.random_range(-1.0f32..1.0)).collect());
    let query = binarize(&feature)?;
    println!("query: {} bits, {} set", query.len(), query.count_ones());

    let codes: Vec<BinaryCode> = (0..n)
        .map(|_| BinaryCode::from_words(bits, (0..bits / 64).map(|_| rng.random()).collect()))
        .collect::<Result<_, _>>()?;
    let matrix: Vec<u64> = codes.iter().flat_map(|c| c.words().iter().copied()).collect();

    let mut reference = None;
    for path in [PopcountPath::Hardware, PopcountPath::Portable] {
        if !path.is_available() {
            println!("{path:?}: not available on this CPU");
            continue;
        }
        let mut out = Vec::with_capacity(n);
        let start = Instant::now();
        scan(path, query.words(), &matrix, &mut out);
        let secs = start.elapsed().as_secs_f64();
        println!("{path:?}: {:.2e} comparisons/s", n as f64 / secs);
        match &reference {
            None => reference = Some(out),
            Some(r) => println!("  agrees with first path: {}", *r == out),
        }
    }

    let distances = reference.unwrap();
    let best = (0..n).min_by_key(|&i| distances[i]).unwrap();
    println!("nearest code #{best} at distance {}", hamming(&query, &codes[best])?);
    Ok(())
}
