//! Built-in measurements that need no model.
//!
//! `motion_proxy` and `consistency_proxy` are crude stand-ins for the
//! model-backed motion and consistency scores. They are stored under their
//! own keys and never compared against the model score thresholds.

use thiserror::Error;

use crate::ingest::FramePack;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("frame has no pixels")]
    EmptyFrame,
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-length embedding")]
    ZeroVector,
    #[error("embedding must be non-empty and finite")]
    InvalidEmbedding,
}

/// A dense, finite vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::InvalidEmbedding);
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Index of the middle frame: `floor(frame_count / 2)`.
pub fn mid_frame_index(frame_count: usize) -> usize {
    frame_count / 2
}

/// Mean pixel value of a GRAY8 frame.
pub fn brightness(gray: &[u8]) -> Result<f64, MetricError> {
    if gray.is_empty() {
        return Err(MetricError::EmptyFrame);
    }
    let sum: u64 = gray.iter().map(|&v| u64::from(v)).sum();
    Ok(sum as f64 / gray.len() as f64)
}

/// Brightness of the middle frame of `pack`.
pub fn mid_frame_brightness(pack: &FramePack) -> Result<f64, MetricError> {
    let mid = pack.still(mid_frame_index(pack.frame_count())).map_err(|_| MetricError::EmptyFrame)?;
    brightness(mid.to_gray().frame(0))
}

fn gray_frames(pack: &FramePack) -> Result<FramePack, MetricError> {
    if pack.frame_count() < 2 {
        return Err(MetricError::TooFewFrames(pack.frame_count()));
    }
    Ok(pack.to_gray())
}

/// Mean absolute luma difference over all adjacent frame pairs.
pub fn motion_proxy(pack: &FramePack) -> Result<f64, MetricError> {
    let gray = gray_frames(pack)?;
    let pairs = gray.frame_count() - 1;
    let total: u64 = (0..pairs)
        .map(|i| {
            gray.frame(i)
                .iter()
                .zip(gray.frame(i + 1))
                .map(|(&a, &b)| u64::from(a.abs_diff(b)))
                .sum::<u64>()
        })
        .sum();
    Ok(total as f64 / (pairs * gray.pixels()) as f64)
}

/// Pearson correlation of two equally sized frames. Constant frames count as
/// perfectly correlated with each other and uncorrelated with anything else.
pub fn normalized_cross_correlation(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len() as f64;
    let mean = |x: &[u8]| x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    match (saa == 0.0, sbb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
    }
}

/// `(1 - r) / 2` where `r` is the mean adjacent-frame correlation: 0 for a
/// static clip, 1 for a clip alternating with its negative.
pub fn consistency_proxy(pack: &FramePack) -> Result<f64, MetricError> {
    let gray = gray_frames(pack)?;
    let pairs = gray.frame_count() - 1;
    let r = (0..pairs).map(|i| normalized_cross_correlation(gray.frame(i), gray.frame(i + 1))).sum::<f64>() / pairs as f64;
    Ok(((1.0 - r) / 2.0).clamp(0.0, 1.0))
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PixelFormat;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn gray(frames: &[Vec<u8>], w: u32, h: u32) -> FramePack {
        FramePack::from_frames(w, h, 30, 1, PixelFormat::Gray8, frames).unwrap()
    }

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mid_frame() {
        assert_eq!(mid_frame_index(1), 0);
        assert_eq!(mid_frame_index(5), 2);
        assert_eq!(mid_frame_index(88), 44);
    }

    #[test]
    fn brightness_values() {
        assert_eq!(brightness(&[0; 16]).unwrap(), 0.0);
        assert_eq!(brightness(&[128; 16]).unwrap(), 128.0);
        let mut half = vec![0u8; 8];
        half.extend([255u8; 8]);
        assert_eq!(brightness(&half).unwrap(), 127.5);
        assert_eq!(brightness(&[]), Err(MetricError::EmptyFrame));
    }

    #[test]
    fn motion_values() {
        let stat = gray(&[vec![40; 4], vec![40; 4], vec![40; 4]], 2, 2);
        assert_eq!(motion_proxy(&stat).unwrap(), 0.0);
        let alt = gray(&[vec![0; 4], vec![255; 4], vec![0; 4], vec![255; 4]], 2, 2);
        assert_eq!(motion_proxy(&alt).unwrap(), 255.0);
        let ramp = gray(&[vec![10; 4], vec![20; 4], vec![40; 4]], 2, 2);
        assert_eq!(motion_proxy(&ramp).unwrap(), 15.0);
        assert_eq!(motion_proxy(&gray(&[vec![1; 4]], 2, 2)), Err(MetricError::TooFewFrames(1)));
    }

    #[test]
    fn consistency_static_and_negative() {
        let stat = gray(&vec![vec![3, 9, 27, 81]; 3], 2, 2);
        assert_eq!(consistency_proxy(&stat).unwrap(), 0.0);
        let f: Vec<u8> = (0..64).map(|i| (i * 4) as u8).collect();
        let neg: Vec<u8> = f.iter().map(|v| 255 - v).collect();
        // brute-force correlation of x against 255 - x
        let n = f.len() as f64;
        let xs: Vec<f64> = f.iter().map(|&v| f64::from(v)).collect();
        let ys: Vec<f64> = neg.iter().map(|&v| f64::from(v)).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let r = cov / (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() * ys.iter().map(|y| (y - my).powi(2)).sum::<f64>()).sqrt();
        assert!((r + 1.0).abs() < 1e-12);
        let v = consistency_proxy(&gray(&[f, neg], 8, 8)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn consistency_of_noise_is_near_half() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let mut total = 0.0;
        for _ in 0..100 {
            let a: Vec<u8> = (0..256).map(|_| rng.gen()).collect();
            let b: Vec<u8> = (0..256).map(|_| rng.gen()).collect();
            let v = consistency_proxy(&gray(&[a, b], 16, 16)).unwrap();
            assert!((0.3..=0.7).contains(&v), "{v}");
            total += v;
        }
        assert!((total / 100.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn cosine_values() {
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        let v = cosine_similarity(&emb(&[1.0, 1.0]), &emb(&[1.0, 0.0])).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert_eq!(cosine_similarity(&emb(&[1.0]), &emb(&[1.0, 0.0])), Err(MetricError::DimensionMismatch(1, 2)));
        assert_eq!(cosine_similarity(&emb(&[0.0, 0.0]), &emb(&[1.0, 0.0])), Err(MetricError::ZeroVector));
    }

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0..100.0f64, 1..32).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn self_similarity_is_one(a in nonzero_vec()) {
            let a = emb(&a);
            prop_assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scale_invariant((a, b) in (1usize..16).prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(-10.0..10.0f64, n))),
                           k in 0.01..100.0f64) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
            let base = cosine_similarity(&emb(&a), &emb(&b)).unwrap();
            let s = cosine_similarity(&emb(&scaled), &emb(&b)).unwrap();
            prop_assert!((base - s).abs() < 1e-9);
        }

        #[test]
        fn outputs_stay_in_range(frames in prop::collection::vec(prop::collection::vec(any::<u8>(), 12), 2..6)) {
            let pack = gray(&frames, 4, 3);
            let b = brightness(&frames[0]).unwrap();
            prop_assert!((0.0..=255.0).contains(&b));
            let m = motion_proxy(&pack).unwrap();
            prop_assert!((0.0..=255.0).contains(&m));
            let c = consistency_proxy(&pack).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
        }

        #[test]
        fn brightness_ignores_pixel_order(mut frame in prop::collection::vec(any::<u8>(), 1..200), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let before = brightness(&frame).unwrap();
            frame.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
            prop_assert_eq!(before, brightness(&frame).unwrap());
        }
    }
}
