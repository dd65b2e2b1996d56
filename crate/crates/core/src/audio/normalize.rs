use serde::{Deserialize, Serialize};

use super::features::{FeatureFrame, FEATURE_DIM};
use crate::error::{Error, Result};

/// Per-dimension min/max fitted on training-split frames only. Applying it
/// maps each dimension affinely onto [0.1, 0.9] and clamps anything outside
/// the fitted range (validation data included), so every normalized value is
/// guaranteed to stay inside [0.1, 0.9].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    min: Vec<f64>,
    max: Vec<f64>,
}

const LO: f64 = 0.1;
const HI: f64 = 0.9;

impl Normalizer {
    /// Fit from an iterator of frames. Errors on empty input.
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a FeatureFrame>) -> Result<Self> {
        let mut min = vec![f64::INFINITY; FEATURE_DIM];
        let mut max = vec![f64::NEG_INFINITY; FEATURE_DIM];
        let mut seen = false;
        for frame in frames {
            assert_eq!(frame.values.len(), FEATURE_DIM, "frame dimension mismatch");
            seen = true;
            for (d, &v) in frame.values.iter().enumerate() {
                let v = v as f64;
                if v < min[d] {
                    min[d] = v;
                }
                if v > max[d] {
                    max[d] = v;
                }
            }
        }
        if !seen {
            return Err(Error::Data("cannot fit a normalizer on zero frames".into()));
        }
        Ok(Normalizer { min, max })
    }

    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::Data("normalizer bound lengths disagree".into()));
        }
        if min.iter().zip(&max).any(|(a, b)| a > b) {
            return Err(Error::Data("normalizer has min > max".into()));
        }
        Ok(Normalizer { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    /// Min/max union with another fitted normalizer; fitting two shards and
    /// merging equals fitting their concatenation.
    pub fn merge(&mut self, other: &Normalizer) {
        assert_eq!(self.min.len(), other.min.len());
        for d in 0..self.min.len() {
            self.min[d] = self.min[d].min(other.min[d]);
            self.max[d] = self.max[d].max(other.max[d]);
        }
    }

    pub fn normalize_value(&self, d: usize, v: f32) -> f32 {
        let (lo, hi) = (self.min[d], self.max[d]);
        if lo == hi {
            return 0.5;
        }
        let scaled = LO + (HI - LO) * ((v as f64 - lo) / (hi - lo));
        scaled.clamp(LO, HI) as f32
    }

    pub fn normalize_frame(&self, frame: &FeatureFrame) -> FeatureFrame {
        let values = frame
            .values
            .iter()
            .enumerate()
            .map(|(d, &v)| self.normalize_value(d, v))
            .collect();
        FeatureFrame {
            values,
            t: frame.t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(fill: f32) -> FeatureFrame {
        FeatureFrame {
            values: vec![fill; FEATURE_DIM],
            t: 0.0,
        }
    }

    #[test]
    fn fit_records_min_and_max() {
        let frames = [frame(0.0), frame(10.0)];
        let n = Normalizer::fit(frames.iter()).unwrap();
        assert_eq!(n.min()[0], 0.0);
        assert_eq!(n.max()[0], 10.0);
    }

    #[test]
    fn single_frame_degenerates_to_midpoint() {
        let frames = [frame(4.0)];
        let n = Normalizer::fit(frames.iter()).unwrap();
        assert_eq!(n.min()[7], n.max()[7]);
        assert_eq!(n.normalize_value(7, 4.0), 0.5);
        assert_eq!(n.normalize_value(7, 123.0), 0.5);
    }

    #[test]
    fn empty_input_errors() {
        assert!(Normalizer::fit(std::iter::empty()).is_err());
    }

    #[test]
    fn merge_equals_fitting_the_union() {
        let a = [frame(-1.0), frame(2.0)];
        let b = [frame(0.5), frame(7.0)];
        let mut na = Normalizer::fit(a.iter()).unwrap();
        let nb = Normalizer::fit(b.iter()).unwrap();
        na.merge(&nb);
        let union: Vec<FeatureFrame> = a.iter().chain(b.iter()).cloned().collect();
        let nu = Normalizer::fit(union.iter()).unwrap();
        assert_eq!(na, nu);
    }

    #[test]
    fn endpoints_midpoint_and_clamp() {
        let frames = [frame(2.0), frame(6.0)];
        let n = Normalizer::fit(frames.iter()).unwrap();
        assert!((n.normalize_value(0, 2.0) - 0.1).abs() < 1e-7);
        assert!((n.normalize_value(0, 6.0) - 0.9).abs() < 1e-7);
        assert!((n.normalize_value(0, 4.0) - 0.5).abs() < 1e-7);
        // Unseen values clamp.
        assert!((n.normalize_value(0, 11.0) - 0.9).abs() < 1e-7);
        assert!((n.normalize_value(0, -5.0) - 0.1).abs() < 1e-7);
    }

    #[test]
    fn every_normalized_value_in_band() {
        let mut rng = crate::tensor::gradcheck::test_rng(2);
        let train: Vec<FeatureFrame> = (0..50)
            .map(|i| FeatureFrame {
                values: (0..FEATURE_DIM)
                    .map(|_| rand::Rng::random_range(&mut rng, -100.0f32..100.0))
                    .collect(),
                t: i as f64 / 60.0,
            })
            .collect();
        let n = Normalizer::fit(train.iter()).unwrap();
        // Validation frames from a wider range still clamp into the band.
        for i in 0..50 {
            let f = FeatureFrame {
                values: (0..FEATURE_DIM)
                    .map(|_| rand::Rng::random_range(&mut rng, -500.0f32..500.0))
                    .collect(),
                t: i as f64 / 60.0,
            };
            let nf = n.normalize_frame(&f);
            assert!(nf
                .values
                .iter()
                .all(|&v| (0.1..=0.9).contains(&v)), "value escaped [0.1, 0.9]");
        }
    }
}
