//! Windowed voting across several DrosoNets.
//!
//! Each member's score vector is softmax-normalised, everything outside a
//! window of half-width `r` around the member's best place is zeroed, the
//! masked vectors are summed element-wise and the fused argmax is the answer.

use rayon::prelude::*;

use crate::drosonet::{train, DrosoNet, ScoreVector, TrainConfig, DEFAULT_ACTIVATIONS};
use crate::error::{Error, Result};
use crate::imaging::ImageVector;
use crate::scalar::{argmax, Scalar};
use crate::seed::derive_seed;

pub const DEFAULT_MODELS: usize = 64;
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.5;

/// Max-shifted softmax.
pub fn softmax_normalize<T: Scalar>(scores: &[T]) -> ScoreVector<T> {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let mut total = T::zero();
    for &e in &out {
        total += e;
    }
    for e in &mut out {
        *e /= total;
    }
    out
}

/// Inclusive window `[max(0, p - r), min(places - 1, p + r)]`.
pub fn window_bounds(p: usize, r: usize, places: usize) -> (usize, usize) {
    debug_assert!(p < places);
    (p.saturating_sub(r), p.saturating_add(r).min(places - 1))
}

/// Radius as a fraction of the place count, rounded down.
pub fn radius_from_fraction(fraction: f64, places: usize) -> Result<usize> {
    if !(fraction >= 0.0 && fraction.is_finite()) {
        return Err(Error::invalid(format!("radius fraction {fraction} must be >= 0")));
    }
    Ok((fraction * places as f64).floor() as usize)
}

/// Score vector that is zero outside `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedScoreVector<T> {
    values: Vec<T>,
    lower: usize,
    upper: usize,
}

impl<T: Scalar> MaskedScoreVector<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn bounds(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Keeps the window of radius `r` around the argmax of `normalized`.
pub fn mask_scores<T: Scalar>(normalized: &[T], r: usize) -> Result<MaskedScoreVector<T>> {
    let p = argmax(normalized).ok_or(Error::Empty("score vector"))?;
    let (lower, upper) = window_bounds(p, r, normalized.len());
    let values = normalized
        .iter()
        .enumerate()
        .map(|(i, &s)| if (lower..=upper).contains(&i) { s } else { T::zero() })
        .collect();
    Ok(MaskedScoreVector { values, lower, upper })
}

/// Element-wise sum in list order.
pub fn aggregate<T: Scalar>(masked: &[MaskedScoreVector<T>]) -> Result<ScoreVector<T>> {
    let first = masked.first().ok_or(Error::Empty("masked score list"))?;
    let mut fused = vec![T::zero(); first.len()];
    for v in masked {
        if v.len() != fused.len() {
            return Err(Error::DimensionMismatch {
                what: "masked score vector length",
                expected: fused.len(),
                actual: v.len(),
            });
        }
        for (f, &x) in fused.iter_mut().zip(&v.values) {
            *f += x;
        }
    }
    Ok(fused)
}

/// Fuses raw member scores: normalise, mask, sum, argmax.
pub fn fuse_scores<T: Scalar>(raw: &[ScoreVector<T>], r: usize) -> Result<(usize, ScoreVector<T>)> {
    let masked = raw
        .iter()
        .map(|s| mask_scores(&softmax_normalize(s), r))
        .collect::<Result<Vec<_>>>()?;
    let fused = aggregate(&masked)?;
    let place = argmax(&fused).expect("non-empty fused vector");
    Ok((place, fused))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub models: usize,
    pub activations: usize,
    /// Voting radius as a fraction of the number of places.
    pub radius_fraction: f64,
    pub train: TrainConfig,
    pub master_seed: u64,
    pub quantize: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            models: DEFAULT_MODELS,
            activations: DEFAULT_ACTIVATIONS,
            radius_fraction: DEFAULT_RADIUS_FRACTION,
            train: TrainConfig::default(),
            master_seed: 0,
            quantize: true,
        }
    }
}

/// Ordered collection of DrosoNets sharing input length and place count.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    models: Vec<DrosoNet<T>>,
    radius: usize,
    master_seed: u64,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(models: Vec<DrosoNet<T>>, radius: usize, master_seed: u64) -> Result<Self> {
        let first = models.first().ok_or(Error::Empty("ensemble models"))?;
        let (places, dim) = (first.places(), first.input_len());
        for m in &models {
            if m.places() != places {
                return Err(Error::DimensionMismatch {
                    what: "ensemble member place count",
                    expected: places,
                    actual: m.places(),
                });
            }
            if m.input_len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "ensemble member input length",
                    expected: dim,
                    actual: m.input_len(),
                });
            }
        }
        Ok(Self {
            models,
            radius,
            master_seed,
        })
    }

    /// Trains `cfg.models` members in parallel. Member `i` uses the seed
    /// `derive_seed(master_seed, i)` for both its projection and its
    /// training order, so the result does not depend on thread scheduling.
    pub fn train(images: &[ImageVector<T>], cfg: &EnsembleConfig) -> Result<Self> {
        if cfg.models == 0 {
            return Err(Error::invalid("ensemble needs at least one model"));
        }
        if images.len() < 2 {
            return Err(Error::TooFewPlaces(images.len()));
        }
        let radius = radius_from_fraction(cfg.radius_fraction, images.len())?;
        let models = (0..cfg.models)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(cfg.master_seed, i as u64);
                let tc = TrainConfig { seed, ..cfg.train };
                let model = train(images, &tc, seed, cfg.activations)?;
                if cfg.quantize {
                    model.quantize()
                } else {
                    Ok(model)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(models, radius, cfg.master_seed)
    }

    pub fn models(&self) -> &[DrosoNet<T>] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn places(&self) -> usize {
        self.models[0].places()
    }

    pub fn activations(&self) -> usize {
        self.models[0].activations()
    }

    pub fn with_radius(mut self, radius: usize) -> Self {
        self.radius = radius;
        self
    }

    /// Single-member ensemble with the same radius.
    pub fn member(&self, index: usize) -> Option<Self> {
        self.models.get(index).map(|m| Self {
            models: vec![m.clone()],
            radius: self.radius,
            master_seed: self.master_seed,
        })
    }

    /// First `n` members.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.models.len() {
            return Err(Error::invalid(format!(
                "cannot take {n} of {} models",
                self.models.len()
            )));
        }
        Ok(Self {
            models: self.models[..n].to_vec(),
            radius: self.radius,
            master_seed: self.master_seed,
        })
    }

    pub fn quantize(&self) -> Result<Self> {
        Ok(Self {
            models: self.models.iter().map(|m| m.quantize()).collect::<Result<_>>()?,
            radius: self.radius,
            master_seed: self.master_seed,
        })
    }

    /// Raw scores of every member, in member order.
    pub fn member_scores(&self, img: &ImageVector<T>) -> Result<Vec<ScoreVector<T>>> {
        self.models.iter().map(|m| m.scores(img)).collect()
    }

    /// Fused place (lowest index on ties) and fused score vector.
    pub fn vote(&self, img: &ImageVector<T>) -> Result<(usize, ScoreVector<T>)> {
        fuse_scores(&self.member_scores(img)?, self.radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn masked(values: &[f64], r: usize) -> Vec<f64> {
        mask_scores(values, r).unwrap().values().to_vec()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_normalize(&[0.0f64, 0.0, 0.0]), vec![1.0 / 3.0; 3]);
        let big = softmax_normalize(&[1000.0f32, 0.0]);
        assert!(big.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(big[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(big[1], 0.0, epsilon = 1e-6);
        // exp(k - 3) / (e^-2 + e^-1 + 1) evaluated by hand.
        let s = softmax_normalize(&[1.0f64, 2.0, 3.0]);
        for (got, want) in s.iter().zip([0.0900, 0.2447, 0.6652]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-4);
        }
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_bounds(0, 3, 10), (0, 3));
        assert_eq!(window_bounds(9, 3, 10), (6, 9));
        assert_eq!(window_bounds(5, 500, 1000), (0, 505));
        assert_eq!(window_bounds(4, usize::MAX, 10), (0, 9));
    }

    #[test]
    fn mask_examples() {
        let m = masked(&[0.1, 0.1, 0.4, 0.3, 0.1], 1);
        assert_eq!(m, [0.0, 0.1, 0.4, 0.3, 0.0]);
        let m = masked(&[0.5, 0.2, 0.1, 0.1, 0.1], 1);
        assert_eq!(m, [0.5, 0.2, 0.0, 0.0, 0.0]);
        let s = [0.2, 0.1, 0.3, 0.4];
        assert_eq!(masked(&s, 3), s);
        assert_eq!(mask_scores(&[0.2, 0.1, 0.3, 0.4], 1).unwrap().bounds(), (2, 3));
    }

    #[test]
    fn aggregate_examples() {
        let one = mask_scores(&[0.2f64, 0.5, 0.3], 5).unwrap();
        assert_eq!(aggregate(std::slice::from_ref(&one)).unwrap(), one.values());
        let a = mask_scores(&[0.0f64, 1.0, 0.0], 0).unwrap();
        let b = mask_scores(&[0.0f64, 0.0, 1.0], 0).unwrap();
        assert_eq!(aggregate(&[a, b]).unwrap(), [0.0, 1.0, 1.0]);
        assert!(matches!(aggregate::<f32>(&[]), Err(Error::Empty(_))));
        let short = mask_scores(&[1.0f64, 0.0], 0).unwrap();
        let long = mask_scores(&[1.0f64, 0.0, 0.0], 0).unwrap();
        assert!(aggregate(&[short, long]).is_err());
    }

    #[test]
    fn three_member_scenario() {
        // Already-normalised vectors masked directly (no softmax), r = 1.
        let s = [
            [0.1, 0.2, 0.4, 0.2, 0.1],
            [0.1, 0.1, 0.2, 0.5, 0.1],
            [0.4, 0.2, 0.2, 0.1, 0.1],
        ];
        let m: Vec<_> = s.iter().map(|v| mask_scores(v, 1).unwrap()).collect();
        assert_eq!(m[0].bounds(), (1, 3));
        assert_eq!(m[1].bounds(), (2, 4));
        assert_eq!(m[2].bounds(), (0, 1));
        // Brute-force loop sum.
        let mut oracle = [0.0f64; 5];
        for (d, (lo, hi)) in [(0usize, (1usize, 3usize)), (1, (2, 4)), (2, (0, 1))] {
            for i in lo..=hi {
                oracle[i] += s[d][i];
            }
        }
        let fused = aggregate(&m).unwrap();
        assert_eq!(fused, oracle);
        for (got, want) in fused.iter().zip([0.4, 0.4, 0.6, 0.7, 0.1]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert_eq!(argmax(&fused), Some(3));
    }

    #[test]
    fn radius_fraction() {
        assert_eq!(radius_from_fraction(0.5, 1000).unwrap(), 500);
        assert_eq!(radius_from_fraction(0.5, 51).unwrap(), 25);
        assert!(radius_from_fraction(-0.1, 10).is_err());
    }

    proptest! {
        #[test]
        fn unanimous_members_win(p in 0usize..12, extra in 1usize..12, r in 0usize..30, n in 1usize..6, seed in any::<u64>()) {
            let places = p + extra;
            let raw: Vec<Vec<f64>> = (0..n)
                .map(|d| (0..places)
                    .map(|i| {
                        let noise = (crate::seed::splitmix64(seed ^ (d * 1000 + i) as u64) % 1000) as f64 / 1000.0;
                        if i == p { 5.0 } else { noise }
                    })
                    .collect())
                .collect();
            prop_assert_eq!(fuse_scores(&raw, r).unwrap().0, p);
        }

        #[test]
        fn masked_mass_properties(v in prop::collection::vec(-20.0f64..20.0, 1..40), r in 0usize..45) {
            let s = softmax_normalize(&v);
            let m = mask_scores(&s, r).unwrap();
            let (lo, hi) = m.bounds();
            let p = argmax(&s).unwrap();
            prop_assert!(lo <= p && p <= hi);
            for (i, (&a, &b)) in m.values().iter().zip(&s).enumerate() {
                if (lo..=hi).contains(&i) { prop_assert_eq!(a, b); } else { prop_assert_eq!(a, 0.0); }
            }
            prop_assert!(m.values().iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }
}
