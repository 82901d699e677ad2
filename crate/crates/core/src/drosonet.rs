//! Single DrosoNet: a sparse binary random projection of the image, a
//! winner-take-half binarisation into a feature tag, and a bias-free fully
//! connected layer with one output per place.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::ImageVector;
use crate::scalar::{argmax, Scalar};
use crate::seed::substream;
use crate::voting::softmax_normalize;

pub const DEFAULT_ACTIVATIONS: usize = 192;
pub const DEFAULT_DENSITY: f64 = 0.1;

/// Per-place scores.
pub type ScoreVector<T> = Vec<T>;

/// Sparse binary `rows x cols` matrix with the same number of ones in every
/// column. Each column is kept as its sorted list of set row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectionMatrix {
    rows: usize,
    cols: usize,
    ones_per_col: usize,
    indices: Vec<u32>,
}

impl ProjectionMatrix {
    /// Draws `round(density * rows)` distinct rows per column with a seeded
    /// partial Fisher-Yates shuffle.
    pub fn generate(seed: u64, rows: usize, cols: usize, density: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("projection shape {rows}x{cols} is empty")));
        }
        if !(density > 0.0 && density < 1.0) {
            return Err(Error::invalid(format!("density {density} outside (0, 1)")));
        }
        let ones = (density * rows as f64).round() as usize;
        if ones == 0 {
            return Err(Error::invalid(format!(
                "density {density} selects no rows out of {rows}"
            )));
        }
        if rows > u32::MAX as usize {
            return Err(Error::invalid("projection has too many rows"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<u32> = Vec::with_capacity(rows);
        let mut indices = Vec::with_capacity(ones * cols);
        for _ in 0..cols {
            perm.clear();
            perm.extend(0..rows as u32);
            for j in 0..ones {
                let pick = rng.random_range(j..rows);
                perm.swap(j, pick);
            }
            let col = &mut perm[..ones];
            col.sort_unstable();
            indices.extend_from_slice(col);
        }
        Ok(Self {
            rows,
            cols,
            ones_per_col: ones,
            indices,
        })
    }

    /// Rebuilds a matrix from packed column bitsets: `ceil(rows/8)` bytes per
    /// column, row `i` at byte `i/8`, bit `i%8` (least significant first).
    pub fn from_bitsets(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        let stride = rows.div_ceil(8);
        if bytes.len() != stride * cols {
            return Err(Error::DimensionMismatch {
                what: "projection bitset bytes",
                expected: stride * cols,
                actual: bytes.len(),
            });
        }
        let mut indices = Vec::new();
        let mut ones_per_col = None;
        for (k, col) in bytes.chunks_exact(stride).enumerate() {
            let before = indices.len();
            for (b, &byte) in col.iter().enumerate() {
                let mut bits = byte;
                while bits != 0 {
                    let row = b * 8 + bits.trailing_zeros() as usize;
                    if row >= rows {
                        return Err(Error::invalid(format!("column {k} sets padding row {row}")));
                    }
                    indices.push(row as u32);
                    bits &= bits - 1;
                }
            }
            let count = indices.len() - before;
            match ones_per_col {
                None if count == 0 => return Err(Error::invalid("projection column is empty")),
                None => ones_per_col = Some(count),
                Some(c) if c != count => {
                    return Err(Error::invalid(format!(
                        "column {k} has {count} ones, expected {c}"
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            rows,
            cols,
            ones_per_col: ones_per_col.unwrap_or(0),
            indices,
        })
    }

    /// Packed column bitsets in the layout read by [`Self::from_bitsets`].
    pub fn to_bitsets(&self) -> Vec<u8> {
        let stride = self.rows.div_ceil(8);
        let mut out = vec![0u8; stride * self.cols];
        for k in 0..self.cols {
            let col = &mut out[k * stride..(k + 1) * stride];
            for &row in self.column(k) {
                col[row as usize / 8] |= 1 << (row % 8);
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn ones_per_col(&self) -> usize {
        self.ones_per_col
    }

    /// Sorted set row indices of column `k`.
    pub fn column(&self, k: usize) -> &[u32] {
        &self.indices[k * self.ones_per_col..(k + 1) * self.ones_per_col]
    }

    /// Activation of every column: the sum of the pixels it selects.
    pub fn activations<T: Scalar>(&self, img: &[T]) -> Result<Vec<T>> {
        if img.len() != self.rows {
            return Err(Error::DimensionMismatch {
                what: "image length vs projection rows",
                expected: self.rows,
                actual: img.len(),
            });
        }
        Ok(self
            .indices
            .chunks_exact(self.ones_per_col)
            .map(|col| {
                let mut acc = T::zero();
                for &i in col {
                    acc += img[i as usize];
                }
                acc
            })
            .collect())
    }
}

/// Binary image signature of length K.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureTag {
    len: usize,
    words: Vec<u64>,
}

impl FeatureTag {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut tag = Self::zeros(bits.len());
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            tag.set(i);
        }
        tag
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set bit positions in ascending order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                (bits != 0).then(|| {
                    let i = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    w * 64 + i
                })
            })
        })
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }
}

/// Sets the `floor(K/2)` largest activations to one. Equal values are ranked
/// by position, lower index first.
pub fn binarize<T: Scalar>(activations: &[T]) -> FeatureTag {
    let k = activations.len();
    let half = k / 2;
    let mut tag = FeatureTag::zeros(k);
    if half == 0 {
        return tag;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.select_nth_unstable_by(half - 1, |&a, &b| {
        activations[b]
            .partial_cmp(&activations[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in &order[..half] {
        tag.set(i);
    }
    tag
}

pub fn encode<T: Scalar>(img: &ImageVector<T>, projection: &ProjectionMatrix) -> Result<FeatureTag> {
    Ok(binarize(&projection.activations(img.as_slice())?))
}

/// Dense `rows x cols` weights, row-major: one row per activation, one column per place.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> WeightMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "weight matrix elements",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if cols < 2 {
            return Err(Error::TooFewPlaces(cols));
        }
        if data.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weight matrix contains non-finite values"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    fn row_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, w| m.max(w.abs()))
    }
}

fn check_tag_len(tag: &FeatureTag, rows: usize) -> Result<()> {
    if tag.len() != rows {
        return Err(Error::DimensionMismatch {
            what: "feature tag length vs weight rows",
            expected: rows,
            actual: tag.len(),
        });
    }
    Ok(())
}

/// Sum of the weight rows selected by the tag, accumulated in ascending row order.
pub fn forward<T: Scalar>(tag: &FeatureTag, weights: &WeightMatrix<T>) -> Result<ScoreVector<T>> {
    check_tag_len(tag, weights.rows)?;
    let mut scores = vec![T::zero(); weights.cols];
    for k in tag.ones() {
        for (s, &w) in scores.iter_mut().zip(weights.row(k)) {
            *s += w;
        }
    }
    Ok(scores)
}

/// Symmetric per-tensor int8 weights: `w ~= scale * q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights<T> {
    rows: usize,
    cols: usize,
    scale: T,
    q: Vec<i8>,
}

impl<T: Scalar> QuantizedWeights<T> {
    pub fn quantize(weights: &WeightMatrix<T>) -> Result<Self> {
        let max = weights.max_abs();
        if max == T::zero() {
            return Err(Error::ZeroWeights);
        }
        let scale = max / T::from_count(127);
        let limit = T::from_count(127);
        let q = weights
            .data
            .iter()
            .map(|&w| {
                let v = (w / scale).round().max(-limit).min(limit);
                v.to_i8().expect("clamped to i8 range")
            })
            .collect();
        Ok(Self {
            rows: weights.rows,
            cols: weights.cols,
            scale,
            q,
        })
    }

    pub fn from_raw(rows: usize, cols: usize, scale: T, q: Vec<i8>) -> Result<Self> {
        if q.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "quantized weight elements",
                expected: rows * cols,
                actual: q.len(),
            });
        }
        if !(scale.is_finite() && scale > T::zero()) {
            return Err(Error::invalid(format!("quantization scale {scale} is not positive")));
        }
        if cols < 2 {
            return Err(Error::TooFewPlaces(cols));
        }
        if q.contains(&i8::MIN) {
            return Err(Error::invalid("quantized weight -128 outside [-127, 127]"));
        }
        Ok(Self { rows, cols, scale, q })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn values(&self) -> &[i8] {
        &self.q
    }

    pub fn dequantize(&self) -> WeightMatrix<T> {
        WeightMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.q.iter().map(|&q| self.scale * T::from_i8(q).unwrap()).collect(),
        }
    }

    /// Integer accumulation of the selected rows, scaled once at the end.
    pub fn forward(&self, tag: &FeatureTag) -> Result<ScoreVector<T>> {
        check_tag_len(tag, self.rows)?;
        let mut acc = vec![0i32; self.cols];
        for k in tag.ones() {
            let row = &self.q[k * self.cols..(k + 1) * self.cols];
            for (a, &q) in acc.iter_mut().zip(row) {
                *a += q as i32;
            }
        }
        Ok(acc
            .into_iter()
            .map(|a| self.scale * T::from_i32(a).unwrap())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weights<T> {
    Float(WeightMatrix<T>),
    Quantized(QuantizedWeights<T>),
}

impl<T: Scalar> Weights<T> {
    pub fn rows(&self) -> usize {
        match self {
            Weights::Float(w) => w.rows(),
            Weights::Quantized(q) => q.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Weights::Float(w) => w.cols(),
            Weights::Quantized(q) => q.cols(),
        }
    }

    pub fn forward(&self, tag: &FeatureTag) -> Result<ScoreVector<T>> {
        match self {
            Weights::Float(w) => forward(tag, w),
            Weights::Quantized(q) => q.forward(tag),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrosoNet<T> {
    seed: u64,
    projection: ProjectionMatrix,
    weights: Weights<T>,
}

impl<T: Scalar> DrosoNet<T> {
    pub fn from_parts(seed: u64, projection: ProjectionMatrix, weights: Weights<T>) -> Result<Self> {
        if projection.cols() != weights.rows() {
            return Err(Error::DimensionMismatch {
                what: "projection columns vs weight rows",
                expected: projection.cols(),
                actual: weights.rows(),
            });
        }
        Ok(Self {
            seed,
            projection,
            weights,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }

    pub fn places(&self) -> usize {
        self.weights.cols()
    }

    pub fn activations(&self) -> usize {
        self.projection.cols()
    }

    pub fn input_len(&self) -> usize {
        self.projection.rows()
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.weights, Weights::Quantized(_))
    }

    pub fn encode(&self, img: &ImageVector<T>) -> Result<FeatureTag> {
        encode(img, &self.projection)
    }

    pub fn scores(&self, img: &ImageVector<T>) -> Result<ScoreVector<T>> {
        self.weights.forward(&self.encode(img)?)
    }

    /// Best place (lowest index on ties) and the raw score vector.
    pub fn predict(&self, img: &ImageVector<T>) -> Result<(usize, ScoreVector<T>)> {
        let scores = self.scores(img)?;
        let place = argmax(&scores).expect("at least two places");
        Ok((place, scores))
    }

    /// Post-training int8 quantization. Already quantized models are returned as is.
    pub fn quantize(&self) -> Result<Self> {
        let weights = match &self.weights {
            Weights::Float(w) => Weights::Quantized(QuantizedWeights::quantize(w)?),
            Weights::Quantized(q) => Weights::Quantized(q.clone()),
        };
        Ok(Self {
            seed: self.seed,
            projection: self.projection.clone(),
            weights,
        })
    }

    /// Fraction of `images` whose prediction equals their index.
    pub fn accuracy(&self, images: &[ImageVector<T>]) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::Empty("accuracy images"));
        }
        let mut hits = 0;
        for (label, img) in images.iter().enumerate() {
            if self.predict(img)?.0 == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / images.len() as f64)
    }
}

/// Trains one DrosoNet on one exemplar per place (`images[p]` is place `p`).
///
/// The projection is drawn from `seed`, the initial weights from a separate
/// stream of `seed`, and the per-epoch visiting order from `cfg.seed`.
/// Training minimises softmax cross-entropy with plain per-sample SGD.
pub fn train<T: Scalar>(
    images: &[ImageVector<T>],
    cfg: &TrainConfig,
    seed: u64,
    activations: usize,
) -> Result<DrosoNet<T>> {
    cfg.validate()?;
    let places = images.len();
    if places < 2 {
        return Err(Error::TooFewPlaces(places));
    }
    let dim = images[0].len();
    let projection =
        ProjectionMatrix::generate(substream(seed, 0), dim, activations, DEFAULT_DENSITY)?;
    let tags = images
        .iter()
        .map(|img| encode(img, &projection))
        .collect::<Result<Vec<_>>>()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(substream(seed, 1));
    let data = (0..activations * places)
        .map(|_| T::from_f64(init_rng.random_range(-0.01..=0.01)).unwrap())
        .collect();
    let mut weights = WeightMatrix::new(activations, places, data)?;

    let lr = T::from_f64(cfg.learning_rate).unwrap();
    let mut order_rng = ChaCha8Rng::seed_from_u64(substream(cfg.seed, 2));
    let mut order: Vec<usize> = (0..places).collect();
    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut order_rng);
        }
        for &p in &order {
            let tag = &tags[p];
            let mut grad = softmax_normalize(&forward(tag, &weights)?);
            grad[p] -= T::one();
            for k in tag.ones() {
                for (w, &g) in weights.row_mut(k).iter_mut().zip(&grad) {
                    *w -= lr * g;
                }
            }
        }
    }

    DrosoNet::from_parts(seed, projection, Weights::Float(weights))
}
