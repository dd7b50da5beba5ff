//! Dense real vectors, seeded randomness, and elementary reductions.

use std::ops::{Index, IndexMut};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointError {
    #[error("shape {shape:?} holds {expected} entries but data has {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape dimensions must be positive, got {0:?}")]
    ZeroDimension(Vec<usize>),
    #[error("non-finite entry {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
}

/// A flat vector of `f64` with shape metadata.
///
/// The shape only describes how the flat data is laid out (row-major); all
/// arithmetic treats the point as a plain vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl Point {
    /// One-dimensional point. Entries are not checked for finiteness; use
    /// [`Point::try_new`] for untrusted input.
    pub fn new(data: Vec<f64>) -> Self {
        let shape = vec![data.len()];
        Self { data, shape }
    }

    pub fn try_new(data: Vec<f64>) -> Result<Self, PointError> {
        let len = data.len();
        Self::with_shape(data, vec![len])
    }

    pub fn with_shape(data: Vec<f64>, shape: Vec<usize>) -> Result<Self, PointError> {
        if shape.contains(&0) && !data.is_empty() {
            return Err(PointError::ZeroDimension(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(PointError::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(PointError::NonFinite { index, value });
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self::new(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same layout as `self`, new values.
    pub fn like(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len(), "length mismatch");
        Self {
            data,
            shape: self.shape.clone(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        self.like(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Point, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len(), "length mismatch");
        self.like(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Point) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Point) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Point) -> Self {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn dot(&self, other: &Point) -> f64 {
        assert_eq!(self.len(), other.len(), "length mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn mean(points: &[Point]) -> Option<Point> {
        let first = points.first()?;
        let mut acc = vec![0.0; first.len()];
        for p in points {
            assert_eq!(p.len(), acc.len(), "length mismatch");
            for (a, v) in acc.iter_mut().zip(p.iter()) {
                *a += v;
            }
        }
        let n = points.len() as f64;
        Some(first.like(acc.into_iter().map(|v| v / n).collect()))
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl From<Vec<f64>> for Point {
    fn from(data: Vec<f64>) -> Self {
        Point::new(data)
    }
}

/// `Σ |v_i|`, accumulated with Neumaier compensation so that normalization
/// stays within a few ulp of scale invariance.
pub fn l1_norm(v: &Point) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in v.iter().map(|x| x.abs()) {
        let t = sum + x;
        if sum >= x {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `v / ‖v‖₁`, or the zero vector when `v` is zero.
pub fn l1_normalize(v: &Point) -> Point {
    let n = l1_norm(v);
    if n > 0.0 {
        v.map(|x| x / n)
    } else {
        v.map(|_| 0.0)
    }
}

fn sign_scalar(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Entrywise sign with `sign(0) = 0`.
pub fn sign(v: &Point) -> Point {
    v.map(sign_scalar)
}

/// Deterministic random source identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8; distinct stream ids give independent sequences for
/// the same seed, which is how parallel jobs stay reproducible.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh engine on another stream of the same seed.
    pub fn substream(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    /// Point with entries uniform in `[-radius, radius]`.
    pub fn uniform_ball(&mut self, len: usize, radius: f64) -> Point {
        Point::new((0..len).map(|_| self.uniform(-radius, radius)).collect())
    }
}
