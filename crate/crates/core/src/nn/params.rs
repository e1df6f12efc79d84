//! Flat parameter storage: every trainable tensor lives in one contiguous
//! vector, addressed through a named layout. The optimizer, checkpoints, and
//! finite-difference probes all operate on the flat view.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{rl, Real};

/// One named tensor in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered collection of tensor descriptors; offsets are assigned in
/// registration order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its range.
    pub fn add(&mut self, name: &str, shape: &[usize]) -> Range<usize> {
        debug_assert!(
            !self.entries.iter().any(|e| e.name == name),
            "duplicate tensor name {name}"
        );
        let len: usize = shape.iter().product();
        let entry = LayoutEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.total,
        };
        let range = entry.range();
        self.total += len;
        self.entries.push(entry);
        range
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Result<&LayoutEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor '{name}'")))
    }
}

/// Two mutable sub-slices of one buffer (typically a tensor's weight and
/// bias gradients inside the flat gradient vector); the ranges must not
/// overlap.
pub fn split_two<S>(buf: &mut [S], a: Range<usize>, b: Range<usize>) -> (&mut [S], &mut [S]) {
    assert!(a.end <= b.start || b.end <= a.start, "overlapping ranges");
    if a.start < b.start {
        let (lo, hi) = buf.split_at_mut(b.start);
        (&mut lo[a], &mut hi[..b.end - b.start])
    } else {
        let (lo, hi) = buf.split_at_mut(a.start);
        let b_slice = &mut lo[b];
        (&mut hi[..a.end - a.start], b_slice)
    }
}

/// Xavier-uniform fill for a weight tensor with the given fan-in/out.
pub fn xavier_fill<S: Real>(slice: &mut [S], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in slice {
        *v = rl(rng.gen_range(-limit..limit));
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RMSProp-style optimizer: squared-gradient moving average with
/// rho = 0.99, update p -= lr * g / (sqrt(avg) + 1e-8).
#[derive(Debug, Clone)]
pub struct RmsProp<S> {
    pub rho: S,
    pub eps: S,
    sq: Vec<S>,
}

impl<S: Real> RmsProp<S> {
    pub fn new(n_params: usize) -> Self {
        Self {
            rho: rl(0.99),
            eps: rl(1e-8),
            sq: vec![S::zero(); n_params],
        }
    }

    /// One update step over the whole flat vector.
    pub fn step(&mut self, params: &mut [S], grads: &[S], lr: S) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.sq.len());
        let one = S::one();
        for i in 0..params.len() {
            let g = grads[i];
            self.sq[i] = self.rho * self.sq[i] + (one - self.rho) * g * g;
            params[i] -= lr * g / (self.sq[i].sqrt() + self.eps);
        }
    }
}

/// Learning-rate schedule: base rate with x0.1 decay at 2/3 and 5/6 of the
/// total step count.
pub fn scheduled_lr<S: Real>(base: S, step: usize, total_steps: usize) -> S {
    let frac = (step as f64 + 0.5) / total_steps.max(1) as f64;
    if frac >= 5.0 / 6.0 {
        base * rl(0.01)
    } else if frac >= 2.0 / 3.0 {
        base * rl(0.1)
    } else {
        base
    }
}
