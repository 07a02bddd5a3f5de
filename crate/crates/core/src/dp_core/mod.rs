//! Token-wise clipping and Gaussian noise.
//!
//! [`perturb_sequence`] clips every per-token gradient to L2 norm `C`, adds
//! `N(0, σ_i² C² I)` to the tokens with `σ_i > 0`, and sums the results.
//! [`perturb_uniform`] is classic DP-SGD: clip per sample, sum, one noise draw
//! on the aggregate.
//!
//! Sums use a fixed pairwise tree (split at `len / 2`, left + right), so the
//! floating point result does not depend on how the terms were computed.

mod rng;

pub use rng::RngStream;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise_policy::{AnnotatedSequence, NoisePolicy, PolicyError, Tier};

#[derive(Debug, Error)]
pub enum DpError {
    #[error("non-finite gradient entry at coordinate {coord}{}", token.map(|t| format!(" (token {t})")).unwrap_or_default())]
    NonFinite { token: Option<usize>, coord: usize },
    #[error("{grads} gradients for {tokens} tokens")]
    LengthMismatch { grads: usize, tokens: usize },
    #[error("gradient dimension {got} differs from {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid clip norm {0}")]
    ClipNorm(f64),
    #[error("invalid noise multiplier {0}")]
    Sigma(f64),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Flat, finite gradient over all trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DpError> {
        match values.iter().position(|x| !x.is_finite()) {
            Some(coord) => Err(DpError::NonFinite { token: None, coord }),
            None => Ok(GradientVector(values)),
        }
    }

    /// Like [`GradientVector::new`], tagging a rejection with the token index.
    pub fn for_token(values: Vec<f64>, token: usize) -> Result<Self, DpError> {
        Self::new(values).map_err(|e| match e {
            DpError::NonFinite { coord, .. } => DpError::NonFinite {
                token: Some(token),
                coord,
            },
            other => other,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        GradientVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl GradientVector {
    /// Scales in place by `min(1, C / ‖g‖)`.
    pub fn clip_in_place(&mut self, clip_norm: f64) -> Result<(), DpError> {
        clip_slice(&mut self.0, clip_norm)
    }

    /// Adds `N(0, (σ·C)²)` noise in place; σ = 0 is a no-op and draws nothing.
    pub fn add_noise(&mut self, sigma: f64, clip_norm: f64, stream: &RngStream) -> Result<(), DpError> {
        noise_slice(&mut self.0, sigma, clip_norm, stream)
    }
}

/// Scales `g` in place by `min(1, C / ‖g‖)`; vectors inside the ball are left
/// untouched.
pub fn clip_slice(g: &mut [f64], clip_norm: f64) -> Result<(), DpError> {
    if !(clip_norm > 0.0) {
        return Err(DpError::ClipNorm(clip_norm));
    }
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        g.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(())
}

/// Adds i.i.d. `N(0, (σ·C)²)` to every coordinate of `g`, drawing from
/// `stream`. σ = 0 leaves `g` untouched.
pub fn noise_slice(g: &mut [f64], sigma: f64, clip_norm: f64, stream: &RngStream) -> Result<(), DpError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(DpError::Sigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let std = sigma * clip_norm;
    let mut rng = stream.rng();
    for x in g.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x += std * z;
    }
    match g.iter().position(|x| !x.is_finite()) {
        Some(coord) => Err(DpError::NonFinite { token: None, coord }),
        None => Ok(()),
    }
}

/// One token's share of the mechanism: reject non-finite input, clip to `C`,
/// add `N(0, σ² C² I)`.
pub fn perturb_token(g: &mut [f64], token: usize, sigma: f64, clip_norm: f64, stream: &RngStream) -> Result<(), DpError> {
    if let Some(coord) = g.iter().position(|x| !x.is_finite()) {
        return Err(DpError::NonFinite {
            token: Some(token),
            coord,
        });
    }
    clip_slice(g, clip_norm)?;
    noise_slice(g, sigma, clip_norm, stream)
}

/// Scales `g` by `min(1, C / ‖g‖)`. Vectors already inside the ball are
/// returned unchanged.
pub fn clip(g: &GradientVector, clip_norm: f64) -> Result<GradientVector, DpError> {
    let mut out = g.clone();
    out.clip_in_place(clip_norm)?;
    Ok(out)
}

/// Adds i.i.d. `N(0, (σ·C)²)` to every coordinate; σ = 0 returns `g` untouched.
pub fn noise(g: &GradientVector, sigma: f64, clip_norm: f64, stream: &RngStream) -> Result<GradientVector, DpError> {
    let mut out = g.clone();
    out.add_noise(sigma, clip_norm, stream)?;
    Ok(out)
}

/// How many tokens landed in each noise tier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub none: u64,
    pub low: u64,
    pub high: u64,
}

impl TierCounts {
    pub fn add(&mut self, tier: Tier) {
        match tier {
            Tier::None => self.none += 1,
            Tier::Low => self.low += 1,
            Tier::High => self.high += 1,
        }
    }

    pub fn merge(&mut self, other: TierCounts) {
        self.none += other.none;
        self.low += other.low;
        self.high += other.high;
    }

    pub fn total(&self) -> u64 {
        self.none + self.low + self.high
    }
}

/// Clip, conditionally noise, and sum per-token gradients. Token `i` draws its
/// noise from `stream.split(i)`.
pub fn perturb_tokens(
    mut grads: Vec<GradientVector>,
    sigmas: &[f64],
    clip_norm: f64,
    stream: &RngStream,
) -> Result<GradientVector, DpError> {
    if grads.len() != sigmas.len() {
        return Err(DpError::LengthMismatch {
            grads: grads.len(),
            tokens: sigmas.len(),
        });
    }
    let dim = check_dims(&grads)?;
    for (i, (g, &sigma)) in grads.iter_mut().zip(sigmas).enumerate() {
        perturb_token(&mut g.0, i, sigma, clip_norm, &stream.split(i as u64))?;
    }
    Ok(pairwise_sum(&grads, dim))
}

/// The full token-wise pass over one annotated sequence.
pub fn perturb_sequence(
    grads: &[GradientVector],
    annotated: &AnnotatedSequence,
    policy: &NoisePolicy,
    stream: &RngStream,
) -> Result<(GradientVector, TierCounts), DpError> {
    if grads.len() != annotated.len() {
        return Err(DpError::LengthMismatch {
            grads: grads.len(),
            tokens: annotated.len(),
        });
    }
    let mut counts = TierCounts::default();
    for &s in &annotated.scores {
        counts.add(policy.tier(s)?);
    }
    let sum = perturb_tokens(grads.to_vec(), &annotated.sigmas, policy.clip_norm, stream)?;
    Ok((sum, counts))
}

/// Uniform DP-SGD: clip each per-sample gradient, sum, add one
/// `N(0, σ² C² I)` draw from `stream`.
pub fn perturb_uniform(
    samples: &[GradientVector],
    sigma: f64,
    clip_norm: f64,
    stream: &RngStream,
) -> Result<GradientVector, DpError> {
    let dim = check_dims(samples)?;
    let clipped = samples
        .iter()
        .map(|g| clip(g, clip_norm))
        .collect::<Result<Vec<_>, _>>()?;
    noise(&pairwise_sum(&clipped, dim), sigma, clip_norm, stream)
}

fn check_dims(grads: &[GradientVector]) -> Result<usize, DpError> {
    let dim = grads.first().map_or(0, GradientVector::dim);
    match grads.iter().find(|g| g.dim() != dim) {
        Some(g) => Err(DpError::DimMismatch {
            expected: dim,
            got: g.dim(),
        }),
        None => Ok(dim),
    }
}

/// Deterministic pairwise sum. An empty slice sums to the zero vector of `dim`.
pub fn pairwise_sum(items: &[GradientVector], dim: usize) -> GradientVector {
    GradientVector(pairwise_slices(&items.iter().map(GradientVector::as_slice).collect::<Vec<_>>(), dim))
}

/// Pairwise sum over borrowed slices, same tree as [`PairwiseSum`].
pub fn pairwise_slices(items: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut acc = PairwiseSum::new(dim);
    for item in items {
        acc.push(item);
    }
    acc.finish()
}

/// Streaming pairwise summation.
///
/// Items are merged like a binary counter: two partial sums of the same
/// height are added (earlier + later) as soon as both exist, and the
/// leftovers are folded from the most recent one backwards in
/// [`finish`](PairwiseSum::finish). The tree depends only on the number of
/// items, so the floating point result is reproducible, and at most
/// `log2(n) + 1` partial sums are alive at once.
#[derive(Debug)]
pub struct PairwiseSum {
    dim: usize,
    stack: Vec<(u32, Vec<f64>)>,
    pool: Vec<Vec<f64>>,
    count: usize,
}

impl PairwiseSum {
    pub fn new(dim: usize) -> Self {
        PairwiseSum {
            dim,
            stack: Vec::new(),
            pool: Vec::new(),
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of items pushed so far.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// # Panics
    /// If `item.len() != dim`.
    pub fn push(&mut self, item: &[f64]) {
        assert_eq!(item.len(), self.dim, "pairwise item dimension");
        let mut buf = self.take();
        buf.copy_from_slice(item);
        self.merge(buf);
    }

    /// Pushes an item written directly into a pooled buffer. The buffer
    /// arrives with arbitrary contents; `fill` must overwrite all of it.
    pub fn push_with<T, E>(&mut self, fill: impl FnOnce(&mut [f64]) -> Result<T, E>) -> Result<T, E> {
        let mut buf = self.take();
        match fill(&mut buf) {
            Ok(v) => {
                self.merge(buf);
                Ok(v)
            }
            Err(e) => {
                self.pool.push(buf);
                Err(e)
            }
        }
    }

    fn take(&mut self) -> Vec<f64> {
        self.pool.pop().unwrap_or_else(|| vec![0.0; self.dim])
    }

    fn merge(&mut self, mut right: Vec<f64>) {
        self.count += 1;
        let mut height = 0;
        while let Some((h, _)) = self.stack.last() {
            if *h != height {
                break;
            }
            let (_, mut left) = self.stack.pop().expect("non-empty");
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            self.pool.push(right);
            right = left;
            height += 1;
        }
        self.stack.push((height, right));
    }

    pub fn finish(mut self) -> Vec<f64> {
        let Some((_, mut acc)) = self.stack.pop() else {
            return vec![0.0; self.dim];
        };
        while let Some((_, mut left)) = self.stack.pop() {
            for (l, r) in left.iter_mut().zip(&acc) {
                *l += r;
            }
            acc = left;
        }
        acc
    }
}
