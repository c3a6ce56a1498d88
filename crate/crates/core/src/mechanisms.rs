//! Local privacy mechanisms and the receivers that undo their bias.

use rand::seq::index;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng::{seeded, unit_f64};

/// Randomized response on one bit: with probability `p` the bit is replaced by
/// a fair coin, otherwise it is sent as is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrMechanism {
    flip_prob: f64,
}

impl RrMechanism {
    pub fn new(flip_prob: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&flip_prob) {
            Ok(Self { flip_prob })
        } else {
            Err(invalid(
                "flip_prob",
                format!("must lie in [0, 1], got {flip_prob}"),
            ))
        }
    }

    /// The mechanism that is `(ε, 0)`-DP.
    pub fn for_epsilon(epsilon: f64) -> Result<Self> {
        Self::new(rr_flip_prob(epsilon)?)
    }

    pub fn flip_prob(&self) -> f64 {
        self.flip_prob
    }

    /// Applies the mechanism using one uniformly random 64-bit word: the top 53
    /// bits decide whether to replace, the lowest bit is the replacement coin.
    #[inline]
    pub fn apply_word(&self, bit: bool, word: u64) -> bool {
        if unit_f64(word) < self.flip_prob {
            word & 1 == 1
        } else {
            bit
        }
    }

    pub fn apply<R: RngCore + ?Sized>(&self, bit: bool, rng: &mut R) -> bool {
        self.apply_word(bit, rng.next_u64())
    }

    /// Randomized response over a finite alphabet `0..k`: with probability `p`
    /// the symbol is replaced by a uniform one.
    pub fn apply_categorical<R: Rng + ?Sized>(&self, symbol: usize, k: usize, rng: &mut R) -> usize {
        debug_assert!(symbol < k);
        if rng.random::<f64>() < self.flip_prob {
            rng.random_range(0..k)
        } else {
            symbol
        }
    }
}

/// Flip probability `2 / (e^ε + 1)` that makes randomized response
/// `(ε, 0)`-DP. `ε = ∞` gives 0 (no perturbation).
pub fn rr_flip_prob(epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon", format!("must be >= 0, got {epsilon}")));
    }
    Ok(2.0 / (epsilon.exp() + 1.0))
}

/// Seeded randomized response on one bit.
pub fn rr_perturb(bit: bool, mech: &RrMechanism, rng_seed: u64) -> bool {
    mech.apply(bit, &mut seeded(rng_seed))
}

/// A vector of private bits, one per agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector(Vec<bool>);

impl BitVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    /// Parses `0`/`1` integers.
    pub fn from_ints<I: IntoIterator<Item = u8>>(ints: I) -> Result<Self> {
        ints.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(invalid("bits", format!("entries must be 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// The `n`-bit pattern of `mask`, least significant bit first.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        Self((0..n).map(|i| mask >> i & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> u32 {
        self.0.iter().filter(|&&b| b).count() as u32
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        self.0.get(i).copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// All bits except entry `i`.
    pub fn without(&self, i: usize) -> BitVector {
        let mut v = self.0.clone();
        v.remove(i);
        BitVector(v)
    }
}

impl From<Vec<bool>> for BitVector {
    fn from(v: Vec<bool>) -> Self {
        Self(v)
    }
}

/// Guess of a receiver that trusts every message: `Σ received + own`.
pub fn naive_guess(own_bit: bool, received: &BitVector) -> u32 {
    received.sum() + own_bit as u32
}

/// Bias of [`naive_guess`] for agent `agent` when every other agent uses flip
/// probability `p`: `p(N−1)/2 − p Σ_{j≠i} b_j`.
pub fn naive_bias(bits: &BitVector, agent: usize, p: f64) -> Result<f64> {
    check_agent(bits, agent)?;
    let others = bits.sum() - bits.0[agent] as u32;
    let n = bits.len() as f64;
    Ok(p * (n - 1.0) / 2.0 - p * others as f64)
}

/// Bias of the naive guess when sender `j` flips with probability `probs[j]`.
pub fn naive_bias_heterogeneous(bits: &BitVector, agent: usize, probs: &[f64]) -> Result<f64> {
    check_agent(bits, agent)?;
    if probs.len() != bits.len() {
        return Err(invalid("probs", "one flip probability per agent required"));
    }
    Ok(bits
        .0
        .iter()
        .zip(probs)
        .enumerate()
        .filter(|(j, _)| *j != agent)
        .map(|(_, (&b, &p))| p * (0.5 - b as u8 as f64))
        .sum())
}

/// De-biased estimate of the sum for a receiver that knows the common flip
/// probability: `own + (Σ received − (N−1)p/2) / (1−p)`.
pub fn aware_guess(own_bit: bool, received: &BitVector, p: f64) -> Result<f64> {
    check_debias_prob(p)?;
    let m = received.len() as f64;
    Ok(own_bit as u8 as f64 + (received.sum() as f64 - m * p / 2.0) / (1.0 - p))
}

/// Unbiased estimate of one sender's bit from its message: `(x − p/2)/(1−p)`.
#[inline]
pub fn debias_bit(x: bool, p: f64) -> f64 {
    (x as u8 as f64 - p / 2.0) / (1.0 - p)
}

/// [`aware_guess`] when each sender has its own flip probability.
/// `received` and `probs` are aligned and exclude the receiver.
pub fn aware_guess_heterogeneous(own_bit: bool, received: &BitVector, probs: &[f64]) -> Result<f64> {
    if probs.len() != received.len() {
        return Err(invalid(
            "probs",
            "one flip probability per received message required",
        ));
    }
    for &p in probs {
        check_debias_prob(p)?;
    }
    Ok(own_bit as u8 as f64
        + received
            .0
            .iter()
            .zip(probs)
            .map(|(&x, &p)| debias_bit(x, p))
            .sum::<f64>())
}

/// A message whose ℓ₂ norm is at most `clip_norm`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedVector {
    values: Vec<f64>,
    clip_norm: f64,
}

impl ClippedVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn clip_norm(&self) -> f64 {
        self.clip_norm
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `values` by `1 / max(1, ‖values‖₂ / C)`.
pub fn clip(values: &[f64], clip_norm: f64) -> Result<ClippedVector> {
    if !(clip_norm > 0.0) {
        return Err(invalid("clip_norm", format!("must be > 0, got {clip_norm}")));
    }
    let scale = (l2_norm(values) / clip_norm).max(1.0);
    let values = if scale > 1.0 {
        values.iter().map(|x| x / scale).collect()
    } else {
        values.to_vec()
    };
    Ok(ClippedVector { values, clip_norm })
}

/// Adds i.i.d. `N(0, σ²)` noise to every coordinate. `σ = 0` returns the
/// message unchanged.
pub fn gaussian_perturb(msg: &ClippedVector, sigma: f64, rng_seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
    }
    let mut rng = seeded(rng_seed);
    Ok(msg
        .values
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect())
}

/// Uniform without-replacement subsample of size `round(rate · len)`, ties to
/// even. Items keep their original order.
pub fn subsample<T: Clone>(items: &[T], rate: f64, rng_seed: u64) -> Result<Vec<T>> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(invalid("rate", format!("must lie in (0, 1), got {rate}")));
    }
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let k = subsample_size(items.len(), rate);
    let mut picked = index::sample(&mut seeded(rng_seed), items.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

pub fn subsample_size(len: usize, rate: f64) -> usize {
    ((rate * len as f64).round_ties_even() as usize).min(len)
}

fn check_agent(bits: &BitVector, agent: usize) -> Result<()> {
    if agent < bits.len() {
        Ok(())
    } else {
        Err(invalid(
            "agent",
            format!("index {agent} out of range for {} agents", bits.len()),
        ))
    }
}

fn check_debias_prob(p: f64) -> Result<()> {
    if p >= 1.0 {
        return Err(Error::DegenerateMechanism(
            "flip probability 1 destroys the signal; the de-biased estimator is undefined".into(),
        ));
    }
    if !(p >= 0.0) {
        return Err(invalid("p", format!("must lie in [0, 1), got {p}")));
    }
    Ok(())
}
