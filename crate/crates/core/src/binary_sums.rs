//! The single-round binary sums game.
//!
//! Each of `N` agents holds a bit and wants to know the sum of all bits. Every
//! agent broadcasts its bit through randomized response; receivers either
//! trust the messages ([`ReceiverMode::Naive`]) or de-bias them with the
//! senders' flip probabilities as common knowledge ([`ReceiverMode::Aware`]).
//! Agent `i`'s utility is `−|Σ_j b_j − E[g_i]|` and the team reward is the sum
//! of utilities.
//!
//! [`run_game`] estimates `E[g_i]` by Monte Carlo; [`analytic_outcome`] gives
//! the closed form. Draws are addressed by `(agent, trial)` so results do not
//! depend on the number of worker threads.

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::mechanisms::{
    aware_guess_heterogeneous, debias_bit, naive_bias_heterogeneous, naive_guess, rr_flip_prob, BitVector,
    RrMechanism,
};
use crate::rng::stream_at;
use crate::stats::{weighted_moments, MeanVar};

/// Trials per work unit. Fixed so that the partition (and therefore the
/// floating-point reduction order) is independent of the worker count.
const CHUNK_TRIALS: u64 = 1 << 16;

/// Largest `N` for which message vectors are tallied in a full histogram.
const HISTOGRAM_MAX_AGENTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverMode {
    Naive,
    Aware,
}

impl std::fmt::Display for ReceiverMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReceiverMode::Naive => "naive",
            ReceiverMode::Aware => "aware",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySumsInstance {
    bits: BitVector,
    epsilons: Vec<f64>,
    flip_probs: Vec<f64>,
    receiver_mode: ReceiverMode,
}

impl BinarySumsInstance {
    /// Per-agent budgets; `ε = ∞` means no perturbation and `ε = 0` means a
    /// pure coin flip.
    pub fn new(bits: BitVector, epsilons: Vec<f64>, receiver_mode: ReceiverMode) -> Result<Self> {
        if bits.is_empty() {
            return Err(invalid("bits", "at least one agent required"));
        }
        if epsilons.len() != bits.len() {
            return Err(invalid(
                "epsilons",
                format!("expected {} budgets, got {}", bits.len(), epsilons.len()),
            ));
        }
        let flip_probs = epsilons.iter().map(|&e| rr_flip_prob(e)).collect::<Result<_>>()?;
        Ok(Self {
            bits,
            epsilons,
            flip_probs,
            receiver_mode,
        })
    }

    /// Builds the instance from flip probabilities directly.
    pub fn from_flip_probs(
        bits: BitVector,
        flip_probs: Vec<f64>,
        receiver_mode: ReceiverMode,
    ) -> Result<Self> {
        if flip_probs.len() != bits.len() {
            return Err(invalid("flip_probs", "one flip probability per agent required"));
        }
        for &p in &flip_probs {
            RrMechanism::new(p)?;
        }
        // inverse of p = 2/(e^ε + 1)
        let epsilons = flip_probs.iter().map(|&p| (2.0 / p - 1.0).ln()).collect();
        let mut inst = Self::new(bits, epsilons, receiver_mode)?;
        inst.flip_probs = flip_probs;
        Ok(inst)
    }

    pub fn bits(&self) -> &BitVector {
        &self.bits
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn flip_probs(&self) -> &[f64] {
        &self.flip_probs
    }

    pub fn receiver_mode(&self) -> ReceiverMode {
        self.receiver_mode
    }

    pub fn num_agents(&self) -> usize {
        self.bits.len()
    }

    pub fn with_mode(&self, receiver_mode: ReceiverMode) -> Self {
        Self {
            receiver_mode,
            ..self.clone()
        }
    }

    fn check_mode(&self) -> Result<()> {
        if self.receiver_mode == ReceiverMode::Aware && self.flip_probs.iter().any(|&p| p >= 1.0) {
            return Err(Error::DegenerateMechanism(
                "aware receivers cannot de-bias a sender with flip probability 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySumsOutcome {
    /// Estimated (or exact) `E[g_i]` per agent.
    pub guesses: Vec<f64>,
    pub utilities: Vec<f64>,
    pub team_reward: f64,
    /// Monte-Carlo standard error of each guess; zero for analytic outcomes.
    pub mc_std_errors: Vec<f64>,
}

impl BinarySumsOutcome {
    fn from_guesses(true_sum: f64, guesses: Vec<f64>, mc_std_errors: Vec<f64>) -> Self {
        let utilities: Vec<f64> = guesses.iter().map(|g| 0.0 - (true_sum - g).abs()).collect();
        let team_reward = utilities.iter().sum();
        Self {
            guesses,
            utilities,
            team_reward,
            mc_std_errors,
        }
    }
}

/// Sufficient statistics of a batch of simulated message vectors.
#[derive(Debug, Clone)]
pub struct MessageSample {
    bits: BitVector,
    flip_probs: Vec<f64>,
    trials: u64,
    tally: Tally,
}

#[derive(Debug, Clone)]
enum Tally {
    /// Count of every received message vector, indexed by its bit mask.
    Histogram(Vec<u64>),
    /// Per-agent running moments of the naive and aware guesses.
    Moments {
        naive: Vec<MeanVar>,
        aware: Vec<MeanVar>,
    },
}

impl MessageSample {
    pub fn trials(&self) -> u64 {
        self.trials
    }

    /// Per-agent Monte-Carlo mean and standard error of the guess under `mode`.
    pub fn guess_stats(&self, mode: ReceiverMode) -> Result<Vec<(f64, f64)>> {
        let n = self.bits.len();
        if mode == ReceiverMode::Aware && self.flip_probs.iter().any(|&p| p >= 1.0) {
            return Err(Error::DegenerateMechanism(
                "aware receivers cannot de-bias a sender with flip probability 1".into(),
            ));
        }
        match &self.tally {
            Tally::Histogram(hist) => (0..n)
                .map(|i| {
                    let own = self.bits.as_slice()[i];
                    let probs: Vec<f64> = drop_index(&self.flip_probs, i);
                    let values = hist
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c > 0)
                        .map(|(mask, &c)| {
                            let received = BitVector::from_mask(mask as u64, n).without(i);
                            let g = match mode {
                                ReceiverMode::Naive => naive_guess(own, &received) as f64,
                                ReceiverMode::Aware => aware_guess_heterogeneous(own, &received, &probs)?,
                            };
                            Ok((g, c))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let (mean, var, count) = weighted_moments(values);
                    Ok((mean, (var / count as f64).sqrt()))
                })
                .collect(),
            Tally::Moments { naive, aware } => {
                let acc = match mode {
                    ReceiverMode::Naive => naive,
                    ReceiverMode::Aware => aware,
                };
                Ok(acc.iter().map(|m| (m.mean(), m.std_error())).collect())
            }
        }
    }

    pub fn outcome(&self, mode: ReceiverMode) -> Result<BinarySumsOutcome> {
        let stats = self.guess_stats(mode)?;
        let (guesses, ses) = stats.into_iter().unzip();
        Ok(BinarySumsOutcome::from_guesses(
            self.bits.sum() as f64,
            guesses,
            ses,
        ))
    }
}

fn drop_index(v: &[f64], i: usize) -> Vec<f64> {
    v.iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, &x)| x)
        .collect()
}

/// Simulates `trials` rounds of perturbed broadcasts. Agent `j`'s message in
/// trial `t` is decided by word `t` of stream `j`.
pub fn simulate(instance: &BinarySumsInstance, trials: u64, rng_seed: u64) -> Result<MessageSample> {
    simulate_with(
        instance,
        trials,
        rng_seed,
        instance.num_agents() <= HISTOGRAM_MAX_AGENTS,
    )
}

fn simulate_with(
    instance: &BinarySumsInstance,
    trials: u64,
    rng_seed: u64,
    histogram: bool,
) -> Result<MessageSample> {
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    let n = instance.num_agents();
    let mechs: Vec<RrMechanism> = instance
        .flip_probs
        .iter()
        .map(|&p| RrMechanism::new(p))
        .collect::<Result<_>>()?;
    let bits = instance.bits.as_slice();
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let chunk_range = |c: u64| (c * CHUNK_TRIALS, ((c + 1) * CHUNK_TRIALS).min(trials));
    let streams = |start: u64| -> Vec<_> {
        (0..n)
            .map(|j| stream_at(rng_seed, j as u64, 2 * start as u128))
            .collect()
    };

    let tally = if histogram {
        let partial: Vec<Vec<u64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let (start, end) = chunk_range(c);
                let mut rngs = streams(start);
                let mut hist = vec![0u64; 1 << n];
                for _ in start..end {
                    let mut mask = 0usize;
                    for j in 0..n {
                        if mechs[j].apply_word(bits[j], rngs[j].next_u64()) {
                            mask |= 1 << j;
                        }
                    }
                    hist[mask] += 1;
                }
                hist
            })
            .collect();
        let mut hist = vec![0u64; 1 << n];
        for h in partial {
            hist.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        }
        Tally::Histogram(hist)
    } else {
        let probs = &instance.flip_probs;
        let aware_ok = probs.iter().all(|&p| p < 1.0);
        let true_sum = instance.bits.sum() as f64;
        let partial: Vec<(Vec<MeanVar>, Vec<MeanVar>)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let (start, end) = chunk_range(c);
                let mut rngs = streams(start);
                let mut naive = vec![MeanVar::with_shift(true_sum); n];
                let mut aware = vec![MeanVar::with_shift(true_sum); n];
                let mut xs = vec![false; n];
                let mut ds = vec![0.0; n];
                for _ in start..end {
                    let mut sum = 0u32;
                    let mut dsum = 0.0;
                    for j in 0..n {
                        xs[j] = mechs[j].apply_word(bits[j], rngs[j].next_u64());
                        sum += xs[j] as u32;
                        if aware_ok {
                            ds[j] = debias_bit(xs[j], probs[j]);
                            dsum += ds[j];
                        }
                    }
                    for i in 0..n {
                        let own = bits[i] as u8 as f64;
                        naive[i].push(own + (sum - xs[i] as u32) as f64);
                        if aware_ok {
                            aware[i].push(own + (dsum - ds[i]));
                        }
                    }
                }
                (naive, aware)
            })
            .collect();
        let mut naive = vec![MeanVar::with_shift(true_sum); n];
        let mut aware = vec![MeanVar::with_shift(true_sum); n];
        for (pn, pa) in partial {
            for i in 0..n {
                naive[i].merge(&pn[i]);
                aware[i].merge(&pa[i]);
            }
        }
        Tally::Moments { naive, aware }
    };

    Ok(MessageSample {
        bits: instance.bits.clone(),
        flip_probs: instance.flip_probs.clone(),
        trials,
        tally,
    })
}

/// Monte-Carlo estimate of the game outcome under the instance's receiver mode.
pub fn run_game(instance: &BinarySumsInstance, trials: u64, rng_seed: u64) -> Result<BinarySumsOutcome> {
    instance.check_mode()?;
    simulate(instance, trials, rng_seed)?.outcome(instance.receiver_mode)
}

/// Closed-form outcome: aware receivers are unbiased, naive receiver `i` is
/// off by `err_i = Σ_{j≠i} p_j (1/2 − b_j)`.
pub fn analytic_outcome(instance: &BinarySumsInstance) -> Result<BinarySumsOutcome> {
    instance.check_mode()?;
    let n = instance.num_agents();
    let sum = instance.bits.sum() as f64;
    let guesses = (0..n)
        .map(|i| match instance.receiver_mode {
            ReceiverMode::Aware => Ok(sum),
            ReceiverMode::Naive => {
                Ok(sum + naive_bias_heterogeneous(&instance.bits, i, &instance.flip_probs)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BinarySumsOutcome::from_guesses(sum, guesses, vec![0.0; n]))
}
