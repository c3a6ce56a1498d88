//! Rényi-DP accounting and noise calibration for the clipped Gaussian
//! message channel.
//!
//! The channel clips each message to ℓ₂ norm `C`, evaluates it on a
//! `γ₁`-subsample of the sender's local trajectory, adds `N(0, σ²I)` noise and
//! delivers it to a `γ₂`-subsample of the `N` agents. The accounting chain is
//!
//! 1. subsampled Gaussian RDP at sensitivity `Δ = 2C` (clipping plus triangle
//!    inequality),
//! 2. additive composition over the `⌈γ₂N⌉` messages of one step (and over
//!    `T` steps for an episode),
//! 3. conversion of the composed `(α, ρ)`-RDP to `(ε, δ)`-DP.
//!
//! [`calibrate_step`] and [`calibrate_episode`] invert the chain: given a
//! budget they search the composition split `β` and return the smallest
//! feasible noise variance.

use crate::error::{invalid, Constraint, Error, Result};

/// Lower bound on `σ² / Δ²` required by the subsampled Gaussian bound.
pub const MIN_NOISE_RATIO: f64 = 0.7;

/// Target `(ε, δ)` requested by one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || epsilon.is_nan() {
            return Err(invalid("epsilon", format!("must be > 0, got {epsilon}")));
        }
        check_delta(delta)?;
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// An `(α, ρ)` Rényi-DP guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdpPoint {
    alpha: f64,
    rho: f64,
}

impl RdpPoint {
    pub fn new(alpha: f64, rho: f64) -> Result<Self> {
        if !(alpha > 1.0) {
            return Err(invalid("alpha", format!("Rényi order must be > 1, got {alpha}")));
        }
        if !(rho >= 0.0) {
            return Err(invalid("rho", format!("divergence must be >= 0, got {rho}")));
        }
        Ok(Self { alpha, rho })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Parameters of the message channel of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismParams {
    clip_norm: f64,
    sample_rate_data: f64,
    sample_rate_agents: f64,
    num_agents: u64,
    episode_len: u32,
}

impl MechanismParams {
    pub fn new(
        clip_norm: f64,
        sample_rate_data: f64,
        sample_rate_agents: f64,
        num_agents: u64,
        episode_len: u32,
    ) -> Result<Self> {
        if !(clip_norm > 0.0) || !clip_norm.is_finite() {
            return Err(invalid(
                "clip_norm",
                format!("must be finite and > 0, got {clip_norm}"),
            ));
        }
        check_open_unit("sample_rate_data", sample_rate_data)?;
        if !(sample_rate_agents > 0.0 && sample_rate_agents <= 1.0) {
            return Err(invalid(
                "sample_rate_agents",
                format!("must lie in (0, 1], got {sample_rate_agents}"),
            ));
        }
        if num_agents == 0 {
            return Err(invalid("num_agents", "must be >= 1"));
        }
        if episode_len == 0 {
            return Err(invalid("episode_len", "must be >= 1"));
        }
        Ok(Self {
            clip_norm,
            sample_rate_data,
            sample_rate_agents,
            num_agents,
            episode_len,
        })
    }

    pub fn clip_norm(&self) -> f64 {
        self.clip_norm
    }

    pub fn sample_rate_data(&self) -> f64 {
        self.sample_rate_data
    }

    pub fn sample_rate_agents(&self) -> f64 {
        self.sample_rate_agents
    }

    pub fn num_agents(&self) -> u64 {
        self.num_agents
    }

    pub fn episode_len(&self) -> u32 {
        self.episode_len
    }

    pub fn with_episode_len(mut self, episode_len: u32) -> Result<Self> {
        if episode_len == 0 {
            return Err(invalid("episode_len", "must be >= 1"));
        }
        self.episode_len = episode_len;
        Ok(self)
    }

    /// ℓ₂ sensitivity of a message clipped to norm `C`.
    pub fn sensitivity(&self) -> f64 {
        2.0 * self.clip_norm
    }

    /// Number of messages composed per step, `⌈γ₂ N⌉`.
    ///
    /// Products within a relative `1e-9` of an integer are treated as that
    /// integer so `0.3 × 10` counts as 3 messages, not 4.
    pub fn messages_per_step(&self) -> u64 {
        let x = self.sample_rate_agents * self.num_agents as f64;
        let r = x.round();
        let k = if (x - r).abs() <= 1e-9 * r.max(1.0) {
            r
        } else {
            x.ceil()
        };
        (k as u64).max(1)
    }
}

/// Outcome of a noise calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub sigma_sq: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `σ² / (4C²)`
    pub sigma_prime_sq: f64,
    pub feasible: bool,
    /// Steps the noise was calibrated for (1 for per-step calibration).
    pub horizon: u32,
}

impl CalibrationResult {
    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }
}

/// RDP of the plain Gaussian mechanism: `(α, αΔ²/(2σ²))`.
pub fn gaussian_rdp(sensitivity: f64, sigma: f64, alpha: f64) -> Result<RdpPoint> {
    check_positive("sensitivity", sensitivity)?;
    check_positive("sigma", sigma)?;
    RdpPoint::new(alpha, alpha * sensitivity * sensitivity / (2.0 * sigma * sigma))
}

/// The right-hand side of the order constraint,
/// `2σ'² ln(1 / (γ α (1 + σ'²))) / 3 + 1`.
///
/// When `γα(1+σ'²) ≥ 1` the logarithm is non-positive and the bound is at
/// most 1, so no order `α > 1` satisfies it.
pub fn order_bound(sigma_prime_sq: f64, gamma: f64, alpha: f64) -> f64 {
    let arg = gamma * alpha * (1.0 + sigma_prime_sq);
    2.0 * sigma_prime_sq * (1.0 / arg).ln() / 3.0 + 1.0
}

/// RDP of the Gaussian mechanism run on a uniform without-replacement
/// subsample with rate `γ`: `(α, 3.5 γ² Δ² α / σ²)`.
///
/// Valid only when `σ² / Δ² ≥ 0.7` and `α` is within [`order_bound`]; either
/// violation is reported as [`Error::InfeasibleOrder`].
pub fn subsampled_gaussian_rdp(sensitivity: f64, sigma: f64, alpha: f64, gamma: f64) -> Result<RdpPoint> {
    check_positive("sensitivity", sensitivity)?;
    check_positive("sigma", sigma)?;
    check_open_unit("gamma", gamma)?;
    if !(alpha > 1.0) {
        return Err(invalid("alpha", format!("Rényi order must be > 1, got {alpha}")));
    }
    let ratio = sigma * sigma / (sensitivity * sensitivity);
    if ratio < MIN_NOISE_RATIO {
        return Err(Error::InfeasibleOrder {
            constraint: Constraint::NoiseFloor,
            lhs: ratio,
            rhs: MIN_NOISE_RATIO,
        });
    }
    let bound = order_bound(ratio, gamma, alpha);
    if alpha > bound {
        return Err(Error::InfeasibleOrder {
            constraint: Constraint::OrderBound,
            lhs: alpha,
            rhs: bound,
        });
    }
    RdpPoint::new(
        alpha,
        3.5 * gamma * gamma * sensitivity * sensitivity * alpha / (sigma * sigma),
    )
}

/// Additive composition of guarantees that share one order.
pub fn compose(points: &[RdpPoint]) -> Result<RdpPoint> {
    let first = points
        .first()
        .ok_or_else(|| invalid("points", "cannot compose an empty list"))?;
    let mut rho = 0.0;
    for p in points {
        if p.alpha != first.alpha {
            return Err(Error::CompositionOrder {
                expected: first.alpha,
                found: p.alpha,
            });
        }
        rho += p.rho;
    }
    RdpPoint::new(first.alpha, rho)
}

/// `k`-fold self-composition of one guarantee.
pub fn compose_repeated(point: RdpPoint, k: u64) -> Result<RdpPoint> {
    if k == 0 {
        return Err(invalid("k", "cannot compose zero mechanisms"));
    }
    RdpPoint::new(point.alpha, point.rho * k as f64)
}

/// `(α, ρ)`-RDP implies `(ρ + ln(1/δ)/(α−1), δ)`-DP.
pub fn rdp_to_dp(point: RdpPoint, delta: f64) -> Result<PrivacyBudget> {
    check_delta(delta)?;
    let epsilon = point.rho + (1.0 / delta).ln() / (point.alpha - 1.0);
    // ρ = 0 with α → ∞ drives ε to 0; keep the budget type's ε > 0 invariant.
    PrivacyBudget::new(epsilon.max(f64::MIN_POSITIVE), delta)
}

/// Rényi order pinned by the split `β`: `ln(1/δ) / (ε(1−β)) + 1`.
pub fn pinned_order(budget: &PrivacyBudget, beta: f64) -> Result<f64> {
    check_open_unit("beta", beta)?;
    Ok((1.0 / budget.delta).ln() / (budget.epsilon * (1.0 - beta)) + 1.0)
}

/// Noise variance for a pinned split `β` over `horizon` steps:
/// `14 ⌈γ₂N⌉ γ₁² C² α T / (β ε)`. Returns `(α, σ²)`.
pub fn noise_variance(
    budget: &PrivacyBudget,
    params: &MechanismParams,
    beta: f64,
    horizon: u32,
) -> Result<(f64, f64)> {
    if horizon == 0 {
        return Err(invalid("horizon", "must be >= 1"));
    }
    let alpha = pinned_order(budget, beta)?;
    let c = params.clip_norm;
    let g1 = params.sample_rate_data;
    let k = params.messages_per_step() as f64;
    let sigma_sq = 14.0 * k * g1 * g1 * c * c * alpha * horizon as f64 / (beta * budget.epsilon);
    Ok((alpha, sigma_sq))
}

/// Search grid for the split `β`: `0.01, 0.02, …, 0.99`.
pub fn beta_grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|i| i as f64 / 100.0)
}

/// Per-step calibration: smallest feasible `σ²` such that every step of
/// communication is `(ε, δ)`-DP.
pub fn calibrate_step(budget: &PrivacyBudget, params: &MechanismParams) -> Result<CalibrationResult> {
    calibrate(budget, params, 1)
}

/// Episode-level calibration over `params.episode_len()` steps.
pub fn calibrate_episode(budget: &PrivacyBudget, params: &MechanismParams) -> Result<CalibrationResult> {
    calibrate(budget, params, params.episode_len)
}

/// Evaluates one candidate `β`. `Ok` carries a feasible result, `Err` the
/// violated constraint and its normalized violation.
pub fn calibration_candidate(
    budget: &PrivacyBudget,
    params: &MechanismParams,
    beta: f64,
    horizon: u32,
) -> Result<std::result::Result<CalibrationResult, (Constraint, f64)>> {
    let (alpha, sigma_sq) = noise_variance(budget, params, beta, horizon)?;
    let c = params.clip_norm;
    let sigma_prime_sq = sigma_sq / (4.0 * c * c);
    if sigma_prime_sq < MIN_NOISE_RATIO {
        return Ok(Err((
            Constraint::NoiseFloor,
            (MIN_NOISE_RATIO - sigma_prime_sq) / MIN_NOISE_RATIO,
        )));
    }
    let bound = order_bound(sigma_prime_sq, params.sample_rate_data, alpha);
    if alpha > bound {
        return Ok(Err((Constraint::OrderBound, (alpha - bound) / alpha)));
    }
    Ok(Ok(CalibrationResult {
        sigma_sq,
        alpha,
        beta,
        sigma_prime_sq,
        feasible: true,
        horizon,
    }))
}

fn calibrate(budget: &PrivacyBudget, params: &MechanismParams, horizon: u32) -> Result<CalibrationResult> {
    let mut best: Option<CalibrationResult> = None;
    let mut tightest: Option<(f64, Constraint, f64)> = None;
    for beta in beta_grid() {
        match calibration_candidate(budget, params, beta, horizon)? {
            Ok(r) => {
                if best.is_none_or(|b| r.sigma_sq < b.sigma_sq) {
                    best = Some(r);
                }
            }
            Err((constraint, violation)) => {
                if tightest.is_none_or(|t| violation < t.2) {
                    tightest = Some((beta, constraint, violation));
                }
            }
        }
    }
    match (best, tightest) {
        (Some(r), _) => Ok(r),
        (None, Some((beta, constraint, violation))) => Err(Error::CalibrationInfeasible {
            beta,
            constraint,
            violation,
        }),
        (None, None) => unreachable!("beta grid is non-empty"),
    }
}

/// Re-derives the privacy guarantee of a calibrated channel along the proof
/// chain: subsampled Gaussian at `Δ = 2C`, composed over `⌈γ₂N⌉` messages and
/// `horizon` steps, converted at the budget's `δ`.
pub fn round_trip(
    result: &CalibrationResult,
    budget: &PrivacyBudget,
    params: &MechanismParams,
) -> Result<PrivacyBudget> {
    let per_message = subsampled_gaussian_rdp(
        params.sensitivity(),
        result.sigma(),
        result.alpha,
        params.sample_rate_data,
    )?;
    let per_step = compose_repeated(per_message, params.messages_per_step())?;
    let episode = compose_repeated(per_step, result.horizon as u64)?;
    rdp_to_dp(episode, budget.delta)
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {x}")))
    }
}

fn check_open_unit(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie in (0, 1), got {x}")))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    check_open_unit("delta", delta)
}
