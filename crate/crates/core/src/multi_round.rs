//! The multiple-round sums game as a finite-horizon Markov potential game.
//!
//! Each agent `i` holds a saving `x_i`. At every step it spends `b_i` from a
//! grid (never more than it holds) and picks a privacy level `p_i`. Agent `i`
//! is rewarded with
//!
//! ```text
//! r_i = s_i Σ_j (1 − p_j) b_j + α x_i + β p_i
//! ```
//!
//! where the team scale `s_i` is 1 in the game proper and exists only to build
//! perturbed, non-potential variants. The potential is
//! `J = Σ_j ((1 − p_j) b_j + α x_j + β p_j)`.
//!
//! Policies are tabular over an agent's *local* state `(step, own saving)`.
//! Savings evolve independently per agent, so a profile of such policies
//! yields a deterministic trajectory, and `r_i − J` never depends on agent
//! `i`'s own policy.

use std::collections::BTreeMap;

use crate::error::{invalid, Error, Result};
use crate::mechanisms::RrMechanism;
use crate::rng::substream;

/// Default cap on the number of policy profiles enumerated by [`verify_mpg`].
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1_000_000;

/// Slack allowed when comparing a spend against the saving it draws from.
const SPEND_SLACK: f64 = 1e-9;

/// Savings are compared after rounding to this many units per 1.0.
const KEY_SCALE: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct MrsConfig {
    horizon: u32,
    discount: f64,
    reward_alpha: f64,
    reward_beta: f64,
    initial_savings: Vec<f64>,
    spend_grid: Vec<f64>,
    privacy_grid: Vec<f64>,
    team_scale: Vec<f64>,
}

fn normalized_grid(name: &'static str, mut grid: Vec<f64>, max: f64) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(invalid(name, "grid must be non-empty"));
    }
    if let Some(v) = grid.iter().find(|v| !(v.is_finite() && **v >= 0.0 && **v <= max)) {
        return Err(invalid(name, format!("grid value {v} outside [0, {max}]")));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

impl MrsConfig {
    /// The number of agents is `initial_savings.len()`. Grids are sorted and
    /// deduplicated.
    pub fn new(
        horizon: u32,
        discount: f64,
        reward_alpha: f64,
        reward_beta: f64,
        initial_savings: Vec<f64>,
        spend_grid: Vec<f64>,
        privacy_grid: Vec<f64>,
    ) -> Result<Self> {
        if initial_savings.is_empty() {
            return Err(invalid("initial_savings", "need at least one agent"));
        }
        if let Some(x) = initial_savings.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(invalid(
                "initial_savings",
                format!("savings must be finite and >= 0, got {x}"),
            ));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(invalid("discount", format!("must lie in (0, 1], got {discount}")));
        }
        if !reward_alpha.is_finite() || !reward_beta.is_finite() {
            return Err(invalid("reward", "alpha and beta must be finite"));
        }
        let n = initial_savings.len();
        Ok(Self {
            horizon,
            discount,
            reward_alpha,
            reward_beta,
            initial_savings,
            spend_grid: normalized_grid("spend_grid", spend_grid, f64::MAX)?,
            privacy_grid: normalized_grid("privacy_grid", privacy_grid, 1.0)?,
            team_scale: vec![1.0; n],
        })
    }

    /// Two agents, two steps, `b ∈ {0, 1}`, `p ∈ {0, 0.5}`, unit savings,
    /// `γ = 1`, `α = 0.1`, `β = 0.2`.
    pub fn small_instance() -> Self {
        Self::new(2, 1.0, 0.1, 0.2, vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.5])
            .expect("reference instance is valid")
    }

    /// Scales the team term in `agent`'s reward. Any scale other than 1 breaks
    /// the potential structure.
    pub fn with_team_scale(mut self, agent: usize, scale: f64) -> Result<Self> {
        if agent >= self.num_agents() {
            return Err(invalid("agent", format!("no agent {agent}")));
        }
        if !scale.is_finite() {
            return Err(invalid("team_scale", format!("must be finite, got {scale}")));
        }
        self.team_scale[agent] = scale;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: u32) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn num_agents(&self) -> usize {
        self.initial_savings.len()
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward_alpha(&self) -> f64 {
        self.reward_alpha
    }

    pub fn reward_beta(&self) -> f64 {
        self.reward_beta
    }

    pub fn initial_savings(&self) -> &[f64] {
        &self.initial_savings
    }

    pub fn spend_grid(&self) -> &[f64] {
        &self.spend_grid
    }

    pub fn privacy_grid(&self) -> &[f64] {
        &self.privacy_grid
    }

    pub fn team_scale(&self) -> &[f64] {
        &self.team_scale
    }

    pub fn start_state(&self) -> MrsState {
        MrsState {
            savings: self.initial_savings.clone(),
            step: 0,
        }
    }

    /// Valid actions at saving `x`, ordered by `(spend, privacy)`.
    fn valid_actions(&self, x: f64) -> Vec<MrsAction> {
        self.spend_grid
            .iter()
            .filter(|&&b| b <= x + SPEND_SLACK)
            .flat_map(|&spend| {
                self.privacy_grid
                    .iter()
                    .map(move |&privacy| MrsAction { spend, privacy })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrsState {
    pub savings: Vec<f64>,
    pub step: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrsAction {
    pub spend: f64,
    pub privacy: f64,
}

impl MrsAction {
    pub fn new(spend: f64, privacy: f64) -> Self {
        Self { spend, privacy }
    }
}

/// An agent's local state: the step and its own saving, rounded to 1e-9.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalKey {
    pub step: u32,
    saving_units: i64,
}

impl LocalKey {
    pub fn new(step: u32, saving: f64) -> Self {
        Self {
            step,
            saving_units: (saving * KEY_SCALE).round() as i64,
        }
    }

    pub fn saving(&self) -> f64 {
        self.saving_units as f64 / KEY_SCALE
    }
}

/// One agent's deterministic policy over its local states.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TabularPolicy {
    actions: BTreeMap<LocalKey, MrsAction>,
}

impl TabularPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, step: u32, saving: f64, action: MrsAction) {
        self.actions.insert(LocalKey::new(step, saving), action);
    }

    pub fn action(&self, step: u32, saving: f64) -> Option<MrsAction> {
        self.actions.get(&LocalKey::new(step, saving)).copied()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LocalKey, &MrsAction)> {
        self.actions.iter()
    }
}

fn check_arity(len: usize, cfg: &MrsConfig, what: &str) -> Result<()> {
    if len == cfg.num_agents() {
        Ok(())
    } else {
        Err(invalid(
            "num_agents",
            format!("{what} has {len} entries for {} agents", cfg.num_agents()),
        ))
    }
}

fn check_action(saving: f64, action: &MrsAction, agent: usize) -> Result<()> {
    if !(action.spend >= 0.0) || action.spend > saving + SPEND_SLACK {
        return Err(Error::InvalidAction(format!(
            "agent {agent} spends {} with saving {saving}",
            action.spend
        )));
    }
    if !(0.0..=1.0).contains(&action.privacy) {
        return Err(Error::InvalidAction(format!(
            "agent {agent} privacy level {} outside [0, 1]",
            action.privacy
        )));
    }
    Ok(())
}

/// `x_{i,t+1} = x_{i,t} − b_{i,t}`; the step advances by one.
pub fn transition(state: &MrsState, actions: &[MrsAction]) -> Result<MrsState> {
    if actions.len() != state.savings.len() {
        return Err(invalid(
            "actions",
            format!("{} actions for {} agents", actions.len(), state.savings.len()),
        ));
    }
    let mut savings = Vec::with_capacity(actions.len());
    for (i, (x, a)) in state.savings.iter().zip(actions).enumerate() {
        check_action(*x, a, i)?;
        savings.push((x - a.spend).max(0.0));
    }
    Ok(MrsState {
        savings,
        step: state.step + 1,
    })
}

fn team_term(actions: &[MrsAction]) -> f64 {
    actions.iter().map(|a| (1.0 - a.privacy) * a.spend).sum()
}

pub fn step_reward(state: &MrsState, actions: &[MrsAction], agent: usize, cfg: &MrsConfig) -> Result<f64> {
    check_arity(state.savings.len(), cfg, "state")?;
    check_arity(actions.len(), cfg, "actions")?;
    if agent >= cfg.num_agents() {
        return Err(invalid("agent", format!("no agent {agent}")));
    }
    Ok(cfg.team_scale[agent] * team_term(actions)
        + cfg.reward_alpha * state.savings[agent]
        + cfg.reward_beta * actions[agent].privacy)
}

pub fn potential(state: &MrsState, actions: &[MrsAction], cfg: &MrsConfig) -> Result<f64> {
    check_arity(state.savings.len(), cfg, "state")?;
    check_arity(actions.len(), cfg, "actions")?;
    Ok(actions
        .iter()
        .zip(&state.savings)
        .map(|(a, x)| (1.0 - a.privacy) * a.spend + cfg.reward_alpha * x + cfg.reward_beta * a.privacy)
        .sum())
}

/// `Θ_i = r_i − J`.
pub fn theta(state: &MrsState, actions: &[MrsAction], agent: usize, cfg: &MrsConfig) -> Result<f64> {
    Ok(step_reward(state, actions, agent, cfg)? - potential(state, actions, cfg)?)
}

/// One step of a rollout: the state and the joint action taken in it.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub state: MrsState,
    pub actions: Vec<MrsAction>,
}

fn lookup(policy: &TabularPolicy, agent: usize, step: u32, saving: f64) -> Result<MrsAction> {
    policy.action(step, saving).ok_or_else(|| {
        Error::InvalidAction(format!(
            "agent {agent} has no action at step {step}, saving {saving}"
        ))
    })
}

/// Deterministic trajectory from `start` to the horizon.
pub fn rollout(profile: &[TabularPolicy], cfg: &MrsConfig, start: &MrsState) -> Result<Vec<RolloutStep>> {
    check_arity(profile.len(), cfg, "policy profile")?;
    check_arity(start.savings.len(), cfg, "start state")?;
    let mut out = Vec::new();
    let mut state = start.clone();
    while state.step < cfg.horizon {
        let actions = profile
            .iter()
            .enumerate()
            .map(|(i, pi)| lookup(pi, i, state.step, state.savings[i]))
            .collect::<Result<Vec<_>>>()?;
        let next = transition(&state, &actions)?;
        out.push(RolloutStep { state, actions });
        state = next;
    }
    Ok(out)
}

/// Discounted potential and every agent's discounted return along one rollout.
fn evaluate(profile: &[&TabularPolicy], cfg: &MrsConfig, start: &MrsState) -> Result<(f64, Vec<f64>)> {
    let n = cfg.num_agents();
    let mut phi = 0.0;
    let mut values = vec![0.0; n];
    let mut weight = 1.0;
    let mut savings = start.savings.clone();
    let mut actions = Vec::with_capacity(n);
    for step in start.step..cfg.horizon {
        actions.clear();
        for (i, pi) in profile.iter().enumerate() {
            let a = lookup(pi, i, step, savings[i])?;
            check_action(savings[i], &a, i)?;
            actions.push(a);
        }
        let team = team_term(&actions);
        let mut own_sum = 0.0;
        for i in 0..n {
            let own = cfg.reward_alpha * savings[i] + cfg.reward_beta * actions[i].privacy;
            values[i] += weight * (cfg.team_scale[i] * team + own);
            own_sum += own;
        }
        phi += weight * (team + own_sum);
        for (x, a) in savings.iter_mut().zip(&actions) {
            *x = (*x - a.spend).max(0.0);
        }
        weight *= cfg.discount;
    }
    Ok((phi, values))
}

/// `V_i(start) = Σ_k γ^k r_i` along the deterministic rollout.
pub fn policy_value(
    profile: &[TabularPolicy],
    agent: usize,
    cfg: &MrsConfig,
    start: &MrsState,
) -> Result<f64> {
    if agent >= cfg.num_agents() {
        return Err(invalid("agent", format!("no agent {agent}")));
    }
    rollout(profile, cfg, start)?
        .iter()
        .zip(std::iter::successors(Some(1.0), |w| Some(w * cfg.discount)))
        .map(|(s, w)| step_reward(&s.state, &s.actions, agent, cfg).map(|r| w * r))
        .sum::<Result<f64>>()
}

/// `Φ(start) = Σ_k γ^k J` along the deterministic rollout.
pub fn potential_value(profile: &[TabularPolicy], cfg: &MrsConfig, start: &MrsState) -> Result<f64> {
    rollout(profile, cfg, start)?
        .iter()
        .zip(std::iter::successors(Some(1.0), |w| Some(w * cfg.discount)))
        .map(|(s, w)| potential(&s.state, &s.actions, cfg).map(|j| w * j))
        .sum()
}

/// The local states an agent can reach from `start` before the horizon,
/// each with its valid actions.
struct LocalSpace {
    states: Vec<(LocalKey, f64, Vec<MrsAction>)>,
}

impl LocalSpace {
    fn build(cfg: &MrsConfig, start_step: u32, start_saving: f64) -> Self {
        let mut states = Vec::new();
        let mut layer: BTreeMap<LocalKey, f64> = BTreeMap::new();
        if start_step < cfg.horizon {
            layer.insert(LocalKey::new(start_step, start_saving), start_saving);
        }
        for step in start_step..cfg.horizon {
            let mut next: BTreeMap<LocalKey, f64> = BTreeMap::new();
            for (key, x) in std::mem::take(&mut layer) {
                let actions = cfg.valid_actions(x);
                for a in &actions {
                    let y = (x - a.spend).max(0.0);
                    next.entry(LocalKey::new(step + 1, y)).or_insert(y);
                }
                states.push((key, x, actions));
            }
            if step + 1 < cfg.horizon {
                layer = next;
            }
        }
        Self { states }
    }

    fn policy_count(&self) -> u128 {
        self.states
            .iter()
            .fold(1u128, |acc, (_, _, a)| acc.saturating_mul(a.len() as u128))
    }

    fn policies(&self) -> Vec<TabularPolicy> {
        let total = self.policy_count() as usize;
        (0..total)
            .map(|mut idx| {
                let mut p = TabularPolicy::new();
                for (key, _, actions) in &self.states {
                    p.actions.insert(*key, actions[idx % actions.len()]);
                    idx /= actions.len();
                }
                p
            })
            .collect()
    }

    fn first_action_policy(&self) -> TabularPolicy {
        let mut p = TabularPolicy::new();
        for (key, _, actions) in &self.states {
            p.actions.insert(*key, actions[0]);
        }
        p
    }
}

fn local_spaces(cfg: &MrsConfig, start: &MrsState) -> Result<Vec<LocalSpace>> {
    check_arity(start.savings.len(), cfg, "start state")?;
    let spaces: Vec<LocalSpace> = start
        .savings
        .iter()
        .map(|&x| LocalSpace::build(cfg, start.step, x))
        .collect();
    for (i, s) in spaces.iter().enumerate() {
        if let Some((key, _, _)) = s.states.iter().find(|(_, _, a)| a.is_empty()) {
            return Err(Error::InvalidAction(format!(
                "agent {i} has no valid spend at step {}, saving {}",
                key.step,
                key.saving()
            )));
        }
    }
    Ok(spaces)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpgCheck {
    pub is_mpg: bool,
    /// Largest `|ΔΦ − ΔV_i|` over all unilateral deviations and states.
    pub max_violation: f64,
    pub profiles: u128,
    pub states: usize,
}

pub fn verify_mpg(cfg: &MrsConfig, start: &MrsState, tol: f64) -> Result<MpgCheck> {
    verify_mpg_with_budget(cfg, start, tol, DEFAULT_ENUMERATION_BUDGET)
}

/// Exhaustive check of the potential identity. For every state reachable
/// from `start`, every agent `i` and every fixed `π_{−i}`, the spread of
/// `Φ − V_i` over all of agent `i`'s policies is the largest `|ΔΦ − ΔV_i|`.
pub fn verify_mpg_with_budget(cfg: &MrsConfig, start: &MrsState, tol: f64, budget: u64) -> Result<MpgCheck> {
    let spaces = local_spaces(cfg, start)?;
    let counts: Vec<u128> = spaces.iter().map(LocalSpace::policy_count).collect();
    let total = counts.iter().fold(1u128, |a, &c| a.saturating_mul(c));
    if total > budget as u128 {
        return Err(Error::EnumerationBudget {
            required: total,
            budget,
        });
    }
    let policies: Vec<Vec<TabularPolicy>> = spaces.iter().map(LocalSpace::policies).collect();
    let n = cfg.num_agents();
    let total = total as usize;
    let counts: Vec<usize> = counts.iter().map(|&c| c as usize).collect();
    let strides: Vec<usize> = (0..n).map(|i| counts[..i].iter().product()).collect();

    // Every joint state reachable from `start` is a product of local states.
    let mut joint_states = Vec::new();
    for step in start.step..cfg.horizon {
        let layers: Vec<Vec<f64>> = spaces
            .iter()
            .map(|s| {
                s.states
                    .iter()
                    .filter(|(k, _, _)| k.step == step)
                    .map(|(_, x, _)| *x)
                    .collect()
            })
            .collect();
        let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
        for layer in &layers {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    layer.iter().map(move |&x| {
                        let mut c = c.clone();
                        c.push(x);
                        c
                    })
                })
                .collect();
        }
        joint_states.extend(combos.into_iter().map(|savings| MrsState { savings, step }));
    }

    let mut max_violation: f64 = 0.0;
    let mut profile: Vec<&TabularPolicy> = Vec::with_capacity(n);
    for state in &joint_states {
        let mut ranges: Vec<Vec<(f64, f64)>> = counts
            .iter()
            .map(|&c| vec![(f64::INFINITY, f64::NEG_INFINITY); total / c])
            .collect();
        for idx in 0..total {
            profile.clear();
            profile.extend((0..n).map(|i| &policies[i][(idx / strides[i]) % counts[i]]));
            let (phi, values) = evaluate(&profile, cfg, state)?;
            for i in 0..n {
                let others = (idx / (strides[i] * counts[i])) * strides[i] + idx % strides[i];
                let d = phi - values[i];
                let r = &mut ranges[i][others];
                r.0 = r.0.min(d);
                r.1 = r.1.max(d);
            }
        }
        for r in ranges.iter().flatten() {
            max_violation = max_violation.max(r.1 - r.0);
        }
    }
    Ok(MpgCheck {
        is_mpg: max_violation <= tol,
        max_violation,
        profiles: total as u128,
        states: joint_states.len(),
    })
}

/// Value comparisons treat differences below this as ties.
fn improves(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + 1e-12 * (1.0 + incumbent.abs())
}

/// Exact best response of `agent` to the other policies in `profile` by
/// backward induction. The entry `profile[agent]` is ignored. Ties go to the
/// lexicographically smallest `(spend, privacy)`.
pub fn best_response_policy(
    profile: &[TabularPolicy],
    agent: usize,
    cfg: &MrsConfig,
    start: &MrsState,
) -> Result<TabularPolicy> {
    check_arity(profile.len(), cfg, "policy profile")?;
    check_arity(start.savings.len(), cfg, "start state")?;
    if agent >= cfg.num_agents() {
        return Err(invalid("agent", format!("no agent {agent}")));
    }
    // The other agents' trajectories do not depend on this agent.
    let mut others_team = Vec::new();
    let mut savings = start.savings.clone();
    for step in start.step..cfg.horizon {
        let mut team = 0.0;
        for (j, pj) in profile.iter().enumerate() {
            if j == agent {
                continue;
            }
            let a = lookup(pj, j, step, savings[j])?;
            check_action(savings[j], &a, j)?;
            team += (1.0 - a.privacy) * a.spend;
            savings[j] = (savings[j] - a.spend).max(0.0);
        }
        others_team.push(team);
    }

    let space = LocalSpace::build(cfg, start.step, start.savings[agent]);
    let scale = cfg.team_scale[agent];
    let mut value: BTreeMap<LocalKey, f64> = BTreeMap::new();
    let mut policy = TabularPolicy::new();
    for (key, x, actions) in space.states.iter().rev() {
        let t = (key.step - start.step) as usize;
        let mut best: Option<(MrsAction, f64)> = None;
        for a in actions {
            let r = scale * ((1.0 - a.privacy) * a.spend + others_team[t])
                + cfg.reward_alpha * x
                + cfg.reward_beta * a.privacy;
            let next = LocalKey::new(key.step + 1, (x - a.spend).max(0.0));
            let q = r + cfg.discount * value.get(&next).copied().unwrap_or(0.0);
            if best.is_none_or(|(_, v)| improves(q, v)) {
                best = Some((*a, q));
            }
        }
        let (a, v) = best.ok_or_else(|| {
            Error::InvalidAction(format!(
                "agent {agent} has no valid spend at step {}, saving {x}",
                key.step
            ))
        })?;
        value.insert(*key, v);
        policy.actions.insert(*key, a);
    }
    Ok(policy)
}

/// Largest gain any agent can obtain by switching to its best response.
pub fn nash_gap(profile: &[TabularPolicy], cfg: &MrsConfig, start: &MrsState) -> Result<f64> {
    let mut gap: f64 = 0.0;
    for i in 0..cfg.num_agents() {
        let mut deviated = profile.to_vec();
        deviated[i] = best_response_policy(profile, i, cfg, start)?;
        gap = gap.max(policy_value(&deviated, i, cfg, start)? - policy_value(profile, i, cfg, start)?);
    }
    Ok(gap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpgNash {
    pub policies: Vec<TabularPolicy>,
    pub converged: bool,
    pub sweeps: usize,
    /// Potential value at the start state before the first sweep and after
    /// each sweep.
    pub potential_trace: Vec<f64>,
}

/// Sequential best-response sweeps starting from the policies that always
/// take the smallest valid `(spend, privacy)`. A policy is replaced only when
/// its best response strictly improves the agent's value; converged once a
/// full sweep replaces nothing.
pub fn find_mpg_nash(cfg: &MrsConfig, start: &MrsState, max_sweeps: usize) -> Result<MpgNash> {
    let spaces = local_spaces(cfg, start)?;
    let mut policies: Vec<TabularPolicy> = spaces.iter().map(LocalSpace::first_action_policy).collect();
    if start.step >= cfg.horizon {
        return Ok(MpgNash {
            policies,
            converged: true,
            sweeps: 0,
            potential_trace: Vec::new(),
        });
    }
    let mut trace = vec![potential_value(&policies, cfg, start)?];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for i in 0..cfg.num_agents() {
            let br = best_response_policy(&policies, i, cfg, start)?;
            if br == policies[i] {
                continue;
            }
            let current = policy_value(&policies, i, cfg, start)?;
            let previous = std::mem::replace(&mut policies[i], br);
            if improves(policy_value(&policies, i, cfg, start)?, current) {
                changed = true;
            } else {
                policies[i] = previous;
            }
        }
        trace.push(potential_value(&policies, cfg, start)?);
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(MpgNash {
        policies,
        converged,
        sweeps,
        potential_trace: trace,
    })
}

/// Routes each agent's spend through randomized response over the spend grid
/// at the agent's chosen privacy level, returning the spend values received
/// by the others at each step. Rewards do not depend on these messages.
pub fn simulate_messages(
    profile: &[TabularPolicy],
    cfg: &MrsConfig,
    start: &MrsState,
    rng_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let k = cfg.spend_grid.len();
    rollout(profile, cfg, start)?
        .iter()
        .map(|s| {
            s.actions
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let symbol =
                        cfg.spend_grid.iter().position(|&b| b == a.spend).ok_or_else(|| {
                            Error::InvalidAction(format!("spend {} not on the grid", a.spend))
                        })?;
                    let mech = RrMechanism::new(a.privacy)?;
                    let mut rng = substream(rng_seed, i as u64, s.state.step as u64);
                    Ok(cfg.spend_grid[mech.apply_categorical(symbol, k, &mut rng)])
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(savings: &[f64]) -> MrsState {
        MrsState {
            savings: savings.to_vec(),
            step: 0,
        }
    }

    fn acts(v: &[(f64, f64)]) -> Vec<MrsAction> {
        v.iter().map(|&(b, p)| MrsAction::new(b, p)).collect()
    }

    fn cfg2(alpha: f64, beta: f64) -> MrsConfig {
        MrsConfig::new(
            2,
            1.0,
            alpha,
            beta,
            vec![2.0, 2.0],
            vec![0.0, 1.0],
            vec![0.0, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn transition_examples() {
        let s = transition(&state(&[2.0, 2.0]), &acts(&[(1.0, 0.0), (0.0, 0.0)])).unwrap();
        assert_eq!(s.savings, vec![1.0, 2.0]);
        assert_eq!(s.step, 1);
        let s = transition(&state(&[2.0, 3.0]), &acts(&[(0.0, 0.5), (0.0, 0.0)])).unwrap();
        assert_eq!(s.savings, vec![2.0, 3.0]);
        assert!(matches!(
            transition(&state(&[1.0]), &acts(&[(2.0, 0.0)])),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn reward_potential_theta_examples() {
        let cfg = cfg2(0.1, 0.2);
        let s = state(&[2.0, 2.0]);
        let a = acts(&[(1.0, 0.5), (0.0, 0.0)]);
        assert!((step_reward(&s, &a, 0, &cfg).unwrap() - 0.8).abs() < 1e-15);
        assert!((potential(&s, &a, &cfg).unwrap() - 1.0).abs() < 1e-15);
        assert!((theta(&s, &a, 0, &cfg).unwrap() + 0.2).abs() < 1e-15);
        let zero = acts(&[(0.0, 0.0), (0.0, 0.0)]);
        assert!((step_reward(&s, &zero, 1, &cfg).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(potential(&state(&[0.0, 0.0]), &zero, &cfg).unwrap(), 0.0);
        let team = cfg2(0.0, 0.0);
        assert_eq!(
            step_reward(&s, &a, 0, &team).unwrap(),
            step_reward(&s, &a, 1, &team).unwrap()
        );
    }

    #[test]
    fn theta_ignores_own_terms() {
        let cfg = cfg2(0.3, 0.7);
        let s = state(&[2.0, 1.0]);
        let base = theta(&s, &acts(&[(0.0, 0.0), (1.0, 0.5)]), 0, &cfg).unwrap();
        for own in [(1.0, 0.0), (1.0, 0.5), (0.0, 0.5)] {
            let t = theta(&s, &acts(&[own, (1.0, 0.5)]), 0, &cfg).unwrap();
            assert!((t - base).abs() < 1e-15);
        }
        let t = theta(&state(&[0.0, 1.0]), &acts(&[(0.0, 0.0), (1.0, 0.5)]), 0, &cfg).unwrap();
        assert!((t - base).abs() < 1e-15);
        let single = MrsConfig::new(1, 1.0, 0.3, 0.7, vec![2.0], vec![0.0, 1.0], vec![0.0, 0.5]).unwrap();
        assert_eq!(
            theta(&state(&[2.0]), &acts(&[(1.0, 0.5)]), 0, &single).unwrap(),
            0.0
        );
    }

    fn always(cfg: &MrsConfig, spend: f64, privacy: f64) -> TabularPolicy {
        let mut p = TabularPolicy::new();
        for (k, _, actions) in LocalSpace::build(cfg, 0, cfg.initial_savings[0]).states {
            let a = actions
                .iter()
                .copied()
                .find(|a| a.spend == spend && a.privacy == privacy)
                .unwrap_or(actions[0]);
            p.actions.insert(k, a);
        }
        p
    }

    #[test]
    fn policy_value_by_hand() {
        let cfg = MrsConfig::small_instance();
        let s0 = cfg.start_state();
        // agent 0 spends at step 0 with p = 0.5; agent 1 spends at step 1 with p = 0.
        let mut p0 = TabularPolicy::new();
        p0.insert(0, 1.0, MrsAction::new(1.0, 0.5));
        p0.insert(1, 0.0, MrsAction::new(0.0, 0.0));
        let mut p1 = TabularPolicy::new();
        p1.insert(0, 1.0, MrsAction::new(0.0, 0.0));
        p1.insert(1, 1.0, MrsAction::new(1.0, 0.0));
        let profile = vec![p0, p1];
        // step 0: team 0.5; r0 = 0.5 + 0.1 + 0.1, r1 = 0.5 + 0.1
        // step 1: team 1.0; r0 = 1.0 + 0, r1 = 1.0 + 0.1
        let v0 = policy_value(&profile, 0, &cfg, &s0).unwrap();
        let v1 = policy_value(&profile, 1, &cfg, &s0).unwrap();
        assert!((v0 - 1.7).abs() < 1e-12 && (v1 - 1.7).abs() < 1e-12, "{v0} {v1}");
        // J: step 0 = 0.5 + 0.2 + 0.1, step 1 = 1.0 + 0.1
        assert!((potential_value(&profile, &cfg, &s0).unwrap() - 1.9).abs() < 1e-12);

        let one = cfg.clone().with_horizon(1);
        let steps = rollout(&profile, &one, &s0).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(
            policy_value(&profile, 0, &one, &s0).unwrap(),
            step_reward(&steps[0].state, &steps[0].actions, 0, &one).unwrap()
        );
        let zero_alpha =
            MrsConfig::new(2, 1.0, 0.0, 0.2, vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.5]).unwrap();
        let idle = vec![always(&zero_alpha, 0.0, 0.0), always(&zero_alpha, 0.0, 0.0)];
        assert_eq!(policy_value(&idle, 0, &zero_alpha, &s0).unwrap(), 0.0);
    }

    #[test]
    fn missing_policy_entry_is_invalid_action() {
        let cfg = MrsConfig::small_instance();
        let profile = vec![TabularPolicy::new(), TabularPolicy::new()];
        assert!(matches!(
            policy_value(&profile, 0, &cfg, &cfg.start_state()),
            Err(Error::InvalidAction(_))
        ));
        let mut bad = TabularPolicy::new();
        bad.insert(0, 1.0, MrsAction::new(5.0, 0.0));
        let profile = vec![bad.clone(), bad];
        assert!(matches!(
            rollout(&profile, &cfg, &cfg.start_state()),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn policy_space_size() {
        let cfg = MrsConfig::small_instance();
        let space = LocalSpace::build(&cfg, 0, 1.0);
        assert_eq!(space.states.len(), 3);
        assert_eq!(space.policy_count(), 32);
        assert_eq!(space.policies().len(), 32);
    }

    #[test]
    fn small_instance_is_mpg() {
        let cfg = MrsConfig::small_instance();
        let r = verify_mpg(&cfg, &cfg.start_state(), 1e-12).unwrap();
        assert!(r.is_mpg, "{r:?}");
        assert_eq!(r.profiles, 1024);
        assert_eq!(r.states, 5);
    }

    #[test]
    fn perturbed_team_term_is_not_mpg() {
        let cfg = MrsConfig::small_instance().with_team_scale(0, 1.5).unwrap();
        let r = verify_mpg(&cfg, &cfg.start_state(), 1e-12).unwrap();
        assert!(!r.is_mpg && r.max_violation > 0.1, "{r:?}");
    }

    #[test]
    fn single_agent_and_discounted() {
        let cfg = MrsConfig::new(3, 1.0, 0.1, 0.2, vec![2.0], vec![0.0, 1.0], vec![0.0, 0.5]).unwrap();
        assert!(verify_mpg(&cfg, &cfg.start_state(), 0.0).unwrap().is_mpg);
        let cfg = MrsConfig::new(
            2,
            0.9,
            0.3,
            0.4,
            vec![1.0, 2.0],
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.5],
        )
        .unwrap();
        let r = verify_mpg(&cfg, &cfg.start_state(), 1e-9).unwrap();
        assert!(r.is_mpg, "{r:?}");
    }

    #[test]
    fn budget_is_enforced() {
        let cfg = MrsConfig::new(3, 1.0, 0.1, 0.2, vec![3.0, 3.0], vec![0.0, 1.0], vec![0.0, 0.5]).unwrap();
        match verify_mpg_with_budget(&cfg, &cfg.start_state(), 1e-12, 1000) {
            Err(Error::EnumerationBudget { required, budget }) => {
                assert!(required > 1000);
                assert_eq!(budget, 1000);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn best_response_dominance_cases() {
        // large β: always the highest privacy level
        let cfg = MrsConfig::new(2, 1.0, 0.1, 10.0, vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.5]).unwrap();
        let s0 = cfg.start_state();
        let others = find_mpg_nash(&cfg, &s0, 10).unwrap().policies;
        let br = best_response_policy(&others, 0, &cfg, &s0).unwrap();
        assert_eq!(br.len(), 3);
        assert!(br.iter().all(|(_, a)| a.privacy == 0.5));

        // α = β = 0 with a single step: spend everything in the open
        let cfg = MrsConfig::new(1, 1.0, 0.0, 0.0, vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.5]).unwrap();
        let s0 = cfg.start_state();
        let others = find_mpg_nash(&cfg, &s0, 10).unwrap().policies;
        let br = best_response_policy(&others, 1, &cfg, &s0).unwrap();
        assert_eq!(br.action(0, 1.0), Some(MrsAction::new(1.0, 0.0)));

        // horizon 0: empty policy
        let cfg = MrsConfig::small_instance().with_horizon(0);
        let br = best_response_policy(
            &[TabularPolicy::new(), TabularPolicy::new()],
            0,
            &cfg,
            &cfg.start_state(),
        )
        .unwrap();
        assert!(br.is_empty());
    }

    #[test]
    fn best_response_matches_enumeration() {
        let cfg = MrsConfig::new(
            2,
            0.9,
            0.15,
            0.35,
            vec![1.0, 2.0],
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.5, 1.0],
        )
        .unwrap();
        let s0 = cfg.start_state();
        let spaces = local_spaces(&cfg, &s0).unwrap();
        let others = spaces[1].policies();
        for other in others.iter().step_by(97) {
            let mut profile = vec![TabularPolicy::new(), other.clone()];
            let br = best_response_policy(&profile, 0, &cfg, &s0).unwrap();
            profile[0] = br;
            let v_br = policy_value(&profile, 0, &cfg, &s0).unwrap();
            let best = spaces[0]
                .policies()
                .into_iter()
                .map(|p| {
                    profile[0] = p;
                    policy_value(&profile, 0, &cfg, &s0).unwrap()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((v_br - best).abs() < 1e-12, "{v_br} vs {best}");
        }
    }

    #[test]
    fn nash_on_small_instance() {
        let cfg = MrsConfig::small_instance();
        let s0 = cfg.start_state();
        let r = find_mpg_nash(&cfg, &s0, 20).unwrap();
        assert!(r.converged);
        assert!(r.potential_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(nash_gap(&r.policies, &cfg, &s0).unwrap() <= 1e-12);
        // symmetric instance and start: identical policies
        assert_eq!(r.policies[0], r.policies[1]);
    }

    #[test]
    fn single_agent_nash_is_backward_induction() {
        let cfg = MrsConfig::new(3, 0.95, 0.05, 0.3, vec![2.0], vec![0.0, 1.0], vec![0.0, 0.5]).unwrap();
        let s0 = cfg.start_state();
        let r = find_mpg_nash(&cfg, &s0, 10).unwrap();
        assert!(r.converged && r.sweeps <= 2);
        let bi = best_response_policy(&r.policies, 0, &cfg, &s0).unwrap();
        assert_eq!(r.policies[0], bi);
    }

    #[test]
    fn horizon_zero_is_trivially_converged() {
        let cfg = MrsConfig::small_instance().with_horizon(0);
        let r = find_mpg_nash(&cfg, &cfg.start_state(), 5).unwrap();
        assert!(r.converged && r.potential_trace.is_empty());
        assert!(r.policies.iter().all(TabularPolicy::is_empty));
    }

    #[test]
    fn message_hook_is_seeded_and_exact_without_noise() {
        let cfg = MrsConfig::new(2, 1.0, 0.1, 0.0, vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0]).unwrap();
        let s0 = cfg.start_state();
        let r = find_mpg_nash(&cfg, &s0, 10).unwrap();
        let msgs = simulate_messages(&r.policies, &cfg, &s0, 7).unwrap();
        let steps = rollout(&r.policies, &cfg, &s0).unwrap();
        for (m, s) in msgs.iter().zip(&steps) {
            let spends: Vec<f64> = s.actions.iter().map(|a| a.spend).collect();
            assert_eq!(m, &spends);
        }
        let noisy = MrsConfig::small_instance();
        let r = find_mpg_nash(&noisy, &noisy.start_state(), 10).unwrap();
        assert_eq!(
            simulate_messages(&r.policies, &noisy, &noisy.start_state(), 3).unwrap(),
            simulate_messages(&r.policies, &noisy, &noisy.start_state(), 3).unwrap()
        );
    }

    #[test]
    fn config_validation() {
        assert!(MrsConfig::new(2, 0.0, 0.1, 0.2, vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(MrsConfig::new(2, 1.0, 0.1, 0.2, vec![], vec![0.0], vec![0.0]).is_err());
        assert!(MrsConfig::new(2, 1.0, 0.1, 0.2, vec![1.0], vec![], vec![0.0]).is_err());
        assert!(MrsConfig::new(2, 1.0, 0.1, 0.2, vec![1.0], vec![0.0], vec![1.5]).is_err());
        assert!(MrsConfig::new(2, 1.0, 0.1, 0.2, vec![-1.0], vec![0.0], vec![0.0]).is_err());
        let c = MrsConfig::new(2, 1.0, 0.1, 0.2, vec![1.0], vec![1.0, 0.0, 1.0], vec![0.5, 0.0]).unwrap();
        assert_eq!(c.spend_grid(), &[0.0, 1.0]);
        assert_eq!(c.privacy_grid(), &[0.0, 0.5]);
        // no spend fits the saving
        let c = MrsConfig::new(1, 1.0, 0.1, 0.2, vec![0.5], vec![1.0], vec![0.0]).unwrap();
        assert!(matches!(
            find_mpg_nash(&c, &c.start_state(), 3),
            Err(Error::InvalidAction(_))
        ));
    }
}
