//! Two-player collaborative games with privacy (CGP).
//!
//! Player `n ∈ {0, 1}` picks a privacy level `p_n ∈ [0, 1]` and receives
//!
//! ```text
//! u_n(p₁, p₂) = B_n · b(V_n, V_n^M(p₁, p₂)) − C_n · c(p_n)
//! ```
//!
//! where `V_n` is the stand-alone value, `V^M` the value of cooperating under
//! the privacy mechanism, `b` the benefit of cooperating and `c` the privacy
//! loss. Derivative-based checks (potential-game test, value-function
//! condition) use central finite differences on a uniform grid over `(0, 1)²`.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

pub type ValueFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
pub type LossFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type BenefitFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Grid step for best responses and ε-NE verification.
pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Largest unilateral gain tolerated by the ε-NE check.
pub const NASH_GAIN_TOL: f64 = 1e-6;

#[derive(Clone)]
pub struct CgpInstance {
    benefit_weight: [f64; 2],
    privacy_weight: [f64; 2],
    standalone_values: [f64; 2],
    value_fn: ValueFn,
    privacy_loss_fn: LossFn,
    benefit_fn: BenefitFn,
}

impl fmt::Debug for CgpInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CgpInstance")
            .field("benefit_weight", &self.benefit_weight)
            .field("privacy_weight", &self.privacy_weight)
            .field("standalone_values", &self.standalone_values)
            .finish_non_exhaustive()
    }
}

impl CgpInstance {
    /// `value_fn` returns `[V_1^M, V_2^M]`; `benefit_fn` is called as
    /// `b(V_n, V_n^M)`. The structural properties of the callables are not
    /// enforced here; see [`check_definitions`].
    pub fn new(
        benefit_weight: [f64; 2],
        privacy_weight: [f64; 2],
        standalone_values: [f64; 2],
        value_fn: ValueFn,
        privacy_loss_fn: LossFn,
        benefit_fn: BenefitFn,
    ) -> Result<Self> {
        for w in benefit_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid(
                    "benefit_weight",
                    format!("must be finite and > 0, got {w}"),
                ));
            }
        }
        for w in privacy_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid(
                    "privacy_weight",
                    format!("must be finite and > 0, got {w}"),
                ));
            }
        }
        Ok(Self {
            benefit_weight,
            privacy_weight,
            standalone_values,
            value_fn,
            privacy_loss_fn,
            benefit_fn,
        })
    }

    pub fn benefit_weight(&self) -> [f64; 2] {
        self.benefit_weight
    }

    pub fn privacy_weight(&self) -> [f64; 2] {
        self.privacy_weight
    }

    pub fn standalone_values(&self) -> [f64; 2] {
        self.standalone_values
    }

    pub fn values(&self, p1: f64, p2: f64) -> [f64; 2] {
        (self.value_fn)(p1, p2)
    }

    pub fn privacy_loss(&self, p: f64) -> f64 {
        (self.privacy_loss_fn)(p)
    }

    pub fn benefit(&self, standalone: f64, cooperative: f64) -> f64 {
        (self.benefit_fn)(standalone, cooperative)
    }

    /// Same game with both weights scaled by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        let mut out = self.clone();
        out.benefit_weight = self.benefit_weight.map(|w| w * k);
        out.privacy_weight = self.privacy_weight.map(|w| w * k);
        Self::new(
            out.benefit_weight,
            out.privacy_weight,
            out.standalone_values,
            out.value_fn,
            out.privacy_loss_fn,
            out.benefit_fn,
        )
    }

    fn utility_unchecked(&self, player: usize, p: [f64; 2]) -> f64 {
        let vm = self.values(p[0], p[1]);
        self.benefit_weight[player] * self.benefit(self.standalone_values[player], vm[player])
            - self.privacy_weight[player] * self.privacy_loss(p[player])
    }
}

/// Privacy levels of both players.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyProfile {
    pub p: [f64; 2],
}

impl StrategyProfile {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        for p in [p1, p2] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(
                    "p",
                    format!("privacy levels must lie in [0, 1], got {p}"),
                ));
            }
        }
        Ok(Self { p: [p1, p2] })
    }

    fn with(&self, player: usize, x: f64) -> [f64; 2] {
        let mut p = self.p;
        p[player] = x;
        p
    }
}

/// `u_n(p₁, p₂)` for both players.
pub fn utility(instance: &CgpInstance, profile: &StrategyProfile) -> Result<[f64; 2]> {
    let u = [
        instance.utility_unchecked(0, profile.p),
        instance.utility_unchecked(1, profile.p),
    ];
    if u.iter().all(|x| x.is_finite()) {
        Ok(u)
    } else {
        Err(Error::Evaluation(format!(
            "utility at {:?} is {:?}",
            profile.p, u
        )))
    }
}

/// Central-difference estimate of `∂²f/∂p₁∂p₂` with step `h`.
pub fn mixed_partial<F: Fn(f64, f64) -> f64>(f: F, p1: f64, p2: f64, h: f64) -> f64 {
    (f(p1 + h, p2 + h) - f(p1 + h, p2 - h) - f(p1 - h, p2 + h) + f(p1 - h, p2 - h)) / (4.0 * h * h)
}

/// Both players' cross-partials `∂p₁∂p₂ u_n` at `profile`.
pub fn cross_partials(instance: &CgpInstance, profile: &StrategyProfile, h: f64) -> [f64; 2] {
    let [p1, p2] = profile.p;
    [0, 1].map(|n| mixed_partial(|a, b| instance.utility_unchecked(n, [a, b]), p1, p2, h))
}

/// Result of a grid-based derivative check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCheck {
    pub holds: bool,
    pub max_deviation: f64,
}

fn interior_grid(grid_step: f64) -> Result<Vec<f64>> {
    if !(grid_step > 0.0 && grid_step < 1.0) {
        return Err(invalid(
            "grid_step",
            format!("must lie in (0, 1), got {grid_step}"),
        ));
    }
    let n = (1.0 / grid_step).round() as usize;
    if n < 4 {
        return Err(invalid("grid_step", "grid needs at least 3 interior points"));
    }
    Ok((1..n).map(|k| k as f64 / n as f64).collect())
}

/// Whether the two cross-partials agree everywhere on the interior grid, the
/// defining property of a two-player potential game.
pub fn is_potential_game(instance: &CgpInstance, grid_step: f64, tol: f64) -> Result<GridCheck> {
    let grid = interior_grid(grid_step)?;
    let h = grid_step / 2.0;
    let mut max_deviation: f64 = 0.0;
    for &p1 in &grid {
        for &p2 in &grid {
            let [a, b] = cross_partials(instance, &StrategyProfile { p: [p1, p2] }, h);
            let d = (a - b).abs();
            if !d.is_finite() {
                return Err(Error::Evaluation(format!("cross-partial at ({p1}, {p2})")));
            }
            max_deviation = max_deviation.max(d);
        }
    }
    Ok(GridCheck {
        holds: max_deviation <= tol,
        max_deviation,
    })
}

/// Whether `∂ⁱ_{p₁} V₁ = ∂ⁱ_{p₂} V₂` for `i ∈ {1, 2}` on the interior grid,
/// the value-function condition under which a CGP is a potential game.
pub fn value_partials_match(instance: &CgpInstance, grid_step: f64, tol: f64) -> Result<GridCheck> {
    let grid = interior_grid(grid_step)?;
    let h = grid_step / 2.0;
    let v1 = |a: f64, b: f64| instance.values(a, b)[0];
    let v2 = |a: f64, b: f64| instance.values(a, b)[1];
    let mut max_deviation: f64 = 0.0;
    for &p1 in &grid {
        for &p2 in &grid {
            let d1_v1 = (v1(p1 + h, p2) - v1(p1 - h, p2)) / (2.0 * h);
            let d1_v2 = (v2(p1, p2 + h) - v2(p1, p2 - h)) / (2.0 * h);
            let d2_v1 = (v1(p1 + h, p2) - 2.0 * v1(p1, p2) + v1(p1 - h, p2)) / (h * h);
            let d2_v2 = (v2(p1, p2 + h) - 2.0 * v2(p1, p2) + v2(p1, p2 - h)) / (h * h);
            let d = (d1_v1 - d1_v2).abs().max((d2_v1 - d2_v2).abs());
            if !d.is_finite() {
                return Err(Error::Evaluation(format!("value partials at ({p1}, {p2})")));
            }
            max_deviation = max_deviation.max(d);
        }
    }
    Ok(GridCheck {
        holds: max_deviation <= tol,
        max_deviation,
    })
}

fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if hi - lo <= 1e-14 {
            break;
        }
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}

/// Best privacy level for `player` against a fixed opponent level.
///
/// The grid maximizer (smallest on ties) is refined by golden-section search
/// within one grid cell on either side; the refinement is kept only if it is
/// strictly better.
pub fn best_response(instance: &CgpInstance, player: usize, opponent_p: f64, grid_step: f64) -> Result<f64> {
    if player > 1 {
        return Err(invalid("player", format!("two-player game, got player {player}")));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(invalid(
            "grid_step",
            format!("must lie in (0, 1], got {grid_step}"),
        ));
    }
    let base = StrategyProfile::new(opponent_p, opponent_p)?;
    let u = |x: f64| instance.utility_unchecked(player, base.with(player, x));
    let n = (1.0 / grid_step).round().max(1.0) as usize;
    let mut best_k = 0;
    let mut best_u = u(0.0);
    for k in 1..=n {
        let v = u(k as f64 / n as f64);
        if v > best_u {
            best_k = k;
            best_u = v;
        }
    }
    if !best_u.is_finite() {
        return Err(Error::Evaluation(format!(
            "utility of player {player} is {best_u}"
        )));
    }
    let x_best = best_k as f64 / n as f64;
    let lo = best_k.saturating_sub(1) as f64 / n as f64;
    let hi = (best_k + 1).min(n) as f64 / n as f64;
    let x_ref = golden_section_max(u, lo, hi);
    Ok(if u(x_ref) > best_u { x_ref } else { x_best })
}

/// Largest utility gain any player can get by a unilateral deviation on the
/// grid `{0, step, …, 1}`.
pub fn max_unilateral_gain(instance: &CgpInstance, profile: &StrategyProfile, grid_step: f64) -> Result<f64> {
    let current = utility(instance, profile)?;
    let n = (1.0 / grid_step).round().max(1.0) as usize;
    let mut gain = f64::NEG_INFINITY;
    for player in 0..2 {
        for k in 0..=n {
            let p = profile.with(player, k as f64 / n as f64);
            gain = gain.max(instance.utility_unchecked(player, p) - current[player]);
        }
    }
    Ok(gain.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashResult {
    pub profile: StrategyProfile,
    pub converged: bool,
    pub iterations: usize,
    /// Best unilateral grid deviation gain at the returned profile.
    pub max_gain: f64,
}

impl NashResult {
    pub fn is_epsilon_nash(&self) -> bool {
        self.max_gain <= NASH_GAIN_TOL
    }
}

/// Alternating best-response dynamics from `start`.
///
/// A player switches only when the best response strictly improves its
/// utility. Converged once a full sweep moves no coordinate by more than `tol`.
pub fn find_nash(
    instance: &CgpInstance,
    start: StrategyProfile,
    max_iters: usize,
    tol: f64,
) -> Result<NashResult> {
    let mut profile = start;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut max_move: f64 = 0.0;
        for player in 0..2 {
            let br = best_response(instance, player, profile.p[1 - player], DEFAULT_GRID_STEP)?;
            let current = instance.utility_unchecked(player, profile.p);
            let candidate = instance.utility_unchecked(player, profile.with(player, br));
            if candidate > current + 1e-12 * (1.0 + current.abs()) {
                max_move = max_move.max((br - profile.p[player]).abs());
                profile.p[player] = br;
            }
        }
        if max_move <= tol {
            converged = true;
            break;
        }
    }
    let max_gain = max_unilateral_gain(instance, &profile, DEFAULT_GRID_STEP)?;
    Ok(NashResult {
        profile,
        converged,
        iterations,
        max_gain,
    })
}

/// The single-round binary sums game as a CGP: `V_n = −½`,
/// `V^M = −½(p₁ + p₂)²`, `c(p) = 1 − p`, `b = V^M − V_n`, so that
/// `u_n = −B_n/2 (p₁+p₂)² + C_n p_n + B_n/2 − C_n`.
pub fn make_binary_sums_cgp(benefit_weight: [f64; 2], privacy_weight: [f64; 2]) -> Result<CgpInstance> {
    CgpInstance::new(
        benefit_weight,
        privacy_weight,
        [-0.5, -0.5],
        Arc::new(|p1, p2| {
            let v = -0.5 * (p1 + p2) * (p1 + p2);
            [v, v]
        }),
        Arc::new(|p| 1.0 - p),
        Arc::new(|standalone, cooperative| cooperative - standalone),
    )
}

/// A game in which every profile yields utility 0.
pub fn make_constant_cgp() -> CgpInstance {
    CgpInstance::new(
        [1.0, 1.0],
        [1.0, 1.0],
        [0.0, 0.0],
        Arc::new(|_, _| [0.0, 0.0]),
        Arc::new(|_| 0.0),
        Arc::new(|_, _| 0.0),
    )
    .expect("unit weights are valid")
}

/// Which of the structural requirements on `c`, `b` and `V^M` hold on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DefinitionReport {
    /// `c(0) = 1`, `c(1) = 0`, strictly decreasing.
    pub privacy_loss: bool,
    /// `b ≥ 0`, and `b = 0` wherever `V_n ≥ V_n^M`.
    pub benefit: bool,
    /// `p_m = 1 ⇒ V_n^M ≤ V_n`; `V_n^M` strictly decreasing in each `p_m`;
    /// `V_n < V_n^M(0, 0)`.
    pub value: bool,
    pub violations: Vec<String>,
}

pub fn check_definitions(instance: &CgpInstance, grid_step: f64) -> Result<DefinitionReport> {
    if !(grid_step > 0.0 && grid_step < 1.0) {
        return Err(invalid(
            "grid_step",
            format!("must lie in (0, 1), got {grid_step}"),
        ));
    }
    let n = (1.0 / grid_step).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let mut violations = Vec::new();

    let c = |p| instance.privacy_loss(p);
    let mut privacy_loss = (c(0.0) - 1.0).abs() < 1e-12 && c(1.0).abs() < 1e-12;
    if !privacy_loss {
        violations.push(format!("privacy loss endpoints c(0)={}, c(1)={}", c(0.0), c(1.0)));
    }
    if let Some(w) = grid.windows(2).find(|w| c(w[1]) >= c(w[0])) {
        privacy_loss = false;
        violations.push(format!("privacy loss not strictly decreasing at p={}", w[0]));
    }

    let mut benefit = true;
    let mut value = true;
    let vs = instance.standalone_values;
    for &p1 in &grid {
        for &p2 in &grid {
            let vm = instance.values(p1, p2);
            for player in 0..2 {
                let b = instance.benefit(vs[player], vm[player]);
                if benefit && (b < 0.0 || (vs[player] >= vm[player] && b != 0.0)) {
                    benefit = false;
                    violations.push(format!(
                        "benefit of player {player} at ({p1}, {p2}) is {b} with V={}, V^M={}",
                        vs[player], vm[player]
                    ));
                }
                if value && (p1 == 1.0 || p2 == 1.0) && vm[player] > vs[player] {
                    value = false;
                    violations.push(format!("V^M exceeds stand-alone value at ({p1}, {p2})"));
                }
            }
        }
    }
    'mono: for (i, &p1) in grid.iter().enumerate() {
        for (j, &p2) in grid.iter().enumerate() {
            let vm = instance.values(p1, p2);
            let right = (i + 1 < grid.len()).then(|| instance.values(grid[i + 1], p2));
            let up = (j + 1 < grid.len()).then(|| instance.values(p1, grid[j + 1]));
            for next in [right, up].into_iter().flatten() {
                if next[0] >= vm[0] || next[1] >= vm[1] {
                    value = false;
                    violations.push(format!("V^M not strictly decreasing at ({p1}, {p2})"));
                    break 'mono;
                }
            }
        }
    }
    let v00 = instance.values(0.0, 0.0);
    if !(vs[0] < v00[0] && vs[1] < v00[1]) {
        value = false;
        violations.push("stand-alone value not below V^M(0, 0)".into());
    }
    Ok(DefinitionReport {
        privacy_loss,
        benefit,
        value,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(b: [f64; 2], c: [f64; 2]) -> CgpInstance {
        make_binary_sums_cgp(b, c).unwrap()
    }

    fn eq_c4(b: f64, c: f64, p: [f64; 2], n: usize) -> f64 {
        -b / 2.0 * (p[0] + p[1]).powi(2) + c * p[n] + b / 2.0 - c
    }

    #[test]
    fn utility_matches_closed_form() {
        let g = bs([2.0, 2.0], [1.0, 1.0]);
        let u = utility(&g, &StrategyProfile::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!(u, [0.0, 0.0]);
        let u = utility(&g, &StrategyProfile::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(u, [-3.0, -3.0]);
        let g = bs([1.5, 3.0], [0.7, 0.2]);
        for p in [[0.1, 0.3], [0.9, 0.05], [0.5, 0.5]] {
            let u = utility(&g, &StrategyProfile { p }).unwrap();
            assert!((u[0] - eq_c4(1.5, 0.7, p, 0)).abs() < 1e-14);
            assert!((u[1] - eq_c4(3.0, 0.2, p, 1)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_benefit_leaves_privacy_cost() {
        let g = CgpInstance::new(
            [1.0, 1.0],
            [2.0, 3.0],
            [0.0, 0.0],
            Arc::new(|_, _| [0.0, 0.0]),
            Arc::new(|p| 1.0 - p),
            Arc::new(|_, _| 0.0),
        )
        .unwrap();
        let u = utility(&g, &StrategyProfile::new(0.25, 0.5).unwrap()).unwrap();
        assert_eq!(u, [-2.0 * 0.75, -3.0 * 0.5]);
    }

    #[test]
    fn non_finite_utility_is_an_error() {
        let g = CgpInstance::new(
            [1.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            Arc::new(|_, _| [0.0, 0.0]),
            Arc::new(|p| 1.0 / p),
            Arc::new(|_, _| 0.0),
        )
        .unwrap();
        assert!(matches!(
            utility(&g, &StrategyProfile::new(0.0, 0.5).unwrap()),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(make_binary_sums_cgp([0.0, 1.0], [1.0, 1.0]).is_err());
        assert!(make_binary_sums_cgp([1.0, 1.0], [1.0, -1.0]).is_err());
        assert!(StrategyProfile::new(1.1, 0.0).is_err());
    }

    #[test]
    fn potential_game_detection() {
        let r = is_potential_game(&bs([2.0, 2.0], [1.0, 1.0]), 0.01, 1e-6).unwrap();
        assert!(r.holds, "{r:?}");
        let r = is_potential_game(&bs([1.0, 2.0], [1.0, 1.0]), 0.01, 1e-6).unwrap();
        assert!(!r.holds);
        assert!((r.max_deviation - 1.0).abs() < 1e-6);
        let r = is_potential_game(&make_constant_cgp(), 0.01, 1e-9).unwrap();
        assert!(r.holds && r.max_deviation == 0.0);
        assert!(is_potential_game(&make_constant_cgp(), 0.5, 1e-9).is_err());
    }

    #[test]
    fn cross_partials_are_minus_b() {
        let g = bs([2.0, 3.0], [1.0, 1.0]);
        let c = cross_partials(&g, &StrategyProfile::new(0.3, 0.6).unwrap(), 1e-3);
        assert!((c[0] + 2.0).abs() < 1e-7 && (c[1] + 3.0).abs() < 1e-7, "{c:?}");
    }

    #[test]
    fn richardson_second_order() {
        // For a non-polynomial utility the central mixed difference has O(h²) error.
        let g = CgpInstance::new(
            [1.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            Arc::new(|p1, p2| [(p1 * p2).sin() + 1.0, (p1 * p2).sin() + 1.0]),
            Arc::new(|p| 1.0 - p),
            Arc::new(|v, vm| vm - v),
        )
        .unwrap();
        let (p1, p2): (f64, f64) = (0.4, 0.7);
        let exact = (p1 * p2).cos() - p1 * p2 * (p1 * p2).sin();
        let prof = StrategyProfile::new(p1, p2).unwrap();
        let e1 = (cross_partials(&g, &prof, 0.02)[0] - exact).abs();
        let e2 = (cross_partials(&g, &prof, 0.01)[0] - exact).abs();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
        // binary sums: exact at every step size
        let b = bs([2.0, 2.0], [1.0, 1.0]);
        for h in [0.02, 0.01] {
            let c = cross_partials(&b, &prof, h);
            assert!((c[0] + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn value_condition() {
        let g = bs([2.0, 2.0], [1.0, 1.0]);
        assert!(value_partials_match(&g, 0.01, 1e-6).unwrap().holds);
        let asym = CgpInstance::new(
            [1.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            Arc::new(|p1, p2| [-p1 * p1, -2.0 * p2 * p2]),
            Arc::new(|p| 1.0 - p),
            Arc::new(|v, vm| vm - v),
        )
        .unwrap();
        assert!(!value_partials_match(&asym, 0.01, 1e-6).unwrap().holds);
        let sep = CgpInstance::new(
            [1.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            Arc::new(|p1, p2| [(-(p1 + p2)).exp(), (-(p1 + p2)).exp()]),
            Arc::new(|p| 1.0 - p),
            Arc::new(|v, vm| vm - v),
        )
        .unwrap();
        assert!(value_partials_match(&sep, 0.01, 1e-6).unwrap().holds);
    }

    #[test]
    fn best_response_examples() {
        let g = bs([2.0, 2.0], [1.0, 1.0]);
        assert_eq!(best_response(&g, 0, 0.0, DEFAULT_GRID_STEP).unwrap(), 0.5);
        assert_eq!(best_response(&g, 1, 0.8, DEFAULT_GRID_STEP).unwrap(), 0.0);
        let eq = bs([1.0, 1.0], [1.0, 1.0]);
        assert_eq!(best_response(&eq, 0, 0.0, DEFAULT_GRID_STEP).unwrap(), 1.0);
        // interior optimum off the grid
        let x = best_response(&g, 0, 0.123_456_7, DEFAULT_GRID_STEP).unwrap();
        assert!((x - (0.5 - 0.123_456_7)).abs() < 1e-7, "{x}");
        // ties go to the smallest level
        assert_eq!(
            best_response(&make_constant_cgp(), 0, 0.3, DEFAULT_GRID_STEP).unwrap(),
            0.0
        );
        assert!(best_response(&g, 2, 0.0, DEFAULT_GRID_STEP).is_err());
    }

    #[test]
    fn nash_from_origin_and_fixed_point() {
        let g = bs([2.0, 2.0], [1.0, 1.0]);
        let r = find_nash(&g, StrategyProfile::new(0.0, 0.0).unwrap(), 100, 1e-8).unwrap();
        assert!(r.converged && r.is_epsilon_nash());
        assert!((r.profile.p[0] + r.profile.p[1] - 0.5).abs() <= 1e-7);
        let r = find_nash(&g, StrategyProfile::new(0.25, 0.25).unwrap(), 100, 1e-8).unwrap();
        assert_eq!(r.profile.p, [0.25, 0.25]);
        assert_eq!(r.iterations, 1);
        let r = find_nash(
            &make_constant_cgp(),
            StrategyProfile::new(0.3, 0.9).unwrap(),
            100,
            1e-8,
        )
        .unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.profile.p, [0.3, 0.9]);
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = bs([2.0, 2.0], [1.0, 1.0]);
        let r = find_nash(&g, StrategyProfile::new(0.9, 0.9).unwrap(), 1, 1e-8).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn argmax_invariant_under_common_scaling() {
        let g = bs([1.7, 2.9], [0.6, 1.1]);
        for k in [0.1, 3.0, 25.0] {
            let s = g.scaled(k).unwrap();
            for opp in [0.0, 0.1, 0.33, 0.8] {
                for player in 0..2 {
                    let a = best_response(&g, player, opp, DEFAULT_GRID_STEP).unwrap();
                    let b = best_response(&s, player, opp, DEFAULT_GRID_STEP).unwrap();
                    assert!((a - b).abs() < 1e-7, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn binary_sums_definitions() {
        let g = bs([2.0, 2.0], [1.0, 1.0]);
        assert!((g.privacy_loss(0.0) - 1.0).abs() == 0.0 && g.privacy_loss(1.0) == 0.0);
        assert!(g.values(0.0, 0.0)[0] > g.standalone_values()[0]);
        let rep = check_definitions(&g, 0.05).unwrap();
        assert!(rep.privacy_loss);
        assert!(rep.value, "{:?}", rep.violations);
        // b = V^M − V_n goes negative once p₁ + p₂ > 1
        assert!(!rep.benefit);
        let rep = check_definitions(&make_constant_cgp(), 0.05).unwrap();
        assert!(!rep.privacy_loss);
    }
}
