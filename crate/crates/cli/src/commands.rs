use anyhow::{ensure, Result};
use nalgebra::{DMatrix, DVector};
use privcomm::accountant::{self, MechanismParams, PrivacyBudget};
use privcomm::binary_sums::{self, BinarySumsInstance, ReceiverMode};
use privcomm::cgp::{self, StrategyProfile};
use privcomm::gaussian_sender::{self, GaussianMessageDist, SenderProblem};
use privcomm::mechanisms::{naive_bias_heterogeneous, BitVector};
use privcomm::multi_round::{self, MrsConfig};
use privcomm::Error;
use rand::Rng;

use crate::config::{
    BinarySumsConfig, CalibrateConfig, EquilibriumConfig, GameKind, MultiRoundConfig, SenderConfig,
};
use crate::plot::{line_chart, Series};
use crate::table::{Cell, ResultTable};

/// Tables produced by a subcommand, optional SVG plots, and the reason the run
/// should exit with the oracle-failure code, if any.
#[derive(Debug, Default)]
pub struct Report {
    pub tables: Vec<ResultTable>,
    pub plots: Vec<(String, String)>,
    pub failures: Vec<String>,
}

pub fn calibrate(cfg: &CalibrateConfig) -> Result<Report> {
    ensure!(!cfg.epsilons.is_empty(), "calibrate.epsilons must be non-empty");
    ensure!(
        !cfg.episode_lens.is_empty(),
        "calibrate.episode_lens must be non-empty"
    );
    let mut table = ResultTable::new(
        "calibration",
        &[
            "epsilon",
            "delta",
            "gamma1",
            "gamma2",
            "num_agents",
            "clip_norm",
            "episode_len",
            "sigma_sq",
            "alpha",
            "beta",
            "sigma_prime_sq",
            "feasible",
            "round_trip_epsilon",
            "sigma_sq_ratio_vs_step",
            "pinned_ratio",
            "violated_constraint",
        ],
    );
    let mut report = Report::default();
    let mut curves: Vec<Series> = Vec::new();
    for &t in &cfg.episode_lens {
        curves.push(Series {
            name: format!("T={t}"),
            points: Vec::new(),
        });
    }
    for &eps in &cfg.epsilons {
        let budget = PrivacyBudget::new(eps, cfg.delta)?;
        let base = MechanismParams::new(
            cfg.clip_norm,
            cfg.sample_rate_data,
            cfg.sample_rate_agents,
            cfg.num_agents,
            1,
        )?;
        let step = accountant::calibrate_step(&budget, &base);
        for (k, &t) in cfg.episode_lens.iter().enumerate() {
            let params = base.with_episode_len(t)?;
            let head: Vec<Cell> = vec![
                eps.into(),
                cfg.delta.into(),
                cfg.sample_rate_data.into(),
                cfg.sample_rate_agents.into(),
                params.num_agents().into(),
                cfg.clip_norm.into(),
                t.into(),
            ];
            let mut row = head;
            match accountant::calibrate_episode(&budget, &params) {
                Ok(r) => {
                    let back = accountant::round_trip(&r, &budget, &params)?;
                    let ratio = step.as_ref().ok().map(|s| r.sigma_sq / s.sigma_sq);
                    let pinned = match &step {
                        Ok(s) => {
                            let (_, at_t) = accountant::noise_variance(&budget, &params, s.beta, t)?;
                            Some(at_t / s.sigma_sq)
                        }
                        Err(_) => None,
                    };
                    if back.epsilon() > eps * (1.0 + 1e-9) {
                        report.failures.push(format!(
                            "round trip for epsilon={eps}, T={t} gives {}",
                            back.epsilon()
                        ));
                    }
                    curves[k].points.push((eps.log10(), r.sigma_sq.log10()));
                    row.extend([
                        r.sigma_sq.into(),
                        r.alpha.into(),
                        r.beta.into(),
                        r.sigma_prime_sq.into(),
                        true.into(),
                        back.epsilon().into(),
                        ratio.into(),
                        pinned.into(),
                        Cell::Empty,
                    ]);
                }
                Err(Error::CalibrationInfeasible { beta, constraint, .. }) => {
                    report
                        .failures
                        .push(format!("no feasible calibration for epsilon={eps}, T={t}"));
                    row.extend([
                        Cell::Empty,
                        Cell::Empty,
                        beta.into(),
                        Cell::Empty,
                        false.into(),
                        Cell::Empty,
                        Cell::Empty,
                        Cell::Empty,
                        constraint.to_string().into(),
                    ]);
                }
                Err(e) => return Err(e.into()),
            }
            table.push(row)?;
        }
    }
    report.tables.push(table);
    report.plots.push((
        "calibration".into(),
        line_chart(
            "Calibrated noise variance",
            "log10 epsilon",
            "log10 sigma^2",
            &curves,
        ),
    ));
    Ok(report)
}

pub fn binary_sums(cfg: &BinarySumsConfig, seed: u64) -> Result<Report> {
    ensure!(cfg.trials > 0, "binary_sums.trials must be >= 1");
    ensure!(
        !cfg.flip_probs.is_empty(),
        "binary_sums.flip_probs must be non-empty"
    );
    ensure!(cfg.agreement_z > 0.0, "binary_sums.agreement_z must be > 0");
    let bits = BitVector::from_ints(cfg.bits.iter().copied())?;
    let n = bits.len();
    let mut agents = ResultTable::new(
        "agents",
        &[
            "flip_prob",
            "mode",
            "agent",
            "bit",
            "mc_guess",
            "mc_std_error",
            "exact_guess",
            "z_score",
            "exact_bias",
            "mc_utility",
            "exact_utility",
        ],
    );
    let mut team = ResultTable::new(
        "team",
        &[
            "flip_prob",
            "mode",
            "true_sum",
            "mc_team_reward",
            "exact_team_reward",
            "agreement",
        ],
    );
    let mut report = Report::default();
    let mut reward_curves = vec![
        Series {
            name: "naive".into(),
            points: Vec::new(),
        },
        Series {
            name: "aware".into(),
            points: Vec::new(),
        },
    ];
    for (k, &p) in cfg.flip_probs.iter().enumerate() {
        let probs = vec![p; n];
        let inst = BinarySumsInstance::from_flip_probs(bits.clone(), probs.clone(), ReceiverMode::Naive)?;
        let sample = binary_sums::simulate(&inst, cfg.trials, seed.wrapping_add(k as u64))?;
        for (m, mode) in [ReceiverMode::Naive, ReceiverMode::Aware].into_iter().enumerate() {
            let exact = binary_sums::analytic_outcome(&inst.with_mode(mode))?;
            let mc = sample.outcome(mode)?;
            let mut agree = true;
            for i in 0..n {
                let (g, se) = (mc.guesses[i], mc.mc_std_errors[i]);
                let diff = g - exact.guesses[i];
                let z = if se > 0.0 {
                    diff / se
                } else if diff.abs() <= 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                };
                if z.abs() > cfg.agreement_z {
                    agree = false;
                    report.failures.push(format!("p={p} {mode} agent {i}: z = {z}"));
                }
                let bias = match mode {
                    ReceiverMode::Naive => naive_bias_heterogeneous(&bits, i, &probs)?,
                    ReceiverMode::Aware => 0.0,
                };
                agents.push(vec![
                    p.into(),
                    mode.to_string().into(),
                    i.into(),
                    Cell::Int(bits.as_slice()[i] as i64),
                    g.into(),
                    se.into(),
                    exact.guesses[i].into(),
                    z.into(),
                    bias.into(),
                    mc.utilities[i].into(),
                    exact.utilities[i].into(),
                ])?;
            }
            reward_curves[m].points.push((p, mc.team_reward));
            team.push(vec![
                p.into(),
                mode.to_string().into(),
                bits.sum().into(),
                mc.team_reward.into(),
                exact.team_reward.into(),
                agree.into(),
            ])?;
        }
    }
    report.tables.push(agents);
    report.tables.push(team);
    for c in &mut reward_curves {
        c.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    report.plots.push((
        "team_reward".into(),
        line_chart(
            "Team reward by receiver",
            "flip probability",
            "team reward",
            &reward_curves,
        ),
    ));
    Ok(report)
}

pub fn equilibrium(cfg: &EquilibriumConfig, seed: u64) -> Result<Report> {
    ensure!(cfg.starts > 0, "equilibrium.starts must be >= 1");
    let game = match cfg.game {
        GameKind::BinarySums => cgp::make_binary_sums_cgp(cfg.benefit_weight, cfg.privacy_weight)?,
        GameKind::Constant => cgp::make_constant_cgp(),
    };
    let potential = cgp::is_potential_game(&game, cfg.potential_grid_step, cfg.potential_tol)?;
    let mut runs = ResultTable::new(
        "runs",
        &[
            "start",
            "p1_start",
            "p2_start",
            "p1",
            "p2",
            "sum",
            "converged",
            "iterations",
            "max_gain",
            "epsilon_nash",
        ],
    );
    let mut report = Report::default();
    let mut rng = privcomm::rng::seeded(seed);
    let mut points = Vec::new();
    for s in 0..cfg.starts {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let r = cgp::find_nash(&game, StrategyProfile::new(a, b)?, cfg.max_iters, cfg.tol)?;
        let [p1, p2] = r.profile.p;
        if !(r.converged && r.is_epsilon_nash()) {
            report
                .failures
                .push(format!("start {s} did not reach an equilibrium: {r:?}"));
        }
        points.push((p1, p2));
        runs.push(vec![
            s.into(),
            a.into(),
            b.into(),
            p1.into(),
            p2.into(),
            (p1 + p2).into(),
            r.converged.into(),
            r.iterations.into(),
            r.max_gain.into(),
            r.is_epsilon_nash().into(),
        ])?;
    }
    let mut summary = ResultTable::new(
        "summary",
        &[
            "game",
            "b1",
            "b2",
            "c1",
            "c2",
            "is_potential_game",
            "potential_deviation",
            "starts",
        ],
    );
    let game_name = match cfg.game {
        GameKind::BinarySums => "binary-sums",
        GameKind::Constant => "constant",
    };
    let [b1, b2] = game.benefit_weight();
    let [c1, c2] = game.privacy_weight();
    summary.push(vec![
        game_name.into(),
        b1.into(),
        b2.into(),
        c1.into(),
        c2.into(),
        potential.holds.into(),
        potential.max_deviation.into(),
        cfg.starts.into(),
    ])?;
    report.tables.push(summary);
    report.tables.push(runs);
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    report.plots.push((
        "equilibria".into(),
        line_chart(
            "Equilibria reached",
            "p1",
            "p2",
            &[Series {
                name: "equilibria".into(),
                points,
            }],
        ),
    ));
    Ok(report)
}

pub fn multi_round(cfg: &MultiRoundConfig, seed: u64) -> Result<Report> {
    let mut game = MrsConfig::new(
        cfg.horizon,
        cfg.discount,
        cfg.alpha,
        cfg.beta,
        cfg.initial_savings.clone(),
        cfg.spend_grid.clone(),
        cfg.privacy_grid.clone(),
    )?;
    let perturbed = match &cfg.team_scale {
        Some(scales) => {
            ensure!(
                scales.len() == game.num_agents(),
                "multi_round.team_scale needs one entry per agent ({})",
                game.num_agents()
            );
            for (i, &s) in scales.iter().enumerate() {
                game = game.with_team_scale(i, s)?;
            }
            scales.iter().any(|&s| s != 1.0)
        }
        None => false,
    };
    let start = game.start_state();
    let check = multi_round::verify_mpg_with_budget(&game, &start, cfg.tol, cfg.enumeration_budget)?;
    let nash = multi_round::find_mpg_nash(&game, &start, cfg.max_sweeps)?;
    let gap = multi_round::nash_gap(&nash.policies, &game, &start)?;
    let monotone = nash.potential_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12);

    let mut report = Report::default();
    if !perturbed {
        if !check.is_mpg {
            report
                .failures
                .push(format!("potential identity violated by {}", check.max_violation));
        }
        if !nash.converged {
            report
                .failures
                .push(format!("no equilibrium after {} sweeps", nash.sweeps));
        }
        if !monotone {
            report
                .failures
                .push("potential decreased during best-response dynamics".into());
        }
    }

    let mut summary = ResultTable::new(
        "summary",
        &[
            "agents",
            "horizon",
            "perturbed",
            "is_mpg",
            "max_violation",
            "profiles",
            "states",
            "converged",
            "sweeps",
            "nash_gap",
            "potential_monotone",
            "final_potential",
        ],
    );
    summary.push(vec![
        game.num_agents().into(),
        game.horizon().into(),
        perturbed.into(),
        check.is_mpg.into(),
        check.max_violation.into(),
        Cell::Text(check.profiles.to_string()),
        check.states.into(),
        nash.converged.into(),
        nash.sweeps.into(),
        gap.into(),
        monotone.into(),
        nash.potential_trace.last().copied().into(),
    ])?;

    let mut trace = ResultTable::new("trace", &["sweep", "potential_value"]);
    for (k, v) in nash.potential_trace.iter().enumerate() {
        trace.push(vec![k.into(), (*v).into()])?;
    }

    let mut policies = ResultTable::new("policies", &["agent", "step", "saving", "spend", "privacy"]);
    for (i, pol) in nash.policies.iter().enumerate() {
        for (key, a) in pol.iter() {
            policies.push(vec![
                i.into(),
                key.step.into(),
                key.saving().into(),
                a.spend.into(),
                a.privacy.into(),
            ])?;
        }
    }
    report.plots.push((
        "potential_trace".into(),
        line_chart(
            "Potential during best-response sweeps",
            "sweep",
            "potential value",
            &[Series {
                name: "potential".into(),
                points: nash
                    .potential_trace
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| (k as f64, v))
                    .collect(),
            }],
        ),
    ));
    report.tables.push(summary);
    report.tables.push(trace);
    report.tables.push(policies);

    if cfg.messages {
        let received = multi_round::simulate_messages(&nash.policies, &game, &start, seed)?;
        let mut messages = ResultTable::new("messages", &["step", "agent", "received_spend"]);
        for (t, row) in received.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                messages.push(vec![t.into(), i.into(), v.into()])?;
            }
        }
        report.tables.push(messages);
    }
    Ok(report)
}

fn sender_target(cfg: &SenderConfig) -> Result<GaussianMessageDist> {
    let d = cfg.dim;
    ensure!(d > 0, "sender.dim must be >= 1");
    let mean = match &cfg.target_mean {
        Some(m) => {
            ensure!(m.len() == d, "sender.target_mean needs {d} entries");
            DVector::from_vec(m.clone())
        }
        None => DVector::zeros(d),
    };
    if let Some(rows) = &cfg.target_cov {
        ensure!(
            rows.len() == d && rows.iter().all(|r| r.len() == d),
            "sender.target_cov must be {d}x{d}"
        );
        let cov = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        return Ok(GaussianMessageDist::new(mean, cov)?);
    }
    let vars = match &cfg.target_variances {
        Some(v) => {
            ensure!(v.len() == d, "sender.target_variances needs {d} entries");
            v.clone()
        }
        None => vec![1.0; d],
    };
    Ok(GaussianMessageDist::diagonal(mean, &vars)?)
}

pub fn sender(cfg: &SenderConfig) -> Result<Report> {
    ensure!(!cfg.noise_vars.is_empty(), "sender.noise_vars must be non-empty");
    let target = sender_target(cfg)?;
    let run_gd = target.is_diagonal();
    let mut table = ResultTable::new(
        "sender",
        &[
            "noise_var",
            "oblivious_kl",
            "aware_kl",
            "gd_kl",
            "gd_gap",
            "gd_steps",
            "aware_dominates",
            "strict",
        ],
    );
    let mut report = Report::default();
    let mut curves = vec![
        Series {
            name: "oblivious".into(),
            points: Vec::new(),
        },
        Series {
            name: "aware".into(),
            points: Vec::new(),
        },
    ];
    for &s in &cfg.noise_vars {
        ensure!(
            s >= 0.0 && s.is_finite(),
            "sender.noise_vars entries must be finite and >= 0"
        );
        let problem = SenderProblem::new(target.clone(), s)?;
        let obl = gaussian_sender::oblivious_optimum(&problem)?;
        let aware = gaussian_sender::aware_optimum(&problem)?;
        let dominates = aware.kl <= obl.kl;
        let strict = aware.kl < obl.kl;
        if !dominates || (s > 0.0 && !strict) {
            report.failures.push(format!(
                "noise_var={s}: aware {} vs oblivious {}",
                aware.kl, obl.kl
            ));
        }
        let (gd_kl, gap, steps) = if run_gd {
            let opts = gaussian_sender::GdOptions::new(cfg.gd_steps, cfg.learning_rate);
            let gd = gaussian_sender::aware_optimum_gd_with(&problem, &opts)?;
            let gap = (gd.solution.kl - aware.kl).abs();
            if gap > cfg.gd_tol {
                report
                    .failures
                    .push(format!("noise_var={s}: gradient descent gap {gap}"));
            }
            (Some(gd.solution.kl), Some(gap), Some(gd.steps_taken))
        } else {
            (None, None, None)
        };
        curves[0].points.push((s, obl.kl));
        curves[1].points.push((s, aware.kl));
        table.push(vec![
            s.into(),
            obl.kl.into(),
            aware.kl.into(),
            gd_kl.into(),
            gap.into(),
            steps.into(),
            dominates.into(),
            strict.into(),
        ])?;
    }
    for c in &mut curves {
        c.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    report.tables.push(table);
    report.plots.push((
        "sender_kl".into(),
        line_chart("Achieved KL against the target", "noise variance", "KL", &curves),
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(t: &ResultTable, name: &str) -> Vec<Cell> {
        let c = t.column(name).unwrap();
        t.rows.iter().map(|r| r[c].clone()).collect()
    }

    fn floats(cells: Vec<Cell>) -> Vec<f64> {
        cells
            .into_iter()
            .map(|c| match c {
                Cell::Float(v) => v,
                other => panic!("not a float: {other:?}"),
            })
            .collect()
    }

    #[test]
    fn default_calibration_decreases_in_epsilon() {
        let cfg = CalibrateConfig {
            episode_lens: vec![1],
            ..Default::default()
        };
        let r = calibrate(&cfg).unwrap();
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        let s = floats(col(&r.tables[0], "sigma_sq"));
        assert_eq!(s.len(), 3);
        assert!(s[0] > s[1] && s[1] > s[2]);
    }

    #[test]
    fn episode_rows_report_the_pinned_ratio() {
        let r = calibrate(&CalibrateConfig::default()).unwrap();
        let t = &r.tables[0];
        let lens = col(t, "episode_len");
        let pinned = floats(col(t, "pinned_ratio"));
        for (len, ratio) in lens.iter().zip(pinned) {
            let Cell::Int(len) = len else { panic!() };
            assert!((ratio - *len as f64).abs() <= 1e-12 * *len as f64);
        }
    }

    #[test]
    fn infeasible_calibration_is_reported_not_raised() {
        let cfg = CalibrateConfig {
            epsilons: vec![1.0],
            sample_rate_data: 0.5,
            sample_rate_agents: 0.5,
            num_agents: 3,
            episode_lens: vec![1],
            ..Default::default()
        };
        let r = calibrate(&cfg).unwrap();
        assert_eq!(r.failures.len(), 1);
        assert_eq!(col(&r.tables[0], "feasible"), vec![Cell::Bool(false)]);
    }

    #[test]
    fn binary_sums_reports_zero_error_without_noise() {
        let cfg = BinarySumsConfig {
            trials: 20_000,
            ..Default::default()
        };
        let r = binary_sums(&cfg, 5).unwrap();
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        let team = &r.tables[1];
        let p = floats(col(team, "flip_prob"));
        let mc = floats(col(team, "mc_team_reward"));
        for (p, v) in p.iter().zip(mc) {
            if *p == 0.0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn constant_game_converges_at_once() {
        let cfg = EquilibriumConfig {
            game: GameKind::Constant,
            starts: 3,
            ..Default::default()
        };
        let r = equilibrium(&cfg, 1).unwrap();
        assert!(r.failures.is_empty());
        for c in col(&r.tables[1], "iterations") {
            assert!(matches!(c, Cell::Int(i) if i <= 1), "{c:?}");
        }
    }

    #[test]
    fn unequal_benefits_are_not_a_potential_game() {
        let cfg = EquilibriumConfig {
            benefit_weight: [1.0, 2.0],
            ..Default::default()
        };
        let r = equilibrium(&cfg, 1).unwrap();
        assert_eq!(col(&r.tables[0], "is_potential_game"), vec![Cell::Bool(false)]);
    }

    #[test]
    fn perturbed_multi_round_is_not_a_failure() {
        let cfg = MultiRoundConfig {
            team_scale: Some(vec![1.5, 1.0]),
            ..Default::default()
        };
        let r = multi_round(&cfg, 0).unwrap();
        assert!(r.failures.is_empty());
        assert_eq!(col(&r.tables[0], "is_mpg"), vec![Cell::Bool(false)]);
    }

    #[test]
    fn zero_horizon_has_an_empty_trace() {
        let cfg = MultiRoundConfig {
            horizon: 0,
            ..Default::default()
        };
        let r = multi_round(&cfg, 0).unwrap();
        assert!(r.failures.is_empty());
        assert!(r.tables[1].rows.is_empty());
    }

    #[test]
    fn sender_default_sweep_dominates() {
        let r = sender(&SenderConfig::default()).unwrap();
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        let t = &r.tables[0];
        let obl = floats(col(t, "oblivious_kl"));
        let aware = floats(col(t, "aware_kl"));
        assert_eq!(obl[0], 0.0);
        assert_eq!(aware[0], 0.0);
        assert!(aware.iter().zip(&obl).all(|(a, o)| a <= o));
    }
}
