//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 2, 3 and 8 compare Monte-Carlo estimates against exact values at
//! 3 standard errors, so a correct implementation still fails each comparison
//! with probability about 0.0027. Their lines report the outcome as is; the
//! process exits non-zero only when a deterministic criterion fails.

use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use privcomm::accountant::*;
use privcomm::binary_sums::{simulate, BinarySumsInstance, ReceiverMode};
use privcomm::cgp::*;
use privcomm::gaussian_sender::*;
use privcomm::mechanisms::{naive_bias, rr_flip_prob, BitVector};
use privcomm::multi_round::*;
use privcomm::rng::seeded;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
    monte_carlo: bool,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
        monte_carlo: false,
    }
}

fn mc_outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        monte_carlo: true,
        ..outcome(pass, detail)
    }
}

/// Expected number of `|z| > 3` events among `k` comparisons of a correct
/// estimator.
fn expected_exceedances(k: usize) -> f64 {
    k as f64 * 0.0027
}

fn rr_calibration() -> Outcome {
    let a = rr_flip_prob(3f64.ln()).unwrap();
    let b = rr_flip_prob(1.0).unwrap();
    let want = 2.0 / (1f64.exp() + 1.0);
    outcome(
        a == 0.5 && (b - want).abs() <= 1e-12,
        format!("p(ln 3) = {a}, p(1) = {b}"),
    )
}

/// Worst |z| of the aware and naive receivers over every 5-bit pattern and
/// flip probability, plus the elapsed seconds.
fn binary_sums_sweep() -> (f64, f64, usize, usize, f64) {
    let start = Instant::now();
    let n = 5;
    let (mut worst_aware, mut worst_naive) = (0.0f64, 0.0f64);
    let (mut bad_aware, mut bad_naive) = (0, 0);
    for (k, &p) in [0.1, 0.5, 0.9].iter().enumerate() {
        for mask in 0u64..32 {
            let bits = BitVector::from_mask(mask, n);
            let inst =
                BinarySumsInstance::from_flip_probs(bits.clone(), vec![p; n], ReceiverMode::Aware).unwrap();
            let sample = simulate(&inst, 1_000_000, 7_000 + 100 * k as u64 + mask).unwrap();
            let sum = bits.sum() as f64;
            let aware = sample.guess_stats(ReceiverMode::Aware).unwrap();
            let naive = sample.guess_stats(ReceiverMode::Naive).unwrap();
            for i in 0..n {
                let (m, se) = aware[i];
                let z = (m - sum).abs() / se;
                worst_aware = worst_aware.max(z);
                bad_aware += (z > 3.0) as usize;
                let (m, se) = naive[i];
                let expect = sum + naive_bias(&bits, i, p).unwrap();
                let z = (m - expect).abs() / se;
                worst_naive = worst_naive.max(z);
                bad_naive += (z > 3.0) as usize;
            }
        }
    }
    (
        worst_aware,
        worst_naive,
        bad_aware,
        bad_naive,
        start.elapsed().as_secs_f64(),
    )
}

fn calibration_soundness() -> Outcome {
    let delta = 1e-4;
    let mut feasible = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut ok = true;
    for eps in [1.0, 5.0, 10.0] {
        for g1 in [0.003, 0.01, 0.03] {
            for n in [100u64, 1000, 10_000] {
                let budget = PrivacyBudget::new(eps, delta).unwrap();
                let params = MechanismParams::new(1.0, g1, 0.5, n, 1).unwrap();
                let Ok(r) = calibrate_step(&budget, &params) else {
                    continue;
                };
                feasible += 1;
                // independent round trip: subsample at 2C, compose ⌈γ₂N⌉ copies, convert
                let sens = 2.0 * params.clip_norm();
                let copies = (0.5 * n as f64).ceil() as usize;
                let one = subsampled_gaussian_rdp(sens, r.sigma_sq.sqrt(), r.alpha, g1).unwrap();
                let composed = compose(&vec![one; copies]).unwrap();
                let back = rdp_to_dp(composed, delta).unwrap();
                worst_excess = worst_excess.max(back.epsilon() - eps);
                let sp = r.sigma_sq / (4.0 * params.clip_norm().powi(2));
                let bound = 2.0 * sp * (1.0 / (g1 * r.alpha * (1.0 + sp))).ln() / 3.0 + 1.0;
                ok &= back.epsilon() <= eps + 1e-9 && sp >= 0.7 && r.alpha <= bound && back.delta() == delta;
            }
        }
    }
    // episode scaling at a pinned split
    let budget = PrivacyBudget::new(5.0, delta).unwrap();
    let params = MechanismParams::new(1.0, 0.01, 0.5, 100, 40).unwrap();
    let mut worst_ratio = 0.0f64;
    for beta in beta_grid() {
        let (a1, s1) = noise_variance(&budget, &params, beta, 1).unwrap();
        let (a40, s40) = noise_variance(&budget, &params, beta, 40).unwrap();
        ok &= a1 == a40;
        worst_ratio = worst_ratio.max((s40 / s1 - 40.0).abs() / 40.0);
    }
    ok &= worst_ratio <= 1e-12 && feasible > 0;
    outcome(
        ok,
        format!("{feasible}/27 feasible, max eps' - eps = {worst_excess:.3e}, episode ratio rel err {worst_ratio:.1e}"),
    )
}

fn cgp_equilibrium() -> Outcome {
    let g = make_binary_sums_cgp([2.0, 2.0], [1.0, 1.0]).unwrap();
    let mut rng = seeded(505);
    let mut ok = true;
    let (mut worst_line, mut worst_gain) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let start = StrategyProfile::new(rng.random(), rng.random()).unwrap();
        let r = find_nash(&g, start, 200, 1e-9).unwrap();
        let gain = max_unilateral_gain(&g, &r.profile, 1e-3).unwrap();
        let line = (r.profile.p[0] + r.profile.p[1] - 0.5).abs();
        worst_line = worst_line.max(line);
        worst_gain = worst_gain.max(gain);
        ok &= r.converged && line <= 1e-6 && gain <= 1e-6;
    }
    let same = is_potential_game(&g, 0.05, 1e-6).unwrap();
    let diff = is_potential_game(&make_binary_sums_cgp([1.0, 2.0], [1.0, 1.0]).unwrap(), 0.05, 1e-6).unwrap();
    ok &= same.holds && !diff.holds && (diff.max_deviation - 1.0).abs() <= 0.01;
    outcome(
        ok,
        format!(
            "max |p1+p2-0.5| = {worst_line:.1e}, max gain = {worst_gain:.1e}, potential(B1=B2) = {}, potential(1,2) = {} dev {:.4}",
            same.holds, diff.holds, diff.max_deviation
        ),
    )
}

fn mpg_identity() -> Outcome {
    let start_t = Instant::now();
    let cfg = MrsConfig::small_instance();
    let s0 = cfg.start_state();
    let check = verify_mpg(&cfg, &s0, 1e-12).unwrap();
    let nash = find_mpg_nash(&cfg, &s0, 50).unwrap();
    let monotone = nash.potential_trace.windows(2).all(|w| w[1] >= w[0]);
    let secs = start_t.elapsed().as_secs_f64();
    outcome(
        check.is_mpg && check.max_violation <= 1e-12 && nash.converged && monotone && secs <= 30.0,
        format!(
            "max |dPhi - dV| = {:.1e} over {} profiles, converged = {} in {} sweeps, monotone = {monotone}, {secs:.2}s",
            check.max_violation, check.profiles, nash.converged, nash.sweeps
        ),
    )
}

fn random_spd(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1
}

fn sender_dominance() -> Outcome {
    let mut rng = seeded(707);
    let mut ok = true;
    let mut min_margin = f64::INFINITY;
    let mut worst_gap = 0.0f64;
    for k in 0..100 {
        let d = 1 + k % 8;
        let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let cov = random_spd(d, &mut rng);
        let target = GaussianMessageDist::new(mean.clone(), cov.clone()).unwrap();
        let diag_target = GaussianMessageDist::diagonal(mean, cov.diagonal().as_slice()).unwrap();
        let min_var = cov.diagonal().min();
        for s in [0.1, 0.5, 1.0] {
            let p = SenderProblem::new(target.clone(), s).unwrap();
            let aware = aware_optimum(&p).unwrap().kl;
            let obl = oblivious_optimum(&p).unwrap().kl;
            min_margin = min_margin.min(obl - aware);
            ok &= aware < obl;

            let p = SenderProblem::new(diag_target.clone(), s).unwrap();
            let exact = aware_optimum(&p).unwrap().kl;
            let lr = (2.0 * min_var * min_var).min(0.15);
            let gd = aware_optimum_gd(&p, 60_000, lr).unwrap().kl;
            worst_gap = worst_gap.max((gd - exact).abs());
        }
    }
    ok &= worst_gap <= 1e-6;

    let mut worst_rel = 0.0f64;
    for _ in 0..20 {
        let d = rng.random_range(1..=8);
        let target = GaussianMessageDist::new(
            DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)),
            random_spd(d, &mut rng),
        )
        .unwrap();
        let p = SenderProblem::new(target, rng.random_range(0.0..1.0)).unwrap();
        let mean = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let var = DVector::from_fn(d, |_, _| rng.random_range(0.05..2.0));
        let f = |m: &DVector<f64>, v: &DVector<f64>| {
            aware_objective(
                &p,
                &GaussianMessageDist::diagonal(m.clone(), v.as_slice()).unwrap(),
            )
            .unwrap()
        };
        let (gm, gv) = aware_gradient_diag(&p, &mean, &var).unwrap();
        let h = 1e-5;
        for i in 0..d {
            let (mut a, mut b) = (mean.clone(), mean.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a, &var) - f(&b, &var)) / (2.0 * h);
            worst_rel = worst_rel.max((fd - gm[i]).abs() / gm[i].abs().max(1e-2));
            let (mut a, mut b) = (var.clone(), var.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&mean, &a) - f(&mean, &b)) / (2.0 * h);
            worst_rel = worst_rel.max((fd - gv[i]).abs() / gv[i].abs().max(1e-2));
        }
    }
    ok &= worst_rel <= 1e-4;
    outcome(
        ok,
        format!("min KL margin {min_margin:.3e}, max gd gap {worst_gap:.1e}, max gradient rel err {worst_rel:.1e}"),
    )
}

fn sampler_distribution() -> Outcome {
    let mut rng = seeded(808);
    let d = 3;
    let dist = GaussianMessageDist::new(
        DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)),
        random_spd(d, &mut rng),
    )
    .unwrap();
    let noise_var = 0.5;
    let sampler = MessageSampler::new(&dist, noise_var).unwrap();
    let n = 1_000_000;
    let mut rng = seeded(809);
    let draws: Vec<DVector<f64>> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    let expect = dist.cov() + DMatrix::identity(d, d) * noise_var;
    let mut worst = 0.0f64;
    for i in 0..d {
        let m = draws.iter().map(|x| x[i]).sum::<f64>() / n as f64;
        worst = worst.max((m - dist.mean()[i]).abs() / (expect[(i, i)] / n as f64).sqrt());
        for j in 0..d {
            let prods: Vec<f64> = draws
                .iter()
                .map(|x| (x[i] - dist.mean()[i]) * (x[j] - dist.mean()[j]))
                .collect();
            let m = prods.iter().sum::<f64>() / n as f64;
            let v = prods.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / (n - 1) as f64;
            worst = worst.max((m - expect[(i, j)]).abs() / (v / n as f64).sqrt());
        }
    }
    mc_outcome(
        worst <= 3.0,
        format!("max |z| over 12 means and covariance entries = {worst:.2}"),
    )
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_privcomm");
    let mut ok = true;
    let mut details = Vec::new();
    for cmd in ["calibrate", "binary-sums", "equilibrium", "multi-round", "sender"] {
        let run = || {
            Command::new(bin)
                .env_remove("PRIVCOMM_OUT_DIR")
                .args([cmd, "--seed", "99"])
                .output()
                .unwrap()
        };
        let (a, b) = (run(), run());
        let same = a.status.success() && b.status.success() && a.stdout == b.stdout && !a.stdout.is_empty();
        ok &= same;
        details.push(format!("{cmd}={}", if same { "identical" } else { "differs" }));
    }
    outcome(ok, details.join(" "))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "randomized response calibration", rr_calibration()));
    let (wa, wn, ba, bn, secs) = binary_sums_sweep();
    results.push((
        2,
        "aware receiver unbiased",
        mc_outcome(
            ba == 0 && secs <= 60.0,
            format!(
                "{ba}/480 comparisons beyond 3 SE ({:.1} expected by chance), max |z| = {wa:.2}, sweep took {secs:.1}s",
                expected_exceedances(480)
            ),
        ),
    ));
    results.push((
        3,
        "naive receiver bias formula",
        mc_outcome(
            bn == 0,
            format!(
                "{bn}/480 comparisons beyond 3 SE ({:.1} expected by chance), max |z| = {wn:.2}",
                expected_exceedances(480)
            ),
        ),
    ));
    results.push((4, "calibration soundness", calibration_soundness()));
    results.push((5, "two-player equilibrium", cgp_equilibrium()));
    results.push((6, "multi-round potential identity", mpg_identity()));
    results.push((7, "noise-aware sender dominance", sender_dominance()));
    results.push((8, "sampler distribution", sampler_distribution()));
    results.push((9, "CLI determinism", cli_determinism()));

    let (mut failed, mut hard) = (0, 0);
    for (k, name, o) in &results {
        println!(
            "{} criterion {k} ({name}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += !o.pass as usize;
        hard += (!o.pass && !o.monte_carlo) as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if hard > 0 {
        eprintln!("{hard} deterministic acceptance criteria failed");
        std::process::exit(1);
    }
}
