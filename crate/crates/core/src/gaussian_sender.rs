//! Gaussian message senders under additive Gaussian privacy noise.
//!
//! A sender draws `p ~ N(μ, Σ)` and the channel adds `u ~ N(0, σ² I)`, so the
//! receiver sees `m ~ N(μ, Σ + σ² I)`. The *oblivious* sender picks the target
//! `(μ*, Σ*)` itself; the *aware* sender minimizes
//! `KL(N(μ, Σ + σ² I) ‖ N(μ*, Σ*))` over `μ` and PSD `Σ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng::seeded;

/// Smallest eigenvalue accepted for a target covariance.
pub const MIN_TARGET_EIGENVALUE: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMessageDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    diagonal: bool,
}

impl GaussianMessageDist {
    /// Accepts covariances symmetric to 1e-12 with eigenvalues ≥ −1e-12;
    /// the stored matrix is symmetrized and projected onto the PSD cone.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(invalid("mean", "dimension must be at least 1"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(invalid(
                "cov",
                format!("expected {d}x{d}, got {}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(invalid("cov", "entries must be finite"));
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(invalid("cov", format!("not symmetric (max asymmetry {asym:e})")));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < -PSD_TOL * scale {
            return Err(invalid(
                "cov",
                format!("not positive semidefinite (min eigenvalue {min:e})"),
            ));
        }
        let cov = if min < 0.0 { psd_project(&sym) } else { sym };
        let diagonal = is_diagonal(&cov);
        Ok(Self { mean, cov, diagonal })
    }

    pub fn diagonal(mean: DVector<f64>, variances: &[f64]) -> Result<Self> {
        if variances.len() != mean.len() {
            return Err(invalid("variances", "length must match the mean"));
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid("variances", format!("must be finite and >= 0, got {v}")));
        }
        Self::new(
            mean,
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        )
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// The received distribution `N(μ, Σ + σ² I)`.
    pub fn with_noise(&self, noise_var: f64) -> Self {
        let d = self.dim();
        Self {
            mean: self.mean.clone(),
            cov: &self.cov + DMatrix::identity(d, d) * noise_var,
            diagonal: self.diagonal,
        }
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.iter()
        .enumerate()
        .all(|(k, &v)| v == 0.0 || k % m.nrows() == k / m.nrows())
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues set to 0.
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct SenderProblem {
    target: GaussianMessageDist,
    noise_var: f64,
}

impl SenderProblem {
    pub fn new(target: GaussianMessageDist, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(invalid(
                "noise_var",
                format!("must be finite and >= 0, got {noise_var}"),
            ));
        }
        let min = target.cov.clone().symmetric_eigen().eigenvalues.min();
        if !(min >= MIN_TARGET_EIGENVALUE) {
            return Err(Error::SingularTarget { min_eigenvalue: min });
        }
        Ok(Self { target, noise_var })
    }

    pub fn target(&self) -> &GaussianMessageDist {
        &self.target
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }
}

fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    m.clone().cholesky().ok_or_else(|| Error::SingularTarget {
        min_eigenvalue: m.clone().symmetric_eigen().eigenvalues.min(),
    })
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
}

/// `KL(p ‖ q) = ½(ln|Σ_q|/|Σ_p| + tr(Σ_q⁻¹ Σ_p) + (μ_p − μ_q)ᵀ Σ_q⁻¹ (μ_p − μ_q) − d)`.
/// Infinite when `Σ_p` is singular.
pub fn kl_gaussian(p: &GaussianMessageDist, q: &GaussianMessageDist) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(invalid("dim", format!("{} vs {}", p.dim(), q.dim())));
    }
    let cq = cholesky(&q.cov)?;
    let Some(cp) = p.cov.clone().cholesky() else {
        return Ok(f64::INFINITY);
    };
    let trace = cq.solve(&p.cov).trace();
    let diff = &p.mean - &q.mean;
    let maha = diff.dot(&cq.solve(&diff));
    let kl = 0.5 * (log_det(&cq) - log_det(&cp) + trace + maha - p.dim() as f64);
    Ok(kl.max(0.0))
}

/// A sender's distribution and the KL its received messages incur.
#[derive(Debug, Clone, PartialEq)]
pub struct SenderSolution {
    pub dist: GaussianMessageDist,
    pub kl: f64,
}

/// `KL(N(μ, Σ + σ² I) ‖ N(μ*, Σ*))`.
pub fn aware_objective(problem: &SenderProblem, dist: &GaussianMessageDist) -> Result<f64> {
    kl_gaussian(&dist.with_noise(problem.noise_var), &problem.target)
}

/// Sends the target itself, ignoring the noise.
pub fn oblivious_optimum(problem: &SenderProblem) -> Result<SenderSolution> {
    let dist = problem.target.clone();
    let kl = aware_objective(problem, &dist)?;
    Ok(SenderSolution { dist, kl })
}

/// `μ = μ*`, `Σ = Q max(Λ − σ², 0) Qᵀ` where `Σ* = Q Λ Qᵀ`.
pub fn aware_optimum(problem: &SenderProblem) -> Result<SenderSolution> {
    let d = problem.dim();
    let shifted = &problem.target.cov - DMatrix::identity(d, d) * problem.noise_var;
    let cov = psd_project(&shifted);
    let diagonal = problem.target.diagonal;
    let cov = if diagonal {
        DMatrix::from_diagonal(&cov.diagonal())
    } else {
        cov
    };
    let dist = GaussianMessageDist {
        mean: problem.target.mean.clone(),
        diagonal: diagonal || is_diagonal(&cov),
        cov,
    };
    let kl = aware_objective(problem, &dist)?;
    Ok(SenderSolution { dist, kl })
}

/// Gradient of [`aware_objective`] with respect to the mean and the diagonal
/// of `Σ` for a diagonal sender: `Σ*⁻¹(μ − μ*)` and
/// `½((Σ*⁻¹)_kk − 1/(v_k + σ²))`.
pub fn aware_gradient_diag(
    problem: &SenderProblem,
    mean: &DVector<f64>,
    variances: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let ct = cholesky(&problem.target.cov)?;
    let inv = ct.inverse();
    let g_mean = ct.solve(&(mean - &problem.target.mean));
    let g_var = DVector::from_fn(variances.len(), |k, _| {
        0.5 * (inv[(k, k)] - 1.0 / (variances[k] + problem.noise_var))
    });
    Ok((g_mean, g_var))
}

/// Gradient with respect to a factor `L` of `Σ = L Lᵀ`:
/// `(Σ*⁻¹ − (L Lᵀ + σ² I)⁻¹) L`.
pub fn aware_gradient_factor(problem: &SenderProblem, factor: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = problem.dim();
    let inv_t = cholesky(&problem.target.cov)?.inverse();
    let s = factor * factor.transpose() + DMatrix::identity(d, d) * problem.noise_var;
    let inv_s = cholesky(&s)?.inverse();
    Ok((inv_t - inv_s) * factor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceParam {
    /// Per-coordinate variances, projected onto `v ≥ 0` after each step.
    Diagonal,
    /// A full factor `L` with `Σ = L Lᵀ`.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdOptions {
    pub steps: usize,
    pub learning_rate: f64,
    pub param: CovarianceParam,
    /// Starting point; defaults to `N(0, I)`.
    pub init: Option<GaussianMessageDist>,
}

impl GdOptions {
    pub fn new(steps: usize, learning_rate: f64) -> Self {
        Self {
            steps,
            learning_rate,
            param: CovarianceParam::Diagonal,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdReport {
    pub solution: SenderSolution,
    pub steps_taken: usize,
}

/// Projected gradient descent on the aware objective with a diagonal sender.
pub fn aware_optimum_gd(problem: &SenderProblem, steps: usize, learning_rate: f64) -> Result<SenderSolution> {
    Ok(aware_optimum_gd_with(problem, &GdOptions::new(steps, learning_rate))?.solution)
}

/// Gradient descent on the aware objective. Fails with a step-size error when
/// the objective increases for 10 consecutive steps or becomes non-finite.
pub fn aware_optimum_gd_with(problem: &SenderProblem, opts: &GdOptions) -> Result<GdReport> {
    if !(opts.learning_rate >= 0.0 && opts.learning_rate.is_finite()) {
        return Err(invalid(
            "learning_rate",
            format!("must be finite and >= 0, got {}", opts.learning_rate),
        ));
    }
    let d = problem.dim();
    let init = match &opts.init {
        Some(dist) if dist.dim() != d => return Err(invalid("init", "dimension mismatch")),
        Some(dist) => dist.clone(),
        None => GaussianMessageDist::standard(d)?,
    };
    let lr = opts.learning_rate;
    let mut mean = init.mean.clone();
    let mut variances = init.cov.diagonal();
    let mut factor = match opts.param {
        CovarianceParam::Diagonal => DMatrix::zeros(0, 0),
        CovarianceParam::Full => init
            .cov
            .clone()
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| psd_sqrt(&init.cov)),
    };
    let build = |mean: &DVector<f64>, variances: &DVector<f64>, factor: &DMatrix<f64>| match opts.param {
        CovarianceParam::Diagonal => GaussianMessageDist {
            mean: mean.clone(),
            cov: DMatrix::from_diagonal(variances),
            diagonal: true,
        },
        CovarianceParam::Full => {
            let c = factor * factor.transpose();
            GaussianMessageDist {
                mean: mean.clone(),
                cov: (&c + c.transpose()) * 0.5,
                diagonal: false,
            }
        }
    };
    let mut current = aware_objective(problem, &build(&mean, &variances, &factor))?;
    let mut rising = 0;
    let mut steps_taken = 0;
    for step in 1..=opts.steps {
        let (g_mean, moved) = match opts.param {
            CovarianceParam::Diagonal => {
                let (g_mean, g_var) = aware_gradient_diag(problem, &mean, &variances)?;
                let next = (&variances - g_var * lr).map(|v| v.max(0.0));
                let moved = (&next - &variances).amax();
                variances = next;
                (g_mean, moved)
            }
            CovarianceParam::Full => {
                let g = aware_gradient_factor(problem, &factor)?;
                let moved = g.amax() * lr;
                factor -= g * lr;
                (aware_gradient_diag(problem, &mean, &variances)?.0, moved)
            }
        };
        let moved = moved.max(g_mean.amax() * lr);
        mean -= g_mean * lr;
        steps_taken = step;
        let next = aware_objective(problem, &build(&mean, &variances, &factor))?;
        if !next.is_finite() {
            return Err(Error::StepSize { step });
        }
        rising = if next > current { rising + 1 } else { 0 };
        if rising >= 10 {
            return Err(Error::StepSize { step });
        }
        current = next;
        if moved == 0.0 {
            break;
        }
    }
    Ok(GdReport {
        solution: SenderSolution {
            dist: build(&mean, &variances, &factor),
            kl: current,
        },
        steps_taken,
    })
}

/// Symmetric square root of a PSD matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Reparameterized sampler for `m = μ + Σ^{1/2} ξ + σ ζ` with `ξ, ζ` standard
/// normal.
#[derive(Debug, Clone)]
pub struct MessageSampler {
    mean: DVector<f64>,
    sqrt_cov: DMatrix<f64>,
    noise_sd: f64,
}

impl MessageSampler {
    pub fn new(dist: &GaussianMessageDist, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(invalid(
                "noise_var",
                format!("must be finite and >= 0, got {noise_var}"),
            ));
        }
        Ok(Self {
            mean: dist.mean.clone(),
            sqrt_cov: psd_sqrt(&dist.cov),
            noise_sd: noise_var.sqrt(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Writes one message into `out`, drawing `ξ` then `ζ`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, xi: &mut [f64], out: &mut [f64]) {
        let d = self.dim();
        for x in xi.iter_mut().take(d) {
            *x = rng.sample(StandardNormal);
        }
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let mut v = self.mean[i];
            for (j, x) in xi.iter().enumerate().take(d) {
                v += self.sqrt_cov[(i, j)] * x;
            }
            let z: f64 = rng.sample(StandardNormal);
            *o = v + self.noise_sd * z;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let mut xi = vec![0.0; d];
        let mut out = vec![0.0; d];
        self.sample_into(rng, &mut xi, &mut out);
        DVector::from_vec(out)
    }
}

/// One received message, deterministic in `rng_seed`.
pub fn sample_message(dist: &GaussianMessageDist, noise_var: f64, rng_seed: u64) -> Result<DVector<f64>> {
    Ok(MessageSampler::new(dist, noise_var)?.sample(&mut seeded(rng_seed)))
}
