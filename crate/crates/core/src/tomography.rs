//! Two-photon polarization tomography from 16 projective coincidence counts:
//! linear inversion and Poisson maximum-likelihood estimation.

use crate::algebra::hermitian_eigen;
use crate::algebra::{tensor_ket, AlgebraError, DensityMatrix4, TwoPhotonKet, C64};
use crate::detection::{poisson_draw, stream_rng, CountRecord, ProjectionSetting};
use crate::metrics::{concurrence, fidelity, fully_entangled_fraction, purity};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SVector, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Labels of the canonical 16-setting set.
pub const DEFAULT_LABELS: [&str; 16] =
    ["HH", "HV", "VV", "VH", "RH", "RV", "DV", "DH", "DR", "DD", "RD", "HD", "VD", "VL", "HL", "RL"];

#[derive(Debug, Error)]
pub enum TomographyError {
    #[error("projector set is not informationally complete (singular system)")]
    Singular,
    #[error("projector set needs at least 16 settings, got {0}")]
    TooFewSettings(usize),
    #[error("no count record for setting '{0}'")]
    MissingSetting(String),
    #[error("expected {expected} counts, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("total counts must be positive and finite")]
    NoCounts,
    #[error("MLE did not converge in {iterations} iterations (best log-likelihood {loglik})")]
    NotConverged { iterations: usize, loglik: f64, best: Box<MleResult> },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Ordered measurement settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorSet {
    settings: Vec<ProjectionSetting>,
    kets: Vec<Vector4<C64>>,
}

/// σ₀, σ_x, σ_y, σ_z.
fn pauli(k: usize) -> Matrix2<C64> {
    let (o, z, i) = (C64::from(1.0), C64::from(0.0), C64::new(0.0, 1.0));
    match k {
        0 => Matrix2::new(o, z, z, o),
        1 => Matrix2::new(z, o, o, z),
        2 => Matrix2::new(z, -i, i, z),
        _ => Matrix2::new(o, z, z, -o),
    }
}

fn pauli_product(k: usize) -> Matrix4<C64> {
    let a = pauli(k / 4);
    let b = pauli(k % 4);
    Matrix4::from_fn(|r, c| a[(r >> 1, c >> 1)] * b[(r & 1, c & 1)])
}

impl ProjectorSet {
    pub fn new(settings: Vec<ProjectionSetting>) -> Result<Self, TomographyError> {
        if settings.len() < 16 {
            return Err(TomographyError::TooFewSettings(settings.len()));
        }
        let kets = settings.iter().map(|s| tensor_ket(&s.projector_s, &s.projector_i)).collect();
        let set = Self { settings, kets };
        if !set.condition_number().is_finite() {
            return Err(TomographyError::Singular);
        }
        Ok(set)
    }

    pub fn from_labels(labels: &[&str]) -> Result<Self, TomographyError> {
        let settings = labels.iter().map(|l| ProjectionSetting::from_label(l)).collect::<Result<Vec<_>, _>>()?;
        Self::new(settings)
    }

    pub fn settings(&self) -> &[ProjectionSetting] {
        &self.settings
    }

    pub fn kets(&self) -> &[Vector4<C64>] {
        &self.kets
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    /// B[m, k] = ⟨ψ_m| σ_a⊗σ_b |ψ_m⟩ with k = 4a + b.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let paulis: Vec<Matrix4<C64>> = (0..16).map(pauli_product).collect();
        DMatrix::from_fn(self.len(), 16, |m, k| {
            let psi = &self.kets[m];
            psi.dotc(&(paulis[k] * psi)).re
        })
    }

    /// Condition number of the Gram matrix Tr(P_m P_n) = |⟨ψ_m|ψ_n⟩|²
    /// (for 16 settings), or of BᵀB in general; infinite when singular.
    pub fn condition_number(&self) -> f64 {
        let b = self.coefficient_matrix();
        let sv = b.singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(min > 1e-12 * max) {
            return f64::INFINITY;
        }
        (max / min).powi(2)
    }

    /// Ideal counts N·p for each setting.
    pub fn noiseless_counts(&self, rho: &DensityMatrix4, total_per_setting: f64) -> Vec<f64> {
        self.kets.iter().map(|k| total_per_setting * rho.expectation(k).max(0.0)).collect()
    }
}

pub fn default_projector_set() -> ProjectorSet {
    ProjectorSet::from_labels(&DEFAULT_LABELS).expect("canonical set is complete")
}

/// Records after accidental subtraction, with a flag for each record whose
/// coincidences were clipped at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Subtracted {
    pub records: Vec<CountRecord>,
    pub clipped: Vec<bool>,
}

impl Subtracted {
    pub fn clipped_count(&self) -> usize {
        self.clipped.iter().filter(|&&c| c).count()
    }
}

pub fn subtract_accidentals(records: &[CountRecord]) -> Subtracted {
    let mut clipped = Vec::with_capacity(records.len());
    let records = records
        .iter()
        .map(|r| {
            clipped.push(r.accidentals > r.coincidences);
            CountRecord { coincidences: r.coincidences.saturating_sub(r.accidentals), ..r.clone() }
        })
        .collect();
    Subtracted { records, clipped }
}

/// Coincidence counts ordered like `set`, matched by label.
pub fn counts_for(records: &[CountRecord], set: &ProjectorSet) -> Result<Vec<f64>, TomographyError> {
    set.settings()
        .iter()
        .map(|s| {
            records
                .iter()
                .find(|r| r.label == s.label)
                .map(|r| r.coincidences as f64)
                .ok_or_else(|| TomographyError::MissingSetting(s.label.clone()))
        })
        .collect()
}

fn check_counts(counts: &[f64], set: &ProjectorSet) -> Result<f64, TomographyError> {
    if counts.len() != set.len() {
        return Err(TomographyError::LengthMismatch { expected: set.len(), got: counts.len() });
    }
    let total: f64 = counts.iter().sum();
    if !(total > 0.0 && total.is_finite()) || counts.iter().any(|&c| c < 0.0) {
        return Err(TomographyError::NoCounts);
    }
    Ok(total)
}

/// Linear-inversion estimate: Hermitian, unit trace, possibly not positive.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearEstimate {
    pub matrix: Matrix4<C64>,
    pub min_eigenvalue: f64,
}

impl LinearEstimate {
    pub fn is_physical(&self) -> bool {
        self.min_eigenvalue >= crate::algebra::MIN_EIGENVALUE_TOL
    }

    /// Negative eigenvalues set to zero, then renormalized.
    pub fn clipped(&self) -> Result<DensityMatrix4, AlgebraError> {
        let e = hermitian_eigen(&self.matrix);
        DensityMatrix4::from_psd(e.reconstruct_with(|x| x.max(0.0)))
    }
}

pub fn linear_reconstruct(records: &[CountRecord], set: &ProjectorSet) -> Result<LinearEstimate, TomographyError> {
    linear_reconstruct_counts(&counts_for(records, set)?, set)
}

/// Solves B·x = n in the Pauli-product basis (least squares for more than
/// 16 settings) and normalizes to unit trace.
pub fn linear_reconstruct_counts(counts: &[f64], set: &ProjectorSet) -> Result<LinearEstimate, TomographyError> {
    check_counts(counts, set)?;
    let b = set.coefficient_matrix();
    let n = DVector::from_column_slice(counts);
    let x = b.svd(true, true).solve(&n, 1e-12).map_err(|_| TomographyError::Singular)?;
    let mut m = Matrix4::<C64>::zeros();
    for k in 0..16 {
        m += pauli_product(k) * C64::from(x[k]);
    }
    let m = (m + m.adjoint()) * C64::from(0.5);
    let tr = m.trace().re;
    if !(tr.abs() > 1e-300) {
        return Err(TomographyError::Singular);
    }
    let matrix = m / C64::from(tr);
    let min_eigenvalue = hermitian_eigen(&matrix).min_value();
    Ok(LinearEstimate { matrix, min_eigenvalue })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleInit {
    LinearInversionClipped,
    MaximallyMixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Relative change of the log-likelihood between accepted iterations.
    pub convergence_tol: f64,
    pub init: MleInit,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { max_iterations: 10_000, convergence_tol: 1e-9, init: MleInit::LinearInversionClipped }
    }
}

impl MleOptions {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.convergence_tol > 0.0 && self.convergence_tol.is_finite()) {
            out.push(format!("{prefix}.convergence_tol must be > 0, got {}", self.convergence_tol));
        }
        if self.max_iterations == 0 {
            out.push(format!("{prefix}.max_iterations must be >= 1"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    /// Σ n_k ln p_k with the total flux profiled out (p_k = q_k / Σq).
    pub loglik: f64,
    pub iterations: usize,
    /// Records clipped at zero by accidental subtraction.
    pub clipped: usize,
    pub condition_number: f64,
    #[serde(skip)]
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MleResult {
    pub rho: DensityMatrix4,
    pub report: FitReport,
}

const N_PARAMS: usize = 16;
type Params = SVector<f64, N_PARAMS>;

/// Lower-triangular (row, col) slots: 4 real diagonals, then 6 complex
/// off-diagonals as (re, im) pairs.
const OFF_DIAGONAL: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

fn params_to_t(t: &Params) -> Matrix4<C64> {
    let mut m = Matrix4::<C64>::zeros();
    for d in 0..4 {
        m[(d, d)] = C64::from(t[d]);
    }
    for (k, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
        m[(r, c)] = C64::new(t[4 + 2 * k], t[5 + 2 * k]);
    }
    m
}

fn t_to_params(m: &Matrix4<C64>) -> Params {
    let mut t = Params::zeros();
    for d in 0..4 {
        t[d] = m[(d, d)].re;
    }
    for (k, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
        t[4 + 2 * k] = m[(r, c)].re;
        t[5 + 2 * k] = m[(r, c)].im;
    }
    t
}

fn rho_from_params(t: &Params) -> Matrix4<C64> {
    let tm = params_to_t(t);
    let m = tm.adjoint() * tm;
    let tr = m.trace().re;
    m / C64::from(tr)
}

/// Lower-triangular T with T†T = ρ, via Cholesky of the index-reversed ρ.
fn factor_lower(rho: &Matrix4<C64>) -> Option<Matrix4<C64>> {
    let rev = Matrix4::from_fn(|r, c| rho[(3 - r, 3 - c)]);
    let l = rev.cholesky()?.l();
    let lt = l.adjoint();
    Some(Matrix4::from_fn(|r, c| lt[(3 - r, 3 - c)]))
}

/// Log-likelihood objective with analytic gradient.
struct Objective<'a> {
    kets: &'a [Vector4<C64>],
    counts: &'a [f64],
    total: f64,
}

impl Objective<'_> {
    fn value(&self, t: &Params) -> f64 {
        let tm = params_to_t(t);
        let q: Vec<f64> = self.kets.iter().map(|k| (tm * k).norm_squared()).collect();
        let sum_q: f64 = q.iter().sum();
        if !(sum_q > 0.0) {
            return f64::NEG_INFINITY;
        }
        let mut f = -self.total * sum_q.ln();
        for (n, q) in self.counts.iter().zip(&q) {
            if *n > 0.0 {
                if !(*q > 0.0) {
                    return f64::NEG_INFINITY;
                }
                f += n * q.ln();
            }
        }
        f
    }

    fn value_and_gradient(&self, t: &Params) -> (f64, Params) {
        let tm = params_to_t(t);
        let vs: Vec<Vector4<C64>> = self.kets.iter().map(|k| tm * k).collect();
        let q: Vec<f64> = vs.iter().map(|v| v.norm_squared()).collect();
        let sum_q: f64 = q.iter().sum();
        let f = self.value(t);
        let mut g = Params::zeros();
        if !f.is_finite() {
            return (f, g);
        }
        for ((psi, v), (&n, &qk)) in self.kets.iter().zip(&vs).zip(self.counts.iter().zip(&q)) {
            let w = if n > 0.0 { n / qk } else { 0.0 } - self.total / sum_q;
            // ∂q/∂Re T_ij = 2 Re(v̄_i ψ_j), ∂q/∂Im T_ij = −2 Im(v̄_i ψ_j).
            for d in 0..4 {
                g[d] += w * 2.0 * (v[d].conj() * psi[d]).re;
            }
            for (k, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
                let z = v[r].conj() * psi[c];
                g[4 + 2 * k] += w * 2.0 * z.re;
                g[5 + 2 * k] -= w * 2.0 * z.im;
            }
        }
        (f, g)
    }
}

const LBFGS_MEMORY: usize = 10;
/// Weight of I/4 mixed into the clipped linear estimate at start-up.
const INIT_PULL: f64 = 1e-6;

fn initial_params(counts: &[f64], set: &ProjectorSet, init: MleInit) -> Result<Params, TomographyError> {
    let start = match init {
        MleInit::MaximallyMixed => Matrix4::identity() * C64::from(0.25),
        MleInit::LinearInversionClipped => {
            let lin = linear_reconstruct_counts(counts, set)?;
            let clipped = lin.clipped()?;
            // Pull slightly into the interior so the Cholesky factor exists
            // and no observed setting starts at zero probability.
            *clipped.matrix() * C64::from(1.0 - INIT_PULL) + Matrix4::identity() * C64::from(INIT_PULL / 4.0)
        }
    };
    let t = factor_lower(&start).ok_or(TomographyError::Singular)?;
    Ok(t_to_params(&t))
}

pub fn mle_reconstruct(records: &[CountRecord], set: &ProjectorSet, opts: &MleOptions) -> Result<MleResult, TomographyError> {
    mle_reconstruct_counts(&counts_for(records, set)?, set, opts)
}

/// Maximizes Σ n_k ln q_k − N ln Σ q_k over T (q_k = ‖Tψ_k‖²) with
/// L-BFGS and Armijo backtracking. The optimal total flux N₀ = N/Σq has
/// been eliminated analytically. Every accepted step raises the
/// log-likelihood; the history is kept in the report.
pub fn mle_reconstruct_counts(counts: &[f64], set: &ProjectorSet, opts: &MleOptions) -> Result<MleResult, TomographyError> {
    let total = check_counts(counts, set)?;
    let obj = Objective { kets: set.kets(), counts, total };
    let mut x = initial_params(counts, set, opts.init)?;
    let (mut f, mut g) = obj.value_and_gradient(&x);
    if !f.is_finite() {
        x = initial_params(counts, set, MleInit::MaximallyMixed)?;
        (f, g) = obj.value_and_gradient(&x);
    }
    let mut history = vec![f];
    let mut s_hist: Vec<Params> = Vec::new();
    let mut y_hist: Vec<Params> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let scale_x = |x: &Params| x.norm().max(1e-300);

    while iterations < opts.max_iterations {
        if g.norm() <= 1e-14 * total / scale_x(&x) {
            converged = true;
            break;
        }
        // Two-loop recursion on the minimization of −f.
        let mut dir = g;
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho_k = 1.0 / y.dot(s);
            let a = rho_k * s.dot(&dir);
            dir -= y * a;
            alphas.push(a);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            dir *= s.dot(y) / y.dot(y);
        } else {
            dir *= scale_x(&x) / g.norm();
        }
        for ((s, y), a) in s_hist.iter().zip(&y_hist).zip(alphas.iter().rev()) {
            let rho_k = 1.0 / y.dot(s);
            let b = rho_k * y.dot(&dir);
            dir += s * (a - b);
        }
        // `dir` is an ascent direction for f.
        let mut slope = g.dot(&dir);
        if !(slope > 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = g * (scale_x(&x) / g.norm());
            slope = g.dot(&dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let xn = x + dir * step;
            let fn_ = obj.value(&xn);
            if fn_.is_finite() && fn_ >= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            if s_hist.is_empty() {
                // No ascent along the gradient at machine precision.
                converged = true;
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };
        iterations += 1;
        let (_, gn) = obj.value_and_gradient(&xn);
        let s = xn - x;
        // Curvature pairs for the minimization of −f.
        let y = g - gn;
        if s.dot(&y) > 1e-12 * s.norm() * y.norm() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let rel = (fn_ - f).abs() / f.abs().max(1.0);
        x = xn;
        f = fn_;
        g = gn;
        history.push(f);
        if rel <= opts.convergence_tol {
            converged = true;
            break;
        }
    }

    let rho = DensityMatrix4::from_psd(rho_from_params(&x))?;
    let result = MleResult {
        rho,
        report: FitReport { loglik: f, iterations, clipped: 0, condition_number: set.condition_number(), history },
    };
    if converged {
        Ok(result)
    } else {
        Err(TomographyError::NotConverged { iterations, loglik: f, best: Box::new(result) })
    }
}

/// Mean and standard deviation over bootstrap replicas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub replicas: usize,
    pub fully_entangled_fraction: Spread,
    pub fidelity_to_target: Spread,
    pub concurrence: Spread,
    pub purity: Spread,
}

pub const MIN_BOOTSTRAP: usize = 10;

/// Parametric bootstrap: each replica redraws every coincidence count from
/// a Poisson distribution around the observed value and reruns the MLE.
/// Replica r uses the RNG stream (seed, r); replicas that hit the iteration
/// cap contribute their best iterate.
pub fn error_bars(
    records: &[CountRecord],
    set: &ProjectorSet,
    opts: &MleOptions,
    n_bootstrap: usize,
    seed: u64,
    target: &TwoPhotonKet,
) -> Result<BootstrapReport, TomographyError> {
    let counts = counts_for(records, set)?;
    check_counts(&counts, set)?;
    let n = n_bootstrap.max(MIN_BOOTSTRAP);
    let rhos: Vec<DensityMatrix4> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut resampled: Vec<f64> = counts.iter().map(|&c| poisson_draw(&mut rng, c) as f64).collect();
            if resampled.iter().sum::<f64>() <= 0.0 {
                resampled = counts.clone();
            }
            match mle_reconstruct_counts(&resampled, set, opts) {
                Ok(res) => Ok(res.rho),
                Err(TomographyError::NotConverged { best, .. }) => Ok(best.rho),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;
    let stat = |f: &dyn Fn(&DensityMatrix4) -> f64| Spread::of(&rhos.iter().map(f).collect::<Vec<_>>());
    Ok(BootstrapReport {
        replicas: n,
        fully_entangled_fraction: stat(&fully_entangled_fraction),
        fidelity_to_target: stat(&|r| fidelity(r, target)),
        concurrence: stat(&concurrence),
        purity: stat(&purity),
    })
}
