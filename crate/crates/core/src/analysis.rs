//! Observables, closed-form predictions, scaling sweeps, gauge checks and
//! effective-versus-exact comparisons.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::{EffectiveGenerator, EffectiveOrder, EvolveOptions, Gauge, XSource};
use crate::error::{Error, Result};
use crate::linalg::{
    c64, eigenvalues, identity, matrix_exp, min_hermitian_eigenvalue, real, trace_distance, CMatrix, I,
};
use crate::lindblad::{evolve_protocol, to_lab, to_rotating, DensityMatrix, Diagnostics, Frame, IntegrateOptions};
use crate::ode::{self, OdeOptions, StepStats};
use crate::protocol::{pauli, AngleFn, PathSpec, ProtocolSpec};

/// `Tr ρ²`.
pub fn purity(rho: &CMatrix) -> f64 {
    (rho * rho).trace().re
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(n: [f64; 3]) -> Self {
        Self::new(n[0], n[1], n[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// `n·σ`.
    pub fn dot_sigma(self) -> CMatrix {
        let (sx, sy, sz) = pauli();
        sx * real(self.x) + sy * real(self.y) + sz * real(self.z)
    }
}

fn require_qubit(rho: &CMatrix) -> Result<()> {
    if rho.nrows() != 2 || rho.ncols() != 2 {
        return Err(Error::DarkDimension { expected: 2, got: rho.nrows() });
    }
    Ok(())
}

/// `n_a = Tr(σ_a ρ)`.
pub fn bloch_of(rho: &CMatrix) -> Result<BlochVector> {
    require_qubit(rho)?;
    let (sx, sy, sz) = pauli();
    let comp = |s: &CMatrix| (s * rho).trace().re;
    Ok(BlochVector::new(comp(&sx), comp(&sy), comp(&sz)))
}

/// `n_a = ½ Tr(σ_a V (n₀·σ) V^†)`.
pub fn bloch_transport(n0: BlochVector, v: &CMatrix) -> Result<BlochVector> {
    require_qubit(v)?;
    let rotated = v * n0.dot_sigma() * v.adjoint() * real(0.5);
    bloch_of(&rotated)
}

/// Purity after one cycle from the leading dissipative correction:
/// `Γ₀ - 2ε² ∫ Tr([ρ, l^†] l ρ) dτ` with `l = V^† ℓ V`.
pub fn purity_prediction_general(rho_init: &DensityMatrix, gen: &EffectiveGenerator) -> Result<f64> {
    let rho = gen.dark_initial_state(rho_init)?;
    let (_, j) = gen.cycle_integrals(&rho)?;
    let eps = gen.epsilon();
    Ok(purity(&rho) + 2.0 * eps * eps * (&rho * j).trace().re)
}

/// Spin-3/2 purity prediction from the scalar kernels
/// `a_τ = (3/2)∫ e^{3(τ'-τ)/2} φ' sinθ dτ'`, `b_τ = (3/2)∫ e^{3(τ'-τ)/2} θ' dτ'`
/// and the Bloch vector transported by `H⁰ = -θ'σ_y - φ'(½cosθ σ_z - sinθ σ_x)`:
/// `Γ₀ - (2/γT²) ∫ b_τ² ((n^x_τ)² + (n^y_τ)²) dτ`.
pub fn purity_prediction_spin32(path: &PathSpec, n0: BlochVector, gamma_t: f64) -> Result<f64> {
    path.validate()?;
    if !(gamma_t > 0.0 && gamma_t.is_finite()) {
        return Err(Error::InvalidParameter(format!("gammaT must be positive, got {gamma_t}")));
    }
    if n0.norm() > 1.0 + 1e-9 {
        return Err(Error::InvalidDensity(format!("Bloch vector length {} exceeds 1", n0.norm())));
    }
    let (px, py, pz) = pauli();
    let eps = 1.0 / gamma_t;
    let sigma0 = n0.dot_sigma();
    let scalar = |x: f64| CMatrix::from_element(1, 1, real(x));
    let rhs = |tau: f64, y: &Vec<CMatrix>| -> Result<Vec<CMatrix>> {
        let s = tau * eps;
        let (th, dth, dph) = (path.theta.value(s), path.theta.derivative(s), path.phi.derivative(s));
        let a = y[0][(0, 0)].re;
        let b = y[1][(0, 0)].re;
        let h0 = -(&py * real(dth)) - (&pz * real(0.5 * th.cos()) - &px * real(th.sin())) * real(dph);
        let v = &y[2];
        let n = bloch_of(&(v * &sigma0 * v.adjoint() * real(0.5)))?;
        Ok(vec![
            scalar(1.5 * (dph * th.sin() - a)),
            scalar(1.5 * (dth - b)),
            h0 * v * c64(0.0, -eps),
            scalar(2.0 * eps * eps * b * b * (n.x * n.x + n.y * n.y)),
        ])
    };
    // Kernel transients last a few units of τ; afterwards everything varies on the scale γT.
    let opts = OdeOptions { rtol: 1e-11, atol: 1e-14, max_step: (gamma_t / 200.0).max(0.5), ..OdeOptions::default() };
    let y0 = vec![scalar(0.0), scalar(0.0), identity(2), scalar(0.0)];
    let (out, _) = ode::integrate(rhs, y0, (0.0, gamma_t), &[gamma_t], opts, |_, _| Ok(()))?;
    let loss = out[0].1[3][(0, 0)].re;
    Ok(0.5 * (1.0 + n0.norm().powi(2)) - loss)
}

/// Hermitian `k × k` matrix from up to `k²` reals: the diagonal first, then
/// `(re, im)` pairs of the strict upper triangle row by row.
pub fn hermitian_from_params(k: usize, params: &[f64]) -> Result<CMatrix> {
    if params.len() > k * k {
        return Err(Error::InvalidParameter(format!("{} parameters for a {k}x{k} Hermitian block", params.len())));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter("non-finite gauge parameter".into()));
    }
    let mut it = params.iter().copied().chain(std::iter::repeat(0.0));
    let mut h = CMatrix::zeros(k, k);
    for i in 0..k {
        h[(i, i)] = real(it.next().unwrap_or(0.0));
    }
    for i in 0..k {
        for j in i + 1..k {
            let z = c64(it.next().unwrap_or(0.0), it.next().unwrap_or(0.0));
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    Ok(h)
}

/// Gauge generator `B G_d B^† + B_⊥ G_b B_⊥^†`, block diagonal with respect to `P₀`.
pub fn gauge_generator(ds: &crate::effective::DarkSpace, dark: &[f64], bright: &[f64]) -> Result<CMatrix> {
    let gd = hermitian_from_params(ds.dim(), dark)?;
    let gb = hermitian_from_params(ds.full_dim() - ds.dim(), bright)?;
    let b = ds.basis();
    let bb = ds.bright_basis();
    Ok(b * gd * b.adjoint() + bb * gb * bb.adjoint())
}

/// `ω = exp(i G)` with `G` from [`gauge_generator`]; commutes with `P₀`.
pub fn gauge_transform(ds: &crate::effective::DarkSpace, dark: &[f64], bright: &[f64]) -> Result<CMatrix> {
    matrix_exp(&(gauge_generator(ds, dark, bright)? * I))
}

/// Serializable gauge `ω(s) = exp(i f(s) G)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeSpec {
    /// Dark-block generator parameters (see [`hermitian_from_params`]).
    pub dark: Vec<f64>,
    /// Bright-block generator parameters.
    #[serde(default)]
    pub bright: Vec<f64>,
    /// Profile `f(s)`.
    pub profile: AngleFn,
}

impl GaugeSpec {
    /// Dark block `exp(i f(s) (π/7) σ_z)` with `f(s) = sin 2πs`.
    pub fn default_spin32() -> Self {
        Self {
            dark: vec![std::f64::consts::PI / 7.0, -std::f64::consts::PI / 7.0],
            bright: vec![],
            profile: AngleFn::Fourier { start: 0.0, winding: 0, cos: vec![], sin: vec![1.0] },
        }
    }

    pub fn build(&self, ds: &crate::effective::DarkSpace) -> Result<Gauge> {
        Gauge::new(gauge_generator(ds, &self.dark, &self.bright)?, self.profile.clone())
    }
}

/// Largest distance between matched eigenvalues of two matrices.
pub fn spectrum_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    let ea = eigenvalues(a)?;
    let mut eb = eigenvalues(b)?;
    if ea.len() != eb.len() {
        return Err(Error::DimensionMismatch { expected: ea.len(), got: eb.len() });
    }
    let mut worst = 0.0f64;
    for z in ea {
        let (idx, d) = eb
            .iter()
            .enumerate()
            .map(|(i, w)| (i, (z - w).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty spectrum");
        worst = worst.max(d);
        eb.swap_remove(idx);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct GaugePoint {
    pub gamma_t: f64,
    /// `max_τ ‖ℓ^ω_τ - ω ℓ_τ ω^†‖_F` over the samples.
    pub covariance_defect: f64,
    pub purity: f64,
    pub purity_gauged: f64,
    pub purity_difference: f64,
    pub purity_bound: f64,
    pub holonomy_spectrum_difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaugeReport {
    pub points: Vec<GaugePoint>,
    /// Defect at the larger γT over the defect at the smaller one; `None`
    /// when the first defect vanishes (exact covariance).
    pub defect_ratio: Option<f64>,
    pub ratio_threshold: f64,
    pub covariance_decreasing: bool,
    pub purity_within_bound: bool,
    pub spectra_agree: bool,
    pub pass: bool,
}

fn dark_block(ds: &crate::effective::DarkSpace, w: &CMatrix) -> CMatrix {
    ds.compress(w)
}

fn gauge_point(spec: &ProtocolSpec, gauge: &GaugeSpec, gamma_t: f64, samples: usize, rho0: &DensityMatrix) -> Result<GaugePoint> {
    let gen = EffectiveGenerator::new(spec.build(gamma_t)?)?;
    let ds = gen.dark_space().clone();
    let g = gauge.build(&ds)?;
    let gauged = gen.clone().with_gauge(g.clone())?;
    let taus: Vec<f64> = (1..=samples).map(|k| gamma_t * k as f64 / samples as f64).collect();
    let opts = EvolveOptions::default();
    let rho_dark = gen.dark_initial_state(rho0)?;
    let w0 = dark_block(&ds, &g.omega(0.0));
    let rho_gauged = DensityMatrix::trusted(&w0 * &rho_dark * w0.adjoint());
    let plain = gen.evolve(&DensityMatrix::trusted(rho_dark), &taus, &opts)?;
    let moved = gauged.evolve(&rho_gauged, &taus, &opts)?;
    let mut defect = 0.0f64;
    for ((tau, x), xw) in taus.iter().zip(&plain.kernels).zip(&moved.kernels) {
        let s = tau / gamma_t;
        let l = gen.ell_from_x(s, x);
        let lw = gauged.ell_from_x(s, xw);
        let w = dark_block(&ds, &g.omega(s));
        defect = defect.max((lw - &w * l * w.adjoint()).norm());
    }
    let p = purity(plain.states.last().expect("final state"));
    let pw = purity(moved.states.last().expect("final state"));
    let v = gen.berry_holonomy(gamma_t)?;
    let vw = gauged.berry_holonomy(gamma_t)?;
    Ok(GaugePoint {
        gamma_t,
        covariance_defect: defect,
        purity: p,
        purity_gauged: pw,
        purity_difference: (p - pw).abs(),
        purity_bound: 10.0 / (gamma_t * gamma_t),
        holonomy_spectrum_difference: spectrum_distance(&v, &vw)?,
    })
}

/// Compare effective jumps, end-of-cycle purities and holonomy spectra in
/// the original and the ω-rotated dark basis at two periods.
pub fn gauge_covariance_check(
    spec: &ProtocolSpec,
    gauge: &GaugeSpec,
    gamma_ts: [f64; 2],
    samples: usize,
    rho0: &DensityMatrix,
) -> Result<GaugeReport> {
    if samples == 0 || gamma_ts[1].partial_cmp(&gamma_ts[0]) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidParameter("need samples >= 1 and increasing gammaT pair".into()));
    }
    let points = gamma_ts
        .par_iter()
        .map(|&gt| gauge_point(spec, gauge, gt, samples, rho0))
        .collect::<Result<Vec<_>>>()?;
    let ratio_threshold = 0.7;
    let exact = points[0].covariance_defect <= 1e-12;
    let defect_ratio = (!exact).then(|| points[1].covariance_defect / points[0].covariance_defect);
    let covariance_decreasing = defect_ratio.is_none_or(|r| r <= ratio_threshold);
    let purity_within_bound = points.iter().all(|p| p.purity_difference <= p.purity_bound);
    let spectra_agree = points.iter().all(|p| p.holonomy_spectrum_difference <= 1e-8);
    Ok(GaugeReport {
        pass: covariance_decreasing && purity_within_bound && spectra_agree,
        points,
        defect_ratio,
        ratio_threshold,
        covariance_decreasing,
        purity_within_bound,
        spectra_agree,
    })
}

/// Least-squares fit of `log y` against `log x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fit `log y = intercept + slope·log x`; `None` with fewer than two points
/// or any non-positive value.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (slope, intercept) = linear_fit(&lx, &ly)?;
    let mean = ly.iter().sum::<f64>() / ly.len() as f64;
    let ss_tot: f64 = ly.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LogLogFit { slope, intercept, r2 })
}

fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Losses at or below this are treated as zero and leave the slope undefined.
pub const NEGLIGIBLE_LOSS: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-13 }
    }
}

/// One period at one γT.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub gamma_t: f64,
    pub purity_initial: f64,
    pub purity_final: f64,
    pub purity_loss_exact: f64,
    pub purity_loss_eq12: f64,
    /// Spin-3/2 closed-form loss; absent for other protocol families.
    pub purity_loss_eq21: Option<f64>,
    /// Effective vs exact dark block at `τ = γT`.
    pub trace_distance_final: f64,
    /// Berry-term-only effective evolution vs exact dark block.
    pub unitary_only_distance: f64,
    /// `1 - Tr(P₀ ρ P₀)` of the exact final state.
    pub dark_trace_defect: f64,
    pub diagnostics: Diagnostics,
    pub stats: StepStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepFailure {
    pub gamma_t: f64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub gamma_t_values: Vec<f64>,
    pub losses: Vec<f64>,
    pub errors: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub failures: Vec<SweepFailure>,
    /// Slope of log(loss) vs log(γT); `None` when undefined.
    pub fitted_slope: Option<f64>,
    pub fit_r2: Option<f64>,
    pub distance_fit: Option<LogLogFit>,
    pub unitary_only_fit: Option<LogLogFit>,
    /// `c₀` of the fit `loss·γT = c₀ + c₁/γT`.
    pub leading_prefactor: Option<f64>,
}

fn sweep_point(spec: &ProtocolSpec, gamma_t: f64, rho0: &DensityMatrix, opts: &SweepOptions) -> Result<SweepPoint> {
    let protocol = spec.build(gamma_t)?;
    let gen = EffectiveGenerator::new(protocol.clone())?;
    let ds = gen.dark_space();
    let rho_dark = gen.dark_initial_state(rho0)?;
    let purity_initial = purity(&rho_dark);
    let lab0 = DensityMatrix::new(to_lab(&protocol, 0.0, &ds.embed(&rho_dark)))?;
    let iopts = IntegrateOptions::with_tolerances(opts.rtol, opts.atol).at(vec![gamma_t]);
    let exact = evolve_protocol(&protocol, &lab0, Frame::Lab, &iopts)?;
    let lab_final = exact.last().matrix().clone();
    let purity_final = purity(&lab_final);
    let rot_final = to_rotating(&protocol, 1.0, &lab_final);
    let projected = ds.compress(&rot_final);

    let dark = DensityMatrix::trusted(rho_dark.clone());
    let eopts = EvolveOptions { rtol: opts.rtol, atol: opts.atol, ..EvolveOptions::default() };
    let second = gen.evolve(&dark, &[gamma_t], &eopts)?;
    let first = gen.evolve(&dark, &[gamma_t], &EvolveOptions { order: EffectiveOrder::First, ..eopts })?;
    let eq12 = purity_prediction_general(&dark, &gen)?;
    let eq21 = match spec.is_spin32() {
        Some(path) if ds.dim() == 2 => Some(purity_initial - purity_prediction_spin32(path, bloch_of(&rho_dark)?, gamma_t)?),
        _ => None,
    };
    Ok(SweepPoint {
        gamma_t,
        purity_initial,
        purity_final,
        purity_loss_exact: purity_initial - purity_final,
        purity_loss_eq12: purity_initial - eq12,
        purity_loss_eq21: eq21,
        trace_distance_final: trace_distance(&projected, second.states.last().expect("final")),
        unitary_only_distance: trace_distance(&projected, first.states.last().expect("final")),
        dark_trace_defect: 1.0 - projected.trace().re,
        diagnostics: exact.diagnostics,
        stats: exact.stats,
    })
}

/// Exact one-period runs over a γT grid (in parallel), with log-log fits.
pub fn convergence_sweep(spec: &ProtocolSpec, gamma_ts: &[f64], rho0: &DensityMatrix, opts: &SweepOptions) -> Result<SweepResult> {
    if gamma_ts.len() < 3 {
        return Err(Error::InvalidParameter("a sweep needs at least three gammaT values".into()));
    }
    if gamma_ts.windows(2).any(|w| w[1] <= w[0]) || gamma_ts[0] <= 0.0 {
        return Err(Error::InvalidParameter("gammaT values must be positive and strictly increasing".into()));
    }
    if gamma_ts[gamma_ts.len() - 1] < 4.0 * gamma_ts[0] {
        return Err(Error::InvalidParameter("gammaT values must span at least a factor of 4".into()));
    }
    let results: Vec<(f64, Result<SweepPoint>)> =
        gamma_ts.par_iter().map(|&gt| (gt, sweep_point(spec, gt, rho0, opts))).collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (gt, r) in results {
        match r {
            Ok(p) => points.push(p),
            Err(e) => failures.push(SweepFailure { gamma_t: gt, error: e.to_string() }),
        }
    }
    let gamma_t_values: Vec<f64> = points.iter().map(|p| p.gamma_t).collect();
    let losses: Vec<f64> = points.iter().map(|p| p.purity_loss_exact).collect();
    let errors: Vec<f64> = points.iter().map(|p| p.trace_distance_final).collect();
    let unitary: Vec<f64> = points.iter().map(|p| p.unitary_only_distance).collect();
    let loss_fit = if losses.iter().all(|l| *l > NEGLIGIBLE_LOSS) { fit_loglog(&gamma_t_values, &losses) } else { None };
    let leading_prefactor = if loss_fit.is_some() {
        let inv: Vec<f64> = gamma_t_values.iter().map(|g| 1.0 / g).collect();
        let scaled: Vec<f64> = losses.iter().zip(&gamma_t_values).map(|(l, g)| l * g).collect();
        linear_fit(&inv, &scaled).map(|(_, c0)| c0)
    } else {
        None
    };
    Ok(SweepResult {
        fitted_slope: loss_fit.map(|f| f.slope),
        fit_r2: loss_fit.map(|f| f.r2),
        distance_fit: fit_loglog(&gamma_t_values, &errors),
        unitary_only_fit: fit_loglog(&gamma_t_values, &unitary),
        leading_prefactor,
        gamma_t_values,
        losses,
        errors,
        points,
        failures,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub gamma_t: f64,
    pub times: Vec<f64>,
    /// Effective dark state vs exact rotating-frame dark block.
    pub distances: Vec<f64>,
    /// Berry-term-only evolution vs exact dark block.
    pub first_order_distances: Vec<f64>,
    /// K-map reconstruction vs exact full rotating-frame state.
    pub reconstruction_distances: Vec<f64>,
    pub trace_renormalizations: Vec<f64>,
    /// Exact rotating-frame observables at the checkpoints.
    pub rows: Vec<TrajectoryRow>,
    pub max_distance: f64,
    pub final_distance: f64,
    pub exact_diagnostics: Diagnostics,
}

/// Exact rotating-frame evolution against the effective equation at
/// `n_checkpoints` equally spaced times in `(0, γT]`.
pub fn compare_effective_vs_full(gen: &EffectiveGenerator, rho0: &DensityMatrix, n_checkpoints: usize, opts: &SweepOptions) -> Result<ComparisonReport> {
    if n_checkpoints == 0 {
        return Err(Error::InvalidParameter("need at least one checkpoint".into()));
    }
    let gamma_t = gen.gamma_t();
    let ds = gen.dark_space();
    let rho_dark = gen.dark_initial_state(rho0)?;
    let times: Vec<f64> = (1..=n_checkpoints).map(|k| gamma_t * k as f64 / n_checkpoints as f64).collect();
    let iopts = IntegrateOptions::with_tolerances(opts.rtol, opts.atol).at(times.clone());
    let exact = evolve_protocol(gen.protocol(), &DensityMatrix::trusted(ds.embed(&rho_dark)), Frame::Rotating, &iopts)?;
    let dark = DensityMatrix::trusted(rho_dark);
    let eopts = EvolveOptions { rtol: opts.rtol, atol: opts.atol, ..EvolveOptions::default() };
    let second = gen.evolve(&dark, &times, &eopts)?;
    let first = gen.evolve(&dark, &times, &EvolveOptions { order: EffectiveOrder::First, ..eopts.clone() })?;
    let mut distances = Vec::new();
    let mut first_order_distances = Vec::new();
    let mut reconstruction_distances = Vec::new();
    let mut trace_renormalizations = Vec::new();
    let mut rows = Vec::new();
    for (k, &tau) in times.iter().enumerate() {
        let full = exact.states[k].matrix();
        let projected = ds.compress(full);
        rows.push(trajectory_row(tau, full, &projected, &second.states[k]));
        distances.push(trace_distance(&projected, &second.states[k]));
        first_order_distances.push(trace_distance(&projected, &first.states[k]));
        let rec = gen.reconstruct_full_state(&second.states[k], &second.kernels[k]);
        reconstruction_distances.push(trace_distance(full, &rec.state));
        trace_renormalizations.push(rec.trace_renormalization);
    }
    Ok(ComparisonReport {
        gamma_t,
        max_distance: distances.iter().copied().fold(0.0, f64::max),
        final_distance: *distances.last().expect("checkpoints"),
        times,
        distances,
        first_order_distances,
        reconstruction_distances,
        trace_renormalizations,
        rows,
        exact_diagnostics: exact.diagnostics,
    })
}

/// One row of an exported trajectory.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrajectoryRow {
    pub tau: f64,
    pub purity: f64,
    pub trace: f64,
    pub min_eig: f64,
    pub nx: f64,
    pub ny: f64,
    pub nz: f64,
    pub td_effective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PurityRun {
    pub gamma_t: f64,
    /// Initial Bloch vector when the dark space is a qubit.
    pub n0: Option<BlochVector>,
    pub rows: Vec<TrajectoryRow>,
    pub purity_initial: f64,
    pub purity_final: f64,
    pub purity_loss_exact: f64,
    pub purity_loss_eq12: f64,
    pub purity_loss_eq21: Option<f64>,
    pub final_bloch: Option<BlochVector>,
    pub diagnostics: Diagnostics,
    pub stats: StepStats,
}

const NAN_BLOCH: BlochVector = BlochVector::new(f64::NAN, f64::NAN, f64::NAN);

fn bloch_or_nan(rho: &CMatrix) -> BlochVector {
    bloch_of(rho).unwrap_or(NAN_BLOCH)
}

fn trajectory_row(tau: f64, full: &CMatrix, projected: &CMatrix, effective: &CMatrix) -> TrajectoryRow {
    let n = bloch_or_nan(projected);
    TrajectoryRow {
        tau,
        purity: purity(full),
        trace: full.trace().re,
        min_eig: min_hermitian_eigenvalue(full),
        nx: n.x,
        ny: n.y,
        nz: n.z,
        td_effective: trace_distance(projected, effective),
    }
}

/// Exact lab-frame run of one period from a dark state, sampled at
/// `n_checkpoints + 1` equally spaced times including `τ = 0`. Bloch
/// columns are NaN unless the dark space is a qubit.
pub fn purity_experiment(spec: &ProtocolSpec, gamma_t: f64, rho0: &DensityMatrix, n_checkpoints: usize, opts: &SweepOptions) -> Result<PurityRun> {
    if n_checkpoints == 0 {
        return Err(Error::InvalidParameter("need at least one checkpoint".into()));
    }
    let protocol = spec.build(gamma_t)?;
    let gen = EffectiveGenerator::new(protocol.clone())?;
    let ds = gen.dark_space();
    let rho_dark = gen.dark_initial_state(rho0)?;
    let times: Vec<f64> = (0..=n_checkpoints).map(|k| gamma_t * k as f64 / n_checkpoints as f64).collect();
    let lab0 = DensityMatrix::new(to_lab(&protocol, 0.0, &ds.embed(&rho_dark)))?;
    let iopts = IntegrateOptions::with_tolerances(opts.rtol, opts.atol).at(times.clone());
    let exact = evolve_protocol(&protocol, &lab0, Frame::Lab, &iopts)?;
    let dark = DensityMatrix::trusted(rho_dark.clone());
    let eopts = EvolveOptions { rtol: opts.rtol, atol: opts.atol, source: XSource::Integral, ..EvolveOptions::default() };
    let effective = gen.evolve(&dark, &times, &eopts)?;
    let rows: Vec<TrajectoryRow> = times
        .iter()
        .enumerate()
        .map(|(k, &tau)| {
            let lab = exact.states[k].matrix();
            let projected = ds.compress(&to_rotating(&protocol, tau / gamma_t, lab));
            trajectory_row(tau, lab, &projected, &effective.states[k])
        })
        .collect();
    let purity_initial = purity(&rho_dark);
    let last = rows.last().expect("rows");
    let purity_final = last.purity;
    let n0 = bloch_of(&rho_dark).ok();
    let final_bloch = n0.map(|_| BlochVector::new(last.nx, last.ny, last.nz));
    let eq12 = purity_prediction_general(&dark, &gen)?;
    let eq21 = match (spec.is_spin32(), n0) {
        (Some(path), Some(n)) => Some(purity_initial - purity_prediction_spin32(path, n, gamma_t)?),
        _ => None,
    };
    Ok(PurityRun {
        gamma_t,
        n0,
        purity_initial,
        purity_final,
        purity_loss_exact: purity_initial - purity_final,
        purity_loss_eq12: purity_initial - eq12,
        purity_loss_eq21: eq21,
        final_bloch,
        rows,
        diagnostics: exact.diagnostics,
        stats: exact.stats,
    })
}

/// Render rows as right-aligned text columns.
pub fn aligned_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

impl SweepResult {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| {
                vec![
                    format!("{}", p.gamma_t),
                    format!("{:.6e}", p.purity_loss_exact),
                    format!("{:.6e}", p.purity_loss_eq12),
                    fmt_opt(p.purity_loss_eq21),
                    format!("{:.6e}", p.trace_distance_final),
                    format!("{:.6e}", p.unitary_only_distance),
                ]
            })
            .collect();
        let mut out = aligned_table(&["gammaT", "loss_exact", "loss_eq12", "loss_eq21", "td_effective", "td_unitary"], &rows);
        out.push_str(&format!(
            "loss slope {} (r2 {}), effective-distance slope {}, unitary-only slope {}, leading prefactor {}\n",
            fmt_opt(self.fitted_slope),
            fmt_opt(self.fit_r2),
            fmt_opt(self.distance_fit.map(|f| f.slope)),
            fmt_opt(self.unitary_only_fit.map(|f| f.slope)),
            fmt_opt(self.leading_prefactor),
        ));
        for f in &self.failures {
            out.push_str(&format!("gammaT {} failed: {}\n", f.gamma_t, f.error));
        }
        out
    }
}

impl GaugeReport {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| {
                vec![
                    format!("{}", p.gamma_t),
                    format!("{:.6e}", p.covariance_defect),
                    format!("{:.6e}", p.purity_difference),
                    format!("{:.6e}", p.purity_bound),
                    format!("{:.3e}", p.holonomy_spectrum_difference),
                ]
            })
            .collect();
        let mut out = aligned_table(&["gammaT", "defect", "purity_diff", "purity_bound", "spectrum_diff"], &rows);
        out.push_str(&format!("defect ratio {} (threshold {}), pass {}\n", fmt_opt(self.defect_ratio), self.ratio_threshold, self.pass));
        out
    }
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = (0..self.times.len())
            .map(|k| {
                vec![
                    format!("{:.4}", self.times[k]),
                    format!("{:.6e}", self.distances[k]),
                    format!("{:.6e}", self.first_order_distances[k]),
                    format!("{:.6e}", self.reconstruction_distances[k]),
                ]
            })
            .collect();
        let mut out = aligned_table(&["tau", "td_effective", "td_unitary", "td_reconstruct"], &rows);
        out.push_str(&format!("gammaT {}: max distance {:.6e}, final {:.6e}\n", self.gamma_t, self.max_distance, self.final_distance));
        out
    }
}

/// `exp(-i α σ_y)`-style helper used in tests and examples.
pub fn rotation(axis: &CMatrix, angle: f64) -> CMatrix {
    matrix_exp(&(axis * Complex64::new(0.0, -angle))).expect("finite rotation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::dissipator;
    use crate::protocol::{custom_protocol, spin32_jump, spin32_protocol, spin_operators};
    use std::f64::consts::PI;

    #[test]
    fn purity_examples() {
        assert!((purity(DensityMatrix::from_bloch([0.0, 0.0, 1.0]).unwrap().matrix()) - 1.0).abs() < 1e-15);
        assert!((purity(DensityMatrix::maximally_mixed(2).unwrap().matrix()) - 0.5).abs() < 1e-15);
        assert!((purity(DensityMatrix::from_bloch([0.0, 0.0, 0.6]).unwrap().matrix()) - 0.68).abs() < 1e-15);
    }

    #[test]
    fn bloch_examples() {
        let n = bloch_of(DensityMatrix::from_bloch([0.0, 1.0, 0.0]).unwrap().matrix()).unwrap();
        assert_eq!(n.to_array(), [0.0, 1.0, 0.0]);
        let n0 = BlochVector::new(0.1, -0.4, 0.7);
        let same = bloch_transport(n0, &identity(2)).unwrap();
        assert!((same.x - n0.x).abs() + (same.y - n0.y).abs() + (same.z - n0.z).abs() < 1e-15);
        // exp(-iπσ_y/4) rotates z towards x.
        let (_, sy, _) = pauli();
        let m = bloch_transport(BlochVector::new(0.0, 0.0, 1.0), &rotation(&sy, PI / 4.0)).unwrap();
        assert!((m.x - 1.0).abs() < 1e-12 && m.y.abs() < 1e-12 && m.z.abs() < 1e-12);
        assert!(matches!(bloch_of(&identity(3)), Err(Error::DarkDimension { .. })));
    }

    #[test]
    fn spin32_prediction_examples() {
        let p = PathSpec::simplest();
        let z = purity_prediction_spin32(&p, BlochVector::new(0.0, 0.0, 1.0), 1000.0).unwrap();
        let y = purity_prediction_spin32(&p, BlochVector::new(0.0, 1.0, 0.0), 1000.0).unwrap();
        // Leading order 1 - 4π²(1 + n_y²)/γT; corrections are O(γT⁻²).
        assert!((z - (1.0 - 4.0 * PI * PI / 1000.0)).abs() < 5e-4, "{z}");
        assert!((y - (1.0 - 8.0 * PI * PI / 1000.0)).abs() < 5e-4, "{y}");
        let big = purity_prediction_spin32(&p, BlochVector::new(0.0, 0.0, 1.0), 1e5).unwrap();
        assert!(((1.0 - big) * 1e5 / (4.0 * PI * PI) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn general_prediction_matches_spin32_closed_form() {
        let path = PathSpec {
            theta: AngleFn::Fourier { start: 0.2, winding: 1, cos: vec![0.3], sin: vec![] },
            phi: AngleFn::Smoothstep { start: 0.0, winding: 1 },
        };
        let gt = 300.0;
        let n0 = BlochVector::new(0.6, 0.0, 0.8);
        let gen = EffectiveGenerator::new(spin32_protocol(&path, gt).unwrap()).unwrap();
        let rho = DensityMatrix::from_bloch(n0.to_array()).unwrap();
        let general = purity_prediction_general(&rho, &gen).unwrap();
        let closed = purity_prediction_spin32(&path, n0, gt).unwrap();
        assert!((general - closed).abs() < 1e-8, "{general} vs {closed}");
    }

    #[test]
    fn constant_protocol_prediction_is_initial_purity() {
        let (_, sy, _) = spin_operators(3);
        let p = custom_protocol(&[sy], &[AngleFn::constant(0.3)], spin32_jump(), 100.0).unwrap();
        let gen = EffectiveGenerator::new(p).unwrap();
        let rho = DensityMatrix::from_bloch([0.0, 0.3, 0.4]).unwrap();
        assert!((purity_prediction_general(&rho, &gen).unwrap() - purity(rho.matrix())).abs() < 1e-14);
    }

    #[test]
    fn gauge_transform_examples() {
        let gen = EffectiveGenerator::new(spin32_protocol(&PathSpec::simplest(), 10.0).unwrap()).unwrap();
        let ds = gen.dark_space();
        let w = gauge_transform(ds, &[], &[]).unwrap();
        assert!((&w - identity(4)).norm() < 1e-15);
        let chi = 0.37;
        let w = gauge_transform(ds, &[chi, -chi], &[0.2, 0.1, 0.3, -0.5]).unwrap();
        let (_, _, pz) = pauli();
        assert!((ds.compress(&w) - matrix_exp(&(pz * c64(0.0, chi))).unwrap()).norm() < 1e-12);
        assert!((w.adjoint() * &w - identity(4)).norm() < 1e-12);
        assert!((&w * ds.projector() - ds.projector() * &w).norm() < 1e-12);
    }

    #[test]
    fn identity_gauge_is_exact() {
        let spec = ProtocolSpec::Spin32 { path: PathSpec::simplest() };
        let gauge = GaugeSpec { dark: vec![], bright: vec![], profile: AngleFn::constant(0.0) };
        let rho = DensityMatrix::from_bloch([0.0, 0.0, 1.0]).unwrap();
        let r = gauge_covariance_check(&spec, &gauge, [20.0, 40.0], 4, &rho).unwrap();
        assert!(r.points.iter().all(|p| p.covariance_defect == 0.0 && p.purity_difference == 0.0));
        assert!(r.pass && r.defect_ratio.is_none());
    }

    #[test]
    fn spectrum_distance_matches_permutations() {
        let a = crate::linalg::diag_real(&[1.0, 2.0, 3.0]);
        let b = crate::linalg::diag_real(&[3.0, 1.0, 2.0 + 1e-9]);
        assert!((spectrum_distance(&a, &b).unwrap() - 1e-9).abs() < 1e-12);
    }

    #[test]
    fn loglog_fit_recovers_power_law() {
        let xs = [100.0, 200.0, 400.0, 800.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        assert!(fit_loglog(&xs, &[1.0, 0.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn sweep_validates_grid() {
        let spec = ProtocolSpec::Spin32 { path: PathSpec::simplest() };
        let rho = DensityMatrix::from_bloch([0.0, 0.0, 1.0]).unwrap();
        let o = SweepOptions::default();
        assert!(convergence_sweep(&spec, &[100.0, 200.0], &rho, &o).is_err());
        assert!(convergence_sweep(&spec, &[100.0, 150.0, 200.0], &rho, &o).is_err());
        assert!(convergence_sweep(&spec, &[100.0, 50.0, 400.0], &rho, &o).is_err());
    }

    #[test]
    fn constant_protocol_sweep_flags_undefined_slope() {
        let (_, sy, _) = spin_operators(3);
        let spec = custom_protocol(&[sy], &[AngleFn::constant(0.0)], spin32_jump(), 10.0).unwrap().spec().clone();
        let rho = DensityMatrix::from_bloch([1.0, 0.0, 0.0]).unwrap();
        let r = convergence_sweep(&spec, &[10.0, 20.0, 40.0], &rho, &SweepOptions::default()).unwrap();
        assert!(r.losses.iter().all(|l| l.abs() <= 1e-10));
        assert!(r.fitted_slope.is_none() && r.leading_prefactor.is_none());
        assert!(r.failures.is_empty());
    }

    #[test]
    fn constant_protocol_comparison_is_exact() {
        let (_, sy, _) = spin_operators(3);
        let p = custom_protocol(&[sy], &[AngleFn::constant(0.0)], spin32_jump(), 20.0).unwrap();
        let gen = EffectiveGenerator::new(p).unwrap();
        let rho = DensityMatrix::from_bloch([0.3, 0.3, 0.3]).unwrap();
        let r = compare_effective_vs_full(&gen, &rho, 4, &SweepOptions::default()).unwrap();
        assert!(r.max_distance <= 1e-10);
        assert!(r.to_text().contains("td_effective"));
    }

    #[test]
    fn dissipator_alone_never_raises_purity() {
        // H⁰ = 0 dynamics: Euler steps of the dissipator with a normal ℓ = W(a + ibσ_z)W^†.
        let (sx, sy, sz) = pauli();
        let w = rotation(&(sx + sy * real(0.4)), 0.8);
        let ell = &w * (identity(2) * c64(0.9, 0.0) + sz * c64(0.0, 1.7)) * w.adjoint();
        let mut rho = DensityMatrix::from_bloch([0.5, -0.5, 0.6]).unwrap().into_matrix();
        let mut last = purity(&rho);
        for _ in 0..2000 {
            rho += dissipator(&ell, &rho) * real(1e-3);
            let p = purity(&rho);
            assert!(p <= last + 1e-10);
            last = p;
        }
    }

    #[test]
    fn aligned_table_pads_columns() {
        let t = aligned_table(&["a", "bbb"], &[vec!["10".into(), "2".into()]]);
        assert_eq!(t, " a  bbb\n10    2\n");
    }
}
