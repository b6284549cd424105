//! Exact Lindblad evolution, superoperator spectra, the asymptotic channel
//! and its Kraus decomposition.
//!
//! Superoperators act on row-major vectorized matrices, `vec(ρ)[i·d + j] =
//! ρ_ij`, so that `vec(A ρ B) = (A ⊗ Bᵀ) vec(ρ)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    anticommutator, c64, commutator, ensure_square, hermitian_eigen, hermiticity_defect, identity,
    is_finite, kernel_basis, min_hermitian_eigenvalue, real, unvec_row_major, vec_row_major, zeros, CMatrix,
    CVector,
};
use crate::ode::{self, OdeOptions, StepStats};
use crate::protocol::Protocol;

/// Tolerance for Hermiticity and unit trace of a density matrix.
pub const DENSITY_TOL: f64 = 1e-10;
/// Lowest admissible eigenvalue of a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-9;
/// Tolerance for kernel membership, idempotence and completeness checks.
pub const CHANNEL_TOL: f64 = 1e-8;

/// A validated density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        ensure_square(&m)?;
        if !is_finite(&m) {
            return Err(Error::InvalidDensity("non-finite entries".into()));
        }
        let herm = hermiticity_defect(&m);
        if herm > DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("not Hermitian (defect {herm:e})")));
        }
        let tr = m.trace();
        if (tr - real(1.0)).norm() > DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} != 1")));
        }
        let min = min_hermitian_eigenvalue(&m);
        if min < -POSITIVITY_TOL {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self(m))
    }

    /// `|ψ><ψ|` for the normalized `ψ`.
    pub fn pure(psi: &CVector) -> Result<Self> {
        let norm = psi.norm();
        if psi.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidDensity("state vector must be finite and non-zero".into()));
        }
        let v = psi / real(norm);
        Ok(Self(&v * v.adjoint()))
    }

    /// `½(1 + n·σ)` for `|n| ≤ 1`.
    pub fn from_bloch(n: [f64; 3]) -> Result<Self> {
        let len = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !len.is_finite() || len > 1.0 + 1e-9 {
            return Err(Error::InvalidDensity(format!("Bloch vector length {len} exceeds 1")));
        }
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[c64(0.5 * (1.0 + n[2]), 0.0), c64(0.5 * n[0], -0.5 * n[1]), c64(0.5 * n[0], 0.5 * n[1]), c64(0.5 * (1.0 - n[2]), 0.0)],
        );
        Ok(Self(m))
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyMatrix);
        }
        Ok(Self(identity(dim) * real(1.0 / dim as f64)))
    }

    /// Wrap without validation; for states produced by trusted evolution.
    pub(crate) fn trusted(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }
}

/// `-i·prefactor·[H, ρ] + Σ_k (L_k ρ L_k^† - ½{L_k^† L_k, ρ})`.
#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    pub hamiltonian: Option<CMatrix>,
    pub jumps: Vec<CMatrix>,
    pub hamiltonian_prefactor: f64,
}

impl LindbladGenerator {
    pub fn dissipative(jumps: Vec<CMatrix>) -> Self {
        Self { hamiltonian: None, jumps, hamiltonian_prefactor: 1.0 }
    }

    pub fn new(hamiltonian: CMatrix, prefactor: f64, jumps: Vec<CMatrix>) -> Self {
        Self { hamiltonian: Some(hamiltonian), jumps, hamiltonian_prefactor: prefactor }
    }

    /// Check shapes and Hermiticity; returns the Hilbert-space dimension, or
    /// `None` for the empty generator.
    pub fn validate(&self) -> Result<Option<usize>> {
        let mut dim = None;
        let mut check = |m: &CMatrix| -> Result<()> {
            let n = ensure_square(m)?;
            match dim {
                None => dim = Some(n),
                Some(d) if d != n => return Err(Error::DimensionMismatch { expected: d, got: n }),
                _ => {}
            }
            Ok(())
        };
        if let Some(h) = &self.hamiltonian {
            check(h)?;
            let defect = hermiticity_defect(h);
            if defect > 1e-10 * h.norm().max(1.0) {
                return Err(Error::NonHermitian { defect });
            }
        }
        for l in &self.jumps {
            check(l)?;
        }
        if !self.hamiltonian_prefactor.is_finite() {
            return Err(Error::InvalidParameter("Hamiltonian prefactor must be finite".into()));
        }
        Ok(dim)
    }

    /// Action on an arbitrary (not necessarily physical) matrix.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = zeros(rho.nrows());
        if let Some(h) = &self.hamiltonian {
            if self.hamiltonian_prefactor != 0.0 {
                out += commutator(h, rho) * c64(0.0, -self.hamiltonian_prefactor);
            }
        }
        for l in &self.jumps {
            let ld = l.adjoint();
            out += l * rho * &ld;
            out -= anticommutator(&(&ld * l), rho) * real(0.5);
        }
        out
    }
}

/// Right-hand side of the master equation, with shape checks.
pub fn lindblad_rhs(rho: &DensityMatrix, gen: &LindbladGenerator) -> Result<CMatrix> {
    if let Some(d) = gen.validate()? {
        if d != rho.dim() {
            return Err(Error::DimensionMismatch { expected: d, got: rho.dim() });
        }
    }
    Ok(gen.apply(rho.matrix()))
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Output times; `None` records every accepted step.
    pub t_eval: Option<Vec<f64>>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-12, max_step: 1.0, t_eval: None }
    }
}

impl IntegrateOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }

    pub fn at(mut self, t_eval: Vec<f64>) -> Self {
        self.t_eval = Some(t_eval);
        self
    }
}

/// Worst invariant values seen over all accepted steps.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Diagnostics {
    pub max_trace_error: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self { max_trace_error: 0.0, max_hermiticity_error: 0.0, min_eigenvalue: f64::INFINITY }
    }
}

impl Diagnostics {
    pub fn observe(&mut self, rho: &CMatrix, trace: Complex64) {
        self.max_trace_error = self.max_trace_error.max((rho.trace() - trace).norm());
        self.max_hermiticity_error = self.max_hermiticity_error.max(hermiticity_defect(rho));
        self.min_eigenvalue = self.min_eigenvalue.min(min_hermitian_eigenvalue(rho));
    }

    pub fn merge(&mut self, other: &Diagnostics) {
        self.max_trace_error = self.max_trace_error.max(other.max_trace_error);
        self.max_hermiticity_error = self.max_hermiticity_error.max(other.max_hermiticity_error);
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub stats: StepStats,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn last(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// Abort thresholds: 100× the nominal invariant tolerances.
const TRACE_ABORT: f64 = 1e-7;
const HERMITICITY_ABORT: f64 = 1e-8;
const POSITIVITY_ABORT: f64 = 1e-6;

/// Integrate `dρ/dτ = gen(τ)[ρ]` with adaptive DOPRI5, checking trace,
/// Hermiticity and positivity after every accepted step.
pub fn integrate<G>(mut gen_of_t: G, rho0: &DensityMatrix, span: (f64, f64), opts: &IntegrateOptions) -> Result<Trajectory>
where
    G: FnMut(f64) -> Result<LindbladGenerator>,
{
    let (t0, t1) = span;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(Error::InvalidParameter(format!("invalid time span ({t0}, {t1})")));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    if t1 == t0 {
        return Ok(Trajectory {
            times: vec![t0],
            states: vec![rho0.clone()],
            stats: StepStats::default(),
            diagnostics: Diagnostics::default(),
        });
    }
    let d = rho0.dim();
    if let Some(gd) = gen_of_t(t0)?.validate()? {
        if gd != d {
            return Err(Error::DimensionMismatch { expected: gd, got: d });
        }
    }
    let record_all = opts.t_eval.is_none();
    let t_out = opts.t_eval.clone().unwrap_or_default();
    let ode_opts = OdeOptions { rtol: opts.rtol, atol: opts.atol, max_step: opts.max_step, ..OdeOptions::default() };
    let trace0 = rho0.matrix().trace();
    let mut diagnostics = Diagnostics::default();
    diagnostics.observe(rho0.matrix(), trace0);
    let mut all = vec![(t0, rho0.matrix().clone())];

    let rhs = |t: f64, rho: &CMatrix| -> Result<CMatrix> { Ok(gen_of_t(t)?.apply(rho)) };
    let on_accept = |t: f64, rho: &CMatrix| -> Result<()> {
        let tr = (rho.trace() - trace0).norm();
        if tr > TRACE_ABORT {
            return Err(Error::InvariantViolation { tau: t, what: "trace", value: tr });
        }
        let herm = hermiticity_defect(rho);
        if herm > HERMITICITY_ABORT {
            return Err(Error::InvariantViolation { tau: t, what: "hermiticity", value: herm });
        }
        let before = diagnostics.min_eigenvalue;
        diagnostics.observe(rho, trace0);
        if diagnostics.min_eigenvalue < -POSITIVITY_ABORT && before >= -POSITIVITY_ABORT {
            return Err(Error::InvariantViolation { tau: t, what: "positivity", value: diagnostics.min_eigenvalue });
        }
        if record_all {
            all.push((t, rho.clone()));
        }
        Ok(())
    };
    let (out, stats) = ode::integrate(rhs, rho0.matrix().clone(), (t0, t1), &t_out, ode_opts, on_accept)?;
    let samples = if record_all { all } else { out };
    let (times, states) = samples.into_iter().map(|(t, m)| (t, DensityMatrix::trusted(m))).unzip();
    Ok(Trajectory { times, states, stats, diagnostics })
}

/// Superoperator matrix `Ŝ` with `Ŝ vec(ρ) = vec(gen[ρ])` (row-major).
pub fn vectorize(gen: &LindbladGenerator, dim: usize) -> Result<CMatrix> {
    if let Some(d) = gen.validate()? {
        if d != dim {
            return Err(Error::DimensionMismatch { expected: d, got: dim });
        }
    }
    let id = identity(dim);
    let mut s = CMatrix::zeros(dim * dim, dim * dim);
    if let Some(h) = &gen.hamiltonian {
        s += (h.kronecker(&id) - id.kronecker(&h.transpose())) * c64(0.0, -gen.hamiltonian_prefactor);
    }
    for l in &gen.jumps {
        let ldl = l.adjoint() * l;
        s += l.kronecker(&l.conjugate());
        s -= (ldl.kronecker(&id) + id.kronecker(&ldl.transpose())) * real(0.5);
    }
    Ok(s)
}

/// Apply a row-major superoperator to a matrix.
pub fn apply_superoperator(s: &CMatrix, rho: &CMatrix) -> CMatrix {
    unvec_row_major(&(s * vec_row_major(rho)), rho.nrows())
}

/// Outcome of a spectral-gap query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralGap {
    Gapped { gap: f64 },
    /// No decaying mode at all (`slowest = None`), or one slower than 1e-8.
    Gapless { slowest: Option<f64> },
}

impl SpectralGap {
    pub fn value(&self) -> Option<f64> {
        match self {
            SpectralGap::Gapped { gap } => Some(*gap),
            SpectralGap::Gapless { .. } => None,
        }
    }
}

pub const GAPLESS_THRESHOLD: f64 = 1e-8;

fn kernel_threshold(s: &CMatrix) -> f64 {
    1e-9 * s.norm().max(1.0)
}

/// `min{-Re λ : |λ| above the kernel threshold}` over the spectrum of `Ŝ`.
pub fn spectral_gap(s: &CMatrix) -> Result<SpectralGap> {
    let thr = kernel_threshold(s);
    let slowest = crate::linalg::eigenvalues(s)?
        .into_iter()
        .filter(|l| l.norm() > thr)
        .map(|l| -l.re)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))));
    Ok(match slowest {
        Some(g) if g >= GAPLESS_THRESHOLD => SpectralGap::Gapped { gap: g },
        other => SpectralGap::Gapless { slowest: other },
    })
}

/// Spectral projector onto `ker Ŝ` along its range: `lim_{t→∞} e^{tŜ}`.
///
/// A vanishing generator has everything in its kernel and yields the identity.
pub fn asymptotic_channel(s: &CMatrix) -> Result<CMatrix> {
    let n = ensure_square(s)?;
    if let SpectralGap::Gapless { slowest: Some(rate) } = spectral_gap(s)? {
        return Err(Error::Gapless { rate });
    }
    let rel = (kernel_threshold(s) / s.norm().max(f64::MIN_POSITIVE)).clamp(1e-14, 0.5);
    let right = kernel_basis(s, rel)?;
    let left = kernel_basis(&s.adjoint(), rel)?;
    if right.len() != left.len() {
        return Err(Error::DimensionMismatch { expected: right.len(), got: left.len() });
    }
    if right.is_empty() {
        return Ok(CMatrix::zeros(n, n));
    }
    let v = CMatrix::from_columns(&right);
    let w = CMatrix::from_columns(&left);
    let overlap = w.adjoint() * &v;
    let inv = overlap.try_inverse().ok_or(Error::Gapless { rate: 0.0 })?;
    let r = &v * inv * w.adjoint();
    let idem = (&r * &r - &r).norm();
    let annihilated = (s * &r).norm();
    if idem > CHANNEL_TOL || annihilated > CHANNEL_TOL * s.norm().max(1.0) {
        return Err(Error::InvariantViolation { tau: f64::INFINITY, what: "asymptotic projector", value: idem.max(annihilated) });
    }
    Ok(r)
}

/// Choi matrix `Σ_ij E_ij ⊗ R(E_ij)`, indexed `[(i·d + a), (j·d + b)] = R(E_ij)_ab`.
pub fn choi_matrix(r: &CMatrix, dim: usize) -> Result<CMatrix> {
    let n = ensure_square(r)?;
    if n != dim * dim {
        return Err(Error::DimensionMismatch { expected: dim * dim, got: n });
    }
    let mut c = CMatrix::zeros(n, n);
    for i in 0..dim {
        for j in 0..dim {
            // vec(E_ij) is the unit vector at i·d + j.
            let image = unvec_row_major(&r.column(i * dim + j).into_owned(), dim);
            for a in 0..dim {
                for b in 0..dim {
                    c[(i * dim + a, j * dim + b)] = image[(a, b)];
                }
            }
        }
    }
    Ok(c)
}

/// Choi eigenvalues below this are discarded.
pub const KRAUS_DISCARD: f64 = 1e-10;

/// Kraus operators `M[a, i] = √λ v[i·d + a]` from the Choi eigenvectors.
pub fn kraus_from_channel(r: &CMatrix, dim: usize) -> Result<Vec<CMatrix>> {
    let c = choi_matrix(r, dim)?;
    let defect = hermiticity_defect(&c);
    if defect > CHANNEL_TOL {
        return Err(Error::NonHermitian { defect });
    }
    let (values, vectors) = hermitian_eigen(&c);
    if let Some(&lowest) = values.first() {
        if lowest < -CHANNEL_TOL {
            return Err(Error::NotCompletelyPositive { eigenvalue: lowest });
        }
    }
    let mut kraus = Vec::new();
    for (k, &lam) in values.iter().enumerate().rev() {
        if lam < KRAUS_DISCARD {
            continue;
        }
        let col = vectors.column(k);
        let sq = lam.sqrt();
        kraus.push(CMatrix::from_fn(dim, dim, |a, i| col[i * dim + a] * sq));
    }
    let completeness = kraus_completeness_defect(&kraus, dim);
    if completeness > CHANNEL_TOL {
        return Err(Error::NotTracePreserving { defect: completeness });
    }
    Ok(kraus)
}

/// `‖Σ M^† M - 1‖_F`.
pub fn kraus_completeness_defect(kraus: &[CMatrix], dim: usize) -> f64 {
    let sum = kraus.iter().fold(zeros(dim), |acc, m| acc + m.adjoint() * m);
    (sum - identity(dim)).norm()
}

pub fn apply_kraus(kraus: &[CMatrix], rho: &CMatrix) -> CMatrix {
    kraus.iter().fold(zeros(rho.nrows()), |acc, m| acc + m * rho * m.adjoint())
}

/// Unitarily remix a Kraus set so that at most one operator has a non-zero
/// dark block `B^† M B`, and that block equals the identity.
///
/// `dark` holds an orthonormal dark basis as columns. Each dark block of a
/// channel that fixes the dark space pointwise is a multiple `c_μ` of the
/// identity with `Σ|c_μ|² = 1`; the first row of the mixing unitary is `c̄`.
pub fn canonical_kraus(kraus: &[CMatrix], dark: &CMatrix) -> Result<Vec<CMatrix>> {
    let k = dark.ncols();
    if kraus.is_empty() || k == 0 {
        return Err(Error::InvalidParameter("need a non-empty Kraus set and dark basis".into()));
    }
    let blocks: Vec<CMatrix> = kraus.iter().map(|m| dark.adjoint() * m * dark).collect();
    let coeffs: Vec<Complex64> = blocks.iter().map(|b| b.trace() / real(k as f64)).collect();
    for (b, c) in blocks.iter().zip(&coeffs) {
        let off = (b - identity(k) * *c).norm();
        if off > CHANNEL_TOL {
            return Err(Error::InvariantViolation { tau: f64::INFINITY, what: "dark block not scalar", value: off });
        }
    }
    let norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > CHANNEL_TOL {
        return Err(Error::InvariantViolation { tau: f64::INFINITY, what: "dark blocks not normalized", value: norm });
    }
    // Complete (c̄_μ / |c|) to an orthonormal basis by Gram-Schmidt.
    let n = kraus.len();
    let mut rows: Vec<CVector> = vec![CVector::from_iterator(n, coeffs.iter().map(|c| c.conj() / norm))];
    for e in 0..n {
        let mut v = CVector::zeros(n);
        v[e] = real(1.0);
        for _ in 0..2 {
            for q in &rows {
                let p = q.dotc(&v);
                v -= q * p;
            }
        }
        if v.norm() > 1e-6 && rows.len() < n {
            let nv = v.norm();
            rows.push(v / real(nv));
        }
    }
    Ok(rows
        .iter()
        .map(|w| kraus.iter().zip(w.iter()).fold(zeros(dark.nrows()), |acc, (m, wk)| acc + m * *wk))
        .collect())
}

/// Reference frame of an exact protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Time-dependent jump `U^† L U`, no Hamiltonian.
    #[default]
    Lab,
    /// Fixed jump `L`, Hamiltonian `ε H(τ/γT)`.
    Rotating,
}

/// Generator of a protocol's master equation at time `τ`.
pub fn protocol_generator(protocol: &Protocol, frame: Frame, tau: f64) -> Result<LindbladGenerator> {
    let s = tau / protocol.gamma_t();
    Ok(match frame {
        Frame::Lab => LindbladGenerator::dissipative(vec![protocol.lab_jump(s)]),
        Frame::Rotating => LindbladGenerator::new(protocol.hamiltonian(s)?, 1.0 / protocol.gamma_t(), vec![protocol.l_rot().clone()]),
    })
}

/// Exact evolution over one period `τ ∈ [0, γT]`; `rho0` and the returned
/// states are expressed in `frame`.
pub fn evolve_protocol(protocol: &Protocol, rho0: &DensityMatrix, frame: Frame, opts: &IntegrateOptions) -> Result<Trajectory> {
    if rho0.dim() != protocol.dim() {
        return Err(Error::DimensionMismatch { expected: protocol.dim(), got: rho0.dim() });
    }
    integrate(|t| protocol_generator(protocol, frame, t), rho0, (0.0, protocol.gamma_t()), opts)
}

/// Rotating-frame state `U(s) ρ_lab U(s)^†`.
pub fn to_rotating(protocol: &Protocol, s: f64, rho_lab: &CMatrix) -> CMatrix {
    let u = protocol.unitary(s);
    &u * rho_lab * u.adjoint()
}

/// Laboratory-frame state `U(s)^† ρ_rot U(s)`.
pub fn to_lab(protocol: &Protocol, s: f64, rho_rot: &CMatrix) -> CMatrix {
    let u = protocol.unitary(s);
    u.adjoint() * rho_rot * u
}
