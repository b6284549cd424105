//! The effective dark-space Lindbladian.
//!
//! In the rotating frame the reduced dark-space state obeys, up to second
//! order in `ε = 1/γT`,
//!
//! ```text
//! dρ₀/dτ = -iε[H⁰, ρ₀] + ε²(ℓ ρ₀ ℓ^† - ½{ℓ^†ℓ, ρ₀}),
//! H⁰ = B^† H B,   ℓ = B^† L X_τ B,
//! X_τ = ∫₀^τ e^{½L^†L(τ'-τ)} P_⊥ H(τ'/γT) P₀ dτ',
//! ```
//!
//! where `B` holds the dark basis as columns. `X_τ` is also the solution of
//! `dX/dτ = -½L^†L X + P_⊥ H P₀` with `X₀ = 0`, which is how it is carried
//! along during evolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    anticommutator, c64, commutator, ensure_square, hermitian_eigen, hermiticity_defect, identity,
    kernel_basis, matrix_exp, ordered_exponential, pseudo_inverse, real, spectral_apply, trace_distance,
    unitarity_defect, CMatrix, CVector, DEFAULT_REL_TOL, I,
};
use crate::lindblad::{DensityMatrix, Diagnostics};
use crate::ode::{self, OdeOptions, StepStats};
use crate::protocol::{AngleFn, Protocol};
use crate::quadrature::{self, QuadratureOptions};

/// Orthonormal dark basis, its projector and the complementary (bright) basis.
#[derive(Debug, Clone)]
pub struct DarkSpace {
    basis: CMatrix,
    bright: CMatrix,
    projector: CMatrix,
}

/// Order `candidates` by descending overlap with the canonical basis vectors
/// and orthonormalize, so the gauge of a degenerate subspace is reproducible.
fn canonical_gauge(span: &[CVector], n: usize) -> CMatrix {
    let k = span.len();
    if k == 0 {
        return CMatrix::zeros(n, 0);
    }
    let q = CMatrix::from_columns(span);
    let mut order: Vec<(usize, f64)> = (0..n).map(|i| (i, q.row(i).norm())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<CVector> = Vec::with_capacity(k);
    for (i, _) in order {
        if out.len() == k {
            break;
        }
        // Projection of e_i onto the subspace.
        let mut z = &q * q.row(i).adjoint();
        for _ in 0..2 {
            for b in &out {
                let p = b.dotc(&z);
                z -= b * p;
            }
        }
        let norm = z.norm();
        if norm > 1e-6 {
            out.push(z / real(norm));
        }
    }
    CMatrix::from_columns(&out)
}

impl DarkSpace {
    /// Kernel of `l`, in the canonical gauge.
    pub fn from_jump(l: &CMatrix, rel_tol: f64) -> Result<Self> {
        let n = ensure_square(l)?;
        let kernel = kernel_basis(l, rel_tol)?;
        if kernel.is_empty() {
            return Err(Error::NoDarkSpace);
        }
        let basis = canonical_gauge(&kernel, n);
        let projector = &basis * basis.adjoint();
        let bright_span = kernel_basis(&projector, 0.5)?;
        let bright = canonical_gauge(&bright_span, n);
        Ok(Self { basis, bright, projector })
    }

    /// Dark-space dimension.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn full_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Dark basis as columns (`n × d`).
    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    /// Bright (complement) basis as columns.
    pub fn bright_basis(&self) -> &CMatrix {
        &self.bright
    }

    /// `P₀ = Σ |m><m|`.
    pub fn projector(&self) -> &CMatrix {
        &self.projector
    }

    /// `P_⊥ = 1 - P₀`.
    pub fn complement(&self) -> CMatrix {
        identity(self.full_dim()) - &self.projector
    }

    /// `B ρ B^†`.
    pub fn embed(&self, rho: &CMatrix) -> CMatrix {
        &self.basis * rho * self.basis.adjoint()
    }

    /// `B^† A B`.
    pub fn compress(&self, a: &CMatrix) -> CMatrix {
        self.basis.adjoint() * a * &self.basis
    }

    /// `‖ρ - P₀ρP₀‖_F`.
    pub fn leakage(&self, rho: &CMatrix) -> f64 {
        (rho - &self.projector * rho * &self.projector).norm()
    }

    /// Largest violation of `P₀² = P₀`, `P₀^† = P₀` and `L|m> = 0`.
    pub fn invariant_defect(&self, l: &CMatrix) -> f64 {
        let p = &self.projector;
        let idem = (p * p - p).norm();
        let herm = hermiticity_defect(p);
        let annihilated = (l * &self.basis).norm();
        idem.max(herm).max(annihilated)
    }
}

/// Dark space of a jump operator with the default kernel tolerance.
pub fn dark_space(l: &CMatrix) -> Result<DarkSpace> {
    DarkSpace::from_jump(l, DEFAULT_REL_TOL)
}

/// `H(s) = i (dU/ds) U^†`, rejecting non-unitary `U(s)`.
pub fn adiabatic_hamiltonian(protocol: &Protocol, s: f64) -> Result<CMatrix> {
    let defect = unitarity_defect(&protocol.unitary(s));
    if defect > 1e-8 {
        return Err(Error::NonUnitary { phase: s, defect });
    }
    let h = protocol.hamiltonian(s)?;
    let herm = hermiticity_defect(&h);
    if herm > 1e-8 {
        return Err(Error::NonHermitian { defect: herm });
    }
    Ok(h)
}

/// `B^† H B`, the dark block of `H` in the dark basis.
pub fn projected_hamiltonian(h: &CMatrix, ds: &DarkSpace) -> CMatrix {
    ds.compress(h)
}

/// `-iε[H⁰, ρ] + ε²(ℓρℓ^† - ½{ℓ^†ℓ, ρ})`.
pub fn effective_rhs(rho: &CMatrix, h0: &CMatrix, ell: &CMatrix, epsilon: f64) -> CMatrix {
    let mut out = commutator(h0, rho) * c64(0.0, -epsilon);
    out += dissipator(ell, rho) * real(epsilon * epsilon);
    out
}

/// `ℓρℓ^† - ½{ℓ^†ℓ, ρ}`.
pub fn dissipator(ell: &CMatrix, rho: &CMatrix) -> CMatrix {
    let ld = ell.adjoint();
    ell * rho * &ld - anticommutator(&(&ld * ell), rho) * real(0.5)
}

/// Phase-dependent change of dark/bright basis `ω(s) = exp(i f(s) G)` with
/// `G` block diagonal with respect to `P₀`.
#[derive(Debug, Clone)]
pub struct Gauge {
    generator: CMatrix,
    values: Vec<f64>,
    vectors: CMatrix,
    profile: AngleFn,
}

impl Gauge {
    pub fn new(generator: CMatrix, profile: AngleFn) -> Result<Self> {
        ensure_square(&generator)?;
        let defect = hermiticity_defect(&generator);
        if defect > 1e-12 * generator.norm().max(1.0) {
            return Err(Error::NonHermitian { defect });
        }
        let (values, vectors) = hermitian_eigen(&generator);
        Ok(Self { generator, values, vectors, profile })
    }

    pub fn generator(&self) -> &CMatrix {
        &self.generator
    }

    pub fn is_static(&self) -> bool {
        match &self.profile {
            AngleFn::Linear { winding, .. } | AngleFn::Smoothstep { winding, .. } => *winding == 0,
            AngleFn::Fourier { winding, cos, sin, .. } => *winding == 0 && cos.iter().chain(sin).all(|c| *c == 0.0),
        }
    }

    pub fn omega(&self, s: f64) -> CMatrix {
        let f = self.profile.value(s);
        spectral_apply(&self.values, &self.vectors, |l| c64(0.0, f * l).exp())
    }

    /// `dω/ds = i f'(s) G ω(s)`.
    pub fn omega_derivative(&self, s: f64) -> CMatrix {
        &self.generator * self.omega(s) * c64(0.0, self.profile.derivative(s))
    }
}

/// Where the memory kernel `X_τ` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum XSource {
    /// The exact retarded integral (carried as the `X` ODE during evolution).
    #[default]
    Integral,
    /// The adiabatic limit `2 (L^†L)⁺ P_⊥ H P₀`.
    Adiabatic,
}

/// Which terms of the effective equation to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EffectiveOrder {
    /// Berry term and dissipator.
    #[default]
    Second,
    /// Berry term only.
    First,
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub source: XSource,
    pub order: EffectiveOrder,
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { source: XSource::Integral, order: EffectiveOrder::Second, rtol: 1e-10, atol: 1e-13, max_step: 0.5 }
    }
}

/// Dark-block trajectory of the effective equation.
#[derive(Debug, Clone)]
pub struct EffectiveTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<CMatrix>,
    /// Memory kernel `X_τ` at the output times.
    pub kernels: Vec<CMatrix>,
    pub stats: StepStats,
    pub diagnostics: Diagnostics,
}

/// Both evaluations of the end-of-cycle dark state.
#[derive(Debug, Clone)]
pub struct EndOfCycle {
    /// `V (ρ + ε² ∫ D_l(ρ) dτ) V^†` with `l = V_τ^† ℓ_τ V_τ`.
    pub closed_form: CMatrix,
    /// Direct integration of the effective equation.
    pub direct: CMatrix,
    /// Holonomy over the full cycle.
    pub holonomy: CMatrix,
    /// `∫₀^{γT} D_l(ρ) dτ`.
    pub dissipator_integral: CMatrix,
    pub route_distance: f64,
}

/// K-map reconstruction of the full rotating-frame state.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub state: CMatrix,
    /// `|Tr ρ - 1|` before renormalization.
    pub trace_renormalization: f64,
}

/// Everything needed to evaluate the effective dark-space dynamics of a
/// protocol, optionally viewed through a gauge `ω(s)`.
#[derive(Debug, Clone)]
pub struct EffectiveGenerator {
    protocol: Protocol,
    ds: DarkSpace,
    ldl: CMatrix,
    ldl_values: Vec<f64>,
    ldl_vectors: CMatrix,
    ldl_pinv: CMatrix,
    slowest_rate: f64,
    gauge: Option<Gauge>,
}

/// `e^{-½λ w}` is below 1e-16 once `w ≥ 73.7/λ`.
const KERNEL_WINDOW: f64 = 73.7;

impl EffectiveGenerator {
    pub fn new(protocol: Protocol) -> Result<Self> {
        let ds = dark_space(protocol.l_rot())?;
        let l = protocol.l_rot();
        let ldl = l.adjoint() * l;
        let (ldl_values, ldl_vectors) = hermitian_eigen(&ldl);
        let scale = ldl_values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let slowest_rate = ldl_values.iter().copied().filter(|v| *v > DEFAULT_REL_TOL * scale).fold(f64::INFINITY, f64::min);
        let ldl_pinv = pseudo_inverse(&ldl, DEFAULT_REL_TOL)?;
        Ok(Self { protocol, ds, ldl, ldl_values, ldl_vectors, ldl_pinv, slowest_rate, gauge: None })
    }

    /// View the same dynamics through the basis change `ω(s)`; requires `[G, P₀] = 0`.
    pub fn with_gauge(mut self, gauge: Gauge) -> Result<Self> {
        let n = ensure_square(gauge.generator())?;
        if n != self.ds.full_dim() {
            return Err(Error::DimensionMismatch { expected: self.ds.full_dim(), got: n });
        }
        let defect = commutator(gauge.generator(), self.ds.projector()).norm();
        if defect > 1e-12 * gauge.generator().norm().max(1.0) {
            return Err(Error::InvalidParameter(format!("gauge generator does not commute with P0 (defect {defect:e})")));
        }
        self.gauge = Some(gauge);
        Ok(self)
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn dark_space(&self) -> &DarkSpace {
        &self.ds
    }

    pub fn gauge(&self) -> Option<&Gauge> {
        self.gauge.as_ref()
    }

    pub fn gamma_t(&self) -> f64 {
        self.protocol.gamma_t()
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.protocol.gamma_t()
    }

    /// Slowest non-zero decay rate of `L^†L`.
    pub fn slowest_rate(&self) -> f64 {
        self.slowest_rate
    }

    fn phase(&self, tau: f64) -> f64 {
        tau * self.epsilon()
    }

    fn static_kernel(&self) -> bool {
        self.gauge.as_ref().is_none_or(Gauge::is_static)
    }

    /// Rotating-frame Hamiltonian at phase `s`: `ωHω^† + i ω' ω^†` under a gauge.
    pub fn hamiltonian(&self, s: f64) -> Result<CMatrix> {
        let h = adiabatic_hamiltonian(&self.protocol, s)?;
        Ok(match &self.gauge {
            None => h,
            Some(g) => {
                let w = g.omega(s);
                let wd = w.adjoint();
                &w * h * &wd + g.omega_derivative(s) * wd * I
            }
        })
    }

    /// Rotating-frame jump operator at phase `s`.
    pub fn jump(&self, s: f64) -> CMatrix {
        match &self.gauge {
            None => self.protocol.l_rot().clone(),
            Some(g) => {
                let w = g.omega(s);
                &w * self.protocol.l_rot() * w.adjoint()
            }
        }
    }

    fn jump_product(&self, s: f64) -> CMatrix {
        match &self.gauge {
            None => self.ldl.clone(),
            Some(g) => {
                let w = g.omega(s);
                &w * &self.ldl * w.adjoint()
            }
        }
    }

    /// `H⁰(s) = B^† H(s) B`.
    pub fn h0(&self, s: f64) -> Result<CMatrix> {
        Ok(self.ds.compress(&self.hamiltonian(s)?))
    }

    /// `P_⊥ H(s) P₀`.
    pub fn source(&self, s: f64) -> Result<CMatrix> {
        let p0 = self.ds.projector();
        Ok(self.ds.complement() * self.hamiltonian(s)? * p0)
    }

    /// `dX/dτ = -½ L^†L X + P_⊥ H P₀`.
    pub fn c_ode_rhs(&self, tau: f64, x: &CMatrix) -> Result<CMatrix> {
        let s = self.phase(tau);
        Ok(self.source(s)? - self.jump_product(s) * x * real(0.5))
    }

    /// `X_τ` by mode-resolved quadrature of the retarded integral.
    pub fn x_tau_integral(&self, tau: f64) -> Result<CMatrix> {
        self.x_tau_integral_with(tau, QuadratureOptions::default())
    }

    pub fn x_tau_integral_with(&self, tau: f64, opts: QuadratureOptions) -> Result<CMatrix> {
        if !self.static_kernel() {
            return Err(Error::InvalidParameter(
                "retarded-integral kernel needs a phase-independent jump operator; evolve the X equation instead".into(),
            ));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be non-negative, got {tau}")));
        }
        let n = self.ds.full_dim();
        if tau == 0.0 || !self.slowest_rate.is_finite() {
            return Ok(CMatrix::zeros(n, n));
        }
        let start = (tau - KERNEL_WINDOW / self.slowest_rate).max(0.0);
        let gauge_w = self.gauge.as_ref().map(|g| g.omega(0.0));
        let mut failure = None;
        let integrand = |t: f64| {
            let decay = spectral_apply(&self.ldl_values, &self.ldl_vectors, |l| real((0.5 * l * (t - tau)).exp()));
            let decay = match &gauge_w {
                Some(w) => w * decay * w.adjoint(),
                None => decay,
            };
            match self.source(self.phase(t)) {
                Ok(src) => decay * src,
                Err(e) => {
                    failure.get_or_insert(e);
                    CMatrix::zeros(n, n)
                }
            }
        };
        let x = quadrature::integrate(integrand, start, tau, opts)?;
        match failure {
            Some(e) => Err(e),
            None => Ok(x),
        }
    }

    /// Adiabatic limit `2 (L^†L)⁺ P_⊥ H P₀` at time `τ`.
    pub fn x_tau_adiabatic(&self, tau: f64) -> Result<CMatrix> {
        let s = self.phase(tau);
        let pinv = match &self.gauge {
            None => self.ldl_pinv.clone(),
            Some(g) => {
                let w = g.omega(s);
                &w * &self.ldl_pinv * w.adjoint()
            }
        };
        Ok(pinv * self.source(s)? * real(2.0))
    }

    /// `ℓ = B^† L X B`.
    pub fn ell_from_x(&self, s: f64, x: &CMatrix) -> CMatrix {
        self.ds.compress(&(self.jump(s) * x))
    }

    /// Effective jump at time `τ`.
    pub fn effective_jump(&self, tau: f64, source: XSource) -> Result<CMatrix> {
        let x = match source {
            XSource::Integral => self.x_tau_integral(tau)?,
            XSource::Adiabatic => self.x_tau_adiabatic(tau)?,
        };
        Ok(self.ell_from_x(self.phase(tau), &x))
    }

    /// Right-hand side of the effective equation given the current kernel.
    pub fn rhs(&self, tau: f64, rho: &CMatrix, x: &CMatrix, order: EffectiveOrder) -> Result<CMatrix> {
        let s = self.phase(tau);
        let h0 = self.h0(s)?;
        Ok(match order {
            EffectiveOrder::Second => effective_rhs(rho, &h0, &self.ell_from_x(s, x), self.epsilon()),
            EffectiveOrder::First => commutator(&h0, rho) * c64(0.0, -self.epsilon()),
        })
    }

    /// `‖dX/dτ + ½L^†L X - P_⊥HP₀‖_F` at `τ`, with `X` from quadrature and
    /// `dX/dτ` from a fourth-order finite-difference stencil.
    pub fn c_ode_residual(&self, tau: f64) -> Result<f64> {
        let h = 1e-2;
        let opts = QuadratureOptions { abs_tol: 1e-15, rel_tol: 1e-13, max_intervals: 2000 };
        let x = |t: f64| self.x_tau_integral_with(t, opts);
        let dx = if tau >= 2.0 * h {
            (x(tau - 2.0 * h)? - x(tau - h)? * real(8.0) + x(tau + h)? * real(8.0) - x(tau + 2.0 * h)?)
                * real(1.0 / (12.0 * h))
        } else {
            (x(tau)? * real(-25.0) + x(tau + h)? * real(48.0) - x(tau + 2.0 * h)? * real(36.0)
                + x(tau + 3.0 * h)? * real(16.0)
                - x(tau + 4.0 * h)? * real(3.0))
                * real(1.0 / (12.0 * h))
        };
        Ok((dx - self.c_ode_rhs(tau, &x(tau)?)?).norm())
    }

    fn ode_options(rtol: f64, atol: f64, max_step: f64) -> OdeOptions {
        OdeOptions { rtol, atol, max_step, ..OdeOptions::default() }
    }

    /// `V_τ = T exp(-iε ∫₀^τ H⁰)`, integrated adaptively over the phase.
    pub fn berry_holonomy(&self, tau: f64) -> Result<CMatrix> {
        let k = self.ds.dim();
        let s1 = self.phase(tau);
        if s1 == 0.0 {
            return Ok(identity(k));
        }
        let rhs = |s: f64, v: &CMatrix| -> Result<CMatrix> { Ok(self.h0(s)? * v * c64(0.0, -1.0)) };
        let opts = Self::ode_options(1e-13, 1e-15, 1e-2);
        let (out, _) = ode::integrate(rhs, identity(k), (0.0, s1), &[s1], opts, |_, _| Ok(()))?;
        Ok(out.into_iter().next_back().expect("one output").1)
    }

    /// Midpoint-product evaluation of the holonomy with `steps` phase slices.
    pub fn berry_holonomy_midpoint(&self, tau: f64, steps: usize) -> Result<CMatrix> {
        let mut failure = None;
        let v = ordered_exponential(
            |s| match self.h0(s) {
                Ok(h) => h * c64(0.0, -1.0),
                Err(e) => {
                    failure.get_or_insert(e);
                    CMatrix::zeros(self.ds.dim(), self.ds.dim())
                }
            },
            0.0,
            self.phase(tau),
            steps,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    /// Validate a dark-space initial state given either as a `d × d` dark
    /// block or as a full-space density matrix.
    pub fn dark_initial_state(&self, rho: &DensityMatrix) -> Result<CMatrix> {
        let k = self.ds.dim();
        let n = self.ds.full_dim();
        if rho.dim() == k {
            return Ok(rho.matrix().clone());
        }
        if rho.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: rho.dim() });
        }
        let leakage = self.ds.leakage(rho.matrix());
        if leakage > 1e-10 {
            return Err(Error::Leakage { leakage });
        }
        Ok(self.ds.compress(rho.matrix()))
    }

    /// Integrate the effective equation from `τ = 0`, reporting at `t_eval`.
    pub fn evolve(&self, rho0: &DensityMatrix, t_eval: &[f64], opts: &EvolveOptions) -> Result<EffectiveTrajectory> {
        let rho0 = self.dark_initial_state(rho0)?;
        let n = self.ds.full_dim();
        let t1 = t_eval.last().copied().unwrap_or(0.0);
        let trace0 = rho0.trace();
        let mut diagnostics = Diagnostics::default();
        diagnostics.observe(&rho0, trace0);
        let kernel_at = |tau: f64, x: &CMatrix| -> Result<CMatrix> {
            match opts.source {
                XSource::Integral => Ok(x.clone()),
                XSource::Adiabatic => self.x_tau_adiabatic(tau),
            }
        };
        if t1 <= 0.0 {
            let times: Vec<f64> = t_eval.to_vec();
            let kernels = times.iter().map(|&t| kernel_at(t, &CMatrix::zeros(n, n))).collect::<Result<_>>()?;
            return Ok(EffectiveTrajectory {
                states: vec![rho0; times.len()],
                times,
                kernels,
                stats: StepStats::default(),
                diagnostics,
            });
        }
        let rhs = |tau: f64, y: &Vec<CMatrix>| -> Result<Vec<CMatrix>> {
            let x = kernel_at(tau, &y[1])?;
            let drho = self.rhs(tau, &y[0], &x, opts.order)?;
            let dx = match opts.source {
                XSource::Integral => self.c_ode_rhs(tau, &y[1])?,
                XSource::Adiabatic => CMatrix::zeros(n, n),
            };
            Ok(vec![drho, dx])
        };
        let on_accept = |tau: f64, y: &Vec<CMatrix>| -> Result<()> {
            diagnostics.observe(&y[0], trace0);
            if diagnostics.max_trace_error > 1e-7 {
                return Err(Error::InvariantViolation { tau, what: "trace", value: diagnostics.max_trace_error });
            }
            Ok(())
        };
        let ode_opts = Self::ode_options(opts.rtol, opts.atol, opts.max_step);
        let (out, stats) = ode::integrate(rhs, vec![rho0, CMatrix::zeros(n, n)], (0.0, t1), t_eval, ode_opts, on_accept)?;
        let mut times = Vec::with_capacity(out.len());
        let mut states = Vec::with_capacity(out.len());
        let mut kernels = Vec::with_capacity(out.len());
        for (t, y) in out {
            kernels.push(kernel_at(t, &y[1])?);
            times.push(t);
            let mut it = y.into_iter();
            states.push(it.next().expect("state component"));
        }
        Ok(EffectiveTrajectory { times, states, kernels, stats, diagnostics })
    }

    /// Holonomy and `∫ D_l(ρ) dτ` over the whole cycle for a fixed dark state.
    pub fn cycle_integrals(&self, rho: &CMatrix) -> Result<(CMatrix, CMatrix)> {
        let k = self.ds.dim();
        let n = self.ds.full_dim();
        let t1 = self.gamma_t();
        let eps = self.epsilon();
        let rhs = |tau: f64, y: &Vec<CMatrix>| -> Result<Vec<CMatrix>> {
            let s = self.phase(tau);
            let (v, x) = (&y[0], &y[1]);
            let dv = self.h0(s)? * v * c64(0.0, -eps);
            let dx = self.c_ode_rhs(tau, x)?;
            let l = v.adjoint() * self.ell_from_x(s, x) * v;
            Ok(vec![dv, dx, dissipator(&l, rho)])
        };
        let opts = Self::ode_options(1e-11, 1e-14, 0.5);
        let y0 = vec![identity(k), CMatrix::zeros(n, n), CMatrix::zeros(k, k)];
        let (out, _) = ode::integrate(rhs, y0, (0.0, t1), &[t1], opts, |_, _| Ok(()))?;
        let mut y = out.into_iter().next_back().expect("one output").1.into_iter();
        let v = y.next().expect("holonomy");
        let _x = y.next();
        let j = y.next().expect("dissipator integral");
        Ok((v, j))
    }

    /// End-of-cycle dark state by the closed formula and by direct integration.
    pub fn end_of_cycle_state(&self, rho_init: &DensityMatrix) -> Result<EndOfCycle> {
        let rho = self.dark_initial_state(rho_init)?;
        let (v, j) = self.cycle_integrals(&rho)?;
        let eps = self.epsilon();
        let closed_form = &v * (&rho + &j * real(eps * eps)) * v.adjoint();
        let direct = self
            .evolve(&DensityMatrix::trusted(rho), &[self.gamma_t()], &EvolveOptions::default())?
            .states
            .pop()
            .expect("final state");
        let route_distance = trace_distance(&closed_form, &direct);
        Ok(EndOfCycle { closed_form, direct, holonomy: v, dissipator_integral: j, route_distance })
    }

    /// `E + ε(-i[C, E]) + ε²(C E C - ½{C², E})` with `E = BρB^†`, `C = X + X^†`,
    /// renormalized to unit trace.
    pub fn reconstruct_full_state(&self, rho_ins: &CMatrix, x: &CMatrix) -> Reconstruction {
        let eps = self.epsilon();
        let e = self.ds.embed(rho_ins);
        let c = x + x.adjoint();
        let c2 = &c * &c;
        let first = commutator(&c, &e) * c64(0.0, -eps);
        let second = (&c * &e * &c - anticommutator(&c2, &e) * real(0.5)) * real(eps * eps);
        let state = &e + first + second;
        let tr = state.trace();
        let trace_renormalization = (tr - rho_ins.trace()).norm();
        Reconstruction { state: state * (rho_ins.trace() / tr), trace_renormalization }
    }
}

/// `exp(i G)` for a Hermitian `G`; convenience for constant gauges.
pub fn unitary_from_generator(g: &CMatrix) -> Result<CMatrix> {
    matrix_exp(&(g * I))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::diag_real;
    use crate::protocol::{pauli, sigma_minus, spin32_jump, spin32_protocol, spin_operators, PathSpec};
    use std::f64::consts::PI;

    fn simplest(gamma_t: f64) -> EffectiveGenerator {
        EffectiveGenerator::new(spin32_protocol(&PathSpec::simplest(), gamma_t).unwrap()).unwrap()
    }

    fn generic_path() -> PathSpec {
        PathSpec {
            theta: AngleFn::Fourier { start: 0.3, winding: 1, cos: vec![0.4], sin: vec![-0.2] },
            phi: AngleFn::Fourier { start: 0.0, winding: 1, cos: vec![], sin: vec![0.5] },
        }
    }

    #[test]
    fn spin32_dark_space_is_pm_half() {
        let ds = dark_space(&spin32_jump()).unwrap();
        assert_eq!(ds.dim(), 2);
        let mut want = CMatrix::zeros(4, 2);
        want[(1, 0)] = real(1.0);
        want[(2, 1)] = real(1.0);
        assert!((ds.basis() - want).norm() < 1e-12);
        assert!((ds.projector() - diag_real(&[0.0, 1.0, 1.0, 0.0])).norm() < 1e-12);
        assert!(ds.invariant_defect(&spin32_jump()) < 1e-10);
        assert_eq!(ds.bright_basis().ncols(), 2);
    }

    #[test]
    fn decay_dark_space_and_no_dark_space() {
        let ds = dark_space(&sigma_minus()).unwrap();
        assert_eq!(ds.dim(), 1);
        assert!((ds.basis()[(0, 0)] - real(1.0)).norm() < 1e-12);
        assert!(matches!(dark_space(&identity(3)), Err(Error::NoDarkSpace)));
    }

    #[test]
    fn dark_gauge_is_deterministic_for_rotated_kernels() {
        // Kernel spanned by (1, 1, 0)/√2 and (0, 0, 1).
        let mut l = CMatrix::zeros(3, 3);
        l[(0, 0)] = real(1.0);
        l[(0, 1)] = real(-1.0);
        let a = dark_space(&l).unwrap();
        let b = dark_space(&(l * real(3.0))).unwrap();
        assert_eq!(a.dim(), 2);
        assert!((a.basis() - b.basis()).norm() < 1e-12);
        assert!((a.basis()[(2, 0)] - real(1.0)).norm() < 1e-12);
    }

    #[test]
    fn spin32_hamiltonian_matches_closed_form() {
        let path = generic_path();
        let p = spin32_protocol(&path, 10.0).unwrap();
        let (sx, sy, sz) = spin_operators(3);
        let (px, py, pz) = pauli();
        let ds = dark_space(p.l_rot()).unwrap();
        for k in 0..64 {
            let s = k as f64 / 63.0;
            let (th, dth, dph) = (path.theta.value(s), path.theta.derivative(s), path.phi.derivative(s));
            let want = -((&sy * real(dth)) + (&sz * real(th.cos()) - &sx * real(th.sin())) * real(dph));
            let h = adiabatic_hamiltonian(&p, s).unwrap();
            assert!((&h - want).norm() < 1e-10);
            let h0 = projected_hamiltonian(&h, &ds);
            let want0 = -(&py * real(dth)) - (&pz * real(0.5 * th.cos()) - &px * real(th.sin())) * real(dph);
            assert!((h0 - want0).norm() < 1e-10, "s = {s}");
        }
    }

    #[test]
    fn projected_hamiltonian_examples() {
        let g = simplest(100.0);
        let (_, py, pz) = pauli();
        assert!((g.h0(0.3).unwrap() + &py * real(2.0 * PI)).norm() < 1e-12);
        assert!((adiabatic_hamiltonian(g.protocol(), 0.1).unwrap() + spin_operators(3).1 * real(2.0 * PI)).norm() < 1e-12);
        let ds = g.dark_space();
        assert_eq!(projected_hamiltonian(&CMatrix::zeros(4, 4), ds).norm(), 0.0);
        // θ = 0, φ' = 1 evaluated directly on H = -φ' S_z.
        let h = -spin_operators(3).2;
        assert!((projected_hamiltonian(&h, ds) + pz * real(0.5)).norm() < 1e-12);
    }

    #[test]
    fn x_tau_vanishes_at_zero_and_for_static_protocols() {
        let g = simplest(100.0);
        assert_eq!(g.x_tau_integral(0.0).unwrap().norm(), 0.0);
        let (_, sy, _) = spin_operators(3);
        let p = crate::protocol::custom_protocol(&[sy], &[AngleFn::constant(0.4)], spin32_jump(), 50.0).unwrap();
        let c = EffectiveGenerator::new(p).unwrap();
        for tau in [0.0, 1.0, 20.0] {
            assert!(c.x_tau_integral(tau).unwrap().norm() < 1e-12);
            assert!(c.effective_jump(tau, XSource::Integral).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn simplest_effective_jump_closed_form() {
        let g = simplest(200.0);
        let (_, _, pz) = pauli();
        for k in 0..=40 {
            let tau = 0.5 * k as f64;
            let b = 2.0 * PI * (1.0 - (-1.5 * tau).exp());
            let ell = g.effective_jump(tau, XSource::Integral).unwrap();
            assert!((ell - &pz * c64(0.0, b)).norm() < 1e-8, "tau = {tau}");
        }
        let ad = g.effective_jump(50.0, XSource::Adiabatic).unwrap();
        assert!((ad - pz * c64(0.0, 2.0 * PI)).norm() < 1e-10);
    }

    #[test]
    fn steady_phi_rotation_gives_scalar_jump() {
        // θ = π/2 fixed, φ' = 2π (one winding); a_∞ = φ' sin θ = 2π.
        let path = PathSpec { theta: AngleFn::constant(PI / 2.0), phi: AngleFn::linear(1) };
        let g = EffectiveGenerator::new(spin32_protocol(&path, 100.0).unwrap()).unwrap();
        let ell = g.effective_jump(40.0, XSource::Integral).unwrap();
        let a = 2.0 * PI * (1.0 - (-60.0f64).exp());
        assert!((ell - identity(2) * real(a)).norm() < 1e-8);
    }

    #[test]
    fn reversed_protocol_negates_adiabatic_kernel() {
        let fwd = simplest(100.0);
        let path = PathSpec { theta: AngleFn::linear(-1), phi: AngleFn::constant(0.0) };
        let rev = EffectiveGenerator::new(spin32_protocol(&path, 100.0).unwrap()).unwrap();
        // At s = 0 both start from θ = 0, where only the sign of θ' differs.
        assert!((fwd.x_tau_adiabatic(0.0).unwrap() + rev.x_tau_adiabatic(0.0).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn integral_approaches_adiabatic_kernel() {
        let mut prev = f64::INFINITY;
        for gt in [100.0, 200.0, 400.0] {
            let p = spin32_protocol(&generic_path(), gt).unwrap();
            let g = EffectiveGenerator::new(p).unwrap();
            let diff = [0.3, 0.55, 0.8]
                .iter()
                .map(|f| {
                    let tau = f * gt;
                    (g.x_tau_integral(tau).unwrap() - g.x_tau_adiabatic(tau).unwrap()).norm()
                })
                .fold(0.0, f64::max);
            assert!(diff * gt < 20.0, "{gt}: {diff}");
            assert!(diff < 0.6 * prev);
            prev = diff;
        }
    }

    #[test]
    fn c_ode_residual_is_small() {
        let p = spin32_protocol(&generic_path(), 50.0).unwrap();
        let g = EffectiveGenerator::new(p).unwrap();
        for k in 0..16 {
            let tau = 50.0 * k as f64 / 15.0;
            let r = g.c_ode_residual(tau).unwrap();
            assert!(r <= 1e-7, "tau {tau}: {r:e}");
        }
    }

    #[test]
    fn evolved_kernel_matches_quadrature() {
        let p = spin32_protocol(&generic_path(), 40.0).unwrap();
        let g = EffectiveGenerator::new(p).unwrap();
        let rho = DensityMatrix::from_bloch([0.0, 0.0, 1.0]).unwrap();
        let ts = [5.0, 17.0, 40.0];
        let traj = g.evolve(&rho, &ts, &EvolveOptions::default()).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.kernels) {
            assert!((x - g.x_tau_integral(*t).unwrap()).norm() < 1e-7);
        }
    }

    #[test]
    fn effective_rhs_examples() {
        let (px, _, pz) = pauli();
        let rho = DensityMatrix::from_bloch([1.0, 0.0, 0.0]).unwrap().into_matrix();
        let ell = &pz * c64(0.0, 2.0 * PI);
        let eps = 1.0 / 200.0;
        let out = effective_rhs(&rho, &CMatrix::zeros(2, 2), &ell, eps);
        let want = -&px * real((2.0 * PI * eps).powi(2));
        assert!((&out - want).norm() < 1e-14);
        assert!(out.trace().norm() < 1e-15);
        // ℓ ∝ 1 and a commuting H⁰ leave the state alone.
        let rho_z = DensityMatrix::from_bloch([0.0, 0.0, 0.4]).unwrap().into_matrix();
        assert!(effective_rhs(&rho_z, &pz, &(identity(2) * real(3.0)), 0.1).norm() < 1e-15);
    }

    #[test]
    fn simplest_holonomy_is_trivial() {
        let g = simplest(200.0);
        let v = g.berry_holonomy(200.0).unwrap();
        assert!((&v - identity(2)).norm() <= 1e-8);
        let m = g.berry_holonomy_midpoint(200.0, 64).unwrap();
        assert!((m - identity(2)).norm() <= 1e-8);
        assert!((g.berry_holonomy(0.0).unwrap() - identity(2)).norm() == 0.0);
    }

    #[test]
    fn holonomy_is_unitary_and_midpoint_converges() {
        let p = spin32_protocol(&generic_path(), 100.0).unwrap();
        let g = EffectiveGenerator::new(p).unwrap();
        let v = g.berry_holonomy(100.0).unwrap();
        assert!(unitarity_defect(&v) < 1e-9);
        let coarse = (g.berry_holonomy_midpoint(100.0, 200).unwrap() - &v).norm();
        let fine = (g.berry_holonomy_midpoint(100.0, 400).unwrap() - &v).norm();
        assert!((coarse / fine).log2() > 1.8);
    }

    fn gentle_path() -> PathSpec {
        PathSpec {
            theta: AngleFn::Fourier { start: 0.5, winding: 0, cos: vec![], sin: vec![0.2] },
            phi: AngleFn::Fourier { start: 0.0, winding: 0, cos: vec![0.2], sin: vec![] },
        }
    }

    #[test]
    fn end_of_cycle_routes_agree() {
        let rho = DensityMatrix::from_bloch([0.6, 0.0, 0.8]).unwrap();
        for gt in [200.0, 800.0] {
            let g = EffectiveGenerator::new(spin32_protocol(&gentle_path(), gt).unwrap()).unwrap();
            let eoc = g.end_of_cycle_state(&rho).unwrap();
            assert!(eoc.route_distance <= 10.0 / (gt * gt), "{gt}: {}", eoc.route_distance);
            assert!(hermiticity_defect(&eoc.closed_form) < 1e-10);
            assert!((eoc.closed_form.trace() - real(1.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn end_of_cycle_routes_differ_at_second_order_on_winding_paths() {
        let rho = DensityMatrix::from_bloch([0.6, 0.0, 0.8]).unwrap();
        let d: Vec<f64> = [200.0, 400.0]
            .iter()
            .map(|&gt| {
                let g = EffectiveGenerator::new(spin32_protocol(&generic_path(), gt).unwrap()).unwrap();
                g.end_of_cycle_state(&rho).unwrap().route_distance
            })
            .collect();
        let order = (d[0] / d[1]).log2();
        assert!((order - 2.0).abs() < 0.3, "{d:?}");
    }

    #[test]
    fn end_of_cycle_rejects_leaky_states() {
        let g = simplest(100.0);
        let mut psi = CVector::zeros(4);
        psi[0] = real(1e-3);
        psi[1] = real(1.0);
        let leaky = DensityMatrix::pure(&psi).unwrap();
        assert!(matches!(g.end_of_cycle_state(&leaky), Err(Error::Leakage { .. })));
        let mut dark = CVector::zeros(4);
        dark[2] = real(1.0);
        assert!(g.end_of_cycle_state(&DensityMatrix::pure(&dark).unwrap()).is_ok());
    }

    #[test]
    fn constant_protocol_leaves_state_unchanged() {
        let (_, sy, _) = spin_operators(3);
        let p = crate::protocol::custom_protocol(&[sy], &[AngleFn::constant(0.0)], spin32_jump(), 50.0).unwrap();
        let g = EffectiveGenerator::new(p).unwrap();
        let rho = DensityMatrix::from_bloch([0.3, 0.4, 0.5]).unwrap();
        let eoc = g.end_of_cycle_state(&rho).unwrap();
        assert!((&eoc.closed_form - rho.matrix()).norm() < 1e-12);
        assert!((&eoc.direct - rho.matrix()).norm() < 1e-12);
        let rec = g.reconstruct_full_state(rho.matrix(), &g.x_tau_integral(10.0).unwrap());
        assert!((rec.state - g.dark_space().embed(rho.matrix())).norm() < 1e-12);
        assert!(rec.trace_renormalization < 1e-15);
    }

    #[test]
    fn reconstruction_at_zero_epsilon_is_embedding() {
        let g = EffectiveGenerator::new(spin32_protocol(&PathSpec::simplest(), 1e300).unwrap()).unwrap();
        let rho = DensityMatrix::from_bloch([0.0, 1.0, 0.0]).unwrap();
        let x = g.x_tau_adiabatic(1.0).unwrap();
        let rec = g.reconstruct_full_state(rho.matrix(), &x);
        assert!((rec.state - g.dark_space().embed(rho.matrix())).norm() < 1e-12);
    }

    #[test]
    fn constant_gauge_is_exactly_covariant() {
        let g = simplest(100.0);
        let (_, _, pz) = pauli();
        let gen = g.dark_space().embed(&(pz * real(PI / 7.0)));
        let gauge = Gauge::new(gen, AngleFn::constant(1.0)).unwrap();
        assert!(gauge.is_static());
        let w = gauge.omega(0.0);
        let gg = g.clone().with_gauge(gauge).unwrap();
        for tau in [0.5, 3.0, 40.0] {
            let l = g.effective_jump(tau, XSource::Integral).unwrap();
            let lw = gg.effective_jump(tau, XSource::Integral).unwrap();
            let wd = g.dark_space().compress(&w);
            assert!((lw - &wd * l * wd.adjoint()).norm() < 1e-10);
        }
    }

    #[test]
    fn gauge_must_commute_with_dark_projector() {
        let g = simplest(100.0);
        let (_, sy, _) = spin_operators(3);
        let gauge = Gauge::new(sy, AngleFn::constant(1.0)).unwrap();
        assert!(g.with_gauge(gauge).is_err());
    }
}
