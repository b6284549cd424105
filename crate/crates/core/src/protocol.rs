//! Cyclic control protocols: spin matrices, angle paths and unitary paths
//! `U(s) = Π_k exp(i α_k(s) G_k)` over the protocol phase `s ∈ [0, 1]`.
//!
//! The rotating-frame jump operator `L_rot` is fixed; the laboratory jump
//! operator is `U(s)^† L_rot U(s)`. γ is absorbed into `L_rot`, so the only
//! timescale carried by a protocol is the dimensionless period `γT`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    c64, ensure_square, hermitian_eigen, hermiticity_defect, identity, real, spectral_apply, unitarity_defect,
    zeros, CMatrix, I,
};

/// Spin matrices `(S_x, S_y, S_z)` for spin `j = two_j / 2` in the basis
/// `m = j, j-1, ..., -j`.
pub fn spin_operators(two_j: u32) -> (CMatrix, CMatrix, CMatrix) {
    assert!(two_j >= 1, "spin_operators needs two_j >= 1");
    let n = two_j as usize + 1;
    let j = two_j as f64 / 2.0;
    let m = |k: usize| j - k as f64;
    let mut sp = zeros(n);
    for k in 1..n {
        // <m+1| S_+ |m> with m = m(k), m+1 = m(k-1)
        let mk = m(k);
        sp[(k - 1, k)] = real((j * (j + 1.0) - mk * (mk + 1.0)).sqrt());
    }
    let sm = sp.adjoint();
    let sx = (&sp + &sm) * real(0.5);
    let sy = (&sp - &sm) * c64(0.0, -0.5);
    let mut sz = zeros(n);
    for k in 0..n {
        sz[(k, k)] = real(m(k));
    }
    (sx, sy, sz)
}

/// Pauli matrices.
pub fn pauli() -> (CMatrix, CMatrix, CMatrix) {
    let (sx, sy, sz) = spin_operators(1);
    (sx * real(2.0), sy * real(2.0), sz * real(2.0))
}

/// `σ_- = |0><1|`, annihilating the ground state `|0>`.
pub fn sigma_minus() -> CMatrix {
    let mut m = zeros(2);
    m[(0, 1)] = real(1.0);
    m
}

/// The spin-3/2 rotating-frame jump operator `S_x (S_z² - 1/4)`.
pub fn spin32_jump() -> CMatrix {
    let (sx, _, sz) = spin_operators(3);
    sx * (&sz * &sz - identity(4) * real(0.25))
}

/// A cyclic angle profile over the phase `s ∈ [0, 1]`, in radians.
///
/// Every family satisfies `α(1) = α(0) + 2π·winding`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngleFn {
    /// `start + 2π m s`
    Linear { start: f64, winding: i32 },
    /// `start + 2π m (3s² - 2s³)`
    Smoothstep { start: f64, winding: i32 },
    /// `start + 2π m s + Σ_k [c_k (cos 2πks - 1) + d_k sin 2πks]`
    Fourier {
        start: f64,
        winding: i32,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}

impl AngleFn {
    pub fn constant(value: f64) -> Self {
        AngleFn::Linear { start: value, winding: 0 }
    }

    pub fn linear(winding: i32) -> Self {
        AngleFn::Linear { start: 0.0, winding }
    }

    pub fn winding(&self) -> i32 {
        match *self {
            AngleFn::Linear { winding, .. }
            | AngleFn::Smoothstep { winding, .. }
            | AngleFn::Fourier { winding, .. } => winding,
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        match self {
            AngleFn::Linear { start, winding } => start + 2.0 * PI * (*winding as f64) * s,
            AngleFn::Smoothstep { start, winding } => start + 2.0 * PI * (*winding as f64) * s * s * (3.0 - 2.0 * s),
            AngleFn::Fourier { start, winding, cos, sin } => {
                let mut v = start + 2.0 * PI * (*winding as f64) * s;
                for (k, c) in cos.iter().enumerate() {
                    v += c * ((2.0 * PI * (k + 1) as f64 * s).cos() - 1.0);
                }
                for (k, d) in sin.iter().enumerate() {
                    v += d * (2.0 * PI * (k + 1) as f64 * s).sin();
                }
                v
            }
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            AngleFn::Linear { winding, .. } => 2.0 * PI * (*winding as f64),
            AngleFn::Smoothstep { winding, .. } => 2.0 * PI * (*winding as f64) * 6.0 * s * (1.0 - s),
            AngleFn::Fourier { winding, cos, sin, .. } => {
                let mut v = 2.0 * PI * (*winding as f64);
                for (k, c) in cos.iter().enumerate() {
                    let w = 2.0 * PI * (k + 1) as f64;
                    v -= c * w * (w * s).sin();
                }
                for (k, d) in sin.iter().enumerate() {
                    let w = 2.0 * PI * (k + 1) as f64;
                    v += d * w * (w * s).cos();
                }
                v
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            AngleFn::Linear { start, .. } | AngleFn::Smoothstep { start, .. } => start.is_finite(),
            AngleFn::Fourier { start, cos, sin, .. } => {
                start.is_finite() && cos.iter().chain(sin).all(|x| x.is_finite())
            }
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("non-finite angle parameters in {self:?}")));
        }
        let jump = self.value(1.0) - self.value(0.0) - 2.0 * PI * self.winding() as f64;
        if jump.abs() > 1e-10 {
            return Err(Error::NonCyclic(format!("angle path closes with defect {jump:e}")));
        }
        Ok(())
    }
}

/// Spherical angle path `(θ(s), φ(s))` for the spin-3/2 protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub theta: AngleFn,
    pub phi: AngleFn,
}

impl PathSpec {
    /// `θ = 2πs, φ = 0`.
    pub fn simplest() -> Self {
        Self { theta: AngleFn::linear(1), phi: AngleFn::constant(0.0) }
    }

    pub fn windings(&self) -> (i32, i32) {
        (self.theta.winding(), self.phi.winding())
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        self.phi.validate()
    }
}

/// How `dU/ds` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    #[default]
    Analytic,
    /// Central difference with phase step 1e-6, Richardson cross-checked.
    FiniteDifference,
}

pub const FD_PHASE_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Factor {
    values: Vec<f64>,
    vectors: CMatrix,
    generator: CMatrix,
    angle: AngleFn,
}

impl Factor {
    fn exp(&self, s: f64) -> CMatrix {
        let a = self.angle.value(s);
        spectral_apply(&self.values, &self.vectors, |l| c64(0.0, a * l).exp())
    }
}

/// Serializable description of a protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProtocolSpec {
    /// `L_rot = S_x (S_z² - 1/4)`, `U = e^{iθ S_y} e^{iφ S_z}`.
    Spin32 { path: PathSpec },
    /// `U = Π_k exp(i α_k G_k)` with an arbitrary rotating-frame jump.
    Custom {
        jump: MatrixSpec,
        generators: Vec<MatrixSpec>,
        angles: Vec<AngleFn>,
        #[serde(default = "default_custom_derivative")]
        derivative: DerivativeMode,
    },
}

fn default_custom_derivative() -> DerivativeMode {
    DerivativeMode::FiniteDifference
}

impl ProtocolSpec {
    pub fn build(&self, gamma_t: f64) -> Result<Protocol> {
        match self {
            ProtocolSpec::Spin32 { path } => spin32_protocol(path, gamma_t),
            ProtocolSpec::Custom { jump, generators, angles, derivative } => {
                let gens = generators.iter().map(MatrixSpec::to_matrix).collect::<Result<Vec<_>>>()?;
                let mut p = custom_protocol(&gens, angles, jump.to_matrix()?, gamma_t)?;
                p.derivative = *derivative;
                p.spec = self.clone();
                Ok(p)
            }
        }
    }

    pub fn is_spin32(&self) -> Option<&PathSpec> {
        match self {
            ProtocolSpec::Spin32 { path } => Some(path),
            _ => None,
        }
    }
}

/// Named or explicit operator for configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MatrixSpec {
    /// Spin component `axis ∈ {x, y, z}` for spin `two_j / 2`.
    Spin { two_j: u32, axis: char },
    SigmaMinus,
    Spin32Jump,
    Identity { dim: usize },
    /// Row-major real and imaginary parts.
    Explicit { re: Vec<Vec<f64>>, im: Option<Vec<Vec<f64>>> },
}

impl MatrixSpec {
    pub fn to_matrix(&self) -> Result<CMatrix> {
        Ok(match self {
            MatrixSpec::Spin { two_j, axis } => {
                if *two_j == 0 {
                    return Err(Error::InvalidParameter("spin needs two_j >= 1".into()));
                }
                let (sx, sy, sz) = spin_operators(*two_j);
                match axis {
                    'x' => sx,
                    'y' => sy,
                    'z' => sz,
                    other => return Err(Error::InvalidParameter(format!("unknown spin axis {other:?}"))),
                }
            }
            MatrixSpec::SigmaMinus => sigma_minus(),
            MatrixSpec::Spin32Jump => spin32_jump(),
            MatrixSpec::Identity { dim } => {
                if *dim == 0 {
                    return Err(Error::EmptyMatrix);
                }
                identity(*dim)
            }
            MatrixSpec::Explicit { re, im } => {
                let n = re.len();
                if n == 0 || re.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidParameter("explicit matrix must be square and non-empty".into()));
                }
                if let Some(im) = im {
                    if im.len() != n || im.iter().any(|r| r.len() != n) {
                        return Err(Error::InvalidParameter("imaginary part shape mismatch".into()));
                    }
                }
                CMatrix::from_fn(n, n, |i, j| c64(re[i][j], im.as_ref().map_or(0.0, |m| m[i][j])))
            }
        })
    }
}

/// A cyclic dark-space rotation protocol.
#[derive(Debug, Clone)]
pub struct Protocol {
    dim: usize,
    l_rot: CMatrix,
    factors: Vec<Factor>,
    gamma_t: f64,
    pub derivative: DerivativeMode,
    spec: ProtocolSpec,
}

impl Protocol {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l_rot(&self) -> &CMatrix {
        &self.l_rot
    }

    pub fn gamma_t(&self) -> f64 {
        self.gamma_t
    }

    pub fn spec(&self) -> &ProtocolSpec {
        &self.spec
    }

    /// Same path and jump with a different period.
    pub fn with_gamma_t(&self, gamma_t: f64) -> Result<Self> {
        check_gamma_t(gamma_t)?;
        Ok(Self { gamma_t, ..self.clone() })
    }

    /// `U(s)`.
    pub fn unitary(&self, s: f64) -> CMatrix {
        self.factors.iter().fold(identity(self.dim), |acc, f| acc * f.exp(s))
    }

    /// `dU/ds`, analytic or finite-difference depending on [`DerivativeMode`].
    pub fn unitary_derivative(&self, s: f64) -> Result<CMatrix> {
        match self.derivative {
            DerivativeMode::Analytic => Ok(self.analytic_derivative(s)),
            DerivativeMode::FiniteDifference => self.finite_difference_derivative(s),
        }
    }

    fn analytic_derivative(&self, s: f64) -> CMatrix {
        let exps: Vec<CMatrix> = self.factors.iter().map(|f| f.exp(s)).collect();
        let mut out = zeros(self.dim);
        for (k, f) in self.factors.iter().enumerate() {
            let rate = f.angle.derivative(s);
            if rate == 0.0 {
                continue;
            }
            let left = exps[..k].iter().fold(identity(self.dim), |acc, e| acc * e);
            let right = exps[k + 1..].iter().fold(identity(self.dim), |acc, e| acc * e);
            out += left * (&f.generator * c64(0.0, rate)) * &exps[k] * right;
        }
        out
    }

    fn finite_difference_derivative(&self, s: f64) -> Result<CMatrix> {
        let h = FD_PHASE_STEP;
        let central = |h: f64| (self.unitary(s + h) - self.unitary(s - h)) * real(0.5 / h);
        let d1 = central(h);
        let d2 = central(2.0 * h);
        let spread = (&d1 - &d2).norm();
        if spread > 1e-5 * d1.norm().max(1.0) {
            return Err(Error::NonFinite { phase: s });
        }
        Ok((d1 * real(4.0) - d2) * real(1.0 / 3.0))
    }

    /// `H(s) = i (dU/ds) U(s)^†`, the O(1) rotating-frame Hamiltonian in phase units.
    pub fn hamiltonian(&self, s: f64) -> Result<CMatrix> {
        let u = self.unitary(s);
        let du = self.unitary_derivative(s)?;
        Ok((du * u.adjoint()) * I)
    }

    /// Laboratory-frame jump operator `U(s)^† L_rot U(s)`.
    pub fn lab_jump(&self, s: f64) -> CMatrix {
        let u = self.unitary(s);
        u.adjoint() * &self.l_rot * u
    }

    /// Phase-independent protocols generate no Hamiltonian at all.
    pub fn is_constant(&self) -> bool {
        self.factors.iter().all(|f| match &f.angle {
            AngleFn::Linear { winding, .. } | AngleFn::Smoothstep { winding, .. } => *winding == 0,
            AngleFn::Fourier { winding, cos, sin, .. } => {
                *winding == 0 && cos.iter().chain(sin).all(|c| *c == 0.0)
            }
        })
    }

    /// Check unitarity of `U(s)` and closure `U(1) ∝ U(0)` on `samples` phases.
    pub fn check_invariants(&self, samples: usize) -> Result<()> {
        for k in 0..=samples {
            let s = k as f64 / samples.max(1) as f64;
            let d = unitarity_defect(&self.unitary(s));
            if d > 1e-9 {
                return Err(Error::NonUnitary { phase: s, defect: d });
            }
        }
        check_closure(&self.unitary(0.0), &self.unitary(1.0))
    }
}

/// `U(1) U(0)^†` must be a global phase.
fn check_closure(u0: &CMatrix, u1: &CMatrix) -> Result<()> {
    let w = u1 * u0.adjoint();
    let n = w.nrows();
    let phase = w.trace() / real(n as f64);
    let defect = (&w - identity(n) * phase).norm();
    if defect > 1e-10 || (phase.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::NonCyclic(format!("U(1) U(0)^dag is not a global phase (defect {defect:e})")));
    }
    Ok(())
}

fn check_gamma_t(gamma_t: f64) -> Result<()> {
    if !(gamma_t.is_finite() && gamma_t > 0.0) {
        return Err(Error::InvalidParameter(format!("gammaT must be positive and finite, got {gamma_t}")));
    }
    Ok(())
}

/// The spin-3/2 protocol with jump `S_x (S_z² - 1/4)` and `U = e^{iθS_y} e^{iφS_z}`.
pub fn spin32_protocol(path: &PathSpec, gamma_t: f64) -> Result<Protocol> {
    path.validate()?;
    let (_, sy, sz) = spin_operators(3);
    let mut p = custom_protocol(&[sy, sz], &[path.theta.clone(), path.phi.clone()], spin32_jump(), gamma_t)?;
    p.derivative = DerivativeMode::Analytic;
    p.spec = ProtocolSpec::Spin32 { path: path.clone() };
    Ok(p)
}

/// Product-of-exponentials protocol `U(s) = Π_k exp(i α_k(s) G_k)`.
///
/// The derivative defaults to finite differences; set
/// [`Protocol::derivative`] to [`DerivativeMode::Analytic`] to use the
/// closed-form product rule instead.
pub fn custom_protocol(generators: &[CMatrix], angles: &[AngleFn], l_rot: CMatrix, gamma_t: f64) -> Result<Protocol> {
    check_gamma_t(gamma_t)?;
    let dim = ensure_square(&l_rot)?;
    if generators.len() != angles.len() {
        return Err(Error::InvalidParameter(format!(
            "{} generators but {} angle functions",
            generators.len(),
            angles.len()
        )));
    }
    let mut factors = Vec::with_capacity(generators.len());
    for (g, a) in generators.iter().zip(angles) {
        let n = ensure_square(g)?;
        if n != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: n });
        }
        let defect = hermiticity_defect(g);
        if defect > 1e-10 * g.norm().max(1.0) {
            return Err(Error::NonHermitian { defect });
        }
        a.validate()?;
        let (values, vectors) = hermitian_eigen(g);
        factors.push(Factor { values, vectors, generator: g.clone(), angle: a.clone() });
    }
    let spec = ProtocolSpec::Custom {
        jump: explicit(&l_rot),
        generators: generators.iter().map(explicit).collect(),
        angles: angles.to_vec(),
        derivative: DerivativeMode::FiniteDifference,
    };
    let p = Protocol { dim, l_rot, factors, gamma_t, derivative: DerivativeMode::FiniteDifference, spec };
    p.check_invariants(64)?;
    Ok(p)
}

fn explicit(m: &CMatrix) -> MatrixSpec {
    let n = m.nrows();
    let re = (0..n).map(|i| (0..n).map(|j| m[(i, j)].re).collect()).collect();
    let im = (0..n).map(|i| (0..n).map(|j| m[(i, j)].im).collect()).collect();
    MatrixSpec::Explicit { re, im: Some(im) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{commutator, kernel_basis, DEFAULT_REL_TOL};

    #[test]
    fn spin_half_is_half_pauli() {
        let (sx, sy, sz) = spin_operators(1);
        assert!((sx - CMatrix::from_row_slice(2, 2, &[real(0.0), real(0.5), real(0.5), real(0.0)])).norm() < 1e-15);
        assert!((sy - CMatrix::from_row_slice(2, 2, &[real(0.0), c64(0.0, -0.5), c64(0.0, 0.5), real(0.0)])).norm() < 1e-15);
        assert!((sz - crate::linalg::diag_real(&[0.5, -0.5])).norm() < 1e-15);
    }

    #[test]
    fn spin32_standard_basis() {
        let (_, _, sz) = spin_operators(3);
        assert!((sz - crate::linalg::diag_real(&[1.5, 0.5, -0.5, -1.5])).norm() < 1e-15);
    }

    #[test]
    fn spin_algebra() {
        for two_j in 1..=6 {
            let (sx, sy, sz) = spin_operators(two_j);
            let j = two_j as f64 / 2.0;
            let n = two_j as usize + 1;
            assert!((commutator(&sx, &sy) - &sz * I).norm() < 1e-12);
            assert!((commutator(&sy, &sz) - &sx * I).norm() < 1e-12);
            assert!((commutator(&sz, &sx) - &sy * I).norm() < 1e-12);
            let s2 = &sx * &sx + &sy * &sy + &sz * &sz;
            assert!((s2 - identity(n) * real(j * (j + 1.0))).norm() < 1e-12);
        }
    }

    #[test]
    fn angle_families_are_cyclic_and_differentiable() {
        let fams = [
            AngleFn::Linear { start: 0.3, winding: 2 },
            AngleFn::Smoothstep { start: -1.0, winding: -1 },
            AngleFn::Fourier { start: 0.1, winding: 1, cos: vec![0.2, -0.1], sin: vec![0.4] },
        ];
        for f in &fams {
            f.validate().unwrap();
            for k in 1..10 {
                let s = k as f64 / 10.0;
                let fd = (f.value(s + 1e-6) - f.value(s - 1e-6)) / 2e-6;
                assert!((fd - f.derivative(s)).abs() < 1e-6, "{f:?} at {s}");
            }
        }
    }

    #[test]
    fn simplest_protocol_is_cyclic_up_to_global_phase() {
        let p = spin32_protocol(&PathSpec::simplest(), 100.0).unwrap();
        assert!((p.unitary(0.0) - identity(4)).norm() < 1e-14);
        // Half-integer spin: a 2π rotation is -1.
        assert!((p.unitary(1.0) + identity(4)).norm() < 1e-12);
        assert!((p.lab_jump(1.0) - p.l_rot()).norm() < 1e-12);
        assert!((p.lab_jump(0.0) - p.l_rot()).norm() < 1e-14);
    }

    #[test]
    fn lab_jump_matches_explicit_rotation() {
        let path = PathSpec {
            theta: AngleFn::Fourier { start: 0.4, winding: 1, cos: vec![0.3], sin: vec![-0.2] },
            phi: AngleFn::Smoothstep { start: 0.0, winding: 1 },
        };
        let p = spin32_protocol(&path, 50.0).unwrap();
        let (sx, sy, sz) = spin_operators(3);
        for k in 0..8 {
            let s = k as f64 / 8.0 + 0.03;
            let (th, ph) = (path.theta.value(s), path.phi.value(s));
            let rz = crate::linalg::matrix_exp(&(&sz * c64(0.0, -ph))).unwrap();
            let ry = crate::linalg::matrix_exp(&(&sy * c64(0.0, -th))).unwrap();
            let want = &rz * &ry * &sx * (&sz * &sz - identity(4) * real(0.25)) * ry.adjoint() * rz.adjoint();
            assert!((p.lab_jump(s) - want).norm() < 1e-10);
            // Instantaneous dark vectors are annihilated.
            let u = p.unitary(s);
            for v in kernel_basis(p.l_rot(), DEFAULT_REL_TOL).unwrap() {
                let lab_v = u.adjoint() * v;
                assert!((p.lab_jump(s) * lab_v).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn analytic_and_finite_difference_derivatives_agree() {
        let path = PathSpec {
            theta: AngleFn::Fourier { start: 0.0, winding: 1, cos: vec![0.5], sin: vec![0.1] },
            phi: AngleFn::Linear { start: 0.2, winding: -1 },
        };
        let mut p = spin32_protocol(&path, 10.0).unwrap();
        let a = p.unitary_derivative(0.37).unwrap();
        p.derivative = DerivativeMode::FiniteDifference;
        let f = p.unitary_derivative(0.37).unwrap();
        assert!((a - f).norm() < 1e-7);
    }

    #[test]
    fn hamiltonian_is_hermitian_on_grid() {
        let path = PathSpec {
            theta: AngleFn::Smoothstep { start: 0.1, winding: 1 },
            phi: AngleFn::Fourier { start: 0.0, winding: 2, cos: vec![], sin: vec![0.3] },
        };
        let p = spin32_protocol(&path, 10.0).unwrap();
        for k in 0..64 {
            let h = p.hamiltonian(k as f64 / 63.0).unwrap();
            assert!(hermiticity_defect(&h) < 1e-10);
        }
    }

    #[test]
    fn phi_only_path_keeps_lab_dark_space_fixed() {
        let path = PathSpec { theta: AngleFn::constant(0.0), phi: AngleFn::linear(1) };
        let p = spin32_protocol(&path, 10.0).unwrap();
        for k in 0..16 {
            let lj = p.lab_jump(k as f64 / 16.0);
            let kern = kernel_basis(&lj, DEFAULT_REL_TOL).unwrap();
            assert_eq!(kern.len(), 2);
            for v in kern {
                assert!(v[0].norm() < 1e-10 && v[3].norm() < 1e-10);
            }
        }
    }

    #[test]
    fn custom_reproduces_spin32() {
        let path = PathSpec {
            theta: AngleFn::Fourier { start: 0.0, winding: 1, cos: vec![0.2], sin: vec![] },
            phi: AngleFn::linear(1),
        };
        let p = spin32_protocol(&path, 20.0).unwrap();
        let (_, sy, sz) = spin_operators(3);
        let c = custom_protocol(&[sy, sz], &[path.theta.clone(), path.phi.clone()], spin32_jump(), 20.0).unwrap();
        assert_eq!(c.derivative, DerivativeMode::FiniteDifference);
        for k in 0..16 {
            let s = k as f64 / 15.0;
            assert!((p.unitary(s) - c.unitary(s)).norm() < 1e-12);
            assert!((p.hamiltonian(s).unwrap() - c.hamiltonian(s).unwrap()).norm() < 1e-7);
        }
    }

    #[test]
    fn custom_constant_protocol() {
        let (_, sy, _) = spin_operators(3);
        let p = custom_protocol(&[sy], &[AngleFn::constant(0.0)], spin32_jump(), 10.0).unwrap();
        assert!(p.is_constant());
        assert!(p.hamiltonian(0.3).unwrap().norm() < 1e-9);
    }

    #[test]
    fn non_cyclic_path_is_rejected() {
        // exp(i 2π σ_x / 3 · s) does not close.
        let (sx, _, _) = pauli();
        let r = custom_protocol(&[sx * real(1.0 / 3.0)], &[AngleFn::linear(1)], sigma_minus(), 10.0);
        assert!(matches!(r, Err(Error::NonCyclic(_))));
        let bad = AngleFn::Fourier { start: f64::NAN, winding: 0, cos: vec![], sin: vec![] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = ProtocolSpec::Spin32 {
            path: PathSpec {
                theta: AngleFn::linear(1),
                phi: AngleFn::Fourier { start: 0.0, winding: 0, cos: vec![0.1], sin: vec![] },
            },
        };
        let text = toml::to_string(&spec).unwrap();
        let back: ProtocolSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let p = back.build(30.0).unwrap();
        assert_eq!(p.dim(), 4);
    }
}
