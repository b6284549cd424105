#![allow(clippy::excessive_precision)]
//! Globally adaptive Gauss-Kronrod (7/15) quadrature for matrix-valued
//! integrands.

use crate::error::{Error, Result};
use crate::linalg::{real, CMatrix};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-12, rel_tol: 1e-10, max_intervals: 500 }
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: CMatrix,
    error: f64,
}

fn gk15<F>(f: &mut F, a: f64, b: f64) -> Panel
where
    F: FnMut(f64) -> CMatrix,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = &fc * real(WGK[7]);
    let mut gauss = &fc * real(WG[3]);
    for k in 0..7 {
        let dx = half * XGK[k];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        let sum = f1 + f2;
        kronrod += &sum * real(WGK[k]);
        if k % 2 == 1 {
            gauss += &sum * real(WG[k / 2]);
        }
    }
    kronrod *= real(half);
    gauss *= real(half);
    let error = (&kronrod - &gauss).norm();
    Panel { a, b, value: kronrod, error }
}

/// Integrate `f` over `[a, b]`; the error is measured in Frobenius norm.
pub fn integrate<F>(mut f: F, a: f64, b: f64, opts: QuadratureOptions) -> Result<CMatrix>
where
    F: FnMut(f64) -> CMatrix,
{
    let first = gk15(&mut f, a, b);
    if a == b {
        return Ok(first.value * real(0.0));
    }
    let mut panels = vec![first];
    loop {
        let total: CMatrix = panels.iter().skip(1).fold(panels[0].value.clone(), |acc, p| acc + &p.value);
        let err: f64 = panels.iter().map(|p| p.error).sum();
        let tol = opts.abs_tol.max(opts.rel_tol * total.norm());
        if err <= tol {
            return Ok(total);
        }
        if panels.len() >= opts.max_intervals {
            return Err(Error::QuadratureNonConvergence { a, b, error: err });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        panels.push(gk15(&mut f, p.a, mid));
        panels.push(gk15(&mut f, mid, p.b));
    }
}
