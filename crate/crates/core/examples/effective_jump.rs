//! The effective dark-space jump ℓ_τ = B^† L X_τ B for θ = 2πs, compared with
//! 2πi(1 - e^{-3τ/2}) σ_z, from the memory integral and from the adiabatic
//! pseudoinverse limit.

use darkspace::effective::{EffectiveGenerator, XSource};
use darkspace::linalg::c64;
use darkspace::protocol::{pauli, spin32_protocol, PathSpec};

fn main() -> darkspace::Result<()> {
    let gen = EffectiveGenerator::new(spin32_protocol(&PathSpec::simplest(), 200.0)?)?;
    let (_, _, sz) = pauli();
    println!("{:>6} {:>12} {:>12} {:>12}", "tau", "b_tau", "|integral|", "|adiabatic|");
    for tau in [0.0f64, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
        let b = 2.0 * std::f64::consts::PI * (1.0 - (-1.5 * tau).exp());
        let closed = &sz * c64(0.0, b);
        let integral = gen.effective_jump(tau, XSource::Integral)?;
        let adiabatic = gen.effective_jump(tau, XSource::Adiabatic)?;
        println!("{tau:>6} {b:>12.6} {:>12.3e} {:>12.3e}", (integral - &closed).norm(), (adiabatic - &closed).norm());
    }
    Ok(())
}
