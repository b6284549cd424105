//! One period of the simplest spin-3/2 loop (θ = 2πs, φ = 0): exact purity
//! loss next to the leading-order prediction 4π²(1 + n_y²)/γT.
//!
//! cargo run --example spin32_purity -- 200

use darkspace::analysis::{purity_experiment, SweepOptions};
use darkspace::lindblad::DensityMatrix;
use darkspace::protocol::{PathSpec, ProtocolSpec};

fn main() -> darkspace::Result<()> {
    let gamma_t: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200.0);
    let spec = ProtocolSpec::Spin32 { path: PathSpec::simplest() };
    for n0 in [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]] {
        let rho = DensityMatrix::from_bloch(n0)?;
        let run = purity_experiment(&spec, gamma_t, &rho, 4, &SweepOptions::default())?;
        let leading = 4.0 * std::f64::consts::PI.powi(2) * (1.0 + n0[1] * n0[1]) / gamma_t;
        println!(
            "n0 = {n0:?}: exact loss {:.6}, closed form {:.6}, leading order {leading:.6}",
            run.purity_loss_exact,
            run.purity_loss_eq21.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
