//! Re-basing the dark space with a slowly varying ω(s): the effective jump
//! transforms covariantly up to O(1/γT), purities and holonomy spectra agree.

use darkspace::analysis::{gauge_covariance_check, GaugeSpec};
use darkspace::lindblad::DensityMatrix;
use darkspace::protocol::{AngleFn, PathSpec, ProtocolSpec};

fn main() -> darkspace::Result<()> {
    let spec = ProtocolSpec::Spin32 {
        path: PathSpec { theta: AngleFn::linear(1), phi: AngleFn::Fourier { start: 0.0, winding: 0, cos: vec![], sin: vec![0.5] } },
    };
    let rho = DensityMatrix::from_bloch([0.6, 0.0, 0.8])?;
    for gauge in [
        GaugeSpec::default_spin32(),
        GaugeSpec { dark: vec![0.2, -0.4, 0.3, 0.1], bright: vec![0.5, 0.5], profile: AngleFn::Fourier { start: 0.0, winding: 0, cos: vec![0.5], sin: vec![] } },
    ] {
        println!("gauge {:?}", gauge.dark);
        print!("{}", gauge_covariance_check(&spec, &gauge, [100.0, 200.0], 32, &rho)?.to_text());
    }
    Ok(())
}
