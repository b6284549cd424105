//! Effective dark-space evolution against the exact rotating-frame state at
//! checkpoints through one period, including the K-map reconstruction of the
//! full state from the dark one.

use darkspace::analysis::{compare_effective_vs_full, SweepOptions};
use darkspace::effective::EffectiveGenerator;
use darkspace::lindblad::DensityMatrix;
use darkspace::protocol::{spin32_protocol, AngleFn, PathSpec};

fn main() -> darkspace::Result<()> {
    let path = PathSpec { theta: AngleFn::linear(1), phi: AngleFn::Smoothstep { start: 0.0, winding: 1 } };
    let rho = DensityMatrix::from_bloch([0.0, 0.6, 0.8])?;
    for gamma_t in [100.0, 400.0] {
        let gen = EffectiveGenerator::new(spin32_protocol(&path, gamma_t)?)?;
        print!("{}", compare_effective_vs_full(&gen, &rho, 8, &SweepOptions::default())?.to_text());
    }
    Ok(())
}
