//! Non-abelian Berry holonomy of the spin-3/2 dark space for a few loops.
//! The great circle θ = 2πs has trivial holonomy; loops enclosing solid
//! angle do not.

use darkspace::effective::EffectiveGenerator;
use darkspace::linalg::{eigenvalues, identity};
use darkspace::protocol::{spin32_protocol, AngleFn, PathSpec};

fn main() -> darkspace::Result<()> {
    let loops = [
        ("great circle", PathSpec::simplest()),
        ("latitude θ = 1", PathSpec { theta: AngleFn::constant(1.0), phi: AngleFn::linear(1) }),
        (
            "wobbling latitude",
            PathSpec {
                theta: AngleFn::Fourier { start: 1.0, winding: 0, cos: vec![], sin: vec![0.3] },
                phi: AngleFn::Smoothstep { start: 0.0, winding: 1 },
            },
        ),
    ];
    let gamma_t = 100.0;
    for (name, path) in loops {
        let gen = EffectiveGenerator::new(spin32_protocol(&path, gamma_t)?)?;
        let v = gen.berry_holonomy(gamma_t)?;
        let phases: Vec<String> = eigenvalues(&v)?.iter().map(|z| format!("{:+.6}", z.arg())).collect();
        println!("{name:>18}: ||V - 1|| = {:.3e}, eigenphases [{}]", (&v - identity(2)).norm(), phases.join(", "));
    }
    Ok(())
}
