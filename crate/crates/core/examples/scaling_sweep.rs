//! Exact purity loss and effective-equation error over a γT grid, with
//! log-log slopes. Points run in parallel.

use darkspace::analysis::{convergence_sweep, SweepOptions};
use darkspace::lindblad::DensityMatrix;
use darkspace::protocol::{PathSpec, ProtocolSpec};

fn main() -> darkspace::Result<()> {
    let spec = ProtocolSpec::Spin32 { path: PathSpec::simplest() };
    let rho = DensityMatrix::from_bloch([0.0, 0.0, 1.0])?;
    let result = convergence_sweep(&spec, &[100.0, 200.0, 400.0, 800.0, 1600.0], &rho, &SweepOptions::default())?;
    print!("{}", result.to_text());
    Ok(())
}
