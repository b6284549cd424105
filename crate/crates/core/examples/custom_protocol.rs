//! A protocol built from arbitrary generators and a TOML description: a
//! spin-1 system decaying out of |m=0⟩ into a two-dimensional dark space.

use darkspace::analysis::{purity_experiment, SweepOptions};
use darkspace::config::RunConfig;
use darkspace::effective::EffectiveGenerator;

const CONFIG: &str = r#"
experiment = "custom"
gammaT = 150

[protocol]
family = "custom"
jump = { op = "explicit", re = [[0, 0, 0], [1, 0, 0], [0, 0, 0]] }
generators = [{ op = "spin", two_j = 2, axis = "x" }, { op = "spin", two_j = 2, axis = "z" }]
angles = [{ kind = "linear", start = 0.0, winding = 1 }, { kind = "fourier", start = 0.0, winding = 0, sin = [0.4] }]

[initial]
bloch = [0.0, 0.0, 1.0]
"#;

fn main() -> darkspace::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG)?;
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    let gamma_t = cfg.gamma_t.values()[0];
    let gen = EffectiveGenerator::new(cfg.protocol.build(gamma_t)?)?;
    println!("dark dimension {}, slowest rate {:.4}", gen.dark_space().dim(), gen.slowest_rate());
    let run = purity_experiment(&cfg.protocol, gamma_t, &cfg.initial.to_density()?, 6, &SweepOptions::default())?;
    for row in &run.rows {
        println!("tau {:>7.2}  purity {:.8}  td_effective {:.3e}", row.tau, row.purity, row.td_effective);
    }
    println!("loss: exact {:.6e}, leading-order formula {:.6e}", run.purity_loss_exact, run.purity_loss_eq12);
    Ok(())
}
