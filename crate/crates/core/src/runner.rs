//! Experiment execution and artifact writing for the command-line tool.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::acceptance::{self, CriterionResult, Fixture};
use crate::analysis::{
    aligned_table, compare_effective_vs_full, convergence_sweep, gauge_covariance_check, purity_experiment, GaugeSpec,
    SweepOptions, TrajectoryRow,
};
use crate::config::{Experiment, RunConfig};
use crate::effective::EffectiveGenerator;
use crate::error::{Error, Result};
use crate::lindblad::Diagnostics;
use crate::protocol::AngleFn;

/// Version of the CSV/JSON artifact schemas.
pub const SCHEMA_VERSION: u32 = 1;

pub const TRAJECTORY_COLUMNS: &str = "tau,purity,trace,min_eig,nx,ny,nz,td_effective";
pub const SWEEP_COLUMNS: &str = "gammaT,purity_loss_exact,purity_loss_eq12,purity_loss_eq21,trace_distance_final";

/// Loss-slope window for the scaling sweep.
pub const SLOPE_WINDOW: (f64, f64) = (-1.15, -0.85);
pub const DISTANCE_SLOPE_WINDOW: (f64, f64) = (-2.4, -1.6);

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Validation = 1,
    Numerical = 2,
    CheckFailed = 3,
}

impl ExitStatus {
    pub fn of(err: &Error) -> Self {
        if err.is_validation() {
            ExitStatus::Validation
        } else {
            ExitStatus::Numerical
        }
    }
}

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
    pub pass: bool,
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &str) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e))
    }
}

#[derive(Serialize)]
struct SweepRow {
    #[serde(rename = "gammaT")]
    gamma_t: f64,
    purity_loss_exact: f64,
    purity_loss_eq12: f64,
    purity_loss_eq21: Option<f64>,
    trace_distance_final: f64,
}

fn trajectory_gnuplot(stem: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'tau'\nset ylabel 'purity'\n\
         plot '{stem}.csv' using 1:2 with lines, '' using 1:8 axes x1y2 with lines\n"
    )
}

fn sweep_gnuplot(stem: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset logscale xy\nset xlabel 'gammaT'\nset ylabel 'purity loss'\n\
         plot '{stem}.csv' using 1:2 with linespoints, '' using 1:3 with linespoints, '' using 1:4 with linespoints, '' using 1:5 with linespoints\n"
    )
}

fn invariants_ok(d: &Diagnostics) -> bool {
    d.max_trace_error <= 1e-9 && d.max_hermiticity_error <= 1e-10 && d.min_eigenvalue >= -1e-8
}

fn within(v: Option<f64>, (lo, hi): (f64, f64)) -> bool {
    v.is_some_and(|x| (lo..=hi).contains(&x))
}

/// Random dark-block gauge with profile `sin 2πs`, drawn from the config seed.
pub fn seeded_gauge(seed: u64, dark_dim: usize) -> GaugeSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_PI_4;
    GaugeSpec {
        dark: (0..dark_dim * dark_dim).map(|_| rng.random_range(-scale..scale)).collect(),
        bright: vec![],
        profile: AngleFn::Fourier { start: 0.0, winding: 0, cos: vec![], sin: vec![1.0] },
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    fn add(&mut self, name: String, bytes: Vec<u8>) {
        self.files.push((self.dir.join(name), bytes));
    }

    fn add_json(&mut self, name: String, value: &serde_json::Value) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.into()))?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Everything is computed before anything is written.
    fn commit(self) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)?;
        let mut paths = Vec::new();
        for (p, b) in self.files {
            write_atomic(&p, &b)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

fn envelope(cfg: &RunConfig, pass: bool, flags: serde_json::Value, result: serde_json::Value) -> serde_json::Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment.name(),
        "config": cfg,
        "pass": pass,
        "flags": flags,
        "result": result,
    })
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(e.into()))
}

fn trajectory_text(rows: &[TrajectoryRow]) -> String {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{:.3}", r.tau),
                format!("{:.8}", r.purity),
                format!("{:.3e}", r.min_eig),
                format!("{:+.5}", r.nx),
                format!("{:+.5}", r.ny),
                format!("{:+.5}", r.nz),
                format!("{:.3e}", r.td_effective),
            ]
        })
        .collect();
    aligned_table(&["tau", "purity", "min_eig", "nx", "ny", "nz", "td_effective"], &table)
}

/// Validate, run and write the artifacts of one experiment into `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let stem = cfg.stem().to_string();
    let opts = SweepOptions { rtol: cfg.tolerances.rtol, atol: cfg.tolerances.atol };
    let rho0 = cfg.initial.to_density()?;
    let values = cfg.gamma_t.values();
    let mut art = Artifacts::new(out_dir);
    let (summary, pass) = match cfg.experiment {
        Experiment::Spin32Purity | Experiment::Custom => {
            let run = purity_experiment(&cfg.protocol, values[0], &rho0, cfg.checkpoints, &opts)?;
            let inv = invariants_ok(&run.diagnostics);
            let eq21_rel = run.purity_loss_eq21.map(|p| (run.purity_loss_exact - p).abs() / p);
            let matches_closed_form = eq21_rel.map(|r| r <= 0.15);
            let pass = inv && matches_closed_form.unwrap_or(true);
            let flags = json!({ "invariants": inv, "loss_within_15pct_of_eq21": matches_closed_form });
            art.add(format!("{stem}.csv"), csv_bytes(&run.rows, TRAJECTORY_COLUMNS)?);
            art.add_json(format!("{stem}.json"), &envelope(cfg, pass, flags, to_value(&run)?))?;
            if cfg.output.gnuplot {
                art.add(format!("{stem}.gp"), trajectory_gnuplot(&stem).into_bytes());
            }
            let mut text = trajectory_text(&run.rows);
            text.push_str(&format!(
                "purity loss: exact {:.6e}, eq12 {:.6e}, eq21 {}\n",
                run.purity_loss_exact,
                run.purity_loss_eq12,
                run.purity_loss_eq21.map_or("-".into(), |v| format!("{v:.6e}"))
            ));
            (text, pass)
        }
        Experiment::Sweep => {
            let res = convergence_sweep(&cfg.protocol, &values, &rho0, &opts)?;
            if let Some(f) = res.failures.first() {
                return Err(Error::InvariantViolation { tau: f.gamma_t, what: "sweep point failed", value: f64::NAN });
            }
            let rows: Vec<SweepRow> = res
                .points
                .iter()
                .map(|p| SweepRow {
                    gamma_t: p.gamma_t,
                    purity_loss_exact: p.purity_loss_exact,
                    purity_loss_eq12: p.purity_loss_eq12,
                    purity_loss_eq21: p.purity_loss_eq21,
                    trace_distance_final: p.trace_distance_final,
                })
                .collect();
            let inv = res.points.iter().all(|p| invariants_ok(&p.diagnostics));
            let slope_ok = within(res.fitted_slope, SLOPE_WINDOW) && res.fit_r2.is_some_and(|r| r >= 0.99);
            let distance_ok = within(res.distance_fit.map(|f| f.slope), DISTANCE_SLOPE_WINDOW);
            let pass = inv && slope_ok && distance_ok;
            let flags = json!({ "invariants": inv, "loss_slope_in_window": slope_ok, "distance_slope_in_window": distance_ok,
                                "slope_defined": res.fitted_slope.is_some() });
            art.add(format!("{stem}.csv"), csv_bytes(&rows, SWEEP_COLUMNS)?);
            art.add_json(format!("{stem}.json"), &envelope(cfg, pass, flags, to_value(&res)?))?;
            if cfg.output.gnuplot {
                art.add(format!("{stem}.gp"), sweep_gnuplot(&stem).into_bytes());
            }
            (res.to_text(), pass)
        }
        Experiment::GaugeCheck => {
            let k = cfg.protocol.build(values[0]).and_then(EffectiveGenerator::new)?.dark_space().dim();
            let gauge = cfg.gauge.clone().unwrap_or_else(|| seeded_gauge(cfg.seed, k));
            let rep = gauge_covariance_check(&cfg.protocol, &gauge, [values[0], values[1]], cfg.checkpoints, &rho0)?;
            let flags = json!({ "covariance_decreasing": rep.covariance_decreasing, "purity_within_bound": rep.purity_within_bound,
                                "spectra_agree": rep.spectra_agree });
            let result = json!({ "gauge": gauge, "report": rep });
            art.add_json(format!("{stem}.json"), &envelope(cfg, rep.pass, flags, result))?;
            (rep.to_text(), rep.pass)
        }
        Experiment::EffectiveVsFull => {
            let gen = EffectiveGenerator::new(cfg.protocol.build(values[0])?)?;
            let rep = compare_effective_vs_full(&gen, &rho0, cfg.checkpoints, &opts)?;
            let inv = invariants_ok(&rep.exact_diagnostics);
            let flags = json!({ "invariants": inv });
            art.add(format!("{stem}.csv"), csv_bytes(&rep.rows, TRAJECTORY_COLUMNS)?);
            art.add_json(format!("{stem}.json"), &envelope(cfg, inv, flags, to_value(&rep)?))?;
            if cfg.output.gnuplot {
                art.add(format!("{stem}.gp"), trajectory_gnuplot(&stem).into_bytes());
            }
            (rep.to_text(), inv)
        }
    };
    let artifacts = art.commit()?;
    Ok(RunOutcome { artifacts, summary, pass })
}

/// Diagnostic JSON for a numerical failure; returns the path written.
pub fn write_failure(cfg: &RunConfig, out_dir: &Path, err: &Error) -> Result<PathBuf> {
    let mut art = Artifacts::new(out_dir);
    let name = format!("{}.error.json", cfg.stem());
    art.add_json(
        name,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": cfg.experiment.name(),
            "config": cfg,
            "error": err.to_string(),
            "kind": format!("{err:?}"),
        }),
    )?;
    Ok(art.commit()?.remove(0))
}

/// Acceptance battery report.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub schema_version: u32,
    pub fixture: Fixture,
    pub criteria: Vec<CriterionResult>,
    pub pass: bool,
}

pub fn check(fixture: &Fixture, only: &[u8]) -> Result<CheckReport> {
    let criteria = acceptance::run_selected(fixture, only)?;
    let pass = criteria.iter().all(|c| c.pass);
    Ok(CheckReport { schema_version: SCHEMA_VERSION, fixture: fixture.clone(), criteria, pass })
}

impl CheckReport {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .criteria
            .iter()
            .map(|c| vec![c.id.to_string(), c.name.clone(), c.expected.clone(), c.observed.clone(), (if c.pass { "PASS" } else { "FAIL" }).into()])
            .collect();
        let mut out = aligned_table(&["#", "criterion", "expected", "observed", "result"], &rows);
        for c in &self.criteria {
            if let Some(r) = &c.report {
                out.push_str(&format!("[{}] {r}\n", c.id));
            }
        }
        out
    }
}
