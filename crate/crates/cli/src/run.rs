//! Mode runners. Each writes `<mode>.csv` and `manifest.txt` into the
//! output directory; `full` also writes the state dump `states.bin`.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use lrlindblad::denoise::denoise;
use lrlindblad::lowrank::{grow_to_rank, integrate_lowrank_adaptive, AdaptiveConfig};
use lrlindblad::model::excited_population_matrix;
use lrlindblad::reference::{integrate_full, FullOptions};
use lrlindblad::state::{matrix_distance, trace_product_real};
use lrlindblad::trajectory::{simulate_ensemble, simulate_paired_ensemble, EnsembleConfig, LowRankPath, Pairing};
use lrlindblad::{density_from_lowrank, CMatrix64, DensityMatrix64, LindbladModel64, LowRankState64};
use thiserror::Error;

use crate::config::{ConfigErrors, ExperimentConfig, Mode, ModelSpec};
use crate::output::{manifest, read_dump, write_dump, Cell, CsvTable};

pub const STATE_DUMP: &str = "states.bin";
pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration:\n{0}")]
    Config(ConfigErrors),
    #[error("{context}: {source}")]
    Solver { context: String, source: lrlindblad::Error },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, RunError>;
}

impl<T> Context<T> for lrlindblad::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, RunError> {
        self.map_err(|source| RunError::Solver { context: what(), source })
    }
}

impl<T> Context<T> for io::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, RunError> {
        self.map_err(|source| RunError::Io { context: what(), source })
    }
}

pub fn columns(mode: Mode) -> &'static [&'static str] {
    match mode {
        Mode::Full => &["t_normalized", "pe", "purity"],
        Mode::Lowrank => &["t_normalized", "pe", "rank_m", "theta", "min_eig_sigma", "purity", "err_lr"],
        Mode::Mc => &["t_normalized", "pe", "purity", "err_mc"],
        Mode::Cv => &["t_normalized", "pe", "err_mc", "err_cv", "lambda", "purity"],
    }
}

/// Files written by a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub dump: Option<PathBuf>,
    pub manifest: PathBuf,
    pub rows: usize,
}

struct Setup {
    model: LindbladModel64,
    unit: f64,
    t_norm: Vec<f64>,
    t_grid: Vec<f64>,
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Self {
        let unit = cfg.model.time_unit();
        let t_norm = cfg.t_grid_normalized();
        let t_grid = t_norm.iter().map(|t| t * unit).collect();
        Setup { model: cfg.model.build(), unit, t_norm, t_grid }
    }

    fn pe(&self, cfg: &ExperimentConfig, rho: &CMatrix64) -> Result<Option<f64>, RunError> {
        match &cfg.model {
            ModelSpec::JaynesCummings(jc) => {
                excited_population_matrix(rho, jc).map(Some).context(|| "excited population".into())
            }
            ModelSpec::Matrix(_) => Ok(None),
        }
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let setup = Setup::new(cfg);
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    let mut table = CsvTable::new(columns(cfg.mode));
    let mut dump = None;
    match cfg.mode {
        Mode::Full => {
            let states = full_reference(cfg, &setup)?;
            for (t, rho) in setup.t_norm.iter().zip(&states) {
                let m = rho.matrix();
                table.push(vec![Cell::Real(*t), setup.pe(cfg, m)?.into(), Cell::Real(trace_product_real(m, m))]);
            }
            let path = dir.join(STATE_DUMP);
            let records: Vec<(f64, &CMatrix64)> = setup.t_norm.iter().copied().zip(states.iter().map(|s| s.matrix())).collect();
            let file = File::create(&path).context(|| format!("creating {}", path.display()))?;
            write_dump(BufWriter::new(file), &records).context(|| format!("writing {}", path.display()))?;
            dump = Some(path);
        }
        Mode::Lowrank => run_lowrank(cfg, &setup, &mut table)?,
        Mode::Mc => {
            let reference = reference_states(cfg, &setup)?;
            let ens = simulate_ensemble(&setup.model, &cfg.model.initial_state(), &setup.t_grid, &ensemble_config(cfg, &setup, Pairing::Shared))
                .context(|| "Monte-Carlo ensemble".into())?;
            for (j, rho) in ens.rho_mc.iter().enumerate() {
                let err = matrix_distance(rho, reference[j].matrix()).context(|| "error to reference".into())?;
                table.push(vec![
                    Cell::Real(setup.t_norm[j]),
                    setup.pe(cfg, rho)?.into(),
                    Cell::Real(trace_product_real(rho, rho)),
                    Cell::Real(err),
                ]);
            }
        }
        Mode::Cv => {
            let reference = reference_states(cfg, &setup)?;
            let ec = ensemble_config(cfg, &setup, Pairing::Shared);
            let steps = (setup.t_grid.last().copied().unwrap_or(0.0) / ec.dt).round() as usize;
            let psi0 = cfg.model.initial_state();
            let path = LowRankPath::fixed_rank(&setup.model, &psi0, cfg.cv_rank, ec.dt, steps, cfg.new_eig)
                .context(|| format!("rank-{} deterministic path", cfg.cv_rank))?;
            let ens = simulate_paired_ensemble(&setup.model, &psi0, &path, &setup.t_grid, &ec)
                .context(|| "paired ensemble".into())?;
            let cv = denoise(&ens, Some(&reference)).context(|| "control variate".into())?;
            for j in 0..setup.t_grid.len() {
                let rho = &cv.rho_cv[j];
                table.push(vec![
                    Cell::Real(setup.t_norm[j]),
                    setup.pe(cfg, rho)?.into(),
                    Cell::Real(cv.err_mc[j]),
                    Cell::Real(cv.err_cv[j]),
                    Cell::Real(cv.lambda[j]),
                    Cell::Real(trace_product_real(rho, rho)),
                ]);
            }
        }
    }

    let csv = dir.join(format!("{}.csv", cfg.mode));
    let file = File::create(&csv).context(|| format!("creating {}", csv.display()))?;
    table.write(BufWriter::new(file)).context(|| format!("writing {}", csv.display()))?;
    let manifest_path = dir.join(MANIFEST);
    fs::write(&manifest_path, manifest(&cfg.hash(), cfg.master_seed, cfg.mode.name()))
        .context(|| format!("writing {}", manifest_path.display()))?;
    Ok(RunOutput { csv, dump, manifest: manifest_path, rows: table.rows.len() })
}

fn ensemble_config(cfg: &ExperimentConfig, setup: &Setup, pairing: Pairing) -> EnsembleConfig {
    EnsembleConfig { trajectories: cfg.trajectories, dt: cfg.dt_sde * setup.unit, master_seed: cfg.master_seed, pairing }
}

fn full_reference(cfg: &ExperimentConfig, setup: &Setup) -> Result<Vec<DensityMatrix64>, RunError> {
    let rho0 = DensityMatrix64::from_pure(&cfg.model.initial_state());
    let options = FullOptions { rel_tol: cfg.rel_tol, ..FullOptions::default() };
    integrate_full(&setup.model, &rho0, &setup.t_grid, &options).context(|| "full-rank integration".into())
}

/// The dump named by `solver.reference`, or a fresh full-rank run.
fn reference_states(cfg: &ExperimentConfig, setup: &Setup) -> Result<Vec<DensityMatrix64>, RunError> {
    match &cfg.reference {
        Some(path) => load_reference(path, setup),
        None => full_reference(cfg, setup),
    }
}

fn load_reference(path: &Path, setup: &Setup) -> Result<Vec<DensityMatrix64>, RunError> {
    let file = File::open(path).context(|| format!("opening {}", path.display()))?;
    let records = read_dump(io::BufReader::new(file)).context(|| format!("reading {}", path.display()))?;
    let mismatch = |msg: String| RunError::Config(ConfigErrors(vec![format!("`solver.reference` {}: {msg}", path.display())]));
    if records.len() != setup.t_norm.len() {
        return Err(mismatch(format!("{} records for {} output times", records.len(), setup.t_norm.len())));
    }
    let n = setup.model.n();
    records
        .into_iter()
        .zip(&setup.t_norm)
        .map(|((t, m), &expected)| {
            if (t - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(mismatch(format!("record time {t} does not match grid time {expected}")));
            }
            if m.shape() != (n, n) {
                return Err(mismatch(format!("states are {}x{}, model dimension is {n}", m.nrows(), m.ncols())));
            }
            DensityMatrix64::with_positivity_tolerance(m, 1e-8).context(|| format!("reference state at t = {t}"))
        })
        .collect()
}

fn run_lowrank(cfg: &ExperimentConfig, setup: &Setup, table: &mut CsvTable) -> Result<(), RunError> {
    let reference = match &cfg.reference {
        Some(path) => Some(load_reference(path, setup)?),
        None => None,
    };
    let ac = AdaptiveConfig {
        theta_max: cfg.theta_max,
        m_min: cfg.m_min,
        m_max: cfg.m_max,
        new_eig: cfg.new_eig,
        ..AdaptiveConfig::new(cfg.dt_det * setup.unit)
    };
    let start = grow_to_rank(&LowRankState64::pure(&cfg.model.initial_state()), &setup.model, cfg.m0, cfg.new_eig)
        .context(|| format!("initial rank {}", cfg.m0))?;
    let run = integrate_lowrank_adaptive(&setup.model, &start, &setup.t_grid, &ac).context(|| "adaptive low-rank integration".into())?;
    for (j, rec) in run.records.iter().enumerate() {
        let rho = density_from_lowrank(&rec.state);
        let m = rho.matrix();
        let err = match &reference {
            Some(r) => Some(matrix_distance(m, r[j].matrix()).context(|| "error to reference".into())?),
            None => None,
        };
        table.push(vec![
            Cell::Real(setup.t_norm[j]),
            setup.pe(cfg, m)?.into(),
            Cell::Int(rec.rank() as u64),
            Cell::Real(rec.theta),
            Cell::Real(rec.min_eig),
            Cell::Real(trace_product_real(m, m)),
            err.into(),
        ]);
    }
    Ok(())
}
