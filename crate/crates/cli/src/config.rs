//! Experiment configuration files.
//!
//! A configuration is a TOML document with a top-level `mode` and the
//! sections `[model]`, `[time]`, `[solver]`, `[adaptive]`, `[stochastic]`
//! and `[output]`. Times and steps are in units of the revival time `T_r`
//! (or of `model.time_unit` for explicit matrix models).
//!
//! Parsing never stops at the first problem: every missing key, unknown
//! key, type error and range violation is collected into one list.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use lrlindblad::{CMatrix64, CVector64, GeneralOperator, HermitianOperator, JaynesCummingsConfig, LindbladModel64, PureState64, C64};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    Lowrank,
    Mc,
    Cv,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Lowrank => "lowrank",
            Mode::Mc => "mc",
            Mode::Cv => "cv",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Mode::Full),
            "lowrank" => Ok(Mode::Lowrank),
            "mc" => Ok(Mode::Mc),
            "cv" => Ok(Mode::Cv),
            other => Err(format!("unknown mode `{other}` (expected full, lowrank, mc or cv)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Explicit operators; `initial` is normalized on load.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixModel {
    pub hamiltonian: CMatrix64,
    pub decoherence: CMatrix64,
    pub initial: CVector64,
    /// Time unit used in place of `T_r`.
    pub time_unit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    JaynesCummings(JaynesCummingsConfig),
    Matrix(MatrixModel),
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::JaynesCummings(jc) => jc.dim(),
            ModelSpec::Matrix(m) => m.hamiltonian.nrows(),
        }
    }

    /// `T_r` for the Jaynes–Cummings model, `time_unit` otherwise.
    pub fn time_unit(&self) -> f64 {
        match self {
            ModelSpec::JaynesCummings(jc) => jc.revival_time(),
            ModelSpec::Matrix(m) => m.time_unit,
        }
    }

    pub fn build(&self) -> LindbladModel64 {
        match self {
            ModelSpec::JaynesCummings(jc) => lrlindblad::model::build_jc_damped(jc),
            ModelSpec::Matrix(m) => LindbladModel64::new(
                HermitianOperator::new(m.hamiltonian.clone()).expect("checked on load"),
                GeneralOperator::new(m.decoherence.clone()).expect("checked on load"),
            )
            .expect("checked on load"),
        }
    }

    pub fn initial_state(&self) -> PureState64 {
        match self {
            ModelSpec::JaynesCummings(jc) => lrlindblad::model::initial_state_jc(jc),
            ModelSpec::Matrix(m) => PureState64::normalized(m.initial.clone()).expect("checked on load"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub model: ModelSpec,
    /// Horizon in time units.
    pub t_end: f64,
    /// Output grid points, including `t = 0`.
    pub n_output: usize,
    pub rel_tol: f64,
    /// Low-rank step in time units.
    pub dt_det: f64,
    /// Stochastic step in time units.
    pub dt_sde: f64,
    pub theta_max: f64,
    pub m0: usize,
    pub m_min: usize,
    pub m_max: Option<usize>,
    pub new_eig: f64,
    pub trajectories: usize,
    pub master_seed: u64,
    pub cv_rank: usize,
    /// State dump of a previous full run on the same grid.
    pub reference: Option<PathBuf>,
    pub output_dir: PathBuf,
}

/// Command-line values that replace file values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const TOP_KEYS: &[&str] = &["mode", "model", "time", "solver", "adaptive", "stochastic", "output", "derived"];
const JC_KEYS: &[&str] = &["kind", "omega0", "kappa", "nbar", "nmax"];
const MATRIX_KEYS: &[&str] =
    &["kind", "hamiltonian_re", "hamiltonian_im", "decoherence_re", "decoherence_im", "initial_re", "initial_im", "time_unit"];
const TIME_KEYS: &[&str] = &["t_end", "n_output"];
const SOLVER_KEYS: &[&str] = &["rel_tol", "dt_det", "dt_sde", "reference"];
const ADAPTIVE_KEYS: &[&str] = &["theta_max", "m0", "m_min", "m_max", "new_eig"];
const STOCHASTIC_KEYS: &[&str] = &["trajectories", "master_seed", "cv_rank"];
const OUTPUT_KEYS: &[&str] = &["dir"];
const DERIVED_KEYS: &[&str] = &["revival_time", "dim"];

struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn section<'a>(&mut self, root: &'a Table, name: &str, known: &[&str]) -> Option<&'a Table> {
        match root.get(name) {
            None => None,
            Some(Value::Table(t)) => {
                self.unknown(t, name, known);
                Some(t)
            }
            Some(v) => {
                self.errors.push(format!("`{name}`: expected a section, found {}", v.type_str()));
                None
            }
        }
    }

    fn unknown(&mut self, t: &Table, prefix: &str, known: &[&str]) {
        for k in t.keys() {
            if !known.contains(&k.as_str()) {
                self.errors.push(format!("unknown key `{}`", join(prefix, k)));
            }
        }
    }

    fn missing(&mut self, path: &str) {
        self.errors.push(format!("missing required key `{path}`"));
    }

    fn value<'a>(&mut self, t: Option<&'a Table>, sec: &str, key: &str, required: bool) -> Option<&'a Value> {
        let v = t.and_then(|t| t.get(key));
        if v.is_none() && required {
            self.missing(&join(sec, key));
        }
        v
    }

    fn float(&mut self, t: Option<&Table>, sec: &str, key: &str, required: bool) -> Option<f64> {
        match self.value(t, sec, key, required)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            v => {
                self.type_error(sec, key, "a number", v);
                None
            }
        }
    }

    fn int(&mut self, t: Option<&Table>, sec: &str, key: &str, required: bool) -> Option<i64> {
        match self.value(t, sec, key, required)? {
            Value::Integer(i) => Some(*i),
            v => {
                self.type_error(sec, key, "an integer", v);
                None
            }
        }
    }

    fn string(&mut self, t: Option<&Table>, sec: &str, key: &str, required: bool) -> Option<String> {
        match self.value(t, sec, key, required)? {
            Value::String(s) => Some(s.clone()),
            v => {
                self.type_error(sec, key, "a string", v);
                None
            }
        }
    }

    fn type_error(&mut self, sec: &str, key: &str, expected: &str, found: &Value) {
        self.errors.push(format!("`{}`: expected {expected}, found {}", join(sec, key), found.type_str()));
    }

    fn range(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.errors.push(format!("range violation: {}", msg()));
        }
    }

    /// Nonnegative integer with a range message on negative input.
    fn count(&mut self, t: Option<&Table>, sec: &str, key: &str, required: bool, min: i64) -> Option<usize> {
        let v = self.int(t, sec, key, required)?;
        if v < min {
            self.errors.push(format!("range violation: `{}` must be >= {min}, got {v}", join(sec, key)));
            return None;
        }
        Some(v as usize)
    }

    fn real_grid(&mut self, t: Option<&Table>, sec: &str, key: &str) -> Option<Vec<Vec<f64>>> {
        let v = t?.get(key)?;
        let path = join(sec, key);
        let rows = match v {
            Value::Array(rows) => rows,
            v => {
                self.errors.push(format!("`{path}`: expected an array, found {}", v.type_str()));
                return None;
            }
        };
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            let entries: Option<Vec<f64>> = match row {
                Value::Array(xs) => xs.iter().map(number).collect(),
                x => number(x).map(|x| vec![x]),
            };
            match entries {
                Some(r) => out.push(r),
                None => {
                    self.errors.push(format!("`{path}`: entries must be numbers"));
                    return None;
                }
            }
        }
        Some(out)
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn join(sec: &str, key: &str) -> String {
    if sec.is_empty() {
        key.to_string()
    } else {
        format!("{sec}.{key}")
    }
}

fn finite_positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn complex_matrix(re: &[Vec<f64>], im: Option<&[Vec<f64>]>, path: &str, errors: &mut Vec<String>) -> Option<CMatrix64> {
    let n = re.len();
    if n == 0 || re.iter().any(|r| r.len() != n) {
        errors.push(format!("`{path}_re` must be a nonempty square array"));
        return None;
    }
    if let Some(im) = im {
        if im.len() != n || im.iter().any(|r| r.len() != n) {
            errors.push(format!("`{path}_im` must have the shape of `{path}_re`"));
            return None;
        }
    }
    Some(CMatrix64::from_fn(n, n, |i, j| C64::new(re[i][j], im.map_or(0.0, |m| m[i][j]))))
}

fn parse_matrix_model(r: &mut Reader, t: &Table) -> Option<MatrixModel> {
    let grid = |r: &mut Reader, key: &str, required: bool| {
        let g = r.real_grid(Some(t), "model", key);
        if g.is_none() && required && !t.contains_key(key) {
            r.missing(&join("model", key));
        }
        g
    };
    let h_re = grid(r, "hamiltonian_re", true);
    let h_im = grid(r, "hamiltonian_im", false);
    let l_re = grid(r, "decoherence_re", true);
    let l_im = grid(r, "decoherence_im", false);
    let v_re = grid(r, "initial_re", true);
    let v_im = grid(r, "initial_im", false);
    let time_unit = r.float(Some(t), "model", "time_unit", false).unwrap_or(1.0);
    r.range(finite_positive(time_unit), || format!("`model.time_unit` must be positive, got {time_unit}"));

    let h = complex_matrix(h_re.as_deref()?, h_im.as_deref(), "model.hamiltonian", &mut r.errors)?;
    let l = complex_matrix(l_re.as_deref()?, l_im.as_deref(), "model.decoherence", &mut r.errors)?;
    let flat = |g: &[Vec<f64>]| g.iter().flatten().copied().collect::<Vec<f64>>();
    let v_re = flat(v_re.as_deref()?);
    let v_im = v_im.as_deref().map(flat).unwrap_or_else(|| vec![0.0; v_re.len()]);
    let n = h.nrows();
    if l.nrows() != n || v_re.len() != n || v_im.len() != n {
        r.errors.push(format!("model operators and initial state must share dimension {n}"));
        return None;
    }
    if let Err(e) = HermitianOperator::new(h.clone()) {
        r.errors.push(format!("`model.hamiltonian`: {e}"));
    }
    let v = CVector64::from_fn(n, |i, _| C64::new(v_re[i], v_im[i]));
    if let Err(e) = PureState64::normalized(v.clone()) {
        r.errors.push(format!("`model.initial`: {e}"));
    }
    Some(MatrixModel { hamiltonian: h, decoherence: l, initial: v, time_unit })
}

impl ExperimentConfig {
    /// Parses `text`, applies `overrides`, fills defaults and checks ranges.
    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, ConfigErrors> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![format!("syntax: {}", e.message())]))?;
        let mut r = Reader { errors: Vec::new() };
        r.unknown(&root, "", TOP_KEYS);

        let mode = match overrides.mode {
            Some(m) => Some(m),
            None => r.string(Some(&root), "", "mode", true).and_then(|s| match s.parse() {
                Ok(m) => Some(m),
                Err(e) => {
                    r.errors.push(format!("`mode`: {e}"));
                    None
                }
            }),
        };

        let model_t = match root.get("model") {
            Some(Value::Table(t)) => Some(t),
            Some(v) => {
                r.errors.push(format!("`model`: expected a section, found {}", v.type_str()));
                None
            }
            None => None,
        };
        let model = match r.string(model_t, "model", "kind", true).as_deref() {
            Some("jaynes_cummings") => {
                let t = model_t.expect("kind present");
                r.unknown(t, "model", JC_KEYS);
                let omega0 = r.float(model_t, "model", "omega0", true);
                let kappa = r.float(model_t, "model", "kappa", true);
                let nbar = r.float(model_t, "model", "nbar", true);
                let nmax = r.count(model_t, "model", "nmax", true, 1);
                match (omega0, kappa, nbar, nmax) {
                    (Some(omega0), Some(kappa), Some(nbar), Some(nmax)) => {
                        let jc = JaynesCummingsConfig { omega0, kappa, nbar, nmax };
                        match jc.validate() {
                            Ok(_) => Some(ModelSpec::JaynesCummings(jc)),
                            Err(e) => {
                                r.errors.push(format!("range violation in `model`: {e}"));
                                None
                            }
                        }
                    }
                    _ => None,
                }
            }
            Some("matrix") => {
                let t = model_t.expect("kind present");
                r.unknown(t, "model", MATRIX_KEYS);
                parse_matrix_model(&mut r, t).map(ModelSpec::Matrix)
            }
            Some(other) => {
                r.errors.push(format!("`model.kind`: unknown model `{other}` (expected jaynes_cummings or matrix)"));
                None
            }
            None => None,
        };

        let time = r.section(&root, "time", TIME_KEYS);
        let t_end = r.float(time, "time", "t_end", true);
        let n_output = r.count(time, "time", "n_output", false, 2).unwrap_or(101);

        let solver = r.section(&root, "solver", SOLVER_KEYS);
        let rel_tol = r.float(solver, "solver", "rel_tol", false).unwrap_or(1e-8);
        let dt_det = r.float(solver, "solver", "dt_det", false).unwrap_or(1.0 / 2000.0);
        let dt_sde = r.float(solver, "solver", "dt_sde", false).unwrap_or(1.0 / 5000.0);
        let reference = r.string(solver, "solver", "reference", false).map(PathBuf::from);

        let adaptive = r.section(&root, "adaptive", ADAPTIVE_KEYS);
        let theta_max = r.float(adaptive, "adaptive", "theta_max", false).unwrap_or(1e-3);
        let m0 = r.count(adaptive, "adaptive", "m0", false, 1).unwrap_or(1);
        let m_min = r.count(adaptive, "adaptive", "m_min", false, 1).unwrap_or(1);
        let m_max = r.count(adaptive, "adaptive", "m_max", false, 1);
        let new_eig = r.float(adaptive, "adaptive", "new_eig", false).unwrap_or(1e-10);

        let needs_ensemble = matches!(mode, Some(Mode::Mc | Mode::Cv));
        let stochastic = r.section(&root, "stochastic", STOCHASTIC_KEYS);
        let trajectories = r.count(stochastic, "stochastic", "trajectories", needs_ensemble, 1).unwrap_or(1);
        let file_seed = r.count(stochastic, "stochastic", "master_seed", false, 0).map(|s| s as u64);
        let master_seed = overrides.seed.or(file_seed).unwrap_or(0);
        let cv_rank = r.count(stochastic, "stochastic", "cv_rank", mode == Some(Mode::Cv), 1).unwrap_or(1);

        let output = r.section(&root, "output", OUTPUT_KEYS);
        let file_dir = r.string(output, "output", "dir", false).map(PathBuf::from);
        let output_dir = overrides.out.clone().or(file_dir).unwrap_or_else(|| PathBuf::from("out"));

        r.section(&root, "derived", DERIVED_KEYS);

        if let Some(t_end) = t_end {
            r.range(finite_positive(t_end), || format!("`time.t_end` must be positive, got {t_end}"));
        }
        r.range(rel_tol > 0.0 && rel_tol <= 1e-4, || format!("`solver.rel_tol` must lie in (0, 1e-4], got {rel_tol}"));
        r.range(finite_positive(dt_det), || format!("`solver.dt_det` must be positive, got {dt_det}"));
        r.range(finite_positive(dt_sde), || format!("`solver.dt_sde` must be positive, got {dt_sde}"));
        r.range(finite_positive(theta_max), || format!("`adaptive.theta_max` must be positive, got {theta_max}"));
        r.range(new_eig > 0.0 && new_eig < 1.0, || format!("`adaptive.new_eig` must lie in (0, 1), got {new_eig}"));
        if let Some(model) = &model {
            let n = model.dim();
            let hi = m_max.unwrap_or(n);
            r.range(m_min <= m0 && m0 <= hi && hi <= n, || {
                format!("rank bounds must satisfy m_min <= m0 <= m_max <= {n}, got {m_min} <= {m0} <= {hi}")
            });
            r.range(cv_rank <= n, || format!("`stochastic.cv_rank` must not exceed {n}, got {cv_rank}"));
        }
        if let (true, Some(t_end)) = (needs_ensemble, t_end) {
            let ratio = t_end / (n_output - 1) as f64 / dt_sde;
            r.range(ratio >= 0.5 && (ratio - ratio.round()).abs() <= 1e-6 * ratio.round(), || {
                format!("output spacing t_end/(n_output-1) must be a multiple of `solver.dt_sde`, got ratio {ratio}")
            });
        }

        if !r.errors.is_empty() {
            return Err(ConfigErrors(r.errors));
        }
        Ok(ExperimentConfig {
            mode: mode.expect("checked"),
            model: model.expect("checked"),
            t_end: t_end.expect("checked"),
            n_output,
            rel_tol,
            dt_det,
            dt_sde,
            theta_max,
            m0,
            m_min,
            m_max,
            new_eig,
            trajectories,
            master_seed,
            cv_rank,
            reference,
            output_dir,
        })
    }

    /// Output times in time units.
    pub fn t_grid_normalized(&self) -> Vec<f64> {
        let k = self.n_output - 1;
        (0..=k).map(|i| self.t_end * i as f64 / k as f64).collect()
    }

    /// Fully populated configuration, with derived quantities echoed in a
    /// `[derived]` section that the parser accepts and ignores.
    pub fn normalized(&self) -> String {
        let mut s = self.render(None);
        let _ = write!(s, "\n[derived]\nrevival_time = {:?}\ndim = {}\n", self.model.time_unit(), self.model.dim());
        s
    }

    /// Canonical text of the fields `mode` consumes.
    pub fn canonical(&self) -> String {
        self.render(Some(self.mode))
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn render(&self, only: Option<Mode>) -> String {
        let uses = |modes: &[Mode]| only.is_none_or(|m| modes.contains(&m));
        let mut s = String::new();
        let _ = writeln!(s, "mode = \"{}\"\n\n[model]", self.mode);
        match &self.model {
            ModelSpec::JaynesCummings(jc) => {
                let _ = writeln!(
                    s,
                    "kind = \"jaynes_cummings\"\nomega0 = {:?}\nkappa = {:?}\nnbar = {:?}\nnmax = {}",
                    jc.omega0, jc.kappa, jc.nbar, jc.nmax
                );
            }
            ModelSpec::Matrix(m) => {
                let _ = writeln!(s, "kind = \"matrix\"");
                let grid = |f: &dyn Fn(usize, usize) -> f64, n: usize, cols: usize| {
                    let rows: Vec<String> = (0..n)
                        .map(|i| format!("[{}]", (0..cols).map(|j| format!("{:?}", f(i, j))).collect::<Vec<_>>().join(", ")))
                        .collect();
                    format!("[{}]", rows.join(", "))
                };
                let n = m.hamiltonian.nrows();
                let _ = writeln!(s, "hamiltonian_re = {}", grid(&|i, j| m.hamiltonian[(i, j)].re, n, n));
                let _ = writeln!(s, "hamiltonian_im = {}", grid(&|i, j| m.hamiltonian[(i, j)].im, n, n));
                let _ = writeln!(s, "decoherence_re = {}", grid(&|i, j| m.decoherence[(i, j)].re, n, n));
                let _ = writeln!(s, "decoherence_im = {}", grid(&|i, j| m.decoherence[(i, j)].im, n, n));
                let _ = writeln!(s, "initial_re = {}", grid(&|i, _| m.initial[i].re, n, 1));
                let _ = writeln!(s, "initial_im = {}", grid(&|i, _| m.initial[i].im, n, 1));
                let _ = writeln!(s, "time_unit = {:?}", m.time_unit);
            }
        }
        let _ = writeln!(s, "\n[time]\nt_end = {:?}\nn_output = {}", self.t_end, self.n_output);

        let _ = writeln!(s, "\n[solver]");
        if uses(&[Mode::Full, Mode::Mc, Mode::Cv]) {
            let _ = writeln!(s, "rel_tol = {:?}", self.rel_tol);
        }
        if uses(&[Mode::Lowrank]) {
            let _ = writeln!(s, "dt_det = {:?}", self.dt_det);
        }
        if uses(&[Mode::Mc, Mode::Cv]) {
            let _ = writeln!(s, "dt_sde = {:?}", self.dt_sde);
        }
        if let (true, Some(r)) = (uses(&[Mode::Lowrank, Mode::Mc, Mode::Cv]), &self.reference) {
            let _ = writeln!(s, "reference = {:?}", r.display().to_string());
        }

        if uses(&[Mode::Lowrank, Mode::Cv]) {
            let _ = writeln!(s, "\n[adaptive]");
            if uses(&[Mode::Lowrank]) {
                let _ = writeln!(s, "theta_max = {:?}\nm0 = {}\nm_min = {}", self.theta_max, self.m0, self.m_min);
                if let Some(m) = self.m_max {
                    let _ = writeln!(s, "m_max = {m}");
                }
            }
            let _ = writeln!(s, "new_eig = {:?}", self.new_eig);
        }

        if uses(&[Mode::Mc, Mode::Cv]) {
            let _ = writeln!(s, "\n[stochastic]\ntrajectories = {}\nmaster_seed = {}", self.trajectories, self.master_seed);
            if uses(&[Mode::Cv]) {
                let _ = writeln!(s, "cv_rank = {}", self.cv_rank);
            }
        }

        if only.is_none() {
            let _ = writeln!(s, "\n[output]\ndir = {:?}", self.output_dir.display().to_string());
        }
        s
    }
}
