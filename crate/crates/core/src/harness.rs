//! Experiment configuration, dispatch and CSV output.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::distiller::{self, ProtocolOptions, ScheduleSpec};
use crate::engine::{self, EngineCircuit, EngineConfig};
use crate::error::Error;
use crate::filters;
use crate::sensing::{self, Classification, InputKind, ProbeLayout};
use crate::spin_cat::{self, BathSpectrum};
use crate::thermo;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum HarnessError {
    Config {
        line: Option<usize>,
        message: String,
    },
    Numerical {
        context: String,
        source: Error,
    },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    fn config(line: Option<usize>, message: impl Into<String>) -> Self {
        Self::Config {
            line,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Numerical { .. } => 3,
            Self::Io { .. } => 4,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config {
                line: Some(l),
                message,
            } => write!(f, "config error (line {l}): {message}"),
            Self::Config {
                line: None,
                message,
            } => write!(f, "config error: {message}"),
            Self::Numerical { context, source } => write!(f, "{context}: {source}"),
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for HarnessError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Numerical { source, .. } => Some(source),
            Self::Io { source, .. } => Some(source),
            Self::Config { .. } => None,
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

/// Attach experiment context. Out-of-domain arguments are configuration
/// errors; everything else is numerical.
fn numerical(experiment: Experiment) -> impl Fn(Error) -> HarnessError {
    move |e| match e {
        Error::InvalidArgument(m) => HarnessError::config(None, format!("{experiment}: {m}")),
        source => HarnessError::Numerical {
            context: experiment.to_string(),
            source,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Engine,
    PhaseSensor,
    NoiseSensor,
    Photocount,
    Homodyne,
    Distiller,
    SpinCat,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Self::Engine,
        Self::PhaseSensor,
        Self::NoiseSensor,
        Self::Photocount,
        Self::Homodyne,
        Self::Distiller,
        Self::SpinCat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Engine => "engine",
            Self::PhaseSensor => "phase-sensor",
            Self::NoiseSensor => "noise-sensor",
            Self::Photocount => "photocount",
            Self::Homodyne => "homodyne",
            Self::Distiller => "distiller",
            Self::SpinCat => "spin-cat",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> HarnessResult<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| HarnessError::config(None, format!("unknown experiment '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Key-value pairs of one section, with tracking of which keys were read.
#[derive(Debug, Default)]
pub struct Params {
    section: String,
    entries: BTreeMap<String, Entry>,
    used: RefCell<Vec<String>>,
}

impl Params {
    fn raw(&self, key: &str) -> Option<&Entry> {
        self.used.borrow_mut().push(key.to_string());
        self.entries.get(key)
    }

    fn parse<T: FromStr>(&self, key: &str, e: &Entry, what: &str) -> HarnessResult<T> {
        e.value.parse().map_err(|_| {
            HarnessError::config(
                Some(e.line),
                format!(
                    "[{}] key '{key}': expected {what}, got '{}'",
                    self.section, e.value
                ),
            )
        })
    }

    fn typed<T: FromStr>(&self, key: &str, what: &str) -> HarnessResult<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => self.parse(key, e, what).map(Some),
        }
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> HarnessResult<T> {
        v.ok_or_else(|| {
            HarnessError::config(
                None,
                format!("[{}] missing required key '{key}'", self.section),
            )
        })
    }

    pub fn f64(&self, key: &str) -> HarnessResult<f64> {
        let v = self.typed(key, "a number")?;
        self.required(key, v)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> HarnessResult<f64> {
        Ok(self.typed(key, "a number")?.unwrap_or(default))
    }

    pub fn opt_f64(&self, key: &str) -> HarnessResult<Option<f64>> {
        self.typed(key, "a number")
    }

    pub fn usize_or(&self, key: &str, default: usize) -> HarnessResult<usize> {
        Ok(self.typed(key, "a nonnegative integer")?.unwrap_or(default))
    }

    pub fn u32_or(&self, key: &str, default: u32) -> HarnessResult<u32> {
        Ok(self.typed(key, "a nonnegative integer")?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> HarnessResult<bool> {
        Ok(self.typed(key, "true or false")?.unwrap_or(default))
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.raw(key)
            .map_or_else(|| default.to_string(), |e| e.value.clone())
    }

    fn list<T: FromStr>(&self, key: &str, what: &str) -> HarnessResult<Option<Vec<T>>> {
        let Some(e) = self.raw(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|item| {
                let item = item.trim();
                item.parse().map_err(|_| {
                    HarnessError::config(
                        Some(e.line),
                        format!(
                            "[{}] key '{key}': expected a list of {what}, got '{item}'",
                            self.section
                        ),
                    )
                })
            })
            .collect::<HarnessResult<Vec<T>>>()
            .map(Some)
    }

    pub fn f64_list(&self, key: &str) -> HarnessResult<Vec<f64>> {
        let v = self.list(key, "numbers")?;
        self.required(key, v)
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> HarnessResult<Vec<f64>> {
        Ok(self
            .list(key, "numbers")?
            .unwrap_or_else(|| default.to_vec()))
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> HarnessResult<Vec<usize>> {
        Ok(self
            .list(key, "integers")?
            .unwrap_or_else(|| default.to_vec()))
    }

    pub fn str_list_or(&self, key: &str, default: &[&str]) -> HarnessResult<Vec<String>> {
        Ok(self
            .list::<String>(key, "names")?
            .unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect()))
    }

    /// Error on the first key that was never read.
    pub fn finish(&self) -> HarnessResult<()> {
        let used = self.used.borrow();
        let mut unknown: Vec<(&String, &Entry)> = self
            .entries
            .iter()
            .filter(|(k, _)| !used.contains(k))
            .collect();
        unknown.sort_by_key(|(_, e)| e.line);
        match unknown.first() {
            None => Ok(()),
            Some((k, e)) => Err(HarnessError::config(
                Some(e.line),
                format!("unknown key '{k}' in [{}]", self.section),
            )),
        }
    }
}

#[derive(Debug)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub params: Params,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    /// SHA-256 of the canonical key-value pairs.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn engine_config(&self) -> HarnessResult<Vec<EngineConfig>> {
        let p = &self.params;
        let nbars = p.f64_list("nbar")?;
        let t2 = p.f64("t2")?;
        let chis = p.f64_list("chi")?;
        let samples = p.usize_or("samples", 100_000)?;
        let mut v = Vec::new();
        for &nbar_hot in &nbars {
            for &chi in &chis {
                v.push(EngineConfig {
                    nbar_hot,
                    t2,
                    chi,
                    samples,
                    seed: self.seed,
                });
            }
        }
        Ok(v)
    }
}

/// Parse sectioned `key = value` text. One experiment section is required;
/// an optional `[run]` section may set `seed`, `workers` and `out`.
pub fn parse_config(text: &str) -> HarnessResult<ExperimentConfig> {
    let mut sections: BTreeMap<String, (usize, BTreeMap<String, Entry>)> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| {
                    HarnessError::config(Some(line), format!("malformed section header '{s}'"))
                })?
                .trim()
                .to_string();
            if sections.contains_key(&name) {
                return Err(HarnessError::config(
                    Some(line),
                    format!("duplicate section [{name}]"),
                ));
            }
            sections.insert(name.clone(), (line, BTreeMap::new()));
            current = Some(name);
            continue;
        }
        let (k, v) = s.split_once('=').ok_or_else(|| {
            HarnessError::config(Some(line), format!("expected 'key = value', got '{s}'"))
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(HarnessError::config(Some(line), "empty key"));
        }
        let name = current.as_ref().ok_or_else(|| {
            HarnessError::config(Some(line), format!("key '{k}' outside any section"))
        })?;
        let map = &mut sections.get_mut(name).expect("section exists").1;
        if map.contains_key(&k) {
            return Err(HarnessError::config(
                Some(line),
                format!("duplicate key '{k}'"),
            ));
        }
        map.insert(k, Entry { value: v, line });
    }

    let mut hasher = Sha256::new();
    for (name, (_, map)) in &sections {
        for (k, e) in map {
            hasher.update(format!("{name}.{k}={}\n", e.value).as_bytes());
        }
    }
    let hash = hasher.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });

    let run = sections.remove("run");
    let mut experiments = sections.into_iter();
    let (name, (line, entries)) = experiments
        .next()
        .ok_or_else(|| HarnessError::config(None, "no experiment section"))?;
    if let Some((other, (l, _))) = experiments.next() {
        return Err(HarnessError::config(
            Some(l),
            format!("more than one experiment section ([{name}] and [{other}])"),
        ));
    }
    let experiment = name
        .parse::<Experiment>()
        .map_err(|_| HarnessError::config(Some(line), format!("unknown experiment '{name}'")))?;

    let (mut seed, mut workers, mut out) = (0u64, 1usize, None);
    if let Some((_, map)) = run {
        let p = Params {
            section: "run".into(),
            entries: map,
            used: RefCell::default(),
        };
        seed = p.typed("seed", "an unsigned 64-bit integer")?.unwrap_or(0);
        workers = p.usize_or("workers", 1)?;
        out = p.typed::<String>("out", "a path")?.map(PathBuf::from);
        p.finish()?;
    }
    Ok(ExperimentConfig {
        experiment,
        params: Params {
            section: name,
            entries,
            used: RefCell::default(),
        },
        seed,
        workers,
        out,
        hash,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Self::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Self::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Self::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Self::Text(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Self::Empty, Self::Float)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // Debug formatting is the shortest string that parses back exactly
            Self::Float(x) => write!(f, "{x:?}"),
            Self::Int(i) => write!(f, "{i}"),
            Self::Text(s) => f.write_str(s),
            Self::Bool(b) => write!(f, "{b}"),
            Self::Empty => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub metadata: Vec<(String, String)>,
}

impl ResultTable {
    /// Columns given as `(name, unit)`.
    pub fn new(columns: &[(&str, &str)]) -> Self {
        Self {
            columns: columns
                .iter()
                .map(|(n, u)| Column {
                    name: n.to_string(),
                    unit: u.to_string(),
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row does not match the table schema"
        );
        self.rows.push(row);
    }

    pub fn meta(&mut self, key: &str, value: impl fmt::Display) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    pub fn meta_f64(&mut self, key: &str, value: f64) {
        self.meta(key, Cell::Float(value));
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn render_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k} = {v}");
        }
        let units: Vec<&str> = self.columns.iter().map(|c| c.unit.as_str()).collect();
        let _ = writeln!(s, "# units = {}", units.join(","));
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        let _ = writeln!(s, "{}", names.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

pub fn emit_csv(table: &ResultTable, path: &Path) -> HarnessResult<()> {
    std::fs::write(path, table.render_csv()).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvDocument {
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Parse a CSV produced by [`ResultTable::render_csv`].
pub fn read_csv(text: &str) -> CsvDocument {
    let mut doc = CsvDocument::default();
    for line in text.lines() {
        if let Some(m) = line.strip_prefix("# ") {
            if let Some((k, v)) = m.split_once(" = ") {
                doc.metadata.push((k.to_string(), v.to_string()));
            }
        } else if doc.header.is_empty() {
            doc.header = line.split(',').map(str::to_string).collect();
        } else {
            doc.rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    doc
}

/// Parse the configuration, apply overrides and run.
pub fn run_experiment(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    let mut table = match cfg.experiment {
        Experiment::Engine => run_engine(cfg),
        Experiment::PhaseSensor => run_phase_sensor(cfg),
        Experiment::NoiseSensor => run_noise_sensor(cfg),
        Experiment::Photocount => run_photocount(cfg),
        Experiment::Homodyne => run_homodyne(cfg),
        Experiment::Distiller => run_distiller(cfg),
        Experiment::SpinCat => run_spin_cat(cfg),
    }?;
    let mut head = vec![
        ("tool".to_string(), format!("nlqt {TOOL_VERSION}")),
        ("experiment".to_string(), cfg.experiment.to_string()),
        ("config_sha256".to_string(), cfg.hash.clone()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("workers".to_string(), cfg.workers.to_string()),
    ];
    head.append(&mut table.metadata);
    table.metadata = head;
    Ok(table)
}

fn run_engine(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    let num = numerical(Experiment::Engine);
    let p = &cfg.params;
    let mode = p.str_or("mode", "semiclassical");
    match mode.as_str() {
        "semiclassical" => {
            let runs = cfg.engine_config()?;
            p.finish()?;
            let mut t = ResultTable::new(&[
                ("nbar", "photons"),
                ("t2", ""),
                ("chi", "rad"),
                ("x", ""),
                ("steering", ""),
                ("n1_out", "photons"),
                ("n4_out", "photons"),
                ("energy_sum", "photons"),
                ("mc_steering", ""),
                ("mc_std_error", ""),
                ("discrepancy", ""),
            ]);
            for run in &runs {
                let r = engine::thermal_averaged_output(run, cfg.workers).map_err(&num)?;
                t.push(vec![
                    run.nbar_hot.into(),
                    run.t2.into(),
                    run.chi.into(),
                    (run.t2 * run.chi * run.nbar_hot).into(),
                    r.steering.into(),
                    r.n1_out.into(),
                    r.n4_out.into(),
                    (r.n1_out + r.n4_out).into(),
                    r.mc_steering.mean.into(),
                    r.mc_steering.std_error.into(),
                    r.discrepancy.into(),
                ]);
            }
            t.meta("samples", runs.first().map_or(0, |r| r.samples));
            t.meta("truncation", "none (phase-space sampling)");
            Ok(t)
        }
        "quantum" => {
            let nbar = p.f64("nbar")?;
            let t2 = p.f64("t2")?;
            let chi = p.f64("chi")?;
            let cutoff = p.usize_or("cutoff", 6)?;
            let tolerance = p.f64_or("tolerance", 0.05)?;
            let circuit = match p.str_or("circuit", "reference").as_str() {
                "reference" => EngineCircuit::Reference,
                "steering" => EngineCircuit::Steering,
                other => {
                    return Err(HarnessError::config(
                        None,
                        format!("[engine] circuit must be reference or steering, got '{other}'"),
                    ))
                }
            };
            p.finish()?;
            let run = EngineConfig {
                nbar_hot: nbar,
                t2,
                chi,
                samples: 1,
                seed: cfg.seed,
            };
            let r = engine::full_quantum_engine(&run, cutoff, tolerance, &circuit).map_err(&num)?;
            let mut t = ResultTable::new(&[
                ("mode", ""),
                ("mean_before", "photons"),
                ("mean_after", "photons"),
                ("entropy_before", "nats"),
                ("entropy_after", "nats"),
            ]);
            for i in 0..4 {
                t.push(vec![
                    (i + 1).into(),
                    r.means_before[i].into(),
                    r.means_after[i].into(),
                    r.entropies_before[i].into(),
                    r.entropies_after[i].into(),
                ]);
            }
            t.meta("cutoff", cutoff);
            t.meta_f64("truncation_tolerance", tolerance);
            t.meta_f64("truncation_weight", r.truncation_weight);
            t.meta_f64("unitarity_deviation", r.propagation.unitarity_deviation);
            t.meta_f64("boundary_population", r.propagation.boundary_population);
            t.meta_f64("joint_entropy_before", r.joint_entropy_before);
            t.meta_f64("joint_entropy_after", r.joint_entropy_after);
            t.meta_f64("marginal_entropy_sum_before", r.marginal_sum_before());
            t.meta_f64("marginal_entropy_sum_after", r.marginal_sum_after());
            t.meta_f64("mode1_ergotropy", r.mode1.ergotropy);
            t.meta_f64("joint_ergotropy_after", r.joint_ergotropy_after);
            t.meta_f64("steering_gain", r.steering_gain);
            Ok(t)
        }
        "poincare" => {
            let nbar = p.f64("nbar")?;
            let t2 = p.f64("t2")?;
            let chi = p.f64("chi")?;
            let samples = p.usize_or("samples", 1000)?;
            p.finish()?;
            let run = EngineConfig {
                nbar_hot: nbar,
                t2,
                chi,
                samples,
                seed: cfg.seed,
            };
            let pts = engine::poincare_cloud(&run, samples).map_err(&num)?;
            let mut cols = vec![("sample", "")];
            for stage in ["before", "after_nl", "output"] {
                for c in ["s0", "sx", "sy", "sz"] {
                    cols.push((
                        Box::leak(format!("{stage}_{c}").into_boxed_str()),
                        "photons",
                    ));
                }
            }
            let mut t = ResultTable::new(&cols);
            for (i, pt) in pts.iter().enumerate() {
                let mut row: Vec<Cell> = vec![i.into()];
                for s in [pt.before, pt.after_nl, pt.output] {
                    row.extend([s.s0.into(), s.sx.into(), s.sy.into(), s.sz.into()]);
                }
                t.push(row);
            }
            t.meta("truncation", "none (phase-space sampling)");
            Ok(t)
        }
        other => Err(HarnessError::config(
            None,
            format!("[engine] mode must be semiclassical, quantum or poincare, got '{other}'"),
        )),
    }
}

fn run_phase_sensor(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    let num = numerical(Experiment::PhaseSensor);
    let p = &cfg.params;
    let kinds = p
        .str_list_or("inputs", &["thermal", "fock", "coherent"])?
        .iter()
        .map(|s| s.parse::<InputKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(&num)?;
    let nbars = p.f64_list_or("nbar", &[4.0, 6.0, 8.0])?;
    let chi = p.f64_or("chi", FRAC_PI_2)?;
    let layout: ProbeLayout = p.str_or("layout", "mzi").parse().map_err(&num)?;
    let tolerance = p.f64_or("tolerance", 1e-12)?;
    p.finish()?;
    let rows = sensing::qfi_scan(&kinds, &nbars, chi, layout, tolerance).map_err(&num)?;
    let mut t = ResultTable::new(&[
        ("input", ""),
        ("nbar", "photons"),
        ("chi", "rad"),
        ("qfi", ""),
        ("predicted", ""),
        ("rel_dev", ""),
        ("phase_error_bound", "rad"),
    ]);
    for r in &rows {
        t.push(vec![
            r.kind.to_string().into(),
            r.nbar.into(),
            r.chi.into(),
            r.fisher_information.into(),
            r.predicted.into(),
            r.rel_dev.into(),
            r.phase_error_bound.into(),
        ]);
    }
    t.meta("layout", layout.name());
    t.meta_f64("truncation_tolerance", tolerance);
    Ok(t)
}

fn run_noise_sensor(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    let num = numerical(Experiment::NoiseSensor);
    let p = &cfg.params;
    let nbar = p.f64_or("nbar", 1.0)?;
    let g = p.f64_or("g", 0.3)?;
    let k = p.usize_or("k", 2)?;
    let t_max = p.f64_or("t_max", 3.0)?;
    let points = p.usize_or("points", 31)?;
    let tolerance = p.f64_or("tolerance", 1e-10)?;
    let classify = p.bool_or("classify", false)?;
    let candidates = p.usize_list_or("candidates", &[2, 3])?;
    let g_min = p.f64_or("g_min", 0.05)?;
    let g_max = p.f64_or("g_max", 1.0)?;
    let grid_points = p.usize_or("grid_points", 13)?;
    p.finish()?;
    if points < 1 {
        return Err(HarnessError::config(
            None,
            "[noise-sensor] points must be >= 1",
        ));
    }
    let times: Vec<f64> = (0..points)
        .map(|i| {
            if points == 1 {
                t_max
            } else {
                t_max * i as f64 / (points - 1) as f64
            }
        })
        .collect();
    let trace = sensing::noise_sensor_trace(nbar, g, k, &times, tolerance).map_err(&num)?;
    let mut t = ResultTable::new(&[("t", "1/g"), ("g_t", ""), ("ergotropy", "hbar omega")]);
    for (&ti, &e) in times.iter().zip(&trace.ergotropy) {
        t.push(vec![ti.into(), (g * ti).into(), e.into()]);
    }
    t.meta_f64("truncation_tolerance", tolerance);
    if classify {
        let grid = sensing::log_grid(g_min, g_max, grid_points);
        let verdict = sensing::classify_nonlinearity(
            &times,
            &trace.ergotropy,
            nbar,
            &candidates,
            &grid,
            tolerance,
        )
        .map_err(&num)?;
        match verdict {
            Classification::LinearOrRaman => t.meta("classification", "linear-or-raman"),
            Classification::Nonlinear { best, .. } => t.meta(
                "classification",
                format!("k={} g={:?} residual={:?}", best.k, best.g, best.residual),
            ),
        }
    }
    Ok(t)
}

fn run_photocount(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    let num = numerical(Experiment::Photocount);
    let p = &cfg.params;
    let nbar = p.f64("nbar")?;
    let t2 = p.f64("t2")?;
    let tolerance = p.f64_or("tolerance", filters::DEFAULT_SUPPORT_TOLERANCE)?;
    let k_max = p.typed::<usize>("k_max", "a nonnegative integer")?;
    p.finish()?;
    let family = match k_max {
        Some(kmax) => (0..=kmax)
            .map(|k| filters::photocount_condition_with_tolerance(nbar, t2, k, tolerance))
            .collect::<Result<Vec<_>, _>>(),
        None => filters::photocount_family(nbar, t2, tolerance),
    }
    .map_err(&num)?;
    let mut t = ResultTable::new(&[
        ("k", "photons"),
        ("P_k", ""),
        ("E_k", "hbar omega"),
        ("E_k_closed", "hbar omega"),
        ("W_k", "hbar omega"),
        ("g2", ""),
        ("g2_law", ""),
        ("passive", ""),
    ]);
    let mut max_trunc = 0.0f64;
    for o in &family {
        max_trunc = max_trunc.max(o.truncation_weight);
        let passive = thermo::is_passive(&o.distribution).map_err(&num)?.passive;
        t.push(vec![
            o.k.into(),
            o.probability.into(),
            o.energy.into(),
            filters::conditional_energy(nbar, t2, o.k).into(),
            o.work.into(),
            thermo::g2_zero(&o.distribution).map_err(&num)?.into(),
            filters::g2_law(o.k).into(),
            passive.into(),
        ]);
    }
    let mean_work: f64 = family.iter().map(|o| o.probability * o.work).sum();
    t.meta_f64("mean_work", mean_work);
    t.meta_f64(
        "outcome_probability_sum",
        family.iter().map(|o| o.probability).sum(),
    );
    t.meta_f64("truncation_tolerance", tolerance);
    t.meta_f64("max_truncation_weight", max_trunc);
    Ok(t)
}

fn run_homodyne(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    let num = numerical(Experiment::Homodyne);
    let p = &cfg.params;
    let nbars = p.f64_list_or("nbar", &[25.0, 49.0, 100.0, 225.0])?;
    let t2 = p.opt_f64("t2")?;
    let beta = p.opt_f64("beta")?;
    let samples = p.usize_or("samples", 100_000)?;
    p.finish()?;
    let mut t = ResultTable::new(&[
        ("nbar", "photons"),
        ("t2", ""),
        ("beta", "sqrt(photons)"),
        ("W_gross", "hbar omega"),
        ("W_gross_std_error", "hbar omega"),
        ("W_gross_exact", "hbar omega"),
        ("W_net", "hbar omega"),
        ("I", "nats"),
    ]);
    let mut pts = Vec::new();
    for (i, &nbar) in nbars.iter().enumerate() {
        let (t2_opt, beta_opt) = match (t2, beta) {
            (Some(a), Some(b)) => (a, b),
            _ => filters::homodyne_optimum(nbar).map_err(&num)?,
        };
        let (t2v, bv) = (t2.unwrap_or(t2_opt), beta.unwrap_or(beta_opt));
        let w = filters::mean_work_homodyne(
            nbar,
            t2v,
            bv,
            samples,
            cfg.seed.wrapping_add(i as u64),
            cfg.workers,
        )
        .map_err(&num)?;
        let info = filters::mutual_information_homodyne(nbar, t2v, bv).map_err(&num)?;
        pts.push((nbar, w.net));
        t.push(vec![
            nbar.into(),
            t2v.into(),
            bv.into(),
            w.gross.mean.into(),
            w.gross.std_error.into(),
            w.gross_exact.into(),
            w.net.into(),
            info.into(),
        ]);
    }
    if pts.len() >= 2 {
        if let Ok((a, c)) = filters::fit_work_scaling(&pts) {
            t.meta_f64("fit_a", a);
            t.meta_f64("fit_c", c);
        }
    }
    t.meta("samples", samples);
    t.meta("truncation", "none (phase-space sampling)");
    Ok(t)
}

fn run_distiller(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    let num = numerical(Experiment::Distiller);
    let p = &cfg.params;
    let nbar = p.f64_or("nbar", 2.0)?;
    let target = p.usize_or("target", 3)?;
    let d = ScheduleSpec::default();
    let spec = ScheduleSpec {
        first_count: p.usize_or("first_count", d.first_count)?,
        second_count: p.usize_or("second_count", d.second_count)?,
        second_factor: p.f64_or("second_factor", d.second_factor)?,
        cm_count: p.usize_or("cm_count", d.cm_count)?,
        erasure_order: p.u32_or("erasure_order", d.erasure_order)?,
    };
    let o = ProtocolOptions::default();
    let options = ProtocolOptions {
        retry_cap: p.usize_or("retry_cap", o.retry_cap)?,
        leakage_tolerance: p.f64_or("leakage_tolerance", o.leakage_tolerance)?,
        support_tolerance: p.f64_or("support_tolerance", o.support_tolerance)?,
    };
    p.finish()?;
    let schedule = distiller::default_schedule(target, &spec).map_err(&num)?;
    let tr = distiller::run_protocol(nbar, target, &schedule, &options).map_err(&num)?;
    let mut t = ResultTable::new(&[
        ("step", ""),
        ("kind", ""),
        ("gtau", "rad"),
        ("entropy", "nats"),
        ("peak_n", "photons"),
        ("peak_prob", ""),
        ("P_e", ""),
    ]);
    for r in distiller::entropy_trace(&tr) {
        t.push(vec![
            r.step.into(),
            r.kind.into(),
            r.gtau.into(),
            r.entropy.into(),
            r.peak_n.into(),
            r.peak_prob.into(),
            r.success_probability.into(),
        ]);
    }
    t.meta("cutoff", tr.cutoff);
    t.meta_f64("leakage_tolerance", options.leakage_tolerance);
    t.meta_f64("total_leakage", tr.total_leakage);
    t.meta_f64("success_probability", tr.success_probability());
    t.meta_f64(
        "success_probability_with_retries",
        tr.success_probability_with_retries(),
    );
    Ok(t)
}

fn run_spin_cat(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    let num = numerical(Experiment::SpinCat);
    let p = &cfg.params;
    let center = p.f64_or("center", 1.0)?;
    let width = p.f64_or("width", 10.0)?;
    let coupling2 = p.f64_or("coupling2", 1.0)?;
    let temperature = p.f64_or("temperature", 0.0)?;
    let points = p.usize_or("points", spin_cat::DEFAULT_GRID_POINTS)?;
    let horizon = p.f64_or("horizon", 1e4)?;
    let table = p.str_or("table", "cats");
    let bath = |p: &Params| -> HarnessResult<BathSpectrum> {
        let _ = p;
        BathSpectrum::lorentzian(center, width, coupling2, points).map_err(&num)
    };
    let mut t = match table.as_str() {
        "cats" => {
            let atoms = p.usize_list_or("atoms", &[2, 10, 20])?;
            p.finish()?;
            let b = bath(p)?;
            let mut t = ResultTable::new(&[
                ("atoms", ""),
                ("tau_mqs", "1/omega0"),
                ("mean_gamma", ""),
                ("cat_fidelity", ""),
                ("cat_fidelity_ideal", ""),
                ("purity", ""),
                ("size_limit_ok", ""),
            ]);
            for &n in &atoms {
                let r = spin_cat::cat_report(n, &b, temperature, horizon).map_err(&num)?;
                t.push(vec![
                    n.into(),
                    r.tau.into(),
                    r.mean_gamma.into(),
                    r.fidelity.into(),
                    r.fidelity_ideal.into(),
                    r.purity.into(),
                    r.size_ok.into(),
                ]);
            }
            t
        }
        "series" => {
            let t_max = p.f64_or("t_max", 20.0)?;
            let t_points = p.usize_or("t_points", 201)?;
            p.finish()?;
            let b = bath(p)?;
            let mut t =
                ResultTable::new(&[("t", "1/omega0"), ("Delta_L", "omega0"), ("Gamma", "")]);
            for i in 0..t_points.max(1) {
                let ti = if t_points <= 1 {
                    t_max
                } else {
                    t_max * i as f64 / (t_points - 1) as f64
                };
                t.push(vec![
                    ti.into(),
                    spin_cat::lamb_shift(ti, &b).map_err(&num)?.into(),
                    spin_cat::dephasing_gamma(ti, &b, temperature)
                        .map_err(&num)?
                        .into(),
                ]);
            }
            t
        }
        other => {
            return Err(HarnessError::config(
                None,
                format!("[spin-cat] table must be cats or series, got '{other}'"),
            ))
        }
    };
    t.meta("grid_points", points);
    t.meta_f64("width_over_center", width / center);
    Ok(t)
}
