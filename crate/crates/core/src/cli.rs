//! Command-line front end: subcommand dispatch, experiment specs and artifact directories.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{cluster_records, decay_constants, perimeter_fit, Cutoffs, PerimeterPoint};
use crate::checks::{run_check, CHECK_IDS};
use crate::clusters::{alpha_beta, beta0, conf_tail, higgs_constants, higgs_min_eps, higgs_tail, m1, m2, write_cluster_dump, Phase};
use crate::dec::BoxGeometry;
use crate::error::{Error, Result};
use crate::gaugemodel::{ModelParams, Path};
use crate::hte::hte_expectation;
use crate::mc::{sample_expectation, McConfig};
use crate::oracle::{exact_coupled_expectation, exact_unitary_expectation, transfer_matrix_line, Line, OracleRow, TRANSFER_MAX_SIDE};

#[derive(Parser, Debug)]
#[command(name = "latthiggs", version, about = "Wilson line expectations and perimeter laws in the lattice Higgs model")]
pub struct Cli {
    /// Model or experiment configuration (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; results go to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Multiplier on absolute numerical tolerances.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub tolerance_scale: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact or transfer-matrix Wilson line expectations.
    Oracle(OracleArgs),
    /// Compare the high-temperature expansion with exact enumeration.
    HteCheck(OracleArgs),
    /// Decay constants from the cluster expansion.
    Decay(DecayArgs),
    /// Perimeter-law fit of oracle CSV data.
    Fit(FitArgs),
    /// Monte Carlo estimate.
    Mc(McArgs),
    /// Convergence thresholds and tail constants.
    Constants(ConstantsArgs),
    /// Run an experiment spec: a config file or one of `phase-diagram`, `paper-checks`.
    Run(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Unitary,
    Transfer,
    Hte,
    Mc,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long = "gamma-len", num_args = 1.., default_values_t = vec![1usize])]
    pub gamma_len: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Method::Exact)]
    pub method: Method,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Higgs,
    Conf,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Phase {
        match p {
            PhaseArg::Higgs => Phase::Higgs,
            PhaseArg::Conf => Phase::Confinement,
        }
    }
}

#[derive(Args, Debug)]
pub struct DecayArgs {
    #[arg(long, value_enum)]
    pub phase: PhaseArg,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub kappa: f64,
    #[arg(long, default_value_t = 6)]
    pub cutoff: usize,
    #[arg(long, default_value_t = 6)]
    pub kmax: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Write the clusters of the series for `a` as JSON lines.
    #[arg(long)]
    pub dump_clusters: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub m: u32,
    #[arg(long, default_value_t = 2)]
    pub n: u32,
}

#[derive(Args, Debug)]
pub struct McArgs {
    #[arg(long = "gamma-len", default_value_t = 1)]
    pub gamma_len: usize,
    #[arg(long, default_value_t = 20_000)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
}

#[derive(Args, Debug)]
pub struct ConstantsArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// `phase-diagram`, `paper-checks`, or a path to an experiment spec.
    pub spec: String,
}

/// An experiment: a model, a coupling grid, line lengths and the methods to evaluate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub model: ModelParams,
    pub betas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub gamma_lengths: Vec<usize>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerance_scale: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mc_sweeps: Option<usize>,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.kappas.is_empty() || self.gamma_lengths.is_empty() {
            return Err(Error::Config("betas, kappas and gamma_lengths must be nonempty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.gamma_lengths.contains(&0) {
            return Err(Error::Config("gamma lengths must be positive".into()));
        }
        if self.betas.iter().chain(&self.kappas).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("couplings must be finite and nonnegative".into()));
        }
        self.model.validate()
    }

    pub fn from_str_auto(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        Ok(spec)
    }

    /// The coupling sweep behind the conjectured phase diagram: `a_hat` on a (β, κ) grid
    /// from transfer-matrix lines.
    pub fn phase_diagram() -> Self {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        ExperimentSpec {
            name: "phase-diagram".into(),
            model: ModelParams::z2(2, 8, 0.0, 0.0),
            betas: grid.clone(),
            kappas: grid,
            gamma_lengths: (1..=6).collect(),
            methods: vec![Method::Transfer],
            output_dir: None,
            tolerance_scale: None,
            seed: 1,
            mc_sweeps: None,
        }
    }
}

fn load_model(path: &FsPath) -> Result<ModelParams> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        ModelParams::from_json_str(&text)
    } else {
        ModelParams::from_toml_str(&text)
    }
}

fn line_path(geom: &BoxGeometry, len: usize) -> Result<Path> {
    if geom.dim() == 2 {
        let l = Line::centered(geom.side(), len);
        return Path::straight(geom, &[l.x0, l.y0], 0, len);
    }
    let mut start = vec![geom.side() / 2; geom.dim()];
    start[0] = geom.side().saturating_sub(len) / 2;
    Path::straight(geom, &start, 0, len)
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Exact => "exact",
        Method::Unitary => "unitary",
        Method::Transfer => "transfer",
        Method::Hte => "hte",
        Method::Mc => "mc",
    }
}

/// One expectation by the chosen method. Monte Carlo rows carry the standard error in
/// `expectation_im`'s place only in the dedicated `mc` output; here they report the mean.
pub fn evaluate(p: &ModelParams, len: usize, method: Method, seed: u64, sweeps: usize) -> Result<OracleRow> {
    let geom = p.geometry()?;
    let gamma = line_path(&geom, len)?;
    let value = match method {
        Method::Exact => exact_coupled_expectation(&geom, &gamma, p)?,
        Method::Unitary => exact_unitary_expectation(&geom, &gamma, p)?,
        Method::Hte => num_complex::Complex64::new(hte_expectation(&geom, &gamma, p)?, 0.0),
        Method::Transfer => {
            if p.d != 2 || p.m != 2 || p.n != 2 || p.side > TRANSFER_MAX_SIDE {
                return Err(Error::Unsupported("transfer matrix needs d = 2, m = n = 2 and N <= 12".into()));
            }
            let t = transfer_matrix_line(p.side, p.beta, p.kappa, Line::centered(p.side, len))?;
            num_complex::Complex64::new(t.expectation, 0.0)
        }
        Method::Mc => {
            let mc = McConfig { seed, sweeps, ..McConfig::default() };
            num_complex::Complex64::new(sample_expectation(&geom, &gamma, p, &mc)?.mean, 0.0)
        }
    };
    Ok(OracleRow {
        beta: p.beta,
        kappa: p.kappa,
        gamma_len: len,
        expectation_re: value.re,
        expectation_im: value.im,
        method: method_name(method).into(),
        side: p.side,
        margin: crate::oracle::path_margin(&geom, &gamma),
    })
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn json_string<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
fn write_atomic(dir: &FsPath, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub spec_name: String,
    pub config_sha256: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
    pub created_unix: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub beta: f64,
    pub kappa: f64,
    pub gamma_len: usize,
    pub method: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub beta: f64,
    pub kappa: f64,
    pub method: String,
    pub a_hat: f64,
    pub max_len: usize,
}

/// Runs a spec into `dir`: `results.csv`, `a_hat.csv`, `errors.csv`, then `manifest.json`.
/// Everything except the manifest timestamp is a function of the spec.
pub fn run(spec: &ExperimentSpec, dir: &FsPath) -> Result<Manifest> {
    spec.validate()?;
    let sweeps = spec.mc_sweeps.unwrap_or(20_000);
    let mut cells = Vec::new();
    for &beta in &spec.betas {
        for &kappa in &spec.kappas {
            for &len in &spec.gamma_lengths {
                for &m in &spec.methods {
                    cells.push((beta, kappa, len, m));
                }
            }
        }
    }
    let results: Vec<std::result::Result<OracleRow, CellError>> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(beta, kappa, len, m))| {
            evaluate(&spec.model.with_couplings(beta, kappa), len, m, spec.seed.wrapping_add(i as u64), sweeps).map_err(|e| CellError {
                beta,
                kappa,
                gamma_len: len,
                method: method_name(m).into(),
                error: e.to_string(),
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => errors.push(e),
        }
    }
    let mut groups: BTreeMap<(u64, u64, String), Vec<PerimeterPoint>> = BTreeMap::new();
    for r in &rows {
        if r.expectation_re > 0.0 {
            groups
                .entry((r.beta.to_bits(), r.kappa.to_bits(), r.method.clone()))
                .or_default()
                .push(PerimeterPoint { n: r.gamma_len, neg_log: -r.expectation_re.ln() });
        }
    }
    let phase: Vec<PhaseRow> = groups
        .into_iter()
        .filter_map(|((b, k, method), pts)| {
            let best = pts.iter().map(|p| p.neg_log / p.n as f64).fold(f64::INFINITY, f64::min);
            let max_len = pts.iter().map(|p| p.n).max()?;
            Some(PhaseRow { beta: f64::from_bits(b), kappa: f64::from_bits(k), method, a_hat: best, max_len })
        })
        .collect();

    let files = [
        ("results.csv", csv_string(&rows)?),
        ("a_hat.csv", csv_string(&phase)?),
        ("errors.csv", csv_string(&errors)?),
        ("spec.json", json_string(spec)?),
    ];
    for (name, body) in &files {
        write_atomic(dir, name, body)?;
    }
    finish_manifest(dir, &spec.name, &json_string(spec)?, spec.seed, &files)
}

fn finish_manifest(dir: &FsPath, name: &str, config: &str, seed: u64, files: &[(&str, String)]) -> Result<Manifest> {
    let manifest = Manifest {
        tool: "latthiggs".into(),
        version: format!("v{}", env!("CARGO_PKG_VERSION")),
        spec_name: name.into(),
        config_sha256: sha256_hex(config.as_bytes()),
        seed,
        files: files.iter().map(|(n, b)| ManifestEntry { file: (*n).into(), sha256: sha256_hex(b.as_bytes()) }).collect(),
        created_unix: std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    write_atomic(dir, "manifest.json", &json_string(&manifest)?)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub id: u32,
    pub title: String,
    pub verdict: String,
    pub summary: String,
}

/// Runs every reproduction check, writing `checks.csv` and `checks.json`. Returns the
/// PASS/FAIL table.
pub fn run_paper_checks(dir: Option<&FsPath>, scale: f64) -> Result<String> {
    let outcomes: Vec<_> = CHECK_IDS.map(|i| run_check(i, scale)).collect::<Result<_>>()?;
    let table: String = outcomes.iter().map(|o| o.line() + "\n").collect();
    if let Some(dir) = dir {
        let rows: Vec<CheckRow> = outcomes
            .iter()
            .map(|o| CheckRow {
                id: o.id,
                title: o.title.clone(),
                verdict: if o.passed { "PASS" } else { "FAIL" }.into(),
                summary: o.summary.clone(),
            })
            .collect();
        let files = [("checks.csv", csv_string(&rows)?), ("checks.json", json_string(&outcomes)?)];
        for (name, body) in &files {
            write_atomic(dir, name, body)?;
        }
        finish_manifest(dir, "paper-checks", "paper-checks", 0, &files)?;
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub d: usize,
    pub m1: usize,
    pub m2: usize,
    pub kappa0_higgs: f64,
    pub alpha_higgs: f64,
    pub eps_min_higgs: f64,
    pub beta0_conf: f64,
    pub higgs_tail: Option<crate::clusters::HiggsTail>,
    pub conf_tail: Option<crate::clusters::ConfTail>,
    pub alpha_beta: Option<f64>,
}

pub fn constants(d: usize, beta: Option<f64>, kappa: Option<f64>) -> Result<ConstantsReport> {
    let hc = higgs_constants(d)?;
    Ok(ConstantsReport {
        d,
        m1: m1(d),
        m2: m2(d),
        kappa0_higgs: hc.kappa0,
        alpha_higgs: hc.alpha,
        eps_min_higgs: higgs_min_eps(d)?,
        beta0_conf: beta0(d)?,
        higgs_tail: kappa.and_then(|k| higgs_tail(d, k, None).ok()),
        conf_tail: beta.and_then(|b| conf_tail(d, b, None).ok()),
        alpha_beta: beta.and_then(|b| alpha_beta(d, b)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub beta: f64,
    pub kappa: f64,
    pub gamma_len: usize,
    pub mean: f64,
    pub stderr: f64,
    pub tau_int: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HteRow {
    pub m: u32,
    pub n: u32,
    pub beta: f64,
    pub kappa: f64,
    pub gamma_len: usize,
    pub hte: f64,
    pub exact: f64,
    pub abs_diff: f64,
}

fn emit(out: Option<&FsPath>, name: &str, body: &str) -> Result<()> {
    match out {
        Some(dir) => write_atomic(dir, name, body),
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn model_from(cli: &Cli) -> Result<ModelParams> {
    match &cli.config {
        Some(p) => load_model(p),
        None => Err(Error::Config("--config is required for this command".into())),
    }
}

/// Parses arguments and runs the chosen command.
pub fn main_with(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        // an already-initialized pool is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Oracle(a) => {
            let p = model_from(&cli)?;
            let rows: Vec<OracleRow> = a.gamma_len.iter().map(|&l| evaluate(&p, l, a.method, 1, 20_000)).collect::<Result<_>>()?;
            emit(out, "oracle.csv", &csv_string(&rows)?)
        }
        Command::HteCheck(a) => {
            let p = model_from(&cli)?;
            let geom = p.geometry()?;
            let mut rows = Vec::new();
            for &l in &a.gamma_len {
                let gamma = line_path(&geom, l)?;
                let hte = hte_expectation(&geom, &gamma, &p)?;
                let exact = exact_coupled_expectation(&geom, &gamma, &p)?.re;
                rows.push(HteRow { m: p.m, n: p.n, beta: p.beta, kappa: p.kappa, gamma_len: l, hte, exact, abs_diff: (hte - exact).abs() });
            }
            emit(out, "hte_check.csv", &csv_string(&rows)?)
        }
        Command::Decay(a) => {
            let cut = Cutoffs { max_size: a.cutoff, kmax: a.kmax };
            let s = decay_constants(a.phase.into(), a.dim, a.beta, a.kappa, cut, a.eps)?;
            if let Some(path) = &a.dump_clusters {
                let recs = cluster_records(a.phase.into(), a.dim, a.beta, a.kappa, cut)?;
                write_cluster_dump(std::io::BufWriter::new(fs::File::create(path)?), &recs)?;
            }
            emit(out, "decay.json", &json_string(&s)?)
        }
        Command::Fit(a) => {
            let mut rdr = csv::Reader::from_path(&a.input)?;
            let mut groups: BTreeMap<(u64, u64), Vec<PerimeterPoint>> = BTreeMap::new();
            for r in rdr.deserialize::<OracleRow>() {
                let r = r?;
                if r.expectation_re <= 0.0 {
                    return Err(Error::Invalid(format!("nonpositive expectation at length {}", r.gamma_len)));
                }
                groups.entry((r.beta.to_bits(), r.kappa.to_bits())).or_default().push(PerimeterPoint { n: r.gamma_len, neg_log: -r.expectation_re.ln() });
            }
            let mut fits = Vec::new();
            for ((b, k), pts) in groups {
                let fit = perimeter_fit(&pts, a.m, a.n, f64::from_bits(k), 1e-12 * cli.tolerance_scale)?;
                fits.push(serde_json::json!({ "beta": f64::from_bits(b), "kappa": f64::from_bits(k), "fit": fit }));
            }
            emit(out, "fit.json", &json_string(&fits)?)
        }
        Command::Mc(a) => {
            let p = model_from(&cli)?;
            let geom = p.geometry()?;
            let gamma = line_path(&geom, a.gamma_len)?;
            let mc = McConfig { seed: a.seed, sweeps: a.sweeps, burn_in: a.burn_in, stride: 1, batches: a.batches, chains: a.chains };
            let r = sample_expectation(&geom, &gamma, &p, &mc)?;
            let row = McRow {
                beta: p.beta,
                kappa: p.kappa,
                gamma_len: a.gamma_len,
                mean: r.mean,
                stderr: r.stderr,
                tau_int: r.tau_int,
                samples: r.samples,
                seed: a.seed,
            };
            emit(out, "mc.csv", &csv_string(&[row])?)
        }
        Command::Constants(a) => emit(out, "constants.json", &json_string(&constants(a.dim, a.beta, a.kappa)?)?),
        Command::Run(a) => match a.spec.as_str() {
            "paper-checks" => {
                let table = run_paper_checks(out, cli.tolerance_scale)?;
                std::io::stdout().write_all(table.as_bytes())?;
                Ok(())
            }
            other => {
                let spec = if other == "phase-diagram" {
                    ExperimentSpec::phase_diagram()
                } else {
                    ExperimentSpec::from_str_auto(&fs::read_to_string(other)?)?
                };
                let dir = out.map(FsPath::to_path_buf).or_else(|| spec.output_dir.clone()).unwrap_or_else(|| PathBuf::from("artifacts").join(&spec.name));
                let m = run(&spec, &dir)?;
                std::io::stdout().write_all(json_string(&m)?.as_bytes())?;
                Ok(())
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("latthiggs-test-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            name: "small".into(),
            model: ModelParams::z2(2, 4, 0.0, 0.0),
            betas: vec![0.0, 0.3],
            kappas: vec![0.4],
            gamma_lengths: vec![1, 2, 3],
            methods: vec![Method::Transfer, Method::Mc],
            output_dir: None,
            tolerance_scale: None,
            seed: 5,
            mc_sweeps: Some(300),
        }
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut s = small_spec();
        s.betas.clear();
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = small_spec();
        s.methods.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let s = small_spec();
        let (a, b) = (tmpdir("a"), tmpdir("b"));
        let ma = run(&s, &a).unwrap();
        let mb = run(&s, &b).unwrap();
        assert_eq!(ma.files, mb.files);
        for f in ["results.csv", "a_hat.csv", "errors.csv", "spec.json"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        let _ = fs::remove_dir_all(a);
        let _ = fs::remove_dir_all(b);
    }

    #[test]
    fn infeasible_cells_are_reported_not_fatal() {
        let mut s = small_spec();
        s.methods = vec![Method::Exact, Method::Transfer];
        s.gamma_lengths = vec![1];
        let d = tmpdir("budget");
        run(&s, &d).unwrap();
        let errs = fs::read_to_string(d.join("errors.csv")).unwrap();
        assert!(errs.lines().count() > 1, "the exact N = 4 cells exceed the budget");
        let res = fs::read_to_string(d.join("results.csv")).unwrap();
        assert!(res.contains("transfer"));
        let _ = fs::remove_dir_all(d);
    }

    #[test]
    fn spec_parses_from_toml_and_json() {
        let s = small_spec();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(ExperimentSpec::from_str_auto(&json).unwrap(), s);
        let toml_text = toml::to_string(&s).unwrap();
        assert_eq!(ExperimentSpec::from_str_auto(&toml_text).unwrap(), s);
    }

    #[test]
    fn cli_parses_decay() {
        let cli = Cli::try_parse_from(["latthiggs", "decay", "--phase", "conf", "--beta", "0.0001", "--kappa", "0.5", "--cutoff", "3"]).unwrap();
        match cli.command {
            Command::Decay(a) => {
                assert_eq!(a.phase, PhaseArg::Conf);
                assert_eq!(a.cutoff, 3);
            }
            _ => panic!("wrong subcommand"),
        }
        let cli = Cli::try_parse_from(["latthiggs", "--jobs", "2", "run", "phase-diagram", "--out", "x"]).unwrap();
        assert_eq!(cli.jobs, Some(2));
    }

    #[test]
    fn constants_for_plane() {
        let c = constants(2, Some(1e-4), Some(2.0)).unwrap();
        assert_eq!((c.m1, c.m2), (6, 4));
        assert!(c.higgs_tail.is_some() && c.conf_tail.is_some());
        assert!(constants(2, Some(0.1), Some(1.0)).unwrap().conf_tail.is_none());
    }

    #[test]
    fn decay_dump_writes_json_lines() {
        let d = tmpdir("dump");
        fs::create_dir_all(&d).unwrap();
        let path = d.join("clusters.jsonl");
        let cli = Cli::try_parse_from([
            "latthiggs",
            "decay",
            "--phase",
            "higgs",
            "--beta",
            "0.5",
            "--kappa",
            "2",
            "--cutoff",
            "2",
            "--dump-clusters",
            path.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
        ])
        .unwrap();
        main_with(cli).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().count() > 1);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["phase"], "higgs");
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("decay.json")).unwrap()).unwrap();
        assert!(summary["a"].as_f64().unwrap() > 0.0);
        let _ = fs::remove_dir_all(d);
    }
}
