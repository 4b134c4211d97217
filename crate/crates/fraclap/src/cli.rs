//! Config-driven command runner behind the `fraclap` binary. A JSON config
//! selects the command and its inputs; a few flags override the knobs that
//! vary between runs. Results are written atomically and can be cached by
//! the content hash of the effective configuration.

use crate::analysis::{self, OperatorKind, OptimizerConfig};
use crate::error::{FracError, Result};
use crate::extension;
use crate::quadrature::{self, EnergyEstimate, QuadratureSpec, RegionTag};
use crate::specfun::{self, FracParams};
use crate::trialspace::TrialFunction;
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Constants,
    Energy,
    Extend,
    Rayleigh,
    Minimize,
    Identities,
    Gaps,
    Limits,
    Hardy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub n: u32,
    pub s: f64,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub spec: QuadratureSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub trial: Option<TrialFunction>,
    #[serde(default)]
    pub region: Option<RegionTag>,
    #[serde(default)]
    pub operator: Option<OperatorKind>,
    #[serde(default)]
    pub s_grid: Option<Vec<f64>>,
    /// Evaluation abscissae for the extension command.
    #[serde(default)]
    pub points: Option<Vec<f64>>,
    #[serde(default)]
    pub identity_tol: Option<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_format() -> OutputFormat {
    OutputFormat::Json
}

#[derive(Parser, Debug)]
#[command(name = "fraclap", about = "half-space fractional energy toolkit")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the evaluation budget.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Cache directory for result reuse.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

/// Outcome of a run: rendered payload plus the process exit code.
pub struct RunOutcome {
    pub payload: String,
    pub exit_code: i32,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    exit_code: i32,
    format: OutputFormat,
    payload: String,
}

pub fn exit_code_for(err: &FracError) -> i32 {
    match err {
        FracError::BudgetExhausted(_) | FracError::PrincipalValueDiverged(_) => 1,
        _ => 2,
    }
}

/// Full driver: load config, apply overrides, consult the cache, run,
/// write outputs. Returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match run_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fraclap: error: {e}");
            exit_code_for(&e)
        }
    }
}

fn run_inner(cli: &Cli) -> Result<i32> {
    init_threads();
    let text = fs::read_to_string(&cli.config)
        .map_err(|e| FracError::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| FracError::Config(format!("bad config: {e}")))?;

    if let Some(seed) = cli.seed {
        cfg.spec.seed = seed;
        cfg.optimizer.seed = seed;
    }
    if let Some(budget) = cli.budget {
        cfg.spec.budget = budget;
    }
    if let Some(fmt) = cli.format {
        cfg.format = fmt;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if cli.cache.is_some() {
        cfg.cache_dir = cli.cache.clone();
    }

    let key = content_hash(&cfg)?;
    if let Some(dir) = cfg.cache_dir.clone() {
        if let Some(hit) = cache_lookup(&dir, &key) {
            emit(&cfg, &hit.payload)?;
            write_manifest(&cfg, &key, true)?;
            return Ok(hit.exit_code);
        }
    }

    let outcome = execute(&cfg)?;
    emit(&cfg, &outcome.payload)?;
    write_manifest(&cfg, &key, false)?;
    if let Some(dir) = cfg.cache_dir.clone() {
        let entry = CacheEntry {
            exit_code: outcome.exit_code,
            format: cfg.format,
            payload: outcome.payload.clone(),
        };
        let _ = cache_store(&dir, &key, &entry);
    }
    Ok(outcome.exit_code)
}

fn init_threads() {
    if let Ok(v) = std::env::var("FRACLAP_THREADS") {
        if let Ok(t) = v.trim().parse::<usize>() {
            if t > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global();
            }
        }
    }
}

fn params_of(cfg: &RunConfig) -> Result<FracParams> {
    match cfg.sigma {
        Some(sigma) => FracParams::with_sigma(cfg.n, cfg.s, sigma),
        None => FracParams::new(cfg.n, cfg.s),
    }
}

fn need_trial(cfg: &RunConfig) -> Result<&TrialFunction> {
    cfg.trial
        .as_ref()
        .ok_or_else(|| FracError::Config("this command needs a 'trial' entry".into()))
}

/// Dispatch and render. Exit code 1 flags hard assertion failures inside
/// reports; precondition problems surface as errors (exit 2) instead.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let params = params_of(cfg)?;
    let spec = cfg.spec;
    spec.validate()?;
    match cfg.command {
        Command::Constants => {
            let mut rows: Vec<(String, f64)> = vec![
                ("critical_exponent".into(), params.crit_exponent()),
                (
                    "sobolev_const".into(),
                    specfun::sobolev_const(params.n, params.s)?.value,
                ),
                (
                    "reflection_const".into(),
                    specfun::spectral_neumann_const(params.n, params.s)?.value,
                ),
            ];
            if params.s < 1.0 {
                rows.push(("normalizing_const".into(), specfun::c_frac(params)?.value));
                rows.push(("hardy_weight_const".into(), specfun::gamma_half(params.s)?.value));
            }
            if let Some(p) = params.crit_exponent_sigma() {
                rows.push(("critical_exponent_sigma".into(), p));
            }
            Ok(RunOutcome {
                payload: render_pairs(&rows, cfg.format),
                exit_code: 0,
            })
        }
        Command::Energy => {
            let u = need_trial(cfg)?;
            let region = cfg
                .region
                .ok_or_else(|| FracError::Config("energy needs a 'region' entry".into()))?;
            let est = quadrature::energy(u, region, params, &spec)?;
            Ok(RunOutcome {
                payload: render_energy(&est, cfg.format),
                exit_code: 0,
            })
        }
        Command::Extend => {
            let u = need_trial(cfg)?;
            let ext = extension::extend(u, params)?;
            let pts: Vec<f64> = cfg.points.clone().unwrap_or_else(|| {
                (0..61).map(|k| -3.0 + 0.05 * k as f64).collect()
            });
            let rows: Vec<(String, f64)> = pts
                .iter()
                .map(|&x| (crate::sig9(x), ext.extended.value(&[x])))
                .collect();
            let payload = match cfg.format {
                OutputFormat::Json => to_json(&serde_json::json!({
                    "x": pts,
                    "value": rows.iter().map(|(_, v)| *v).collect::<Vec<_>>(),
                })),
                OutputFormat::Csv => {
                    let mut s = String::from("x,value\r\n");
                    for (x, v) in &rows {
                        s.push_str(&format!("{},{}\r\n", x, crate::sig9(*v)));
                    }
                    s
                }
            };
            Ok(RunOutcome {
                payload,
                exit_code: 0,
            })
        }
        Command::Rayleigh => {
            let u = need_trial(cfg)?;
            let op = cfg
                .operator
                .ok_or_else(|| FracError::Config("rayleigh needs an 'operator' entry".into()))?;
            let r = analysis::rayleigh(u, op, params, &spec)?;
            let rows = vec![
                ("quotient".to_string(), r.quotient),
                ("numerator".to_string(), r.numerator.value),
                ("numerator_err".to_string(), r.numerator.err_est),
                ("denominator".to_string(), r.denominator.value),
                ("denominator_err".to_string(), r.denominator.err_est),
            ];
            let payload = match cfg.format {
                OutputFormat::Json => to_json(&r),
                OutputFormat::Csv => render_pairs(&rows, OutputFormat::Csv),
            };
            Ok(RunOutcome {
                payload,
                exit_code: 0,
            })
        }
        Command::Minimize => {
            let op = cfg
                .operator
                .ok_or_else(|| FracError::Config("minimize needs an 'operator' entry".into()))?;
            let out = analysis::minimize_quotient(op, params, &cfg.optimizer, &spec)?;
            let mut rows = vec![("best_quotient".to_string(), out.best.quotient)];
            for (i, v) in out.restart_values.iter().enumerate() {
                rows.push((format!("restart_{i}"), *v));
            }
            let payload = match cfg.format {
                OutputFormat::Json => to_json(&out),
                OutputFormat::Csv => render_pairs(&rows, OutputFormat::Csv),
            };
            Ok(RunOutcome {
                payload,
                exit_code: 0,
            })
        }
        Command::Identities => {
            let tol = cfg.identity_tol.unwrap_or(1e-4);
            let records = analysis::identity_suite(params, &spec, tol)?;
            let all_pass = records.iter().all(|r| r.pass);
            let payload = match cfg.format {
                OutputFormat::Json => to_json(&records),
                OutputFormat::Csv => {
                    let mut s = format!("{}\r\n", analysis::IdentityRecord::CSV_HEADER);
                    for r in &records {
                        s.push_str(&r.csv_row());
                        s.push_str("\r\n");
                    }
                    s
                }
            };
            Ok(RunOutcome {
                payload,
                exit_code: if all_pass { 0 } else { 1 },
            })
        }
        Command::Gaps => {
            let report = analysis::theorem_gap_report(params, &cfg.optimizer, &spec)?;
            let mut code = 0;
            for item in &report.items {
                match item.resolved {
                    Some(false) => code = 1,
                    None => eprintln!("fraclap: warning: {} unresolved within error bars", item.name),
                    Some(true) => {}
                }
            }
            let payload = match cfg.format {
                OutputFormat::Json => to_json(&report),
                OutputFormat::Csv => {
                    let mut s = String::from("name,value,reference,err,resolved\r\n");
                    for it in &report.items {
                        s.push_str(&format!(
                            "{},{},{},{},{}\r\n",
                            it.name,
                            crate::sig9(it.value),
                            crate::sig9(it.reference),
                            crate::sig9(it.err),
                            match it.resolved {
                                Some(true) => "true",
                                Some(false) => "false",
                                None => "unresolved",
                            }
                        ));
                    }
                    s.push_str(&format!(
                        "chain_threshold,{},,,\r\n",
                        crate::sig9(report.threshold_constant)
                    ));
                    for (sv, sr, half_d, ratio) in &report.high_order_table {
                        s.push_str(&format!(
                            "high_order_s_{},{},{},{},\r\n",
                            crate::sig9(*sv),
                            crate::sig9(*sr),
                            crate::sig9(*half_d),
                            crate::sig9(*ratio),
                        ));
                    }
                    s
                }
            };
            Ok(RunOutcome {
                payload,
                exit_code: code,
            })
        }
        Command::Limits => {
            let u = need_trial(cfg)?;
            let grid = cfg
                .s_grid
                .clone()
                .unwrap_or_else(|| vec![0.02, 0.1, 0.5, 0.9, 0.98]);
            let table = analysis::limit_sweep(u, &grid, cfg.n, &spec)?;
            let payload = match cfg.format {
                OutputFormat::Json => to_json(&table),
                OutputFormat::Csv => {
                    let mut s = String::from(
                        "s,full,upper_pairs,semirestricted,semirestricted_extended,\
                         dev0_full,dev0_upper,dev0_semi,dev0_semi_ext,dev1_full,dev1_upper\r\n",
                    );
                    for r in &table.rows {
                        s.push_str(&format!(
                            "{},{},{},{},{},{},{},{},{},{},{}\r\n",
                            crate::sig9(r.s),
                            crate::sig9(r.full),
                            crate::sig9(r.upper_pairs),
                            crate::sig9(r.semirestricted),
                            crate::sig9(r.semirestricted_extended),
                            crate::sig9(r.dev0_full),
                            crate::sig9(r.dev0_upper),
                            crate::sig9(r.dev0_semi),
                            crate::sig9(r.dev0_semi_ext),
                            crate::sig9(r.dev1_full),
                            crate::sig9(r.dev1_upper),
                        ));
                    }
                    s
                }
            };
            Ok(RunOutcome {
                payload,
                exit_code: 0,
            })
        }
        Command::Hardy => {
            let report = analysis::hardy_sobolev_report(params, &cfg.optimizer, &spec)?;
            let mut code = 0;
            if !report.identity_pass {
                code = 1;
            }
            if report.base_is_min == Some(false) {
                code = 1;
            }
            let payload = match cfg.format {
                OutputFormat::Json => to_json(&report),
                OutputFormat::Csv => {
                    let mut rows: Vec<(String, f64)> = report.quotients.clone();
                    rows.push(("identity_lhs".into(), report.identity_lhs));
                    rows.push(("identity_rhs".into(), report.identity_rhs));
                    if let Some(q) = report.base_quotient {
                        rows.push(("base_quotient".into(), q));
                    }
                    for (i, q) in report.perturbed_quotients.iter().enumerate() {
                        rows.push((format!("perturbed_{i}"), *q));
                    }
                    render_pairs(&rows, OutputFormat::Csv)
                }
            };
            Ok(RunOutcome {
                payload,
                exit_code: code,
            })
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable report") + "\n"
}

fn render_pairs(rows: &[(String, f64)], format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => {
            let map: serde_json::Map<String, serde_json::Value> = rows
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::json!(v)))
                .collect();
            to_json(&map)
        }
        OutputFormat::Csv => {
            let mut s = String::from("name,value\r\n");
            for (k, v) in rows {
                s.push_str(&format!("{},{}\r\n", k, crate::sig9(*v)));
            }
            s
        }
    }
}

fn render_energy(est: &EnergyEstimate, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => to_json(est),
        OutputFormat::Csv => format!("{}\r\n{}\r\n", EnergyEstimate::CSV_HEADER, est.csv_row()),
    }
}

/// Hash everything that determines the result (seeds included); the output
/// path and cache location do not participate.
fn content_hash(cfg: &RunConfig) -> Result<String> {
    let mut stripped = cfg.clone();
    stripped.out = None;
    stripped.cache_dir = None;
    let bytes = serde_json::to_vec(&stripped)
        .map_err(|e| FracError::Config(format!("cannot canonicalize config: {e}")))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

fn cache_lookup(dir: &Path, key: &str) -> Option<CacheEntry> {
    let path = dir.join(format!("{key}.json"));
    let text = fs::read_to_string(&path).ok()?;
    match serde_json::from_str::<CacheEntry>(&text) {
        Ok(e) => Some(e),
        Err(_) => {
            // corrupt entry: evict so the next run repopulates it
            let _ = fs::remove_file(&path);
            None
        }
    }
}

fn cache_store(dir: &Path, key: &str, entry: &CacheEntry) -> Result<()> {
    fs::create_dir_all(dir)?;
    let body = serde_json::to_string(entry)
        .map_err(|e| FracError::Config(format!("cache serialize: {e}")))?;
    atomic_write(&dir.join(format!("{key}.json")), body.as_bytes())
}

/// Write through a sibling temp file and rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn emit(cfg: &RunConfig, payload: &str) -> Result<()> {
    match &cfg.out {
        Some(path) => atomic_write(path, payload.as_bytes()),
        None => {
            print!("{payload}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: Command,
    config_hash: &'a str,
    seed: u64,
    budget: u64,
    format: OutputFormat,
    from_cache: bool,
}

fn write_manifest(cfg: &RunConfig, key: &str, from_cache: bool) -> Result<()> {
    let Some(out) = &cfg.out else { return Ok(()) };
    let manifest = Manifest {
        tool: "fraclap",
        version: env!("CARGO_PKG_VERSION"),
        command: cfg.command,
        config_hash: key,
        seed: cfg.spec.seed,
        budget: cfg.spec.budget,
        format: cfg.format,
        from_cache,
    };
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest.json");
    atomic_write(
        Path::new(&path),
        (serde_json::to_string_pretty(&manifest)
            .map_err(|e| FracError::Config(format!("manifest serialize: {e}")))?
            + "\n")
            .as_bytes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> RunConfig {
        RunConfig {
            command: Command::Constants,
            n: 1,
            s: 0.25,
            sigma: None,
            spec: QuadratureSpec::default(),
            optimizer: OptimizerConfig::default(),
            trial: None,
            region: None,
            operator: None,
            s_grid: None,
            points: None,
            identity_tol: None,
            out: None,
            format: OutputFormat::Csv,
            cache_dir: None,
        }
    }

    #[test]
    fn constants_csv_has_expected_shape() {
        let out = execute(&base_cfg()).unwrap();
        assert_eq!(out.exit_code, 0);
        let mut lines = out.payload.lines();
        assert_eq!(lines.next(), Some("name,value"));
        assert!(out.payload.contains("sobolev_const"));
    }

    #[test]
    fn energy_requires_region_and_trial() {
        let mut cfg = base_cfg();
        cfg.command = Command::Energy;
        assert!(matches!(execute(&cfg), Err(FracError::Config(_))));
    }

    #[test]
    fn content_hash_tracks_seed() {
        let a = base_cfg();
        let mut b = base_cfg();
        b.spec.seed = 7;
        assert_ne!(content_hash(&a).unwrap(), content_hash(&b).unwrap());
        // output location does not change the key
        let mut c = base_cfg();
        c.out = Some(PathBuf::from("/tmp/x.csv"));
        assert_eq!(content_hash(&a).unwrap(), content_hash(&c).unwrap());
    }

    #[test]
    fn corrupt_cache_entry_is_evicted() {
        let dir = std::env::temp_dir().join("fraclap_cache_test");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        let key = "deadbeef";
        fs::write(dir.join(format!("{key}.json")), b"{not json").unwrap();
        assert!(cache_lookup(&dir, key).is_none());
        assert!(!dir.join(format!("{key}.json")).exists());
        let entry = CacheEntry {
            exit_code: 0,
            format: OutputFormat::Csv,
            payload: "name,value\r\n".into(),
        };
        cache_store(&dir, key, &entry).unwrap();
        let hit = cache_lookup(&dir, key).unwrap();
        assert_eq!(hit.payload, entry.payload);
        let _ = fs::remove_dir_all(&dir);
    }
}
