//! Orchestration behind the `bloomlab` binary: config resolution, experiment
//! dispatch and bit-exact report emission.
//!
//! Outputs are written to a temporary name and atomically renamed, so a
//! crashed run never leaves a partial artifact. Reruns of the same effective
//! config produce byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use bloomlab_core::experiment::{
    bloom_ratio, duality_study, extremize_b, identity_suite, lemma_suite, lower_bound_study,
    norm_study, BmoModeChoice, ExperimentConfig, TrialRow, ValueKind,
};
use bloomlab_core::GridFunction;

/// Exit codes: success, identity/runtime failure, config error.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// The experiment a CLI invocation runs.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Subcommand {
    Identities,
    Lemmas,
    Bloom,
    LowerBound,
    Extremize,
    Duality,
    Norms,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Identities => "identities",
            Subcommand::Lemmas => "lemmas",
            Subcommand::Bloom => "bloom",
            Subcommand::LowerBound => "lower-bound",
            Subcommand::Extremize => "extremize",
            Subcommand::Duality => "duality",
            Subcommand::Norms => "norms",
        }
    }
}

/// A parsed invocation: subcommand, optional config file, overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub depth: Option<u32>,
    pub p: Option<f64>,
    pub seed: Option<u64>,
    pub trials: Option<u32>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub mode: Option<String>,
    pub reproducible: bool,
}

/// Errors surfaced as exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

/// Load the config file (when given) and apply command-line overrides.
/// Overrides always win; the result is the effective config echoed into
/// every artifact header.
pub fn resolve_config(overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut config: ExperimentConfig = match &overrides.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| ConfigError(format!("cannot parse {}: {e}", path.display())))?
        }
    };
    if let Some(d) = overrides.depth {
        config.depth = d;
    }
    if let Some(p) = overrides.p {
        config.p = p;
    }
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    if let Some(t) = overrides.trials {
        config.trials = t;
    }
    if overrides.reproducible {
        config.reproducible = true;
    }
    if let Some(mode) = &overrides.mode {
        config.bmo_mode = match mode.as_str() {
            "auto" => BmoModeChoice::Auto,
            "exact" => BmoModeChoice::Exact,
            "greedy" => BmoModeChoice::Greedy,
            "rect" => BmoModeChoice::Rect,
            other => return Err(ConfigError(format!("unknown --mode {other}"))),
        };
    }
    config
        .validate(false)
        .map_err(|e| ConfigError(e.to_string()))?;
    Ok(config)
}

#[derive(Serialize)]
struct Header<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    effective_config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    header: Header<'a>,
    body: T,
}

/// Fixed CSV column set; never varies within a tool version.
pub const CSV_HEADER: &str =
    "trial_id,L,p,seed,mu_ap,lambda_ap,nu_a2,b_bmoprod,b_bmolittle,k1,k2,v1,v2,value,value_kind";

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Render trial rows into the fixed CSV layout. Suites that emit several
/// measurements per trial produce one line per measurement, sharing the
/// trial id.
pub fn rows_to_csv(rows: &[TrialRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial_id,
            r.depth,
            r.p,
            r.seed,
            opt(&r.mu_ap),
            opt(&r.lambda_ap),
            opt(&r.nu_a2),
            opt(&r.b_bmoprod),
            opt(&r.b_bmolittle),
            opt(&r.k1),
            opt(&r.k2),
            opt(&r.v1),
            opt(&r.v2),
            r.value,
            r.value_kind.name(),
        );
    }
    out
}

/// Write to `<path>.tmp-<pid>` then rename, so readers never observe a
/// partial file.
pub fn atomic_write(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

/// Grid CSV layout: one line per `x_1` cell, comma-separated `x_2` values.
pub fn grid_to_csv(g: &GridFunction) -> String {
    let n = g.side();
    let mut out = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| g.get(i, j).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Inverse of [`grid_to_csv`].
pub fn grid_from_csv(text: &str) -> Result<GridFunction, ConfigError> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| ConfigError(e.to_string())))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    if n == 0 || !n.is_power_of_two() || rows.iter().any(|r| r.len() != n) {
        return Err(ConfigError("grid CSV must be square with power-of-two side".into()));
    }
    let depth = n.trailing_zeros();
    let mut values = Vec::with_capacity(n * n);
    for r in rows {
        values.extend(r);
    }
    Ok(GridFunction::new(depth, values))
}

fn emit<T: Serialize>(
    command: &str,
    config: &ExperimentConfig,
    body: T,
    rows: &[TrialRow],
    overrides: &Overrides,
) -> Result<(), String> {
    let report = Report {
        header: Header {
            tool: "bloomlab",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            effective_config: config,
        },
        body,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    match &overrides.out {
        Some(path) => atomic_write(path, &json).map_err(|e| e.to_string())?,
        None => println!("{json}"),
    }
    if let Some(path) = &overrides.csv {
        atomic_write(path, &rows_to_csv(rows)).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Run one invocation end to end. Returns the process exit code.
pub fn run(sub: Subcommand, overrides: &Overrides) -> i32 {
    let config = match resolve_config(overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let command = sub.name();
    let outcome: Result<(Value, Vec<TrialRow>, bool), String> = (|| match sub {
        Subcommand::Identities => {
            let rep = identity_suite(&config).map_err(|e| e.to_string())?;
            let rows = rep.rows_as_trial_rows(&config);
            let ok = rep.all_pass;
            if !ok {
                for f in &rep.failures {
                    eprintln!("identity failure: {f}");
                }
            }
            Ok((serde_json::to_value(&rep).map_err(|e| e.to_string())?, rows, ok))
        }
        Subcommand::Lemmas => {
            let rep = lemma_suite(&config).map_err(|e| e.to_string())?;
            let rows = rep.rows.clone();
            Ok((serde_json::to_value(&rep).map_err(|e| e.to_string())?, rows, true))
        }
        Subcommand::Bloom => {
            let rep = bloom_ratio(&config).map_err(|e| e.to_string())?;
            let rows = rep.rows.clone();
            Ok((serde_json::to_value(&rep).map_err(|e| e.to_string())?, rows, true))
        }
        Subcommand::LowerBound => {
            let rep = lower_bound_study(&config).map_err(|e| e.to_string())?;
            let rows = rep.rows.clone();
            Ok((serde_json::to_value(&rep).map_err(|e| e.to_string())?, rows, true))
        }
        Subcommand::Extremize => {
            let rep = extremize_b(&config).map_err(|e| e.to_string())?;
            let row = TrialRow {
                trial_id: 0,
                label: "extremize".into(),
                depth: config.depth,
                p: config.p,
                seed: config.seed,
                mu_ap: None,
                lambda_ap: None,
                nu_a2: None,
                b_bmoprod: Some(rep.bmo_value),
                b_bmolittle: None,
                k1: None,
                k2: None,
                v1: None,
                v2: None,
                value: rep.best_ratio,
                value_kind: ValueKind::Ratio,
            };
            Ok((serde_json::to_value(&rep).map_err(|e| e.to_string())?, vec![row], true))
        }
        Subcommand::Duality => {
            let rep = duality_study(&config).map_err(|e| e.to_string())?;
            let rows = rep.rows.clone();
            Ok((serde_json::to_value(&rep).map_err(|e| e.to_string())?, rows, true))
        }
        Subcommand::Norms => {
            let rep = norm_study(&config).map_err(|e| e.to_string())?;
            let rows = rep.rows.clone();
            Ok((serde_json::to_value(&rep).map_err(|e| e.to_string())?, rows, true))
        }
    })();
    match outcome {
        Ok((body, rows, ok)) => {
            if let Err(e) = emit(command, &config, body, &rows, overrides) {
                eprintln!("emit error: {e}");
                return EXIT_FAILURE;
            }
            if ok {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("{command} failed: {e}");
            EXIT_FAILURE
        }
    }
}
