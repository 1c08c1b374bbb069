//! Command-line front end: regions, rate tables, simulations and self-checks.
//!
//! Every command writes a versioned record (`schema = 1`) as CSV or JSON.
//! Flags may also come from a TOML file given with `--config`; flags on the
//! command line take precedence over the file.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytics::{dispersion_matrix, dispersions, jacobian_identity_error_with, v_rs, v_single, verify_jacobian_identity, DispersionMatrix, MatrixKind, PowerPair};
use crate::codec::{decoder_density_agreement, AgreementKind, DEFAULT_ENUMERATION_BUDGET};
use crate::mac_regions::{compare_regions, default_split_grid, linear_grid, mac_jnn_region, mac_sic_region, Case, SecondOrderRegion};
use crate::montecarlo::{rcu_bound_mc, simulate_mac, simulate_rac, MacSimConfig, RacSimConfig, SimResult};
use crate::noise::{make_noise, NoiseModel, NoiseSpec};
use crate::rac_rates::{first_order_gap, rate_table};
use crate::{Decoder, Error};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "macran", version, about = "Second-order rate regions and coding simulations for the Gaussian MAC and RAC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output encoding.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Display rates in bits instead of nats.
    #[arg(long, global = true)]
    pub bits: bool,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML file with default flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Second-order region boundary for one corner case of the MAC.
    Region(RegionArgs),
    /// Per-user RAC rates for a range of active-user counts.
    Rate(RateArgs),
    /// Simulate the two-user MAC.
    SimMac(SimMacArgs),
    /// Simulate the rateless random access code.
    SimRac(SimRacArgs),
    /// Run the identity and consistency checks.
    Verify(VerifyArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Region(_) => "region",
            Command::Rate(_) => "rate",
            Command::SimMac(_) => "sim-mac",
            Command::SimRac(_) => "sim-rac",
            Command::Verify(_) => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NoiseName {
    Gaussian,
    Uniform,
    Laplace,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RegionArgs {
    #[arg(long, value_enum)]
    pub decoder: Option<Decoder>,
    /// Emit both decoders and their gap.
    #[arg(long)]
    pub compare: bool,
    #[arg(long, value_enum)]
    pub case: Option<Case>,
    /// Time-sharing weight for cases i, iii and v.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub p2: Option<f64>,
    /// Fourth noise moment (3 for Gaussian).
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Smallest L1 on the output grid.
    #[arg(long)]
    pub l1_min: Option<f64>,
    /// Largest L1 on the output grid.
    #[arg(long)]
    pub l1_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RateArgs {
    #[arg(long)]
    pub k_min: Option<u32>,
    #[arg(long)]
    pub k_max: Option<u32>,
    /// Blocklength at which k users are decoded.
    #[arg(long)]
    pub n_k: Option<u64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Constant added to n C - sqrt(nV) Q^{-1}(eps).
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SimMacArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m1: Option<usize>,
    #[arg(long)]
    pub m2: Option<usize>,
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub p2: Option<f64>,
    #[arg(long, value_enum)]
    pub decoder: Option<Decoder>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseName>,
    /// `(value, probability)` pairs; config file only.
    #[arg(skip)]
    pub custom_noise: Option<Vec<(f64, f64)>>,
    /// Largest `M1 * M2` the JNN decoder may enumerate.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Also evaluate the RCU bound with this many inner samples.
    #[arg(long)]
    pub rcu_inner: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SimRacArgs {
    /// Number of active users.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of stages; with `--stage-len` the stage ends are `t * stage_len`.
    #[arg(long)]
    pub cap_k: Option<usize>,
    #[arg(long)]
    pub stage_len: Option<usize>,
    /// Cumulative stage ends, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub layout: Option<Vec<usize>>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    /// Stopping thresholds, one value or one per stage (default P/2).
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub decoder: Option<Decoder>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseName>,
    #[arg(skip)]
    pub custom_noise: Option<Vec<(f64, f64)>>,
    #[arg(long)]
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Smaller sample sizes.
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add this amount to every entry of the full dispersion matrix.
    #[arg(long, hide = true, allow_hyphen_values = true)]
    pub perturb: Option<f64>,
}

/// Failure of a command, mapped onto the process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing flag; exit 2.
    Usage(String),
    Lib(Error),
    /// Output could not be written; exit 1.
    Io(String),
    /// At least one verify check failed; exit 1.
    ChecksFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(Error::BudgetExceeded { .. }) => 3,
            CliError::Lib(Error::Io(_)) => 1,
            CliError::Lib(_) => 2,
            CliError::Io(_) | CliError::ChecksFailed => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Io(m) => m.clone(),
            CliError::Lib(Error::InvalidParameter { name, reason }) => format!("--{}: {reason}", name.replace('_', "-")),
            CliError::Lib(Error::BudgetExceeded { required, budget }) => {
                format!("--budget: decoding needs {required} candidates, budget is {budget}")
            }
            CliError::Lib(e) => e.to_string(),
            CliError::ChecksFailed => "one or more checks failed".into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("--{flag}: required")))
}

/// Parse `args` (including the program name), run, and return the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Run a parsed command line.
pub fn execute(mut cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let name = cli.command.name();
    let file = match &cli.config {
        Some(path) => Some(load_config(path)?),
        None => None,
    };
    if let Some(table) = &file {
        apply_globals(&mut cli, table)?;
        let section = table.get(name).or_else(|| table.get(&name.replace('-', "_")));
        let section = match section {
            None => None,
            Some(toml::Value::Table(t)) => Some(t),
            Some(_) => return Err(CliError::Usage(format!("--config: [{name}] must be a table"))),
        };
        cli.command = match cli.command {
            Command::Region(a) => Command::Region(overlay(&a, section, name)?),
            Command::Rate(a) => Command::Rate(overlay(&a, section, name)?),
            Command::SimMac(a) => Command::SimMac(overlay(&a, section, name)?),
            Command::SimRac(a) => Command::SimRac(overlay(&a, section, name)?),
            Command::Verify(a) => Command::Verify(overlay(&a, section, name)?),
        };
    }
    let scale = if cli.bits { std::f64::consts::LN_2.recip() } else { 1.0 };
    let ctx = Ctx { scale, units: if cli.bits { "bits" } else { "nats" } };
    let (text, failed) = match &cli.command {
        Command::Region(a) => (cmd_region(a, ctx, cli.format.unwrap_or(Format::Csv))?, false),
        Command::Rate(a) => (cmd_rate(a, ctx, cli.format.unwrap_or(Format::Csv))?, false),
        Command::SimMac(a) => (cmd_sim_mac(a, cli.format.unwrap_or(Format::Json))?, false),
        Command::SimRac(a) => (cmd_sim_rac(a, cli.format.unwrap_or(Format::Json))?, false),
        Command::Verify(a) => {
            let checks = run_checks(a)?;
            let failed = checks.iter().any(|c| !c.passed);
            (render_checks(&checks, cli.format), failed)
        }
    };
    match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("--out {}: {e}", path.display())))?,
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?,
    }
    if failed {
        return Err(CliError::ChecksFailed);
    }
    Ok(())
}

fn load_config(path: &std::path::Path) -> CliResult<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("--config {}: {}", path.display(), e.message())))
}

const SECTIONS: [&str; 5] = ["region", "rate", "sim-mac", "sim-rac", "verify"];

fn apply_globals(cli: &mut Cli, table: &toml::Table) -> CliResult<()> {
    for (key, value) in table {
        let bad = || CliError::Usage(format!("--config: bad value for `{key}`"));
        match key.as_str() {
            "format" if cli.format.is_none() => {
                let s = value.as_str().ok_or_else(bad)?;
                cli.format = Some(Format::from_str(s, true).map_err(|_| bad())?);
            }
            "bits" => cli.bits |= value.as_bool().ok_or_else(bad)?,
            "out" if cli.out.is_none() => cli.out = Some(PathBuf::from(value.as_str().ok_or_else(bad)?)),
            "format" | "out" => {}
            k if SECTIONS.contains(&k) || SECTIONS.contains(&k.replace('_', "-").as_str()) => {}
            _ => return Err(CliError::Usage(format!("--config: unknown key `{key}`"))),
        }
    }
    Ok(())
}

/// Fill flags absent from the command line with values from a config section.
fn overlay<T: Serialize + DeserializeOwned>(args: &T, section: Option<&toml::Table>, name: &str) -> CliResult<T> {
    let mut base = serde_json::to_value(args).expect("argument structs serialize");
    if let Some(section) = section {
        let obj = base.as_object_mut().expect("argument structs are maps");
        for (key, value) in section {
            let slot = obj
                .get_mut(&key.replace('-', "_"))
                .ok_or_else(|| CliError::Usage(format!("--config: unknown key `{key}` in [{name}]")))?;
            if slot.is_null() || *slot == Value::Bool(false) {
                *slot = serde_json::to_value(value).map_err(|e| CliError::Usage(format!("--config: {key}: {e}")))?;
            }
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("--config: [{name}]: {e}")))
}

#[derive(Debug, Clone, Copy)]
struct Ctx {
    scale: f64,
    units: &'static str,
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn cmd_region(a: &RegionArgs, ctx: Ctx, format: Format) -> CliResult<String> {
    let case = required(a.case, "case")?;
    let pp = PowerPair::new(required(a.p1, "p1")?, required(a.p2, "p2")?)?;
    let eps = required(a.eps, "eps")?;
    let xi = a.xi.unwrap_or(3.0);
    let (lo, hi) = (a.l1_min.unwrap_or(0.0), a.l1_max.unwrap_or(3.0));
    let points = a.points.unwrap_or(50);
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(CliError::Usage("--l1-min: must not exceed --l1-max".into()));
    }
    if points < 1 {
        return Err(CliError::Usage("--points: must be at least 1".into()));
    }
    let grid = linear_grid(lo, hi, points);
    let build = |d: Decoder| -> CliResult<SecondOrderRegion> {
        Ok(match d {
            Decoder::Jnn => mac_jnn_region(case, a.alpha, pp, xi, eps)?,
            Decoder::Sic => mac_sic_region(case, a.alpha, pp, xi, eps, &default_split_grid(eps))?,
        })
    };
    let decoder = a.decoder.unwrap_or(Decoder::Jnn);
    let s = ctx.scale;
    let (header, rows): (Vec<&str>, Vec<Vec<f64>>) = if a.compare {
        let jnn = build(Decoder::Jnn)?;
        let sic = build(Decoder::Sic)?;
        let pts = compare_regions(&jnn, &sic, &grid)?;
        (
            vec!["l1", "l2_jnn", "l2_sic", "gap"],
            pts.iter().map(|p| vec![p.l1 * s, p.l2_jnn * s, p.l2_sic * s, p.gap * s]).collect(),
        )
    } else {
        let r = build(decoder)?;
        (vec!["l1", "l2"], r.sample(&grid).iter().map(|&(l1, l2)| vec![l1 * s, l2 * s]).collect())
    };
    let rates = crate::mac_regions::boundary_rate_pair(case, a.alpha, pp)?;
    Ok(match format {
        Format::Csv => {
            let mut h = vec!["schema"];
            h.extend(&header);
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| std::iter::once(SCHEMA.to_string()).chain(r.iter().map(|v| v.to_string())).collect())
                .collect();
            csv(&h, &body)
        }
        Format::Json => {
            let pts: Vec<Value> = rows
                .iter()
                .map(|r| Value::Object(header.iter().zip(r).map(|(k, v)| (k.to_string(), num(*v))).collect()))
                .collect();
            json_text(&json!({
                "schema": SCHEMA,
                "command": "region",
                "units": ctx.units,
                "decoder": if a.compare { Value::Null } else { json!(decoder) },
                "compare": a.compare,
                "case": case,
                "alpha": rates.alpha,
                "p1": pp.p1(),
                "p2": pp.p2(),
                "xi": xi,
                "eps": eps,
                "r1_star": rates.r1_star * s,
                "r2_star": rates.r2_star * s,
                "points": pts,
            }))
        }
    })
}

fn cmd_rate(a: &RateArgs, ctx: Ctx, format: Format) -> CliResult<String> {
    let (k_min, k_max) = (a.k_min.unwrap_or(1), a.k_max.unwrap_or(8));
    if k_min < 1 || k_min > k_max {
        return Err(CliError::Usage("--k-min: need 1 <= k-min <= k-max".into()));
    }
    let n_k = required(a.n_k, "n-k")?;
    let p = required(a.p, "p")?;
    let eps = required(a.eps, "eps")?;
    let xi = a.xi.unwrap_or(3.0);
    let offset = a.offset.unwrap_or(0.0);
    let ks: Vec<u32> = (k_min..=k_max).collect();
    let rows = rate_table(&ks, n_k, p, xi, eps, offset)?;
    let s = ctx.scale;
    Ok(match format {
        Format::Csv => csv(
            &["schema", "k", "jnn", "sic", "mu_k"],
            &rows
                .iter()
                .map(|r| vec![SCHEMA.to_string(), r.k.to_string(), (r.jnn * s).to_string(), (r.sic * s).to_string(), (r.mu_k * s).to_string()])
                .collect::<Vec<_>>(),
        ),
        Format::Json => json_text(&json!({
            "schema": SCHEMA,
            "command": "rate",
            "units": ctx.units,
            "n_k": n_k,
            "p": p,
            "xi": xi,
            "eps": eps,
            "offset": offset,
            "rows": rows.iter().map(|r| json!({"k": r.k, "jnn": r.jnn * s, "sic": r.sic * s, "mu_k": r.mu_k * s})).collect::<Vec<_>>(),
        })),
    })
}

fn noise_of(name: Option<NoiseName>, custom: &Option<Vec<(f64, f64)>>) -> CliResult<(NoiseSpec, NoiseModel)> {
    let spec = match (name, custom) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--noise: conflicts with custom_noise".into())),
        (_, Some(pairs)) => NoiseSpec::CustomDiscrete(pairs.clone()),
        (None | Some(NoiseName::Gaussian), None) => NoiseSpec::Gaussian,
        (Some(NoiseName::Uniform), None) => NoiseSpec::Uniform,
        (Some(NoiseName::Laplace), None) => NoiseSpec::Laplace,
    };
    let model = make_noise(&spec).map_err(|e| match e {
        Error::InvalidParameter { reason, .. } => CliError::Usage(format!("--noise: {reason}")),
        Error::DegenerateNoise => CliError::Usage("--noise: zero-variance distribution".into()),
        e => CliError::Lib(e),
    })?;
    Ok((spec, model))
}

fn sim_output(format: Format, command: &str, config: Value, result: &SimResult, extra: Option<(&str, f64)>) -> String {
    match format {
        Format::Json => {
            let mut v = json!({
                "schema": SCHEMA,
                "command": command,
                "config": config,
                "result": result,
            });
            if let Some((k, x)) = extra {
                v[k] = num(x);
            }
            json_text(&v)
        }
        Format::Csv => {
            let mut h = vec!["schema", "p_err_hat", "ci95_halfwidth", "trials", "errors"];
            let mut r = vec![
                SCHEMA.to_string(),
                result.p_err_hat.to_string(),
                result.ci95_halfwidth.to_string(),
                result.trials.to_string(),
                result.errors.to_string(),
            ];
            if let Some(b) = result.breakdown {
                h.extend(["rep", "time", "msg"]);
                r.extend([b.rep.to_string(), b.time.to_string(), b.msg.to_string()]);
            }
            if let Some((k, x)) = extra {
                h.push(k);
                r.push(x.to_string());
            }
            csv(&h, &[r])
        }
    }
}

fn cmd_sim_mac(a: &SimMacArgs, format: Format) -> CliResult<String> {
    let pp = PowerPair::new(required(a.p1, "p1")?, required(a.p2, "p2")?)?;
    let (spec, noise) = noise_of(a.noise, &a.custom_noise)?;
    let cfg = MacSimConfig {
        n: required(a.n, "n")?,
        m1: required(a.m1, "m1")?,
        m2: required(a.m2, "m2")?,
        pp,
        noise,
        decoder: a.decoder.unwrap_or(Decoder::Jnn),
        trials: a.trials.unwrap_or(1000),
        master_seed: a.seed.unwrap_or(0),
        budget: a.budget.unwrap_or(DEFAULT_ENUMERATION_BUDGET),
    };
    let result = simulate_mac(&cfg)?;
    let rcu = match a.rcu_inner {
        Some(inner) => Some(rcu_bound_mc(&cfg, inner)?),
        None => None,
    };
    let config = json!({
        "n": cfg.n,
        "m1": cfg.m1,
        "m2": cfg.m2,
        "p1": pp.p1(),
        "p2": pp.p2(),
        "decoder": cfg.decoder,
        "trials": cfg.trials,
        "seed": cfg.master_seed,
        "noise": spec,
        "xi": cfg.noise.xi(),
        "budget": cfg.budget,
        "rcu_inner": a.rcu_inner,
    });
    Ok(sim_output(format, "sim-mac", config, &result, rcu.map(|b| ("rcu_bound", b))))
}

fn cmd_sim_rac(a: &SimRacArgs, format: Format) -> CliResult<String> {
    let p = required(a.p, "p")?;
    let layout = match (&a.layout, a.stage_len) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--layout: conflicts with --stage-len".into())),
        (Some(l), None) => {
            if a.cap_k.is_some_and(|k| k != l.len()) {
                return Err(CliError::Usage(format!("--cap-k: layout has {} stages", l.len())));
            }
            l.clone()
        }
        (None, Some(len)) => {
            let cap_k = required(a.cap_k, "cap-k")?;
            (1..=cap_k).map(|t| t * len).collect()
        }
        (None, None) => return Err(CliError::Usage("--layout: required (or --stage-len with --cap-k)".into())),
    };
    let (spec, noise) = noise_of(a.noise, &a.custom_noise)?;
    let mut cfg = RacSimConfig::new(
        required(a.k, "k")?,
        required(a.m, "m")?,
        p,
        layout,
        a.decoder.unwrap_or(Decoder::Jnn),
        a.trials.unwrap_or(1000),
        a.seed.unwrap_or(0),
    );
    cfg.noise = noise;
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    if let Some(l) = &a.lambda {
        cfg.lambdas = match l.len() {
            1 => vec![l[0]; cfg.cap_k],
            n if n == cfg.cap_k => l.clone(),
            n => return Err(CliError::Usage(format!("--lambda: expected 1 or {} values, got {n}", cfg.cap_k))),
        };
    }
    let result = simulate_rac(&cfg)?;
    let config = json!({
        "k": cfg.k_active,
        "cap_k": cfg.cap_k,
        "layout": cfg.layout,
        "m": cfg.m,
        "p": cfg.p,
        "lambda": cfg.lambdas,
        "decoder": cfg.decoder,
        "trials": cfg.trials,
        "seed": cfg.master_seed,
        "noise": spec,
        "xi": cfg.noise.xi(),
        "budget": cfg.budget,
    });
    Ok(sim_output(format, "sim-rac", config, &result, None))
}

/// Outcome of one verify check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn run_checks(a: &VerifyArgs) -> CliResult<Vec<CheckOutcome>> {
    let delta = a.perturb.unwrap_or(0.0);
    let formula = move |pp: PowerPair, xi: f64| -> crate::Result<DispersionMatrix> {
        let v = dispersion_matrix(MatrixKind::Vfull, pp, xi)?;
        if delta == 0.0 {
            return Ok(v);
        }
        DispersionMatrix::from_matrix(v.as_matrix().map(|x| x + delta))
    };
    Ok(verify_checks(a.quick, a.seed.unwrap_or(0), &formula)?)
}

/// The verify suite against a caller-supplied full dispersion formula.
pub fn verify_checks<F>(quick: bool, seed: u64, vfull: &F) -> crate::Result<Vec<CheckOutcome>>
where
    F: Fn(PowerPair, f64) -> crate::Result<DispersionMatrix>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let draws = if quick { 5 } else { 20 };
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let pp = PowerPair::new(rng.random_range(0.1..50.0), rng.random_range(0.1..50.0))?;
        for xi in [1.0, 1.8, 3.0, 6.0] {
            worst = worst.max(jacobian_identity_error_with(pp, xi, vfull)?);
        }
    }
    out.push(check("jacobian-identity", worst <= 1e-12, format!("max_abs_error={worst:e}")));

    let mut worst = 0.0f64;
    for i in 0..100 {
        let p = 0.01 * 10f64.powf(4.0 * i as f64 / 99.0);
        let xi = [1.0, 1.8, 3.0, 6.0][i % 4];
        let k = 1 + (i % 10) as u32;
        worst = worst.max((v_rs(k, k, p, xi) - v_single(p, xi)).abs());
        worst = worst.max((v_rs(2, 1, p, xi) - dispersions(PowerPair::new(p, p)?, xi)?.v_1).abs());
    }
    out.push(check("rs-reductions", worst <= 1e-12, format!("max_abs_error={worst:e}")));

    let mut max_mu = f64::NEG_INFINITY;
    let mut ok = first_order_gap(1, 1.0)? == 0.0;
    for k in 2..=50 {
        for p in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let mu = first_order_gap(k, p)?;
            max_mu = max_mu.max(mu);
            ok &= mu < 0.0;
        }
    }
    out.push(check("mu-sweep", ok, format!("max_mu={max_mu:e}")));

    let instances = if quick { 100 } else { 1000 };
    for kind in AgreementKind::ALL {
        let r = decoder_density_agreement(kind, instances, 16, 40, seed)?;
        let name = match kind {
            AgreementKind::MacJnn => "agreement-mac-jnn",
            AgreementKind::MacSicStep1 => "agreement-mac-sic",
            AgreementKind::RacJnnT2 => "agreement-rac-jnn",
            AgreementKind::RacSic => "agreement-rac-sic",
        };
        out.push(check(name, r.mismatches == 0, format!("mismatches={}/{}", r.mismatches, r.instances)));
    }

    if !quick {
        let pp = PowerPair::new(5.0, 2.0)?;
        let rep = verify_jacobian_identity(pp, &NoiseModel::gaussian(), 200_000, seed)?;
        out.push(check("a-vector-covariance", rep.empirical_max_z <= 5.0, format!("max_z={:.3}", rep.empirical_max_z)));
    }
    Ok(out)
}

fn render_checks(checks: &[CheckOutcome], format: Option<Format>) -> String {
    match format {
        None => checks
            .iter()
            .map(|c| format!("{} {} {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
            .collect(),
        Some(Format::Csv) => csv(
            &["schema", "check", "passed", "detail"],
            &checks
                .iter()
                .map(|c| vec![SCHEMA.to_string(), c.name.to_string(), c.passed.to_string(), c.detail.clone()])
                .collect::<Vec<_>>(),
        ),
        Some(Format::Json) => json_text(&json!({
            "schema": SCHEMA,
            "command": "verify",
            "passed": checks.iter().all(|c| c.passed),
            "checks": checks,
        })),
    }
}
