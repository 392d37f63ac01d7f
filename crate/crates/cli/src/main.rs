//! `udp`: accounting, calibration, divergence checks, variance curves,
//! simulation sweeps and ULS configuration from the command line.

mod output;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use udp_core::heuristics::{estimate_and_double, DoublingConfig, DEFAULT_PROBE_USERS};
use udp_core::mechanisms::{calibrate_sigma, EventFamily, EventSpec};
use udp_core::pld::{self, AccountantConfig, Discretization, PrivacyParams};
use udp_core::rdp::{check_group_scaling_grid, default_group_scaling_grid, GROUP_SCALING_CSV_HEADER};
use udp_core::sim::{
    default_clip_grid, default_lr_grid, generate_synthetic, sweep, SweepConfig, SyntheticSpec,
    Variant, SAMPLING_CAVEAT, SWEEP_CSV_HEADER,
};
use udp_core::variance::{variance_curves, BudgetSetting, VARIANCE_CSV_HEADER};
use udp_core::Error;

use output::{fmt_g, round_json, write_atomic, Metadata};

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  I/O failure
  2  usage error or invalid parameter
  3  unsatisfiable privacy target
  4  numeric capacity exceeded (use a coarser grid or smaller enumeration)

Environment:
  UDP_THREADS  maximum number of worker threads";

#[derive(Parser)]
#[command(name = "udp", version, about = "User-level differential privacy toolkit for DP-SGD", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smallest ε meeting δ for a composed sampling event.
    Epsilon(EpsilonArgs),
    /// Symmetrized δ(ε) for a composed sampling event.
    Delta(DeltaArgs),
    /// Smallest noise multiplier meeting (ε, δ).
    Calibrate(CalibrateArgs),
    /// Check the grouped-versus-single Rényi divergence inequality over a grid.
    RenyiCheck(RenyiArgs),
    /// Tabulate ELS and ULS noise variances over compute budgets and ε.
    CompareVariance(VarianceArgs),
    /// Sweep DP-SGD on the synthetic mean-estimation task.
    SimulateMean(SimulateArgs),
    /// Choose the ULS group and cohort sizes by Estimate-and-Double.
    ConfigureUls(ConfigureArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Els,
    Uls,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DiscretizationArg {
    ConnectDots,
    RoundUp,
}

#[derive(Args, Debug, Serialize)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write the result here (atomically) instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AccountantArgs {
    #[arg(long, default_value_t = 1e-3)]
    grid_spacing: f64,
    #[arg(long, default_value_t = 1e-15)]
    tail_mass: f64,
    #[arg(long, value_enum, default_value = "connect-dots")]
    discretization: DiscretizationArg,
    #[arg(long, default_value_t = 1 << 22)]
    bucket_cap: usize,
}

impl AccountantArgs {
    fn config(&self) -> AccountantConfig {
        AccountantConfig {
            grid_spacing: self.grid_spacing,
            tail_mass: self.tail_mass,
            discretization: match self.discretization {
                DiscretizationArg::ConnectDots => Discretization::ConnectDots,
                DiscretizationArg::RoundUp => Discretization::RoundUp,
            },
            bucket_cap: self.bucket_cap,
            ..AccountantConfig::default()
        }
    }
}

/// A sampling event given either as JSON or as separate flags.
#[derive(Args, Debug, Serialize)]
struct EventArgs {
    /// Event as JSON, e.g. '{"kind":"els","sigma":4,"p":0.01,"K":8,"T":2000}'.
    #[arg(long, conflicts_with_all = ["kind", "sigma", "p", "q", "group_size", "steps"])]
    event: Option<String>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Example sampling probability (ELS).
    #[arg(long)]
    p: Option<f64>,
    /// User sampling probability (ULS).
    #[arg(long)]
    q: Option<f64>,
    /// Group size (ELS).
    #[arg(long = "K")]
    group_size: Option<u32>,
    /// Number of steps.
    #[arg(long = "T")]
    steps: Option<u64>,
}

fn missing(flag: &str) -> Error {
    Error::InvalidParameter(format!("missing --{flag}"))
}

impl EventArgs {
    fn family(&self) -> Result<EventFamily, Error> {
        let steps = self.steps.ok_or_else(|| missing("T"))?;
        match self.kind.ok_or_else(|| missing("kind"))? {
            Kind::Els => Ok(EventFamily::Els {
                p: self.p.ok_or_else(|| missing("p"))?,
                group_size: self.group_size.ok_or_else(|| missing("K"))?,
                steps,
            }),
            Kind::Uls => Ok(EventFamily::Uls {
                q: self.q.ok_or_else(|| missing("q"))?,
                steps,
            }),
        }
    }

    fn spec(&self) -> Result<EventSpec, Error> {
        let spec = match &self.event {
            Some(s) => serde_json::from_str(s)
                .map_err(|e| Error::InvalidParameter(format!("bad --event JSON: {e}")))?,
            None => self
                .family()?
                .with_sigma(self.sigma.ok_or_else(|| missing("sigma"))?),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug, Serialize)]
struct EpsilonArgs {
    #[command(flatten)]
    event: EventArgs,
    #[arg(long)]
    delta: f64,
    /// Also write both composed loss distributions as JSON.
    #[arg(long)]
    pld_out: Option<PathBuf>,
    #[command(flatten)]
    accountant: AccountantArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct DeltaArgs {
    #[command(flatten)]
    event: EventArgs,
    #[arg(long)]
    epsilon: f64,
    #[command(flatten)]
    accountant: AccountantArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct CalibrateArgs {
    /// Request as JSON: an event without sigma plus epsilon and delta.
    #[arg(long, conflicts_with_all = ["kind", "p", "q", "group_size", "steps", "epsilon", "delta"])]
    request: Option<String>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long = "K")]
    group_size: Option<u32>,
    #[arg(long = "T")]
    steps: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[command(flatten)]
    accountant: AccountantArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GridChoice {
    Default,
    Custom,
}

#[derive(Args, Debug, Serialize)]
struct RenyiArgs {
    #[arg(long, value_enum, default_value = "default")]
    grid: GridChoice,
    #[arg(long, value_delimiter = ',', default_values_t = [2u32, 3, 4, 8])]
    alpha: Vec<u32>,
    #[arg(long = "K", value_delimiter = ',', default_values_t = [2u32, 4, 8, 16])]
    group_size: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 0.5])]
    p: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0])]
    sigma: Vec<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct VarianceArgs {
    #[arg(long, default_value_t = 1024)]
    users: u64,
    #[arg(long, default_value_t = 32)]
    examples_per_user: u32,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    /// ULS cohort size `M`; budgets default to `M * 2^k` up to `M * K`.
    #[arg(long, default_value_t = 16)]
    cohort: u64,
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<u64>,
    #[arg(long, default_value_t = 32)]
    g_els: u32,
    #[arg(long, default_value_t = 10.0)]
    l_els: f64,
    #[arg(long, default_value_t = 1)]
    dim: u32,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 1.0, 4.0, 16.0, 64.0])]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[command(flatten)]
    accountant: AccountantArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    #[arg(long, default_value_t = 256)]
    users: usize,
    #[arg(long, default_value_t = 16)]
    examples_per_user: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma1: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    variant: Kind,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, default_value_t = 64)]
    budget: usize,
    #[arg(long, default_value_t = 256)]
    steps: u64,
    /// Defaults to `K` for ELS and `1,2,4,..,K` for ULS.
    #[arg(long, value_delimiter = ',')]
    group_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    lr_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    clip_grid: Vec<f64>,
    #[arg(long, default_value_t = 128)]
    trials: usize,
    #[arg(long)]
    master_seed: u64,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    accountant: AccountantArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct ConfigureArgs {
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, default_value_t = 256)]
    steps: u64,
    #[arg(long, default_value_t = 1)]
    g0: usize,
    #[arg(long, default_value_t = 1)]
    m0: usize,
    #[arg(long, default_value_t = DEFAULT_PROBE_USERS)]
    probe_users: usize,
    #[arg(long, alias = "seed")]
    master_seed: u64,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    accountant: AccountantArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Core(Error::InvalidParameter(_)) => 2,
            Failure::Core(Error::Unsatisfiable(_) | Error::BracketExhausted { .. }) => 3,
            Failure::Core(Error::CapacityExceeded { .. } | Error::TooLarge { .. }) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Io(_) => "io",
            Failure::Core(Error::InvalidParameter(_)) => "invalid_parameter",
            Failure::Core(Error::Unsatisfiable(_)) => "unsatisfiable",
            Failure::Core(Error::BracketExhausted { .. }) => "bracket_exhausted",
            Failure::Core(Error::CapacityExceeded { .. }) => "capacity_exceeded",
            Failure::Core(Error::TooLarge { .. }) => "too_large",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Io(e) => e.to_string(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Flatten serialized arguments into `(flag, value)` pairs, skipping output plumbing.
fn flag_list(args: &impl Serialize) -> Vec<(String, String)> {
    fn walk(v: &Value, out: &mut Vec<(String, String)>) {
        let Value::Object(map) = v else { return };
        for (k, v) in map {
            if matches!(k.as_str(), "out" | "pld_out") {
                continue;
            }
            walk(v, out);
            if !v.is_object() {
                let value = match v {
                    Value::String(s) => s.clone(),
                    Value::Null => "none".into(),
                    Value::Number(n) => n.as_f64().map(fmt_g).unwrap_or_else(|| n.to_string()),
                    Value::Array(a) => a
                        .iter()
                        .map(|x| x.as_f64().map(fmt_g).unwrap_or_else(|| x.to_string()))
                        .collect::<Vec<_>>()
                        .join(","),
                    other => other.to_string(),
                };
                out.push((k.replace('_', "-"), value));
            }
        }
    }
    let mut out = Vec::new();
    walk(&serde_json::to_value(args).expect("serializable"), &mut out);
    out
}

fn metadata(command: &str, args: &impl Serialize) -> Metadata {
    Metadata {
        command: command.to_string(),
        flags: flag_list(args),
        caveat: SAMPLING_CAVEAT,
    }
}

/// Emit a single number: bare on stdout, or with metadata in a file or as JSON.
fn emit_scalar(meta: &Metadata, output: &OutputArgs, name: &str, value: f64) -> CmdResult {
    let body = match output.format {
        Format::Csv => match &output.out {
            Some(_) => format!("{}{name}\n{}\n", meta.csv_header(), fmt_g(value)),
            None => format!("{}\n", fmt_g(value)),
        },
        Format::Json => {
            let doc = json!({ "metadata": meta.json(), name: round_json(json!(value)) });
            format!("{}\n", serde_json::to_string_pretty(&doc).expect("json"))
        }
    };
    emit(output, &body)
}

/// Emit a table given CSV rows and the equivalent JSON rows.
fn emit_table(meta: &Metadata, output: &OutputArgs, header: &str, rows: &[String], json_rows: Value) -> CmdResult {
    let body = match output.format {
        Format::Csv => {
            let mut s = meta.csv_header();
            s.push_str(header);
            s.push('\n');
            for r in rows {
                s.push_str(r);
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let doc = json!({ "metadata": meta.json(), "rows": round_json(json_rows) });
            format!("{}\n", serde_json::to_string_pretty(&doc).expect("json"))
        }
    };
    emit(output, &body)
}

fn emit(output: &OutputArgs, body: &str) -> CmdResult {
    match &output.out {
        Some(path) => write_atomic(path, body)?,
        None => print!("{body}"),
    }
    Ok(())
}

fn cmd_epsilon(args: &EpsilonArgs) -> CmdResult {
    let spec = args.event.spec()?;
    let cfg = args.accountant.config();
    let pair = pld::composed_pair(&spec.mechanism()?, spec.steps(), &cfg)?;
    let eps = pair.epsilon_at_delta(args.delta)?;
    if let Some(path) = &args.pld_out {
        let doc = json!({
            "add": serde_json::to_value(&pair.add).expect("json"),
            "remove": serde_json::to_value(&pair.remove).expect("json"),
        });
        write_atomic(path, &serde_json::to_string(&doc).expect("json"))?;
    }
    emit_scalar(&metadata("epsilon", args), &args.output, "epsilon", eps)
}

fn cmd_delta(args: &DeltaArgs) -> CmdResult {
    let spec = args.event.spec()?;
    let cfg = args.accountant.config();
    let delta = pld::symmetric_delta(&spec.mechanism()?, spec.steps(), args.epsilon, &cfg)?;
    emit_scalar(&metadata("delta", args), &args.output, "delta", delta)
}

fn cmd_calibrate(args: &CalibrateArgs) -> CmdResult {
    let (family, target) = match &args.request {
        Some(s) => {
            let v: Value = serde_json::from_str(s)
                .map_err(|e| Error::InvalidParameter(format!("bad --request JSON: {e}")))?;
            let family: EventFamily = serde_json::from_value(v.clone())
                .map_err(|e| Error::InvalidParameter(format!("bad --request event: {e}")))?;
            let get = |k: &str| v.get(k).and_then(Value::as_f64).ok_or_else(|| missing(k));
            (family, PrivacyParams::new(get("epsilon")?, get("delta")?)?)
        }
        None => {
            let event = EventArgs {
                event: None,
                kind: args.kind,
                sigma: None,
                p: args.p,
                q: args.q,
                group_size: args.group_size,
                steps: args.steps,
            };
            let target = PrivacyParams::new(
                args.epsilon.ok_or_else(|| missing("epsilon"))?,
                args.delta.ok_or_else(|| missing("delta"))?,
            )?;
            (event.family()?, target)
        }
    };
    let sigma = calibrate_sigma(&family, target, &args.accountant.config())?;
    emit_scalar(&metadata("calibrate", args), &args.output, "sigma", sigma)
}

fn cmd_renyi(args: &RenyiArgs) -> CmdResult {
    let grid = match args.grid {
        GridChoice::Default => default_group_scaling_grid(),
        GridChoice::Custom => {
            let mut g = Vec::new();
            for &a in &args.alpha {
                for &k in &args.group_size {
                    for &p in &args.p {
                        for &s in &args.sigma {
                            g.push((a, k, p, s));
                        }
                    }
                }
            }
            g
        }
    };
    let rows = check_group_scaling_grid(&grid)?;
    let csv: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                r.alpha,
                r.group_size,
                fmt_g(r.p),
                fmt_g(r.sigma),
                fmt_g(r.lhs),
                fmt_g(r.rhs),
                r.holds,
                fmt_g(r.reverse_lhs),
                fmt_g(r.reverse_rhs),
                r.reverse_holds
            )
        })
        .collect();
    emit_table(
        &metadata("renyi-check", args),
        &args.output,
        GROUP_SCALING_CSV_HEADER,
        &csv,
        serde_json::to_value(&rows).expect("json"),
    )
}

fn cmd_variance(args: &VarianceArgs) -> CmdResult {
    let budgets: Vec<u64> = if args.budgets.is_empty() {
        (0..)
            .map(|k| args.cohort << k)
            .take_while(|&b| b <= args.cohort * args.examples_per_user as u64)
            .collect()
    } else {
        args.budgets.clone()
    };
    let mut grid = Vec::new();
    for &epsilon in &args.epsilons {
        let target = PrivacyParams::new(epsilon, args.delta)?;
        for &budget in &budgets {
            grid.push(BudgetSetting {
                users: args.users,
                examples_per_user: args.examples_per_user,
                steps: args.steps,
                budget,
                cohort: args.cohort,
                g_els: args.g_els,
                dim: args.dim,
                l_els: args.l_els,
                l_uls: args.l_els,
                target,
            });
        }
    }
    let rows = variance_curves(&grid, &args.accountant.config())?;
    let csv: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.budget,
                r.cohort,
                fmt_g(r.epsilon),
                fmt_g(r.var_els),
                fmt_g(r.var_uls_equal),
                fmt_g(r.var_uls_diverse)
            )
        })
        .collect();
    emit_table(
        &metadata("compare-variance", args),
        &args.output,
        VARIANCE_CSV_HEADER,
        &csv,
        serde_json::to_value(&rows).expect("json"),
    )
}

impl DataArgs {
    fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            users: self.users,
            examples_per_user: self.examples_per_user,
            dim: self.dim,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let variant = match args.variant {
        Kind::Els => Variant::Els,
        Kind::Uls => Variant::Uls,
    };
    let k = args.data.examples_per_user;
    let group_sizes = if !args.group_sizes.is_empty() {
        args.group_sizes.clone()
    } else if variant == Variant::Els {
        vec![k]
    } else {
        (0..)
            .map(|i| 1usize << i)
            .take_while(|&g| g <= k && g <= args.budget)
            .collect()
    };
    let or_default = |v: &Vec<f64>, d: fn() -> Vec<f64>| if v.is_empty() { d() } else { v.clone() };
    let config = SweepConfig {
        data: args.data.spec(0),
        variant,
        target: PrivacyParams::new(args.epsilon, args.delta)?,
        steps: args.steps,
        budget: args.budget,
        group_sizes,
        lr_grid: or_default(&args.lr_grid, default_lr_grid),
        clip_grid: or_default(&args.clip_grid, default_clip_grid),
        trials: args.trials,
        master_seed: args.master_seed,
    };
    let result = sweep(&config, &args.accountant.config())?;
    let csv: Vec<String> = result
        .table
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{},{},{},{}",
                c.variant.name(),
                c.group_size,
                c.batch,
                fmt_g(c.learning_rate),
                fmt_g(c.clip_norm),
                fmt_g(c.sigma),
                fmt_g(c.mean_loss),
                fmt_g(c.stderr)
            )
        })
        .collect();
    let json_rows: Vec<Value> = result
        .table
        .iter()
        .map(|c| {
            json!({
                "variant": c.variant.name(), "G": c.group_size, "M_or_B": c.batch,
                "eta": c.learning_rate, "C": c.clip_norm, "sigma": c.sigma,
                "mean_loss": c.mean_loss, "stderr": c.stderr,
            })
        })
        .collect();
    emit_table(
        &metadata("simulate-mean", args),
        &args.output,
        SWEEP_CSV_HEADER,
        &csv,
        Value::Array(json_rows),
    )
}

fn opt_g(x: Option<f64>) -> String {
    x.map(fmt_g).unwrap_or_default()
}

fn cmd_configure(args: &ConfigureArgs) -> CmdResult {
    let data = generate_synthetic(&args.data.spec(args.master_seed))?;
    let theta = vec![0.0; data.dim()];
    let config = DoublingConfig {
        g0: args.g0,
        m0: args.m0,
        budget: args.budget,
        target: PrivacyParams::new(args.epsilon, args.delta)?,
        steps: args.steps,
        probe_users: args.probe_users,
        seed: args.master_seed,
    };
    let outcome = estimate_and_double(&data, &theta, &config, &args.accountant.config())?;
    let meta = metadata("configure-uls", args);
    let body = match args.output.format {
        Format::Json => {
            let mut s = String::new();
            writeln!(s, "{}", json!({ "metadata": meta.json() })).expect("string");
            for step in &outcome.trace {
                writeln!(s, "{}", round_json(serde_json::to_value(step).expect("json"))).expect("string");
            }
            writeln!(s, "{}", json!({ "G": outcome.group_size, "M": outcome.cohort })).expect("string");
            s
        }
        Format::Csv => {
            let mut s = meta.csv_header();
            s.push_str("step,G,M,tau_g,tau_m,decision\n");
            for t in &outcome.trace {
                let decision = serde_json::to_value(t.decision).expect("json");
                writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    t.step,
                    t.group_size,
                    t.cohort,
                    opt_g(t.tau_g),
                    opt_g(t.tau_m),
                    decision.as_str().expect("string")
                )
                .expect("string");
            }
            writeln!(s, "final,{},{},,,", outcome.group_size, outcome.cohort).expect("string");
            s
        }
    };
    emit(&args.output, &body)
}

fn configure_threads() {
    if let Some(n) = std::env::var("UDP_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            // ignore the error if a pool already exists
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match &cli.command {
        Command::Epsilon(a) => cmd_epsilon(a),
        Command::Delta(a) => cmd_delta(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::RenyiCheck(a) => cmd_renyi(a),
        Command::CompareVariance(a) => cmd_variance(a),
        Command::SimulateMean(a) => cmd_simulate(a),
        Command::ConfigureUls(a) => cmd_configure(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind(), "message": f.message() }));
            ExitCode::from(f.exit_code())
        }
    }
}
