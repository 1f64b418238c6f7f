use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rcd_core::ci::{RegressionCi, RegressionParams};
use rcd_core::harness::{rule_profile, run_bench, TrialConfig};
use rcd_core::model::{parse_variable, random_model, ModelDoc, ModelError, ModelParams, RelationalModel};
use rcd_core::rcd::{majority_vote, rcd_learn, LearnConfig, RboOrder};
use rcd_core::schema::{random_schema, Schema, SchemaDoc, SchemaError, SchemaParams};
use rcd_core::skeleton::{
    ground_graph, load_skeleton, random_skeleton, sample_data, save_skeleton, SampleParams, SkeletonError,
};
use rcd_core::{AggError, AggSet, CiBackend, CiError, CiQuery, OracleCi, PathError, RcdError};

#[derive(Parser, Debug)]
#[command(name = "rcd", version, about = "Relational causal discovery")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the result to this file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Dot,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate schemas, models and skeletons.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Learn a model from an oracle (--model) or from data (--data).
    Learn(LearnArgs),
    /// Decide a relational d-separation query under a known model.
    Dsep(DsepArgs),
    /// Export a ground graph.
    #[command(subcommand)]
    Gg(GgCommand),
    /// Export an abstract ground graph.
    #[command(subcommand)]
    Agg(AggCommand),
    /// Oracle experiments over a grid of schema sizes and dependency counts.
    Bench(BenchArgs),
    /// Rule-activation shares under a rule ordering.
    Profile(ProfileArgs),
}

#[derive(Subcommand, Debug)]
enum GenCommand {
    Schema {
        #[arg(long)]
        entities: usize,
        #[arg(long, default_value_t = 1.0)]
        attr_lambda: f64,
    },
    Model {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        deps: usize,
        #[arg(long, default_value_t = 4)]
        hop_threshold: usize,
        #[arg(long, default_value_t = 3)]
        max_parents: usize,
    },
    Skeleton {
        #[arg(long)]
        model: PathBuf,
        /// Instances per entity class, comma separated, in schema order.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Fraction of the largest link count each relationship allows.
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        /// Directory for the CSV files and manifest.
        #[arg(long)]
        dir: PathBuf,
        /// Write links only, without sampled attribute values.
        #[arg(long)]
        no_values: bool,
    },
}

#[derive(Args, Debug)]
struct LearnArgs {
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    hop_threshold: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    effect_threshold: f64,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0.667)]
    vote_threshold: f64,
    #[arg(long, value_enum, default_value_t = Order::RboAfterCd)]
    rbo_order: Order,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum Order {
    RboAfterCd,
    RboFirst,
    RboLast,
}

impl From<Order> for RboOrder {
    fn from(o: Order) -> Self {
        match o {
            Order::RboAfterCd => RboOrder::RboAfterCd,
            Order::RboFirst => RboOrder::RboFirst,
            Order::RboLast => RboOrder::RboLast,
        }
    }
}

#[derive(Args, Debug)]
struct DsepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    perspective: String,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    /// Conditioning variables separated by ';'.
    #[arg(long, default_value = "")]
    given: String,
    #[arg(long, default_value_t = 8)]
    hops: usize,
}

#[derive(Subcommand, Debug)]
enum GgCommand {
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum AggCommand {
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        perspective: String,
        #[arg(long, default_value_t = 8)]
        hops: usize,
    },
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    entities: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,15")]
    deps: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Use 1000 trials per cell.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 4)]
    hop_threshold: usize,
    #[arg(long, default_value_t = 8)]
    oracle_hops: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value_t = Order::RboAfterCd)]
    rbo_order: Order,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum)]
    mode: ProfileMode,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ProfileMode {
    RboFirst,
    RboLast,
}

/// Input that fails validation; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {}", path.display(), e)).into())
}

fn read_schema(path: &Path) -> Result<Arc<Schema>> {
    let doc: SchemaDoc = read_json(path)?;
    Ok(Arc::new(Schema::from_doc(&doc)?))
}

fn read_model(path: &Path) -> Result<RelationalModel> {
    let doc: ModelDoc = read_json(path)?;
    Ok(RelationalModel::from_doc(&doc)?)
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn pick(format: Option<Format>, default: Format, allowed: &[Format]) -> Result<Format> {
    let f = format.unwrap_or(default);
    if !allowed.contains(&f) {
        return Err(Invalid(format!("format {:?} is not available for this command", f).to_lowercase()).into());
    }
    Ok(f)
}

fn grid_config(g: &GridArgs, seed: u64, order: RboOrder) -> TrialConfig {
    TrialConfig {
        entities: g.entities.clone(),
        deps: g.deps.clone(),
        trials: if g.full { 1000 } else { g.trials },
        hop_threshold: g.hop_threshold,
        oracle_hops: g.oracle_hops,
        depth: g.depth,
        rbo_order: order,
        seed,
        ..TrialConfig::default()
    }
}

fn run(cli: Cli) -> Result<String> {
    let seed = cli.seed;
    let fmt = cli.format;
    match cli.command {
        Command::Gen(GenCommand::Schema { entities, attr_lambda }) => {
            pick(fmt, Format::Json, &[Format::Json])?;
            let s = random_schema(seed, entities, SchemaParams { attr_lambda })?;
            Ok(pretty(&s.to_doc()))
        }
        Command::Gen(GenCommand::Model {
            schema,
            deps,
            hop_threshold,
            max_parents,
        }) => {
            let f = pick(fmt, Format::Json, &[Format::Json, Format::Dot])?;
            let s = read_schema(&schema)?;
            let params = ModelParams {
                num_deps: deps,
                hop_threshold,
                max_parents,
            };
            let m = random_model(s, params, seed)?;
            Ok(match f {
                Format::Dot => model_dot(&m),
                _ => pretty(&m.to_doc()),
            })
        }
        Command::Gen(GenCommand::Skeleton {
            model,
            sizes,
            density,
            dir,
            no_values,
        }) => {
            pick(fmt, Format::Json, &[Format::Json])?;
            let m = read_model(&model)?;
            let k = random_skeleton(m.schema_arc().clone(), &sizes, density, seed)?;
            let k = if no_values {
                k
            } else {
                let g = ground_graph(&m, &k)?;
                let values = sample_data(&g, seed, SampleParams::default())?;
                k.with_values(values)?
            };
            let manifest = save_skeleton(&k, &dir)?;
            let counts: serde_json::Map<String, serde_json::Value> = k
                .schema()
                .item_ids()
                .map(|i| (k.schema().name(i).to_string(), json!(k.num_instances(i))))
                .collect();
            Ok(pretty(&json!({
                "manifest": manifest.file_name().unwrap().to_string_lossy(),
                "instances": counts,
            })))
        }
        Command::Learn(a) => {
            let f = pick(fmt, Format::Json, &[Format::Json, Format::Dot])?;
            let config = LearnConfig {
                hop_threshold: a.hop_threshold,
                depth: a.depth,
                rbo_order: a.rbo_order.into(),
                seed,
                randomize_order: false,
                agg_hops: None,
            };
            let (schema, backend): (Arc<Schema>, Box<dyn CiBackend>) = match (&a.model, &a.data) {
                (Some(mp), None) => {
                    let m = read_model(mp)?;
                    if let Some(sp) = &a.schema {
                        if *read_schema(sp)? != *m.schema() {
                            return Err(Invalid("--schema differs from the model's schema".into()).into());
                        }
                    }
                    let o = OracleCi::new(&m, 2 * a.hop_threshold)?;
                    (m.schema_arc().clone(), Box::new(o))
                }
                (None, Some(dp)) => {
                    let sp = a.schema.as_ref().ok_or_else(|| Invalid("--data needs --schema".into()))?;
                    let s = read_schema(sp)?;
                    let k = load_skeleton(s.clone(), dp)?;
                    let params = RegressionParams {
                        alpha: a.alpha,
                        effect_threshold: a.effect_threshold,
                    };
                    (s, Box::new(RegressionCi::new(Arc::new(k), params)))
                }
                _ => return Err(Invalid("give exactly one of --model or --data".into()).into()),
            };
            let pattern = if a.runs > 1 {
                majority_vote(schema, backend.as_ref(), &config, a.runs, a.vote_threshold)?
            } else {
                rcd_learn(schema, backend.as_ref(), &config)?
            };
            Ok(match f {
                Format::Dot => pattern.to_dot(),
                _ => pretty(&pattern.to_json()),
            })
        }
        Command::Dsep(a) => {
            pick(fmt, Format::Json, &[Format::Json])?;
            let m = read_model(&a.model)?;
            let s = m.schema();
            let p = s.lookup(&a.perspective)?;
            let var = |t: &str| -> Result<_> {
                let v = parse_variable(s, t)?;
                if v.perspective() != p {
                    bail!(Invalid(format!("{t} is not anchored at {}", a.perspective)));
                }
                Ok(v)
            };
            let given = a
                .given
                .split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(var)
                .collect::<Result<Vec<_>>>()?;
            let q = CiQuery::new(var(&a.x)?, var(&a.y)?, given)?;
            let o = OracleCi::new(&m, a.hops)?;
            let verdict = if o.independent(&q)? { "independent" } else { "dependent" };
            Ok(format!("{verdict}\n"))
        }
        Command::Gg(GgCommand::Export { model, data }) => {
            let f = pick(fmt, Format::Json, &[Format::Json, Format::Dot])?;
            let m = read_model(&model)?;
            let k = load_skeleton(m.schema_arc().clone(), &data)?;
            let g = ground_graph(&m, &k)?;
            let s = m.schema();
            let label = |n: u32| {
                let node = g.node(n);
                format!("{}.{}", k.ids(node.item)[node.instance as usize], s.attr(node.attr).name)
            };
            let mut edges: Vec<(u32, u32)> = g.edges().collect();
            edges.sort_unstable();
            Ok(match f {
                Format::Dot => {
                    let mut out = String::from("digraph ground {\n");
                    for n in 0..g.num_nodes() as u32 {
                        out += &format!("  g{} [label=\"{}\"];\n", n, label(n));
                    }
                    for (a, b) in edges {
                        out += &format!("  g{a} -> g{b};\n");
                    }
                    out + "}\n"
                }
                _ => pretty(&json!({
                    "nodes": (0..g.num_nodes() as u32).map(label).collect::<Vec<_>>(),
                    "edges": edges.iter().map(|&(a, b)| [label(a), label(b)]).collect::<Vec<_>>(),
                })),
            })
        }
        Command::Agg(AggCommand::Export { model, perspective, hops }) => {
            let f = pick(fmt, Format::Dot, &[Format::Json, Format::Dot])?;
            let m = read_model(&model)?;
            let p = m.schema().lookup(&perspective)?;
            let set = AggSet::from_model(&m, hops)?;
            Ok(match f {
                Format::Dot => set.to_dot(p),
                _ => {
                    let agg = set.agg(p);
                    let edges: Vec<_> = agg
                        .edges()
                        .iter()
                        .map(|e| {
                            let (a, b) = match set.mark(p, e.a, e.b) {
                                Some(rcd_core::agg::Mark::In) => (e.b, e.a),
                                _ => (e.a, e.b),
                            };
                            json!({
                                "from": agg.label(a),
                                "to": agg.label(b),
                                "provenance": e.provenance.iter()
                                    .map(|&r| set.registry().dependencies()[r as usize].display(m.schema()).to_string())
                                    .collect::<Vec<_>>(),
                            })
                        })
                        .collect();
                    pretty(&json!({
                        "perspective": perspective,
                        "nodes": (0..agg.num_nodes() as u32).map(|i| agg.label(i)).collect::<Vec<_>>(),
                        "edges": edges,
                    }))
                }
            })
        }
        Command::Bench(a) => {
            let f = pick(fmt, Format::Csv, &[Format::Csv, Format::Json])?;
            let report = run_bench(&grid_config(&a.grid, seed, a.rbo_order.into()))?;
            Ok(match f {
                Format::Json => pretty(&report.cells),
                _ => report.to_csv(),
            })
        }
        Command::Profile(a) => {
            let f = pick(fmt, Format::Csv, &[Format::Csv, Format::Json])?;
            let mode = match a.mode {
                ProfileMode::RboFirst => RboOrder::RboFirst,
                ProfileMode::RboLast => RboOrder::RboLast,
            };
            let report = rule_profile(&grid_config(&a.grid, seed, mode), mode)?;
            Ok(match f {
                Format::Json => pretty(&report.cells),
                _ => report.to_csv(),
            })
        }
    }
}

fn model_dot(m: &RelationalModel) -> String {
    let s = m.schema();
    let mut out = String::from("digraph model {\n");
    for a in s.attr_ids() {
        out += &format!("  a{} [label=\"{}\"];\n", a.0, s.attr_label(a));
    }
    for d in m.dependencies() {
        out += &format!(
            "  a{} -> a{} [label=\"{}\"];\n",
            d.cause.attr.0,
            d.effect.attr.0,
            d.cause.path.display(s)
        );
    }
    out + "}\n"
}

/// 2 for invalid input, 3 for infeasible requests, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<SchemaError>() || cause.is::<PathError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return if matches!(e, ModelError::Infeasible { .. }) { 3 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<SkeletonError>() {
            return match e {
                SkeletonError::DensityInfeasible(_) => 3,
                SkeletonError::Io { .. } => 1,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<CiError>() {
            return match e {
                CiError::InvalidQuery(_) | CiError::Agg(AggError::UnknownNode(_)) => 2,
                _ => 1,
            };
        }
        if let Some(RcdError::Config(_)) = cause.downcast_ref::<RcdError>() {
            return 2;
        }
        if let Some(rcd_core::HarnessError::Config(_)) = cause.downcast_ref::<rcd_core::HarnessError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let output = cli.output.clone();
    let result = run(cli).and_then(|text| match &output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
