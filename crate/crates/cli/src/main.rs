//! Single executable exposing every workflow: grounding lookups, training,
//! evaluation, prediction, gradient checking, synthetic data generation,
//! learning curves, attention inspection, and dataset conversion.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
//! failure. Every subcommand echoes its full effective configuration as a
//! JSON line before doing any work, and result-bearing subcommands support
//! `--json`.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ontoppa_core::attachment::{load_dataset_path, save_dataset, Mode, PPAInstance};
use ontoppa_core::datagen::{gen_dataset, gen_ontology, SyntheticSpec};
use ontoppa_core::embedding::load_concept_vectors;
use ontoppa_core::encoder::ContextVariant;
use ontoppa_core::error::Error;
use ontoppa_core::ontology::{GroundingTable, Pos};
use ontoppa_core::scalar::Scalar;
use ontoppa_core::training::{
    evaluate, inspect_attention, learning_curve, load_checkpoint, model_gradcheck,
    save_checkpoint, train, stdev, TrainConfig,
};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "ontoppa",
    version,
    about = "Ontology-grounded context-sensitive token embeddings for PP attachment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the padded grounding grid of one (word, POS).
    Ground(GroundArgs),
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Predict attachment heads for a dataset.
    Predict(PredictArgs),
    /// Check analytic gradients against central differences on a built-in
    /// fixture.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic ontology and PP-attachment benchmark.
    Gen(GenArgs),
    /// Learning-curve experiment over training-set fractions.
    Curve(CurveArgs),
    /// Show per-token concept distributions of a trained model.
    Inspect(InspectArgs),
    /// Convert a tab-separated PP-attachment distribution to JSON lines.
    Convert(ConvertArgs),
}

/// Training-configuration flags, mirroring `TrainConfig` one to one.
#[derive(Args, Clone)]
struct ConfigFlags {
    #[arg(long, default_value_t = 3)]
    s_max: usize,
    #[arg(long, default_value_t = 5)]
    h_max: usize,
    #[arg(long, default_value_t = 100)]
    embed_dim: usize,
    #[arg(long, default_value_t = 50)]
    hidden_dim: usize,
    /// Attention MLP hidden width (default: embed-dim).
    #[arg(long)]
    attn_hidden: Option<usize>,
    /// Attachment MLP hidden width (default: 2 * hidden-dim).
    #[arg(long)]
    attach_hidden: Option<usize>,
    #[arg(long, default_value_t = 1)]
    attach_depth: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    adam_eps: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Random seed (falls back to ONTO_SEED, then 42).
    #[arg(long)]
    seed: Option<u64>,
    /// full | no-prior | no-attention | baseline
    #[arg(long, default_value = "full")]
    mode: String,
    /// prev-hidden | prev-input
    #[arg(long, default_value = "prev-hidden")]
    context: String,
    #[arg(long, default_value_t = 0.10)]
    dev_fraction: f64,
    /// f64 | f32 (gradient checks require f64)
    #[arg(long, default_value = "f64")]
    precision: String,
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| std::env::var("ONTO_SEED").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(42)
}

#[derive(Clone, Copy, PartialEq)]
enum Precision {
    F64,
    F32,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            other => Err(Error::Config { detail: format!("unknown precision `{other}`") }),
        }
    }
}

impl ConfigFlags {
    fn to_config(&self) -> Result<TrainConfig, Error> {
        let config = TrainConfig {
            s_max: self.s_max,
            h_max: self.h_max,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            attn_hidden: self.attn_hidden,
            attach_hidden: self.attach_hidden,
            attach_depth: self.attach_depth,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: resolve_seed(self.seed),
            mode: Mode::from_str(&self.mode)?,
            context: ContextVariant::from_str(&self.context)?,
            dev_fraction: self.dev_fraction,
        };
        config.validate()?;
        Ok(config)
    }

    fn precision(&self) -> Result<Precision, Error> {
        Precision::from_str(&self.precision)
    }
}

#[derive(Args)]
struct GroundArgs {
    /// Grounding file (JSON lines). Alternatively pass --edges and --senses.
    #[arg(long, conflicts_with_all = ["edges", "senses"])]
    grounding: Option<PathBuf>,
    /// Hypernym edge list (`child<TAB>parent` per line).
    #[arg(long, requires = "senses")]
    edges: Option<PathBuf>,
    /// Ordered sense lists (`word<TAB>pos<TAB>id,id,...` per line).
    #[arg(long, requires = "edges")]
    senses: Option<PathBuf>,
    /// Write the resulting table as a canonical grounding file.
    #[arg(long)]
    emit: Option<PathBuf>,
    #[arg(long)]
    word: String,
    /// POS tag: n | v | a | r | p
    #[arg(long)]
    pos: String,
    #[arg(long, default_value_t = 3)]
    s_max: usize,
    #[arg(long, default_value_t = 5)]
    h_max: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    grounding: PathBuf,
    /// Training dataset (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Optional test dataset, evaluated with the final model.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Optional pretrained concept-vector file.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Run directory for metrics and the checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    grounding: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    grounding: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// full | no-prior | no-attention | baseline
    #[arg(long, default_value = "full")]
    mode: String,
    /// prev-hidden | prev-input
    #[arg(long, default_value = "prev-hidden")]
    context: String,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Echoed for reproducibility; the check point itself is a fixed,
    /// exhaustively sampled test vector.
    #[arg(long)]
    seed: Option<u64>,
    /// f64 | f32 (rejected: the check requires f64)
    #[arg(long, default_value = "f64")]
    precision: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    words_per_class: usize,
    #[arg(long, default_value_t = 2)]
    senses_per_ambiguous: usize,
    #[arg(long, default_value_t = 0.3)]
    ambiguous_fraction: f64,
    #[arg(long, default_value_t = 6)]
    prepositions: usize,
    #[arg(long, default_value_t = 2000)]
    train_size: usize,
    #[arg(long, default_value_t = 500)]
    test_size: usize,
    #[arg(long, default_value_t = 300)]
    rare_size: usize,
    #[arg(long, default_value_t = 0.15)]
    rare_holdout_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    compat_density: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for grounding.jsonl, train/test/rare.jsonl, rules.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    grounding: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    rare: Option<PathBuf>,
    /// Comma-separated training-set fractions in (0, 1].
    #[arg(long, default_value = "0.1,0.25,0.5,1.0")]
    fractions: String,
    /// Comma-separated seeds (default: seed, seed+1, seed+2).
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated modes to compare.
    #[arg(long, default_value = "full,baseline")]
    modes: String,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    grounding: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// 0-based instance index within the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Show at most this many concepts per token and direction.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ConvertArgs {
    /// Tab-separated input: `heads poses prep dep label` (tab-delimited),
    /// heads and POS tags space-separated within their fields, label 1-based.
    #[arg(long)]
    input: PathBuf,
    /// JSON-lines output path.
    #[arg(long)]
    output: PathBuf,
    /// Treat input labels as 0-based instead of 1-based.
    #[arg(long)]
    zero_based: bool,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::ShapeMismatch { .. }
        | Error::AllMasked { .. }
        | Error::LossNotScalar { .. }
        | Error::EmptyTape
        | Error::NonFinite { .. }
        | Error::InvalidTensor { .. } => 3,
        _ => 2,
    }
}

fn echo_config(value: serde_json::Value) {
    println!("{}", json!({ "config": value }));
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Ground(args) => cmd_ground(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Curve(args) => cmd_curve(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::Convert(args) => cmd_convert(args),
    }
}

fn parse_pos(s: &str) -> Result<Pos, Error> {
    let c = s.chars().next();
    match (s.len(), c.and_then(Pos::from_char)) {
        (1, Some(pos)) => Ok(pos),
        _ => Err(Error::Config { detail: format!("invalid POS `{s}` (expected n|v|a|r|p)") }),
    }
}

fn cmd_ground(args: GroundArgs) -> Result<ExitCode, Error> {
    echo_config(json!({
        "subcommand": "ground",
        "grounding": args.grounding,
        "edges": args.edges,
        "senses": args.senses,
        "emit": args.emit,
        "word": args.word,
        "pos": args.pos,
        "s_max": args.s_max,
        "h_max": args.h_max,
    }));
    let pos = parse_pos(&args.pos)?;
    let mut table = match (&args.grounding, &args.edges, &args.senses) {
        (Some(path), None, None) => GroundingTable::load_path(path)?,
        (None, Some(edges_path), Some(senses_path)) => {
            let edges = ontoppa_core::ontology::load_edges_tsv(
                std::fs::File::open(edges_path)?,
                &edges_path.display().to_string(),
            )?;
            let senses = ontoppa_core::ontology::load_senses_tsv(
                std::fs::File::open(senses_path)?,
                &senses_path.display().to_string(),
            )?;
            ontoppa_core::ontology::derive_paths(&edges, &senses)?
        }
        _ => {
            return Err(Error::Config {
                detail: "pass either --grounding or both --edges and --senses".into(),
            })
        }
    };
    if let Some(out) = &args.emit {
        let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
        table.emit(&mut file)?;
        file.flush()?;
    }
    table.set_caps(args.s_max, args.h_max)?;
    let grid = table.ground_token(&args.word, pos);
    if args.json {
        let rows: Vec<Vec<serde_json::Value>> = (0..grid.s_max)
            .map(|r| {
                (0..grid.h_max)
                    .map(|j| {
                        let cell = r * grid.h_max + j;
                        if grid.mask[cell] {
                            json!(table.concepts().name(grid.concepts[cell]))
                        } else {
                            json!(null)
                        }
                    })
                    .collect()
            })
            .collect();
        println!(
            "{}",
            json!({ "word": args.word, "pos": args.pos, "grid": rows })
        );
    } else {
        println!("grounding of (\"{}\", {}) with S={}, H={}:", args.word, args.pos, grid.s_max, grid.h_max);
        for r in 0..grid.s_max {
            let cells: Vec<String> = (0..grid.h_max)
                .map(|j| {
                    let cell = r * grid.h_max + j;
                    if grid.mask[cell] {
                        table.concepts().name(grid.concepts[cell]).to_string()
                    } else {
                        "-".to_string()
                    }
                })
                .collect();
            println!("  rank {r}: {}", cells.join(" | "));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let config = args.config.to_config()?;
    echo_config(json!({
        "subcommand": "train",
        "grounding": args.grounding,
        "data": args.data,
        "test": args.test,
        "vectors": args.vectors,
        "out": args.out,
        "precision": args.config.precision,
        "train_config": config,
    }));
    match args.config.precision()? {
        Precision::F64 => run_train::<f64>(&args, &config),
        Precision::F32 => run_train::<f32>(&args, &config),
    }
}

fn run_train<S: Scalar>(args: &TrainArgs, config: &TrainConfig) -> Result<ExitCode, Error> {
    let mut table = GroundingTable::load_path(&args.grounding)?;
    let data = load_dataset_path(&args.data)?;
    let test = args.test.as_ref().map(|p| load_dataset_path(p)).transpose()?;
    let vectors = args
        .vectors
        .as_ref()
        .map(|p| {
            let file = std::fs::File::open(p)?;
            load_concept_vectors(file, &p.display().to_string())
        })
        .transpose()?;

    std::fs::create_dir_all(&args.out)?;
    let metrics_path = args.out.join("metrics.jsonl");
    let mut metrics_file = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);

    let (mut model, mut metrics) = train::<S>(config, &data, &mut table, vectors.as_ref(), |epoch| {
        let line = serde_json::to_string(epoch).expect("epoch record serializes");
        println!("{line}");
        let _ = writeln!(metrics_file, "{line}");
    })?;
    metrics_file.flush()?;

    println!(
        "{}",
        json!({
            "parameter_report": {
                "mode": config.mode.as_str(),
                "embedding_rows": metrics.embedding_rows,
                "total_parameters": metrics.total_parameters,
            }
        })
    );
    if let Some(report) = &metrics.pretrained {
        println!("{}", json!({ "pretrained_vectors": report }));
    }

    let checkpoint = args.out.join("model.ckpt");
    save_checkpoint(&checkpoint, &model, config)?;

    let mut summary = json!({
        "best_epoch": metrics.best_epoch,
        "best_dev_accuracy": metrics.best_dev_accuracy,
        "epochs_run": metrics.epochs.len(),
        "wall_clock_secs": metrics.wall_clock_secs,
        "checkpoint": checkpoint,
    });
    if let Some(test) = &test {
        model.prepare_dataset(&mut table, test);
        metrics.test_accuracy = Some(evaluate(&model, test)?);
        summary["test_accuracy"] = json!(metrics.test_accuracy);
    }
    println!("{}", json!({ "summary": summary }));
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, Error> {
    echo_config(json!({
        "subcommand": "eval",
        "checkpoint": args.checkpoint,
        "grounding": args.grounding,
        "data": args.data,
    }));
    let (mut model, _config) = load_checkpoint::<f64>(&args.checkpoint)?;
    let mut table = GroundingTable::load_path(&args.grounding)?;
    let data = load_dataset_path(&args.data)?;
    model.prepare_dataset(&mut table, &data);
    let accuracy = evaluate(&model, &data)?;
    if args.json {
        println!("{}", json!({ "accuracy": accuracy, "instances": data.len() }));
    } else {
        println!("accuracy {accuracy:.4} over {} instances", data.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(args: PredictArgs) -> Result<ExitCode, Error> {
    echo_config(json!({
        "subcommand": "predict",
        "checkpoint": args.checkpoint,
        "grounding": args.grounding,
        "data": args.data,
    }));
    let (mut model, _config) = load_checkpoint::<f64>(&args.checkpoint)?;
    let mut table = GroundingTable::load_path(&args.grounding)?;
    let data = load_dataset_path(&args.data)?;
    model.prepare_dataset(&mut table, &data);
    for (i, inst) in data.iter().enumerate() {
        let probs = model.probabilities(inst)?;
        let predicted = ontoppa_core::attachment::predict(&probs);
        if args.json {
            println!(
                "{}",
                json!({ "index": i, "predicted": predicted, "gold": inst.gold, "probabilities": probs })
            );
        } else {
            let rendered: Vec<String> = probs.iter().map(|p| format!("{p:.4}")).collect();
            println!(
                "{i}: predicted={predicted} ({}) gold={} p=[{}]",
                inst.candidates[predicted].0,
                inst.gold,
                rendered.join(", ")
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let seed = resolve_seed(args.seed);
    echo_config(json!({
        "subcommand": "gradcheck",
        "mode": args.mode,
        "context": args.context,
        "eps": args.eps,
        "seed": seed,
        "precision": args.precision,
        "tolerance": GRADCHECK_TOLERANCE,
    }));
    if Precision::from_str(&args.precision)? != Precision::F64 {
        return Err(Error::Config {
            detail: "gradient checking requires 64-bit precision".into(),
        });
    }
    let mode = Mode::from_str(&args.mode)?;
    let context = ContextVariant::from_str(&args.context)?;
    let (groups, max) = model_gradcheck::<f64>(mode, context, args.eps)?;
    for g in &groups {
        if args.json {
            println!("{}", serde_json::to_string(g).expect("group serializes"));
        } else {
            println!(
                "{:<10} max rel err {:>12.3e}  ({} entries)",
                g.group, g.max_rel_err, g.entries_checked
            );
        }
    }
    let pass = max < GRADCHECK_TOLERANCE;
    if args.json {
        println!(
            "{}",
            json!({ "max_rel_err": max, "tolerance": GRADCHECK_TOLERANCE, "pass": pass })
        );
    } else {
        println!(
            "max rel err {max:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e}): {}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode, Error> {
    let spec = SyntheticSpec {
        classes: args.classes,
        words_per_class: args.words_per_class,
        senses_per_ambiguous: args.senses_per_ambiguous,
        ambiguous_fraction: args.ambiguous_fraction,
        prepositions: args.prepositions,
        train_size: args.train_size,
        test_size: args.test_size,
        rare_size: args.rare_size,
        rare_holdout_fraction: args.rare_holdout_fraction,
        compat_density: args.compat_density,
        seed: resolve_seed(args.seed),
    };
    echo_config(json!({ "subcommand": "gen", "out": args.out, "spec": spec }));
    let ontology = gen_ontology(&spec)?;
    let dataset = gen_dataset(&spec, &ontology)?;

    std::fs::create_dir_all(&args.out)?;
    let grounding_path = args.out.join("grounding.jsonl");
    std::fs::write(&grounding_path, ontology.grounding_jsonl())?;
    let write_split = |name: &str, split: &[PPAInstance]| -> Result<PathBuf, Error> {
        let path = args.out.join(name);
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        save_dataset(&mut file, split)?;
        file.flush()?;
        Ok(path)
    };
    let train_path = write_split("train.jsonl", &dataset.train)?;
    let test_path = write_split("test.jsonl", &dataset.test)?;
    let rare_path = write_split("rare.jsonl", &dataset.rare)?;
    let rules_path = args.out.join("rules.json");
    std::fs::write(
        &rules_path,
        serde_json::to_string_pretty(&dataset.rules)
            .map_err(|e| Error::Data { detail: format!("serializing rules: {e}") })?,
    )?;

    let report = json!({
        "generated": {
            "grounding": grounding_path,
            "train": { "path": train_path, "instances": dataset.train.len() },
            "test": { "path": test_path, "instances": dataset.test.len() },
            "rare": { "path": rare_path, "instances": dataset.rare.len() },
            "rules": rules_path,
            "words": ontology.nouns.len() + ontology.verbs.len(),
        }
    });
    if args.json {
        println!("{report}");
    } else {
        println!(
            "wrote {} words, {} train / {} test / {} rare instances to {}",
            ontology.nouns.len() + ontology.verbs.len(),
            dataset.train.len(),
            dataset.test.len(),
            dataset.rare.len(),
            args.out.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>().map_err(|_| Error::Config {
                detail: format!("invalid {what} entry `{p}`"),
            })
        })
        .collect()
}

fn cmd_curve(args: CurveArgs) -> Result<ExitCode, Error> {
    let config = args.config.to_config()?;
    let fractions: Vec<f64> = parse_list(&args.fractions, "fraction")?;
    let seeds: Vec<u64> = match &args.seeds {
        Some(s) => parse_list(s, "seed")?,
        None => (0..3).map(|i| config.seed + i).collect(),
    };
    let modes: Vec<Mode> = args
        .modes
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(Mode::from_str)
        .collect::<Result<_, _>>()?;
    echo_config(json!({
        "subcommand": "curve",
        "grounding": args.grounding,
        "data": args.data,
        "test": args.test,
        "rare": args.rare,
        "fractions": fractions,
        "seeds": seeds,
        "modes": modes.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "out": args.out,
        "train_config": config,
    }));

    let mut table = GroundingTable::load_path(&args.grounding)?;
    let data = load_dataset_path(&args.data)?;
    let test = load_dataset_path(&args.test)?;
    let rare = args.rare.as_ref().map(|p| load_dataset_path(p)).transpose()?;

    let cells = match args.config.precision()? {
        Precision::F64 => learning_curve::<f64>(
            &config,
            &data,
            &test,
            rare.as_deref(),
            &fractions,
            &seeds,
            &modes,
            &mut table,
            |fraction, mode, seed, acc| {
                println!(
                    "{}",
                    json!({ "curve_point": { "fraction": fraction, "mode": mode.as_str(), "seed": seed, "test_accuracy": acc } })
                );
            },
        )?,
        Precision::F32 => learning_curve::<f32>(
            &config,
            &data,
            &test,
            rare.as_deref(),
            &fractions,
            &seeds,
            &modes,
            &mut table,
            |fraction, mode, seed, acc| {
                println!(
                    "{}",
                    json!({ "curve_point": { "fraction": fraction, "mode": mode.as_str(), "seed": seed, "test_accuracy": acc } })
                );
            },
        )?,
    };

    let mut csv = String::from(
        "fraction,mode,runs,mean_accuracy,std_accuracy,mean_rare_accuracy,std_rare_accuracy\n",
    );
    for cell in &cells {
        let rare_mean = cell
            .rare_mean()
            .map(|m| format!("{m:.6}"))
            .unwrap_or_default();
        let rare_std = if cell.rare_accuracies.is_empty() {
            String::new()
        } else {
            format!("{:.6}", stdev(&cell.rare_accuracies))
        };
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{}\n",
            cell.fraction,
            cell.mode.as_str(),
            cell.test_accuracies.len(),
            cell.mean(),
            cell.stdev(),
            rare_mean,
            rare_std,
        ));
    }
    if let Some(out) = &args.out {
        std::fs::write(out, &csv)?;
    }
    if args.json {
        for cell in &cells {
            println!("{}", serde_json::to_string(cell).expect("cell serializes"));
        }
    } else {
        print!("{csv}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_inspect(args: InspectArgs) -> Result<ExitCode, Error> {
    echo_config(json!({
        "subcommand": "inspect",
        "checkpoint": args.checkpoint,
        "grounding": args.grounding,
        "data": args.data,
        "index": args.index,
        "top": args.top,
    }));
    let (mut model, _config) = load_checkpoint::<f64>(&args.checkpoint)?;
    let mut table = GroundingTable::load_path(&args.grounding)?;
    let data = load_dataset_path(&args.data)?;
    let inst = data.get(args.index).ok_or_else(|| Error::Data {
        detail: format!("instance index {} out of range ({} instances)", args.index, data.len()),
    })?;
    model.prepare_dataset(&mut table, std::slice::from_ref(inst));
    let mut report = inspect_attention(&model, inst)?;
    for token in &mut report.tokens {
        token.forward.truncate(args.top);
        token.backward.truncate(args.top);
    }
    if args.json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!(
            "predicted candidate {} (gold {}), probabilities {:?}",
            report.predicted, inst.gold, report.probabilities
        );
        for token in &report.tokens {
            println!("token \"{}\" ({}):", token.word, token.pos);
            for (direction, weights) in
                [("forward", &token.forward), ("backward", &token.backward)]
            {
                println!("  {direction}:");
                for w in weights {
                    println!("    {:.4}  {} (sense {})", w.probability, w.hypernym, w.sense);
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_convert(args: ConvertArgs) -> Result<ExitCode, Error> {
    echo_config(json!({
        "subcommand": "convert",
        "input": args.input,
        "output": args.output,
        "zero_based": args.zero_based,
    }));
    let file = std::fs::File::open(&args.input)?;
    let reader = BufReader::new(file);
    let label = args.input.display().to_string();
    let mut instances = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |detail: String| Error::Parse {
            path: label.clone(),
            line: lineno,
            detail,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(format!(
                "expected 5 tab-separated fields (heads, poses, prep, dep, label), got {}",
                fields.len()
            )));
        }
        let heads: Vec<&str> = fields[0].split_whitespace().collect();
        let poses: Vec<&str> = fields[1].split_whitespace().collect();
        if heads.len() != poses.len() {
            return Err(parse_err(format!(
                "{} heads but {} POS tags",
                heads.len(),
                poses.len()
            )));
        }
        let candidates: Vec<(String, Pos)> = heads
            .iter()
            .zip(&poses)
            .map(|(w, p)| {
                let pos = parse_pos(p)
                    .ok()
                    .filter(|p| matches!(p, Pos::Noun | Pos::Verb))
                    .ok_or_else(|| parse_err(format!("candidate POS `{p}` must be n or v")))?;
                Ok::<(String, Pos), Error>((w.to_string(), pos))
            })
            .collect::<Result<_, _>>()?;
        let raw_label: usize = fields[4]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad label `{}`", fields[4])))?;
        let gold = if args.zero_based {
            raw_label
        } else {
            raw_label
                .checked_sub(1)
                .ok_or_else(|| parse_err("label 0 in a 1-based file".into()))?
        };
        let inst = PPAInstance::new(
            candidates,
            fields[2].to_string(),
            fields[3].to_string(),
            gold,
        )
        .map_err(|e| parse_err(e.to_string()))?;
        instances.push(inst);
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.output)?);
    save_dataset(&mut out, &instances)?;
    out.flush()?;
    if args.json {
        println!(
            "{}",
            json!({ "converted": { "instances": instances.len(), "output": args.output } })
        );
    } else {
        println!("converted {} instances to {}", instances.len(), args.output.display());
    }
    Ok(ExitCode::SUCCESS)
}
