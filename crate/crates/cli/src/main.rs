use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use seqslice::corpus::{
    encode_input, generate_split, load_jsonl, Corruption, GenConfig, SliceInstance, SplitSizes,
    Vocabulary,
};
use seqslice::decode::{beam_search, BeamConfig, DecodeInput, Granularity};
use seqslice::metrics::{self, EvalConfig, EvalReport};
use seqslice::minilang::{statements, TokenKind};
use seqslice::model::checkpoint::Checkpoint;
use seqslice::model::train::{prepare, TrainConfig, Trainer};
use seqslice::model::{GateInput, Model, ModelConfig};
use seqslice::oracle::SliceCriterion;

/// Failure with the exit code it maps to.
#[derive(Debug)]
enum CliError {
    /// Bad flags, missing inputs, or an invalid criterion.
    User(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

#[derive(Parser)]
#[command(name = "seqslice", version, about = "Backward slicing as constrained sequence extraction")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Slice one source file.
    Slice(SliceArgs),
    /// Evaluate a checkpoint on a test split.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    train: usize,
    #[arg(long, default_value_t = 350)]
    valid: usize,
    #[arg(long, default_value_t = 870)]
    test: usize,
    /// Overwrite existing dataset files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.jsonl and valid.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 5e-5)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1000)]
    warmup: u64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Decay the learning rate linearly to zero after warmup.
    #[arg(long)]
    linear_decay: bool,
    #[arg(long, default_value_t = 128)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 256)]
    ffn_dim: usize,
    /// Identifiers in fewer training programs than this become OOV.
    #[arg(long, default_value_t = 3)]
    min_count: usize,
    /// Feed the decoder hidden state instead of the input embedding to the gate.
    #[arg(long)]
    gate_hidden: bool,
    /// Pin p_gen to 1 (copy ablation).
    #[arg(long)]
    no_copy: bool,
    /// Continue from this checkpoint; model flags are then ignored.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Loss curve; defaults to the checkpoint path with a .loss.csv suffix.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct BeamArgs {
    #[arg(long, default_value_t = 3)]
    beam: usize,
    #[arg(long, default_value_t = 256)]
    max_len: usize,
    #[arg(long)]
    no_lexical: bool,
    #[arg(long)]
    no_syntactic: bool,
    /// statement, line or token.
    #[arg(long, default_value = "statement", value_parser = parse_granularity)]
    granularity: Granularity,
    /// Rank finished hypotheses by raw log-probability.
    #[arg(long)]
    no_length_norm: bool,
}

impl BeamArgs {
    fn config(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam,
            max_len: self.max_len,
            lexical: !self.no_lexical,
            syntactic: !self.no_syntactic,
            granularity: self.granularity,
            length_norm: !self.no_length_norm,
            trace: false,
        }
    }
}

fn parse_granularity(s: &str) -> std::result::Result<Granularity, String> {
    match s {
        "statement" => Ok(Granularity::Statement),
        "line" => Ok(Granularity::Line),
        "token" => Ok(Granularity::Token),
        _ => Err(format!("unknown granularity `{s}`")),
    }
}

#[derive(Args)]
struct SliceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    var: String,
    #[arg(long)]
    line: u32,
    #[command(flatten)]
    beam: BeamArgs,
    /// Write the per-step decode trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Test split in JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: PathBuf,
    /// Run the component ablation.
    #[arg(long)]
    ablate: bool,
    /// Checkpoint trained with --no-copy, for the ablation's copy rows.
    #[arg(long)]
    no_copy_ckpt: Option<PathBuf>,
    /// Corrupt every instance first: missing_class, missing_semicolons,
    /// unmatched_braces, or all.
    #[arg(long)]
    corrupt: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Evaluate only the first N instances.
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    beam: BeamArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Slice(a) => cmd_slice(&a),
        Command::Eval(a) => cmd_eval(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    sizes: SplitSizes,
    generator: GenConfig,
    /// SHA-256 over the seed, sizes and generator settings.
    config_sha256: String,
    files: Vec<(String, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    const FILES: [&str; 4] = ["train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"];
    if !a.force {
        if let Some(f) = FILES.iter().find(|f| a.out.join(f).exists()) {
            return Err(user(format!("{} exists; pass --force to overwrite", a.out.join(f).display())));
        }
    }
    let sizes = SplitSizes { train: a.train, valid: a.valid, test: a.test };
    let generator = GenConfig::default();
    let split = generate_split(a.seed, sizes, &generator);
    split.save(&a.out).map_err(internal)?;
    let config = serde_json::to_vec(&(a.seed, sizes, generator)).map_err(internal)?;
    let mut files = Vec::new();
    for f in &FILES[..3] {
        files.push((f.to_string(), sha256_hex(&fs::read(a.out.join(f)).map_err(internal)?)));
    }
    let manifest = Manifest { seed: a.seed, sizes, generator, config_sha256: sha256_hex(&config), files };
    let text = serde_json::to_string_pretty(&manifest).map_err(internal)?;
    fs::write(a.out.join("manifest.json"), text + "\n").map_err(internal)?;
    println!("{} train, {} valid, {} test -> {}", split.train.len(), split.valid.len(), split.test.len(), a.out.display());
    println!("manifest {}", manifest.config_sha256);
    Ok(())
}

fn load_split(path: &Path) -> Result<Vec<SliceInstance>> {
    if !path.exists() {
        return Err(user(format!("{} not found", path.display())));
    }
    load_jsonl(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let train = load_split(&a.data.join("train.jsonl"))?;
    let valid = load_split(&a.data.join("valid.jsonl"))?;
    if train.is_empty() {
        return Err(user("training split is empty"));
    }
    let tc = TrainConfig {
        lr: a.lr,
        batch: a.batch,
        warmup: a.warmup,
        epochs: a.epochs,
        seed: a.seed,
        linear_decay: a.linear_decay,
        ..TrainConfig::default()
    };
    let (mut trainer, vocab) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
            let vocab = ck.vocab.clone();
            (Trainer::resume(ck, tc), vocab)
        }
        None => {
            let vocab = Vocabulary::build(&train, a.min_count);
            let mut mc = ModelConfig::new(vocab.len());
            mc.d_model = a.d_model;
            mc.heads = a.heads;
            mc.enc_layers = a.layers;
            mc.dec_layers = a.layers;
            mc.ffn_dim = a.ffn_dim;
            mc.copy = !a.no_copy;
            mc.gate_input = if a.gate_hidden { GateInput::Hidden } else { GateInput::Embedding };
            let model = Model::new(mc, a.seed).map_err(user)?;
            (Trainer::new(model, tc), vocab)
        }
    };
    let max_src = trainer.model.config.max_src;
    let tr = prepare(&train, &vocab, max_src).map_err(user)?;
    let va = prepare(&valid, &vocab, max_src).map_err(user)?;
    log::info!("vocabulary {} entries, {} parameters", vocab.len(), trainer.model.params.count());
    trainer
        .fit(&tr, &va, |l| {
            println!("epoch {} step {} train {:.4} valid {}", l.epoch, l.step, l.train_loss, fmt_opt(l.valid_loss))
        })
        .map_err(internal)?;
    trainer.checkpoint(&vocab).save(&a.out).map_err(internal)?;
    let csv = a.loss_csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    trainer.report.write_csv(&csv).map_err(internal)?;
    println!("checkpoint {} (step {})", a.out.display(), trainer.step_count());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(user(format!("{} not found", path.display())));
    }
    Checkpoint::load(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn cmd_slice(a: &SliceArgs) -> Result<()> {
    let ck = load_ckpt(&a.ckpt)?;
    let program = fs::read_to_string(&a.source).map_err(|e| user(format!("{}: {e}", a.source.display())))?;
    let on_line = statements(&program)
        .into_iter()
        .find(|s| s.line == a.line)
        .is_some_and(|s| s.tokens.iter().any(|t| t.kind == TokenKind::Identifier && t.text == a.var));
    if !on_line {
        return Err(user(format!("`{}` does not occur on line {}", a.var, a.line)));
    }
    let inst = SliceInstance {
        program,
        criterion: SliceCriterion::new(a.var.clone(), a.line),
        gold_lines: Vec::new(),
        gold_text: String::new(),
        corruption: Corruption::None,
    };
    let encoded = encode_input(&inst, &ck.vocab, ck.model.config.max_src).map_err(user)?;
    let mut cfg = a.beam.config();
    cfg.trace = a.trace.is_some();
    let input = DecodeInput { encoded: &encoded, vocab: &ck.vocab, source: &inst.program };
    let out = beam_search(&ck.model, &input, &cfg).map_err(internal)?;
    if let Some(path) = &a.trace {
        let json = serde_json::to_string_pretty(&out.trace).map_err(internal)?;
        fs::write(path, json + "\n").map_err(internal)?;
    }
    println!("{}", out.text);
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = load_ckpt(&a.ckpt)?;
    let mut test = load_split(&a.data)?;
    if let Some(n) = a.limit {
        test.truncate(n);
    }
    let kinds: Vec<Corruption> = match a.corrupt.as_deref() {
        None => Vec::new(),
        Some("all") => Corruption::KINDS.to_vec(),
        Some(s) => match Corruption::parse(s) {
            Some(Corruption::None) | None => return Err(user(format!("unknown corruption `{s}`"))),
            Some(k) => vec![k],
        },
    };
    let no_copy = match &a.no_copy_ckpt {
        Some(p) => {
            let c = load_ckpt(p)?;
            if c.vocab.tokens() != ck.vocab.tokens() {
                return Err(user("the two checkpoints use different vocabularies"));
            }
            Some(c.model)
        }
        None => None,
    };
    let cfg = EvalConfig { beam: a.beam.config(), jobs: a.jobs, label: "full".into() };
    let mut reports: Vec<EvalReport> = Vec::new();
    if a.ablate {
        reports.extend(metrics::ablate(&ck.model, no_copy.as_ref(), &ck.vocab, &test, &cfg).map_err(user)?);
    } else if kinds.is_empty() {
        reports.push(metrics::evaluate(&ck.model, &ck.vocab, &test, &cfg).map_err(user)?);
    }
    for kind in kinds {
        let (corrupted, skipped) = metrics::corrupt_split(&test, kind, a.seed);
        let c = EvalConfig { label: kind.name().into(), ..cfg.clone() };
        let mut r = metrics::evaluate(&ck.model, &ck.vocab, &corrupted, &c).map_err(user)?;
        r.skipped = skipped;
        reports.push(r);
    }
    fs::create_dir_all(&a.out).map_err(internal)?;
    let json = serde_json::to_string_pretty(&reports).map_err(internal)?;
    fs::write(a.out.join("report.json"), json + "\n").map_err(internal)?;
    let table = metrics::render_table(&reports);
    fs::write(a.out.join("report.txt"), &table).map_err(internal)?;
    print!("{table}");
    Ok(())
}
