use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use tgt::checkpoint;
use tgt::data::{generate_synthetic, parse_interactions, write_interactions, BehaviorVocab};
use tgt::eval::{evaluate, recommend, write_diagnostics};
use tgt::model::{infer, GraphInputs};
use tgt::toy::toy_gradient_check;
use tgt::train::{write_loss_log, EpochLoss, Trainer};
use tgt::{Dataset, ModelConfig, ModelParameters, RankingReport};

use crate::config::{ConfigError, RunConfig};

/// Largest relative gradient error accepted by `gradcheck`.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Usage(e.0)
    }
}

impl From<tgt::Error> for CliError {
    fn from(e: tgt::Error) -> Self {
        use tgt::Error as E;
        match e {
            E::Config(_) => Self::Usage(e.to_string()),
            E::Data(_) | E::Checkpoint(_) => Self::Data(e.to_string()),
            E::Tensor(_) | E::NonFinite { .. } => Self::Numeric(e.to_string()),
        }
    }
}

impl From<tgt::error::DataError> for CliError {
    fn from(e: tgt::error::DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<tgt::error::CheckpointError> for CliError {
    fn from(e: tgt::error::CheckpointError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<tgt::error::ConfigError> for CliError {
    fn from(e: tgt::error::ConfigError) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let vocab = match cfg.vocabulary() {
        Some(path) => {
            let file =
                File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            BehaviorVocab::parse(BufReader::new(file))
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => BehaviorVocab::new(cfg.behaviors()?)?,
    };
    let label = cfg.raw("data.target");
    let target = vocab
        .id(label)
        .ok_or_else(|| CliError::Usage(format!("target `{label}` is not among the behaviors")))?;
    let path = cfg.interactions();
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let records = parse_interactions(BufReader::new(file), &vocab)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no interactions",
            path.display()
        )));
    }
    Ok(Dataset::from_records(
        &records,
        vocab,
        target,
        cfg.bool("data.target_only")?,
    )?)
}

fn check_layout(
    params: &ModelParameters,
    model: &ModelConfig,
    ds: &Dataset,
    path: &Path,
) -> CliResult {
    params
        .check_layout(&model.parameter_shapes(ds.n_users(), ds.n_items(), ds.n_behaviors()))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Parameters from the configured checkpoint, checked against the model layout.
fn load_parameters(
    cfg: &RunConfig,
    model: &ModelConfig,
    ds: &Dataset,
) -> CliResult<ModelParameters> {
    let path = cfg.checkpoint();
    let (params, _) =
        checkpoint::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    check_layout(&params, model, ds, &path)?;
    Ok(params)
}

pub fn synth(cfg: &RunConfig) -> CliResult {
    let sc = cfg.synthetic()?;
    let records = generate_synthetic(&sc)?;
    let vocab = BehaviorVocab::new(sc.labels())?;
    let path = cfg.interactions();
    let mut out = create(path)?;
    write_interactions(&records, &vocab, &mut out)?;
    out.flush()?;
    if let Some(vpath) = cfg.vocabulary() {
        let mut v = create(vpath)?;
        vocab.write(&mut v)?;
        v.flush()?;
    }
    println!("wrote {} interactions to {}", records.len(), path.display());
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> CliResult {
    let ds = load_dataset(cfg)?;
    let model = cfg.model()?;
    let mut per_behavior = vec![0usize; ds.n_behaviors()];
    for seq in &ds.train {
        for r in &seq.records {
            per_behavior[r.behavior] += 1;
        }
    }
    let subsequences: usize = ds.subsequences(model.window).iter().map(Vec::len).sum();
    println!("users\t{}", ds.n_users());
    println!("items\t{}", ds.n_items());
    println!("training_events\t{}", ds.train_records());
    for (b, n) in per_behavior.iter().enumerate() {
        let marker = if b == ds.target { " (target)" } else { "" };
        println!("events.{}{marker}\t{n}", ds.vocab.label(b));
    }
    println!("held_out\t{}", ds.test.len());
    println!("subsequences\t{subsequences}");
    Ok(())
}

/// Train per the configuration, resuming from the checkpoint when asked.
fn run_training<'a>(
    cfg: &RunConfig,
    ds: &'a Dataset,
    model: ModelConfig,
) -> CliResult<(Trainer<'a>, ModelParameters)> {
    let tc = cfg.train()?;
    let trainer = Trainer::new(ds, model, tc)?;
    let ckpt = cfg.checkpoint();
    let resume = cfg.bool("run.resume")?;
    let (mut params, mut state) = if resume {
        let (params, state) = checkpoint::load(&ckpt)
            .map_err(|e| CliError::Data(format!("{}: {e}", ckpt.display())))?;
        check_layout(&params, &model, ds, &ckpt)?;
        let state = state.ok_or_else(|| {
            CliError::Data(format!(
                "{}: no optimizer state to resume from",
                ckpt.display()
            ))
        })?;
        (params, state)
    } else {
        let params = trainer.init_parameters()?;
        let state = trainer.init_state(&params);
        (params, state)
    };

    let log_path = cfg.output().join("loss.tsv");
    fs::create_dir_all(cfg.output())?;
    let mut log: Vec<EpochLoss> = Vec::new();
    while state.epoch < tc.epochs {
        let loss = trainer.run_epoch(&mut params, &mut state)?;
        if !loss.is_finite() {
            return Err(CliError::Numeric(format!(
                "loss became {loss} in epoch {}",
                state.epoch
            )));
        }
        eprintln!("epoch {}\tloss {loss}", state.epoch);
        log.push(EpochLoss {
            epoch: state.epoch,
            loss,
        });
    }
    if resume && log_path.exists() {
        let mut buf = Vec::new();
        write_loss_log(&log, &mut buf)?;
        let body = buf.splitn(2, |&b| b == b'\n').nth(1).unwrap_or_default();
        OpenOptions::new()
            .append(true)
            .open(&log_path)?
            .write_all(body)?;
    } else {
        write_loss_log(&log, create(&log_path)?)?;
    }
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    checkpoint::save(&ckpt, &params, Some(&state))
        .map_err(|e| CliError::Data(format!("{}: {e}", ckpt.display())))?;
    eprintln!("saved {}", ckpt.display());
    Ok((trainer, params))
}

fn report(
    cfg: &RunConfig,
    ds: &Dataset,
    model: &ModelConfig,
    params: &ModelParameters,
    inputs: &GraphInputs,
) -> CliResult<RankingReport> {
    let inference = infer(params, model, inputs)?;
    let report = evaluate(
        &inference,
        &inputs.graph,
        ds,
        &cfg.cutoffs()?,
        cfg.candidates()?,
        cfg.seed()?,
    );
    let out = cfg.output();
    report.write_tsv(create(&out.join("report.tsv"))?)?;
    report.write_ranks(ds, create(&out.join("ranks.tsv"))?)?;
    write_diagnostics(
        &inference,
        &inputs.graph,
        ds,
        create(&out.join("diagnostics.tsv"))?,
    )?;
    report.write_tsv(io::stdout().lock())?;
    Ok(report)
}

pub fn train(cfg: &RunConfig) -> CliResult {
    let ds = load_dataset(cfg)?;
    run_training(cfg, &ds, cfg.model()?)?;
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> CliResult {
    let ds = load_dataset(cfg)?;
    let model = cfg.model()?;
    let params = load_parameters(cfg, &model, &ds)?;
    let (inputs, _) = GraphInputs::from_dataset(&ds, &model)?;
    report(cfg, &ds, &model, &params, &inputs)?;
    Ok(())
}

pub fn recommend_cmd(cfg: &RunConfig, user: &str, n: &str) -> CliResult {
    let raw: usize = user.parse().map_err(|_| {
        CliError::Usage(format!(
            "user id must be a non-negative integer, got `{user}`"
        ))
    })?;
    let n: usize = n
        .parse()
        .map_err(|_| CliError::Usage(format!("N must be a non-negative integer, got `{n}`")))?;
    let ds = load_dataset(cfg)?;
    let dense = ds.user_index(raw)?;
    let model = cfg.model()?;
    let params = load_parameters(cfg, &model, &ds)?;
    let (inputs, _) = GraphInputs::from_dataset(&ds, &model)?;
    let inference = infer(&params, &model, &inputs)?;
    let top = recommend(&inference, &inputs.graph, &ds, dense, n)
        .ok_or_else(|| CliError::Data(format!("user {raw} has no training history")))?;
    let mut out = io::stdout().lock();
    writeln!(out, "rank\titem\tscore")?;
    for (k, (item, score)) in top.iter().enumerate() {
        writeln!(out, "{}\t{}\t{score}", k + 1, ds.items.raw(*item))?;
    }
    Ok(())
}

fn module_of(param: &str) -> &'static str {
    match param.split('.').next().unwrap_or(param) {
        "item_embedding" | "user_embedding" | "behavior_embedding" | "time_projection"
        | "position_embedding" => "embedding",
        "attn" => "attention",
        "channel" | "shared_projection" => "projection",
        "cross" | "concat" => "fusion",
        "score" => "score",
        _ => "other",
    }
}

pub fn gradcheck(cfg: &RunConfig) -> CliResult {
    let model = cfg.model()?;
    let errors = toy_gradient_check(model.dim, model.ablation, cfg.seed()?, 1e-5)?;
    let mut by_module: BTreeMap<&str, f64> = BTreeMap::new();
    for (name, e) in &errors {
        let slot = by_module.entry(module_of(name)).or_insert(0.0);
        *slot = slot.max(*e);
    }
    let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    for (module, e) in &by_module {
        println!("{module}\t{e:.3e}");
    }
    println!("max_relative_error\t{worst:.3e}");
    if worst.is_nan() || worst >= GRADIENT_TOLERANCE {
        return Err(CliError::Numeric(format!(
            "gradient error {worst:.3e} exceeds {GRADIENT_TOLERANCE:e}"
        )));
    }
    Ok(())
}

pub fn ablate(cfg: &mut RunConfig, flags: &[String]) -> CliResult {
    let mut all: Vec<String> = cfg
        .raw("model.ablation")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    all.extend(flags.iter().cloned());
    cfg.set("model.ablation", &all.join(","))?;
    let model = cfg.model()?;
    eprintln!("variant {}", model.ablation);
    let ds = load_dataset(cfg)?;
    let (trainer, params) = run_training(cfg, &ds, model)?;
    report(cfg, &ds, &model, &params, &trainer.inputs)?;
    Ok(())
}
