use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use quartet_core::checkpoint::{self, Checkpoint};
use quartet_core::config::{ModelKind, RunConfig};
use quartet_core::corpus::{generate_synthetic_corpus, load_dataset, split_stats, write_split, DatasetSplit, FieldMapping};
use quartet_core::eval::{align, align_ordered, round2};
use quartet_core::model::Model;
use quartet_core::predict::{read_predictions, write_predictions};
use quartet_core::probe::probe;
use quartet_core::report::Report;

#[derive(Parser)]
#[command(name = "quartet", version, about = "Train and evaluate explanation-structure models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value config file (defaults to the desk preset).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset file in the line-delimited record format.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Checkpoint to write (train) or read (everything else).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// quartet, tagging, random, majority, bow, effect-only or answer-only.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Field mapping file for datasets with non-canonical field names.
    #[arg(long, global = true)]
    mapping: Option<PathBuf>,
    /// Extra `key=value` config entries, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write a checkpoint plus its loss curve.
    Train {
        /// Held-out split scored after training.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Continue from the checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: bool,
    },
    /// Predict a labeled split and write predictions and a full report.
    Eval {
        /// Training split for fitting the majority baseline without a checkpoint.
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Write predictions for a split, labeled or not.
    Predict,
    /// Insert a background sentence and compare predictions.
    Probe {
        #[arg(long)]
        question: String,
        #[arg(long)]
        text: String,
        /// 1-based step index the sentence will occupy.
        #[arg(long)]
        position: usize,
    },
    /// Generate the synthetic corpus as train, dev and test files.
    Synth {
        #[arg(long)]
        passages: Option<usize>,
        #[arg(long)]
        noeffect: Option<f64>,
    },
    /// Score an existing predictions file.
    Report {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "model")]
        name: String,
    },
}

struct Ctx {
    common: Common,
    cfg: RunConfig,
    /// True when the config came from a file or flags rather than a checkpoint.
    explicit: bool,
}

impl Ctx {
    fn new(common: Common) -> Result<Ctx> {
        let explicit = common.config.is_some() || common.model.is_some() || !common.overrides.is_empty();
        let cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::desk(),
        };
        let mut ctx = Ctx { common, cfg, explicit };
        ctx.apply_overrides()?;
        Ok(ctx)
    }

    fn apply_overrides(&mut self) -> Result<()> {
        let c = &self.common;
        self.cfg.apply_env(|k| std::env::var(k).ok())?;
        if let Some(m) = &c.model {
            self.cfg.model = m.parse::<ModelKind>().map_err(|e| anyhow!(e))?;
        }
        if let Some(s) = c.seed {
            self.cfg.set("seed", &s.to_string())?;
        }
        for kv in &c.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
            self.cfg.set(k.trim(), v.trim())?;
        }
        self.cfg.validate()?;
        Ok(())
    }

    fn warn(&self) {
        for w in self.cfg.warnings() {
            log::warn!("{w}");
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.common
            .out
            .clone()
            .or_else(|| self.cfg.paths.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn checkpoint_path(&self) -> Option<PathBuf> {
        self.common.checkpoint.clone().or_else(|| self.cfg.paths.checkpoint.clone())
    }

    fn data(&self, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        self.common
            .data
            .clone()
            .or_else(|| fallback.clone())
            .ok_or_else(|| anyhow!("no {what} data: pass --data or set it in the config"))
    }

    fn mapping(&self) -> Result<FieldMapping> {
        match &self.common.mapping {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                FieldMapping::parse(&text).map_err(|e| anyhow!("{}: {e}", p.display()))
            }
            None => Ok(FieldMapping::identity()),
        }
    }

    fn load(&self, path: &Path) -> Result<DatasetSplit> {
        load_dataset(path, &self.mapping()?).with_context(|| format!("loading {}", path.display()))
    }

    /// Model from the checkpoint when one is given or exists; otherwise a
    /// baseline that needs no training.
    fn restore(&mut self, train: Option<&Path>) -> Result<(Model, Vec<f64>)> {
        if let Some(path) = self.checkpoint_path() {
            let ck = Checkpoint::read(&path).with_context(|| format!("reading checkpoint {}", path.display()))?;
            if !self.explicit {
                self.cfg = RunConfig::parse(&ck.config)?;
                self.apply_overrides()?;
            }
            let model = ck.restore(&self.cfg)?;
            return Ok((model, ck.loss_curve));
        }
        match self.cfg.model {
            ModelKind::Random | ModelKind::Bow => Ok((Model::init(&self.cfg, None, None)?, vec![])),
            ModelKind::Majority => {
                let path = train
                    .map(Path::to_path_buf)
                    .or_else(|| self.cfg.paths.train.clone())
                    .ok_or_else(|| anyhow!("majority needs a checkpoint or --train"))?;
                let split = self.load(&path)?;
                Ok((Model::init(&self.cfg, None, Some(&split))?, vec![]))
            }
            m => bail!("{m} needs a trained checkpoint: pass --checkpoint"),
        }
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn summary(r: &Report) -> String {
    let c = &r.metrics.components;
    format!(
        "{} on {} (n {}): acc_i {:.2} acc_j {:.2} acc_di {:.2} acc_de {:.2} acc_expl {:.2}",
        r.model,
        r.split,
        r.metrics.n,
        round2(c.acc_i),
        round2(c.acc_j),
        round2(c.acc_di),
        round2(c.acc_de),
        round2(c.acc_expl())
    )
}

fn cmd_train(ctx: Ctx, dev: Option<PathBuf>, resume: bool) -> Result<()> {
    ctx.warn();
    let path = ctx.data(&ctx.cfg.paths.train, "training")?;
    let split = ctx.load(&path)?;
    let ck_path = ctx
        .checkpoint_path()
        .unwrap_or_else(|| ctx.out_dir().join("checkpoint.json"));
    let (mut model, mut curve) = if resume {
        let (m, ck) = checkpoint::load(&ck_path, &ctx.cfg)
            .with_context(|| format!("resuming from {}", ck_path.display()))?;
        (m, ck.loss_curve)
    } else {
        let vocab = ctx.cfg.model.is_neural().then(|| Model::vocab_for(&ctx.cfg, &split));
        (Model::init(&ctx.cfg, vocab, Some(&split))?, vec![])
    };
    let start = curve.len();
    let report = model.fit(&ctx.cfg, &split, |epoch, loss| {
        eprintln!("epoch {} loss {loss:.4}", start + epoch);
    })?;
    if let Some(r) = report {
        curve.extend(r.epoch_losses);
    }
    Checkpoint::capture(&model, &ctx.cfg, curve.clone())?.save(&ck_path)?;
    let curve_path = ck_path.with_file_name("loss_curve.tsv");
    write_file(&curve_path, |w| {
        writeln!(w, "epoch\tloss")?;
        for (e, l) in curve.iter().enumerate() {
            writeln!(w, "{}\t{l}", e + 1)?;
        }
        Ok(())
    })?;
    println!("checkpoint {}", ck_path.display());
    if let Some(dev) = dev {
        let split = ctx.load(&dev)?;
        let preds = model.predictor().predict_split(&split)?;
        let report = Report::build(ctx.cfg.model.as_str(), &split.name, &align_ordered(&split, &preds)?)?;
        println!("{}", summary(&report));
    }
    Ok(())
}

fn cmd_eval(mut ctx: Ctx, train: Option<PathBuf>) -> Result<()> {
    let (model, _) = ctx.restore(train.as_deref())?;
    let path = ctx.data(&ctx.cfg.paths.dev, "evaluation")?;
    let split = ctx.load(&path)?;
    let preds = model.predictor().predict_split(&split)?;
    let out = ctx.out_dir();
    write_file(&out.join("predictions.jsonl"), |w| write_predictions(&split, &preds, w))?;
    let report = Report::build(ctx.cfg.model.as_str(), &split.name, &align_ordered(&split, &preds)?)?;
    report.write(&out)?;
    println!("{}", summary(&report));
    println!("report {}", out.display());
    Ok(())
}

fn cmd_predict(mut ctx: Ctx) -> Result<()> {
    let (model, _) = ctx.restore(None)?;
    let path = ctx.data(&ctx.cfg.paths.test, "input")?;
    let split = ctx.load(&path)?;
    let preds = model.predictor().predict_split(&split)?;
    let out = ctx.out_dir().join("predictions.jsonl");
    write_file(&out, |w| write_predictions(&split, &preds, w))?;
    println!("{} predictions written to {}", preds.len(), out.display());
    Ok(())
}

fn cmd_probe(mut ctx: Ctx, question: &str, text: &str, position: usize) -> Result<()> {
    let (model, _) = ctx.restore(None)?;
    let path = ctx.data(&ctx.cfg.paths.dev, "question")?;
    let split = ctx.load(&path)?;
    let ex = split.find(question).ok_or_else(|| anyhow!("question {question} not found in {}", path.display()))?;
    let budget = match &model {
        Model::Quartet(m) => m.stack.max_markers(),
        Model::Tagging(m) => m.stack.max_markers(),
        _ => ctx.cfg.encoder.max_markers,
    };
    let result = probe(model.predictor(), ex, text, position, budget)?;
    println!("{}", result.render());
    Ok(())
}

fn cmd_synth(ctx: Ctx, passages: Option<usize>, noeffect: Option<f64>) -> Result<()> {
    let mut sc = ctx.cfg.synth.clone();
    if let Some(s) = ctx.common.seed {
        sc.seed = s;
    }
    if let Some(n) = passages {
        sc.n_passages = n;
    }
    if let Some(f) = noeffect {
        sc.noeffect_frac = f;
    }
    let corpus = generate_synthetic_corpus(&sc)?;
    let out = ctx.out_dir();
    for split in corpus.split_by_passage(&[("train", 0.8), ("dev", 0.1), ("test", 0.1)]) {
        let path = out.join(format!("{}.jsonl", split.name));
        write_file(&path, |w| write_split(&split, w))?;
        let st = split_stats(&split);
        println!(
            "{}: {} questions, {} passages, no-effect {:.3}",
            path.display(),
            st.n_examples,
            st.n_passages,
            st.no_effect_fraction()
        );
    }
    Ok(())
}

fn cmd_report(ctx: Ctx, predictions: &Path, name: &str) -> Result<()> {
    let path = ctx.data(&ctx.cfg.paths.dev, "gold")?;
    let split = ctx.load(&path)?;
    let f = fs::File::open(predictions).with_context(|| format!("opening {}", predictions.display()))?;
    let preds = read_predictions(BufReader::new(f)).map_err(|e| anyhow!("{}: {e}", predictions.display()))?;
    let report = Report::build(name, &split.name, &align(&split, &preds)?)?;
    let out = ctx.out_dir();
    report.write(&out)?;
    println!("{}", summary(&report));
    println!("report {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(cli.common)?;
    match cli.command {
        Command::Train { dev, resume } => cmd_train(ctx, dev, resume),
        Command::Eval { train } => cmd_eval(ctx, train),
        Command::Predict => cmd_predict(ctx),
        Command::Probe { question, text, position } => cmd_probe(ctx, &question, &text, position),
        Command::Synth { passages, noeffect } => cmd_synth(ctx, passages, noeffect),
        Command::Report { predictions, name } => cmd_report(ctx, &predictions, &name),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
