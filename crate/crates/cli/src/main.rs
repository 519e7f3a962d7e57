//! `adjprior`: command-line front end to the adjacency-prior toolkit.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 findings
//! (violations present, or a gradient check out of tolerance).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adjprior_core::adjacency::{
    aggregate_prior, binarize, hard_adjacency, summed_counts, violation_report, BinaryAdj, PriorAdj,
};
use adjprior_core::gradcheck::{run_gradcheck, DEFAULT_INSTANCES, DEFAULT_STEP, DEFAULT_TOLERANCE};
use adjprior_core::io::{
    load_prior, load_volume, load_volume_file, save_prior, save_report, save_trace, save_volume,
    save_volume_tagged, AdjacencyDocument, ReportFormat, Volume,
};
use adjprior_core::losses::{loss_terms, CombineMode, LossConfig, DEFAULT_LAMBDA};
use adjprior_core::metrics::evaluate;
use adjprior_core::phantom::{generate_phantom, refine, PhantomSpec, RefineConfig, RNG_ALGORITHM};
use adjprior_core::postprocess::postprocess_all;
use adjprior_core::volume::{argmax_labels, one_hot, softmax, ClassVolume, GridDims, LabelMap};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_FINDINGS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "adjprior",
    version,
    about = "Anatomical adjacency priors for 3D multi-label segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or audit adjacency priors
    #[command(subcommand)]
    Adjacency(AdjacencyCommand),
    /// Per-label volume, Dice and HD95 of a prediction against ground truth
    Metrics(MetricsArgs),
    /// Evaluate the segmentation and non-adjacency losses of a prediction
    Loss(LossArgs),
    /// Keep the largest component of each label, then fill enclosed holes
    Postprocess(PostprocessArgs),
    /// Write a seeded synthetic phantom with noisy logits
    Phantom(PhantomArgs),
    /// Two-phase gradient descent on logits
    Refine(RefineArgs),
    /// Finite-difference check of every analytic gradient
    Gradcheck(GradcheckArgs),
}

#[derive(Subcommand)]
enum AdjacencyCommand {
    /// Aggregate training labelmaps into a prior
    Build(BuildArgs),
    /// List contacts in a prediction that the prior forbids
    Check(CheckArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write summed neighbor-pair counts instead of the probabilistic prior
    #[arg(long)]
    counts: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    prior: PathBuf,
    /// Report contacts whose prior entry is at or below this value
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write CSV instead of JSON
    #[arg(long)]
    csv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Combine {
    Sum,
    Product,
}

#[derive(Args)]
struct LossOptions {
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// How Dice and cross-entropy are combined
    #[arg(long, value_enum, default_value_t = Combine::Sum)]
    combine: Combine,
}

impl LossOptions {
    fn config(&self) -> LossConfig {
        let combine_mode = match self.combine {
            Combine::Sum => CombineMode::Sum,
            Combine::Product => CombineMode::Product,
        };
        LossConfig {
            lambda: self.lambda,
            combine_mode,
            ..LossConfig::default()
        }
    }
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Labelmap (one-hot encoded), probability map, or logits (softmaxed)
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    prior: PathBuf,
    #[command(flatten)]
    loss: LossOptions,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// One size for a cube, or three comma-separated sizes
    #[arg(long, value_delimiter = ',', num_args = 1..=3, default_value = "48")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 1.5)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 2.0)]
    logit_gain: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    prior: PathBuf,
    #[command(flatten)]
    loss: LossOptions,
    #[arg(long, default_value_t = 200)]
    phase1: usize,
    #[arg(long, default_value_t = 300)]
    phase2: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Refined probability map
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_INSTANCES)]
    instances: usize,
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn read_volume(path: &Path) -> Result<Volume> {
    load_volume(path).with_context(|| format!("cannot load {}", show(path)))
}

fn read_labels(path: &Path) -> Result<LabelMap> {
    match read_volume(path)? {
        Volume::Label(l) => Ok(l),
        other => bail!(
            "{} holds a {:?} volume, expected a labelmap",
            show(path),
            other.kind()
        ),
    }
}

/// Hard labels from any volume: probabilities and logits are decoded by argmax.
fn read_any_labels(path: &Path) -> Result<LabelMap> {
    Ok(match read_volume(path)? {
        Volume::Label(l) => l,
        Volume::Prob(p) => argmax_labels(&p),
        Volume::Logit(z) => argmax_labels(&z),
    })
}

fn read_prior(path: &Path) -> Result<PriorAdj> {
    let doc = load_prior(path).with_context(|| format!("cannot load {}", show(path)))?;
    doc.into_prior()
        .with_context(|| format!("{} is not usable as a prior", show(path)))
}

fn adjacency_build(a: &BuildArgs) -> Result<ExitCode> {
    let mut labs = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let lab = read_labels(path)?;
        if let Some(first) = labs.first().map(|l: &LabelMap| l.num_classes()) {
            if lab.num_classes() != first {
                bail!(
                    "{} has {} classes but {} has {}",
                    show(&a.inputs[0]),
                    first,
                    show(path),
                    lab.num_classes()
                );
            }
        }
        labs.push(lab);
    }
    let doc = if a.counts {
        AdjacencyDocument::from_counts(&summed_counts(&labs)?, labs.len())
    } else {
        let bins: Vec<BinaryAdj> = labs.iter().map(|l| binarize(&hard_adjacency(l))).collect();
        AdjacencyDocument::from_prior(&aggregate_prior(&bins)?)
    };
    let allowed = doc
        .matrix
        .upper_pairs()
        .filter(|&(b, c)| doc.matrix.get(b, c) > 0.0)
        .count();
    save_prior(&doc, &a.out).with_context(|| format!("cannot write {}", show(&a.out)))?;
    println!("num_subjects {}", labs.len());
    println!("allowed_pairs {allowed}");
    Ok(ExitCode::SUCCESS)
}

fn adjacency_check(a: &CheckArgs) -> Result<ExitCode> {
    let lab = read_any_labels(&a.pred)?;
    let prior = read_prior(&a.prior)?;
    let found = violation_report(&lab, &prior, a.threshold)?;
    if found.is_empty() {
        println!("no violations");
        return Ok(ExitCode::SUCCESS);
    }
    for v in &found {
        println!("violation {} {} {}", v.b, v.c, v.count);
    }
    Ok(ExitCode::from(EXIT_FINDINGS))
}

fn metrics(a: &MetricsArgs) -> Result<ExitCode> {
    let gt = read_labels(&a.gt)?;
    let pred = read_any_labels(&a.pred)?;
    let report = evaluate(&gt, &pred)?;
    let format = if a.csv {
        ReportFormat::Csv
    } else {
        ReportFormat::Json
    };
    save_report(&report, &a.out, format)
        .with_context(|| format!("cannot write {}", show(&a.out)))?;
    println!("labels {}", report.labels.len());
    Ok(ExitCode::SUCCESS)
}

fn prediction_probs(v: Volume) -> ClassVolume {
    match v {
        Volume::Label(l) => one_hot(&l).into_volume(),
        Volume::Prob(p) => p.into_volume(),
        Volume::Logit(z) => softmax(&z).into_volume(),
    }
}

fn loss(a: &LossArgs) -> Result<ExitCode> {
    let gt = read_labels(&a.gt)?;
    let p = prediction_probs(read_volume(&a.pred)?);
    let prior = read_prior(&a.prior)?;
    let cfg = a.loss.config();
    cfg.validate()?;
    if p.dims() != gt.dims() {
        bail!("{} and {} have different grids", show(&a.gt), show(&a.pred));
    }
    let t = loss_terms(&p, &one_hot(&gt), &prior, &cfg)?;
    println!("total {}", t.total);
    println!("seg {}", t.seg);
    println!("dice {}", t.dice);
    println!("ce {}", t.ce);
    println!("nonadj {}", t.nonadj);
    Ok(ExitCode::SUCCESS)
}

fn postprocess(a: &PostprocessArgs) -> Result<ExitCode> {
    let file =
        load_volume_file(&a.input).with_context(|| format!("cannot load {}", show(&a.input)))?;
    let Volume::Label(lab) = file.volume else {
        bail!(
            "{} holds a {:?} volume, expected a labelmap",
            show(&a.input),
            file.volume.kind()
        );
    };
    let out = postprocess_all(&lab);
    let changed = lab
        .voxels()
        .iter()
        .zip(out.voxels())
        .filter(|(a, b)| a != b)
        .count();
    save_volume_tagged(&Volume::Label(out), file.rng_algorithm.as_deref(), &a.out)
        .with_context(|| format!("cannot write {}", show(&a.out)))?;
    println!("changed_voxels {changed}");
    Ok(ExitCode::SUCCESS)
}

fn phantom(a: &PhantomArgs) -> Result<ExitCode> {
    let dims = match a.dims[..] {
        [n] => GridDims::cube(n)?,
        [h, w, d] => GridDims::new(h, w, d)?,
        _ => bail!("--dims takes one size or three comma-separated sizes"),
    };
    let spec = PhantomSpec {
        seed: a.seed,
        dims,
        num_classes: a.classes,
        noise_sigma: a.noise_sigma,
        logit_gain: a.logit_gain,
    };
    let (gt, z) = generate_phantom(&spec)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", show(&a.out)))?;
    let write = |name: &str, v: &Volume, tag: Option<&str>| -> Result<()> {
        let path = a.out.join(name);
        save_volume_tagged(v, tag, &path).with_context(|| format!("cannot write {}", show(&path)))
    };
    write("gt.avol", &Volume::Label(gt), None)?;
    write("logits.avol", &Volume::Logit(z), Some(RNG_ALGORITHM))?;
    let spec_path = a.out.join("spec.json");
    let mut text = serde_json::to_string_pretty(&spec)?;
    text.push('\n');
    fs::write(&spec_path, text).with_context(|| format!("cannot write {}", show(&spec_path)))?;
    println!("wrote {}", show(&a.out));
    Ok(ExitCode::SUCCESS)
}

fn refine_cmd(a: &RefineArgs) -> Result<ExitCode> {
    let z = match read_volume(&a.logits)? {
        Volume::Logit(z) => z,
        other => bail!(
            "{} holds a {:?} volume, expected logits",
            show(&a.logits),
            other.kind()
        ),
    };
    let gt = read_labels(&a.gt)?;
    let prior = read_prior(&a.prior)?;
    let cfg = RefineConfig {
        phase1_steps: a.phase1,
        phase2_steps: a.phase2,
        learning_rate: a.lr,
        loss: a.loss.config(),
    };
    let out = refine(&z, &gt, &prior, &cfg)?;
    save_volume(&Volume::Prob(out.probs.clone()), &a.out)
        .with_context(|| format!("cannot write {}", show(&a.out)))?;
    if let Some(path) = &a.trace {
        save_trace(&out.trace, path).with_context(|| format!("cannot write {}", show(path)))?;
    }
    let t = out.final_terms;
    println!("steps {}", out.trace.len());
    println!("final_total {}", t.total);
    println!("final_nonadj {}", t.nonadj);
    println!(
        "violations {}",
        violation_report(&argmax_labels(&out.probs), &prior, 0.0)?.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let report = run_gradcheck(a.seed, a.instances, DEFAULT_STEP, DEFAULT_TOLERANCE)?;
    for s in &report.suites {
        println!(
            "{} {:e} {}",
            s.suite.name(),
            s.max_rel_error,
            if s.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FINDINGS)
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Adjacency(AdjacencyCommand::Build(a)) => adjacency_build(a),
        Command::Adjacency(AdjacencyCommand::Check(a)) => adjacency_check(a),
        Command::Metrics(a) => metrics(a),
        Command::Loss(a) => loss(a),
        Command::Postprocess(a) => postprocess(a),
        Command::Phantom(a) => phantom(a),
        Command::Refine(a) => refine_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

/// I/O failures anywhere in the chain map to 1; everything else is invalid input.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<adjprior_core::Error>() {
            return if e.is_io() { EXIT_IO } else { EXIT_INVALID };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_INVALID
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
