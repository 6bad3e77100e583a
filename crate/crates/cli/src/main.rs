//! `jointdet` command-line tool.
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use jointdet::config::{RunConfig, KEYS};
use jointdet::dataset::{
    augment_rotations, load_test_scenes, load_training_set, split_validation, write_synthetic_corpus, SynthSpec,
    TRUTH_FILE,
};
use jointdet::eval::{evaluate_scenes, non_max_suppression, score_image, write_report};
use jointdet::image_io::{load_pgm, ChannelStack, STACK_H, STACK_W};
use jointdet::network::{grad_check, Network};
use jointdet::nn::checkpoint::Checkpoint;
use jointdet::nn::gradcheck::GradCheckOptions;
use jointdet::trainer::train_all;
use jointdet::visibility::VisibilityMode;
use jointdet::Error;

/// Largest relative gradient error `gradcheck` accepts.
const GRADCHECK_LIMIT: f64 = 1e-3;

#[derive(Parser, Debug)]
#[command(name = "jointdet", version, about = "Part-based car detector: prepare data, train, evaluate, detect")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Flat key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set stage1.epochs=5
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Directory that receives every output file
    #[arg(long, default_value = "out", global = true)]
    output_dir: PathBuf,
    /// Master seed (same as --set seed=N)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this value
    #[arg(long, default_value_t = 1, global = true)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus (or generate a synthetic one) and write a manifest
    Prepare {
        /// Corpus root with pos/, neg/, test/ and the truth file
        #[arg(long, required_unless_present = "synthetic")]
        corpus: Option<PathBuf>,
        /// Generate a synthetic corpus under <output-dir>/corpus instead
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value_t = 60)]
        positives: usize,
        #[arg(long, default_value_t = 60)]
        negatives: usize,
        #[arg(long, default_value_t = 6)]
        scenes: usize,
    },
    /// Run the three training stages
    Train {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Evaluate a checkpoint on the corpus test scenes
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Score one image and print windows above eval.threshold
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Compare analytic and numeric gradients of a freshly initialized model
    Gradcheck {
        /// Batch size of random inputs
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Scalars checked per parameter group
        #[arg(long, default_value_t = 20)]
        per_group: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
    },
}

fn config_help() -> String {
    let defaults = RunConfig::default();
    let mut s = String::from("Config keys (default):\n");
    for (k, desc) in KEYS {
        let _ = writeln!(s, "  {k:<24} {:<20} {desc}", defaults.get(k).unwrap_or_default());
    }
    s
}

fn resolve_config(g: &Global) -> jointdet::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for o in &g.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sha256_file(path: &Path) -> jointdet::Result<String> {
    let digest = Sha256::digest(fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn prepare(root: &Path, out: &Path) -> jointdet::Result<()> {
    let crops = load_training_set(root)?;
    let scenes = load_test_scenes(root.join("test"), root.join(TRUTH_FILE))?;
    let pos = crops.iter().filter(|c| c.label == 1).count();
    let truths: usize = scenes.iter().map(|s| s.ground_truths.len()).sum();
    let mut m = String::new();
    let _ = writeln!(m, "corpus = {}", root.display());
    let _ = writeln!(m, "positives = {pos}");
    let _ = writeln!(m, "negatives = {}", crops.len() - pos);
    let _ = writeln!(m, "scenes = {}", scenes.len());
    let _ = writeln!(m, "ground_truths = {truths}");
    fs::create_dir_all(out)?;
    fs::write(out.join("manifest.txt"), m)?;
    println!("{pos} positive, {} negative crops; {} scenes, {truths} cars", crops.len() - pos, scenes.len());
    Ok(())
}

fn train(cfg: &RunConfig, corpus: &Path, out: &Path) -> jointdet::Result<()> {
    let t = &cfg.train;
    let crops = load_training_set(corpus)?;
    let (train, val) = split_validation(crops, t.val_fraction)?;
    let (train, val) = if t.augment {
        (
            augment_rotations(&train, t.aug_max_deg, t.aug_step_deg)?,
            augment_rotations(&val, t.aug_max_deg, t.aug_step_deg)?,
        )
    } else {
        (train, val)
    };
    info!("training on {} crops, validating on {}", train.len(), val.len());
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let outcome = train_all(&train, &val, t, Some(out))?;
    for s in &outcome.stages {
        println!(
            "stage {}: {} epochs, train loss {:.6}, train accuracy {:.4}",
            s.network.stage, s.epochs_run, s.final_loss, s.final_accuracy
        );
    }
    println!("final.ckpt sha256 {}", sha256_file(&out.join("final.ckpt"))?);
    Ok(())
}

fn load_network(path: &Path) -> jointdet::Result<Network<f32>> {
    Network::from_checkpoint(&Checkpoint::load(path)?)
}

fn eval(cfg: &RunConfig, checkpoint: &Path, corpus: &Path, out: &Path) -> jointdet::Result<()> {
    let net = load_network(checkpoint)?;
    let scenes = load_test_scenes(corpus.join("test"), corpus.join(TRUTH_FILE))?;
    let report = evaluate_scenes(&net, &scenes, &cfg.eval)?;
    write_report(out, &report)?;
    let c = report.counts;
    println!("tp {} fp {} fn {} over {} scenes", c.tp, c.fp, c.fn_, report.n_scenes);
    println!("lamr {:.6}", report.curve.lamr);
    Ok(())
}

fn detect(cfg: &RunConfig, checkpoint: &Path, image: &Path) -> jointdet::Result<()> {
    let net = load_network(checkpoint)?;
    let img = load_pgm(image)?;
    let id = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let e = &cfg.eval;
    let records = score_image(&img, &id, &net, e.stride_r, e.stride_c)?;
    let above: Vec<_> = records.into_iter().filter(|r| r.score >= e.threshold).collect();
    println!("row,col,score");
    for r in non_max_suppression(&above, e.nms_radius_r, e.nms_radius_c) {
        println!("{},{},{:.6}", r.row, r.col, r.score);
    }
    Ok(())
}

fn gradcheck(cfg: &RunConfig, samples: usize, per_group: usize, epsilon: f64) -> jointdet::Result<bool> {
    let t = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let net = Network::<f64>::stage1(&mut rng)?
        .into_stage2(t.parts.clone(), t.deformation_mode, &mut rng)?
        .into_stage3(VisibilityMode::Hierarchical, &mut rng)?;
    let plane = STACK_H * STACK_W;
    let stacks: Vec<ChannelStack> = (0..samples)
        .map(|_| {
            let p: Vec<Vec<f64>> = (0..3).map(|_| (0..plane).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
            ChannelStack::from_planes([&p[0], &p[1], &p[2]])
        })
        .collect::<jointdet::Result<_>>()?;
    let labels: Vec<f64> = (0..samples).map(|i| (i % 2) as f64).collect();
    let refs: Vec<&ChannelStack> = stacks.iter().collect();
    let opts = GradCheckOptions { epsilon, samples_per_group: per_group, seed: t.seed, ..Default::default() };
    let report = grad_check(&net, &refs, &labels, &opts)?;
    for g in &report.groups {
        println!(
            "{:<20} checked {:>3} ties {:>2} max rel error {:.3e}",
            g.name, g.checked, g.skipped_ties, g.max_rel_error
        );
    }
    let worst = report.max_rel_error();
    println!(
        "max relative error {worst:.3e} ({} checked, {} skipped at ties)",
        report.checked(),
        report.skipped_ties()
    );
    Ok(worst < GRADCHECK_LIMIT)
}

fn run(cli: Cli) -> jointdet::Result<bool> {
    let cfg = resolve_config(&cli.global)?;
    let out = &cli.global.output_dir;
    match cli.command {
        Command::Prepare { corpus, synthetic, positives, negatives, scenes } => {
            let root = if synthetic {
                let root = out.join("corpus");
                let spec = SynthSpec { positives, negatives, scenes, seed: cfg.train.seed, ..Default::default() };
                write_synthetic_corpus(&root, &spec)?;
                root
            } else {
                corpus.expect("clap enforces --corpus")
            };
            prepare(&root, out)?;
        }
        Command::Train { corpus } => train(&cfg, &corpus, out)?,
        Command::Eval { checkpoint, corpus } => eval(&cfg, &checkpoint, &corpus, out)?,
        Command::Detect { checkpoint, image } => detect(&cfg, &checkpoint, &image)?,
        Command::Gradcheck { samples, per_group, epsilon } => return gradcheck(&cfg, samples, per_group, epsilon),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = Cli::command().after_help(config_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads.max(1)).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check exceeded {GRADCHECK_LIMIT:e}");
            ExitCode::from(1)
        }
        Err(e @ (Error::Config(_) | Error::InvalidArgument(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
