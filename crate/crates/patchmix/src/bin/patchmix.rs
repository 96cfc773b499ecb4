use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use patchmix::ablation::{ablation_csv, run_ablation};
use patchmix::config::RunConfig;
use patchmix::demo::{boundary_demo, DemoConfig, DemoMethod};
use patchmix::error::{Error, Result};
use patchmix::eval::{evaluate_model, report_csv, DEFAULT_EPSILONS};
use patchmix::formats;
use patchmix::parallel::ParallelFitness;
use patchmix::pipeline::{self, RunPaths};
use patchmix_core::evolution::run_search;
use patchmix_core::{Individual, PatchMask, SeededRng};

#[derive(Parser)]
#[command(name = "patchmix", version, about = "PatchMix training, mask search and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the training and search seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for fitness evaluation.
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Attack {
    Fgsm,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Subcommand)]
enum Command {
    /// Phase 1: Random PatchMix training of f_T.
    TrainRandom(RunArgs),
    /// Phase 2: genetic search over class pairs and masks.
    Search {
        #[command(flatten)]
        run: RunArgs,
        /// Fitness model (default: f_t.pmxm in the output directory).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Score masks by Hamming distance to a hidden random target instead of using a model.
        #[arg(long)]
        toy_hamming: bool,
    },
    /// Phase 3: guided sample manifest from the best individual.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        /// Individual file (default: best_individual.txt in the output directory).
        #[arg(long)]
        individual: Option<PathBuf>,
    },
    /// Phase 4: train f_O on original, random and guided samples.
    TrainGuided(RunArgs),
    /// All four phases; reuses an existing f_t.pmxm.
    Pipeline(RunArgs),
    /// Clean and adversarial top-1 of a model checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset checkpoint or CIFAR binary batch.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        attack: Option<Attack>,
        /// Comma-separated perturbation sizes (default 0.1,0.2,0.3).
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f64>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decision-boundary grid on the three-cluster toy problem.
    BoundaryDemo {
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Loss-term × grid-size ablation table.
    Ablation {
        #[command(flatten)]
        run: RunArgs,
        /// Table path (default: ablation.csv in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes the configured dataset split as a dataset checkpoint.
    ExportDataset {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_data(cfg: &RunConfig) -> Result<(patchmix_core::Dataset, patchmix_core::Dataset)> {
    cfg.dataset.load(Path::new(""))
}

fn write_metrics_line(what: &str, metrics: &[patchmix_core::train::EpochMetrics]) {
    if let Some(m) = metrics.last() {
        println!("{what}: val_top1={} val_patch_acc={} train_loss={}", m.val_top1, m.val_patch_acc, m.train_loss);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainRandom(args) => {
            let cfg = args.load()?;
            let (train, val) = load_data(&cfg)?;
            let paths = RunPaths::new(&cfg.output_dir);
            pipeline::write_snapshot(&cfg, &paths)?;
            let out = pipeline::train_fitness_model(&cfg, &train, &val, &paths)?;
            write_metrics_line("f_T", &out.metrics);
        }
        Command::Search { run, model, toy_hamming } => {
            let cfg = run.load()?;
            let paths = RunPaths::new(&cfg.output_dir);
            pipeline::write_snapshot(&cfg, &paths)?;
            let outcome = if toy_hamming {
                let classes = cfg.dataset.classes;
                let grid = cfg.train.grid;
                let target = PatchMask::uniform(grid, &mut SeededRng::new(cfg.search.seed, &[0x7a26]));
                let fitness = |ind: &Individual, _: usize| -> patchmix_core::Result<f64> {
                    if ind.active_count() == 0 {
                        return Ok(f64::INFINITY);
                    }
                    let d: usize = ind.active_slots().map(|k| ind.mask(k).hamming(&target)).sum();
                    Ok(d as f64 / ind.active_count() as f64)
                };
                let fitness = ParallelFitness::new(fitness, cfg.threads)?;
                let outcome = run_search(&cfg.search, classes, grid, &fitness)?;
                pipeline::write_search(&cfg.search, classes, grid, &outcome, &paths)?;
                outcome
            } else {
                let (_, val) = load_data(&cfg)?;
                let f_t = formats::load_model(&model.unwrap_or_else(|| paths.f_t()))?;
                pipeline::search_masks(&cfg, &f_t, &val, &paths)?
            };
            println!(
                "best fitness {} after {} generations",
                outcome.best.fitness().unwrap_or(f64::INFINITY),
                outcome.history.len() - 1
            );
        }
        Command::Generate { run, individual } => {
            let cfg = run.load()?;
            let (train, _) = load_data(&cfg)?;
            let paths = RunPaths::new(&cfg.output_dir);
            let path = individual.unwrap_or_else(|| paths.best_individual());
            let (best, _) = formats::individual_from_text(&formats::read_text(&path)?)?;
            let guided = pipeline::generate_guided(&cfg, &best, &train, &paths)?;
            println!("wrote {} guided samples to {}", guided.len(), paths.manifest().display());
        }
        Command::TrainGuided(args) => {
            let cfg = args.load()?;
            let (train, val) = load_data(&cfg)?;
            let paths = RunPaths::new(&cfg.output_dir);
            let (best, _) = formats::individual_from_text(&formats::read_text(&paths.best_individual())?)?;
            let rows = formats::parse_manifest(&formats::read_text(&paths.manifest())?)?;
            let guided = pipeline::guided_from_manifest(&best, &train, &rows)?;
            let out = pipeline::train_final_model(&cfg, &train, &val, &guided, &paths)?;
            write_metrics_line("f_O", &out.metrics);
        }
        Command::Pipeline(args) => {
            let cfg = args.load()?;
            let (train, val) = load_data(&cfg).map_err(|e| e.in_phase("dataset loading"))?;
            let report = pipeline::run_pipeline(&cfg, &train, &val)?;
            println!(
                "f_T val_top1={} f_O val_top1={} generations={} resumed={}",
                report.f_t_val_top1, report.f_o_val_top1, report.generations_run, report.resumed
            );
        }
        Command::Eval { model, dataset, attack, epsilon, out } => {
            let model = formats::load_model(&model)?;
            let ds = formats::load_dataset(&dataset)?;
            let eps = match (attack, epsilon.is_empty()) {
                (None, true) => Vec::new(),
                (None, false) => return Err(Error::config("--epsilon needs --attack fgsm")),
                (Some(Attack::Fgsm), true) => DEFAULT_EPSILONS.to_vec(),
                (Some(Attack::Fgsm), false) => epsilon,
            };
            if let Some(e) = eps.iter().find(|e| !(**e >= 0.0)) {
                return Err(Error::config(format!("epsilon {e} must be non-negative")));
            }
            let table = report_csv(&evaluate_model(&model, &ds, &eps)?);
            print!("{table}");
            if let Some(out) = out {
                formats::write_bytes(&out, table.as_bytes())?;
            }
        }
        Command::BoundaryDemo { method, out, seed, epochs } => {
            let method: DemoMethod = method.parse()?;
            let defaults = DemoConfig::default();
            let cfg = DemoConfig { seed, epochs: epochs.unwrap_or(defaults.epochs), ..defaults };
            let grid = boundary_demo(method, &cfg)?;
            formats::write_bytes(&out, grid.csv().as_bytes())?;
            info!("classes present: {:?}", grid.classes_present());
            println!("wrote {} grid cells to {}", grid.cells.len(), out.display());
        }
        Command::Ablation { run, out } => {
            let cfg = run.load()?;
            let (train, val) = load_data(&cfg)?;
            let rows = run_ablation(&train, &val, &cfg.train, cfg.threads)?;
            let table = ablation_csv(&rows);
            let out = out.unwrap_or_else(|| cfg.output_dir.join("ablation.csv"));
            formats::write_bytes(&out, table.as_bytes())?;
            print!("{table}");
        }
        Command::ExportDataset { run, split, out } => {
            let cfg = run.load()?;
            let (train, val) = load_data(&cfg)?;
            let ds = match split {
                SplitArg::Train => train,
                SplitArg::Val => val,
            };
            formats::save_dataset(&ds, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
