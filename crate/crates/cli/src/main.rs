mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use g2pxy::graph::{gen_sbm, load_content_cites, write_canonical, SbmConfig, Visibility};
use g2pxy::model::Model;
use g2pxy::trainer::{evaluate, grid_search, run, MetricsReport, RunReport, Variant};
use g2pxy::graph::Phase;
use g2pxy::{Error, Result};
use serde::Serialize;

use config::{ClassRef, Overrides, RunConfigFile};

#[derive(Parser)]
#[command(name = "g2pxy", version, about = "Open-set node classification with proxy unknown nodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a .content/.cites pair into a canonical JSON dataset.
    Prepare {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        cites: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its report and checkpoint.
    Train(RunArgs),
    /// Score a saved checkpoint on the configured split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Search the loss weights over the 5x5 grid.
    Grid(RunArgs),
    /// Train one or all ablation variants.
    Ablate(RunArgs),
    /// Generate a stochastic block model dataset.
    Synth {
        #[arg(long, value_delimiter = ',', default_value = "60,60,60")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
        #[arg(long, default_value_t = 0.005)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Visibility>,
    /// Comma-separated class indices or names to hold out.
    #[arg(long, value_delimiter = ',')]
    unknown: Option<Vec<String>>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfigFile> {
        let mut cfg = RunConfigFile::load(&self.config)?;
        let variant = self.variant.as_deref().filter(|v| *v != "all").map(str::parse).transpose()?;
        cfg.apply(&Overrides {
            seed: self.seed,
            mode: self.mode,
            unknown: self.unknown.as_ref().map(|u| u.iter().map(|s| ClassRef::parse(s)).collect()),
            variant,
            output_dir: self.output_dir.clone(),
        });
        cfg.train_config().validate()?;
        fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io {
            path: cfg.output_dir.clone(),
            source: e,
        })?;
        Ok(cfg)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Serialize)]
struct Timing {
    wall_time_secs: f64,
}

fn print_summary(label: &str, m: &MetricsReport) {
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
    println!(
        "{label}: acc {:.2} macro-F1 {:.2} ind {} ood {}",
        100.0 * m.accuracy,
        100.0 * m.macro_f1,
        pct(m.ind_accuracy),
        pct(m.ood_accuracy)
    );
}

fn train_one(cfg: &RunConfigFile, prefix: &str) -> Result<RunReport> {
    let g = cfg.load_graph()?;
    let split = cfg.make_split(&g)?;
    let start = Instant::now();
    let result = run(&g, &split, &cfg.train_config());
    let (model, report) = match result {
        Ok(r) => r,
        Err(e @ Error::Numeric(_)) => {
            write_text(&cfg.output_dir.join(format!("{prefix}failure.txt")), &format!("{e}\n"))?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let dir = &cfg.output_dir;
    write_json(&dir.join(format!("{prefix}report.json")), &report)?;
    write_text(
        &dir.join(format!("{prefix}summary.csv")),
        &format!("{}\n{}\n", RunReport::CSV_HEADER, report.csv_row()),
    )?;
    model.save(&dir.join(format!("{prefix}model.json")))?;
    write_json(
        &dir.join(format!("{prefix}timing.json")),
        &Timing {
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    )?;
    Ok(report)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare { content, cites, out } => {
            let (g, report) = load_content_cites(&content, &cites)?;
            write_canonical(&g, &out)?;
            println!("{}", report.stats_line());
        }
        Command::Synth {
            sizes,
            p_in,
            p_out,
            dim,
            seed,
            out,
        } => {
            let g = gen_sbm(&SbmConfig::new(sizes, p_in, p_out, dim, seed))?;
            write_canonical(&g, &out)?;
            println!("{} {} {} {}", g.n(), g.num_edges(), g.d(), g.num_classes());
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let report = train_one(&cfg, "")?;
            print_summary("test", &report.test);
        }
        Command::Eval { run, checkpoint } => {
            let cfg = run.load()?;
            let g = cfg.load_graph()?;
            let split = cfg.make_split(&g)?;
            let model = Model::load(&checkpoint)?;
            let mut out = BTreeMap::new();
            out.insert("val", evaluate(&model, &g, &split, Phase::Val)?);
            out.insert("test", evaluate(&model, &g, &split, Phase::Test)?);
            write_json(&cfg.output_dir.join("eval.json"), &out)?;
            print_summary("test", &out["test"]);
        }
        Command::Grid(args) => {
            let cfg = args.load()?;
            let g = cfg.load_graph()?;
            let split = cfg.make_split(&g)?;
            let rep = grid_search(&g, &split, &cfg.train_config())?;
            write_json(&cfg.output_dir.join("grid.json"), &rep)?;
            let mut csv = String::from("lambda1,lambda2,seed,best_epoch,val_accuracy,test_accuracy,test_macro_f1\n");
            for c in &rep.cells {
                csv.push_str(&format!(
                    "{},{},{},{},{:.6},{:.6},{:.6}\n",
                    c.lambda1, c.lambda2, c.seed, c.best_epoch, c.val_accuracy, c.test_accuracy, c.test_macro_f1
                ));
            }
            write_text(&cfg.output_dir.join("grid.csv"), &csv)?;
            println!("best lambda1 {} lambda2 {}", rep.best_lambda1, rep.best_lambda2);
        }
        Command::Ablate(args) => {
            let mut cfg = args.load()?;
            let variants: Vec<Variant> = match args.variant.as_deref() {
                None | Some("all") => Variant::ALL.to_vec(),
                Some(_) => vec![cfg.train.variant],
            };
            let mut csv = format!("{}\n", RunReport::CSV_HEADER);
            for v in variants {
                cfg.train.variant = v;
                let report = train_one(&cfg, &format!("{v}_"))?;
                csv.push_str(&report.csv_row());
                csv.push('\n');
                print_summary(v.name(), &report.test);
            }
            write_text(&cfg.output_dir.join("ablation.csv"), &csv)?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
