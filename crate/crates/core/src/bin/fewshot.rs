//! `fewshot`: synthetic data generation, episode dumps, evaluation and
//! ablation sweeps for the transductive Mahalanobis classifier.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fewshot_transduct::data::{write_dataset, DatasetFormat, Episode};
use fewshot_transduct::harness::{EvalOptions, GridAxes, GridSpec, DEFAULT_REPEATS, DEFAULT_SHOT_BINS};
use fewshot_transduct::report::{emit_report, fmt_real, render_recall_csv, write_text, ReportFormat, ReportRef};
use fewshot_transduct::selftest::run_selftest;
use fewshot_transduct::{
    evaluate, generate_synthetic, load_dataset, run_ablation, AssignmentRule, EmbeddingDataset,
    Error, FixedSamplerConfig, RefineConfig, Result, SamplerConfig, SyntheticSpec,
    VariableSamplerConfig,
};

#[derive(Debug, Parser)]
#[command(name = "fewshot", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Base seed for data generation and episode sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Ridge added to every class covariance.
    #[arg(long, global = true, default_value_t = 1.0)]
    beta: f64,

    /// Assignment rule: mahalanobis-softmax or gmm.
    #[arg(long, global = true, default_value = "mahalanobis-softmax")]
    rule: AssignmentRule,

    #[arg(long, global = true, default_value_t = 2)]
    min_steps: usize,

    #[arg(long, global = true, default_value_t = 4)]
    max_steps: usize,

    /// Output format (json or csv).
    #[arg(long, global = true, default_value = "json")]
    format: ReportFormat,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 600)]
    episodes: usize,

    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    parallelism: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic Gaussian class-mixture dataset and write it to --out.
    GenSynthetic(GenArgs),
    /// Dump sampled episodes.
    Sample {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Evaluate one method configuration.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Also write per-shot recall bins as CSV here.
        #[arg(long)]
        recall_out: Option<PathBuf>,
    },
    /// Paired sweep over step limits, rules and query counts.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        min_axis: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        max_axis: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "mahalanobis-softmax")]
        rule_axis: Vec<AssignmentRule>,
        /// Query examples per class; defaults to --query.
        #[arg(long, value_delimiter = ',')]
        query_axis: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
    },
    /// Run the fast invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    mean_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    shared_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    perturbation: f64,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// csv or packed-binary; inferred from the --out extension by default.
    #[arg(long)]
    data_format: Option<DatasetFormat>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Embedding dataset (.csv, .bin or .emb).
    #[arg(long)]
    data: PathBuf,
    /// Overrides format inference from the file extension.
    #[arg(long)]
    data_format: Option<DatasetFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Fixed,
    Variable,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    #[arg(long, value_enum, default_value_t = Protocol::Fixed)]
    protocol: Protocol,
    /// Fixed protocol: classes per task.
    #[arg(long, default_value_t = 5)]
    way: usize,
    /// Fixed protocol: support examples per class.
    #[arg(long, default_value_t = 1)]
    shot: usize,
    #[arg(long, default_value_t = 10)]
    query: usize,
    #[arg(long, default_value_t = 5)]
    way_min: usize,
    #[arg(long, default_value_t = 50)]
    way_max: usize,
    #[arg(long, default_value_t = 1)]
    shot_min: usize,
    #[arg(long, default_value_t = 100)]
    shot_max: usize,
    #[arg(long, default_value_t = 500)]
    support_cap: usize,
}

impl SamplerArgs {
    fn config(&self, seed: u64) -> SamplerConfig {
        match self.protocol {
            Protocol::Fixed => SamplerConfig::Fixed(FixedSamplerConfig {
                way: self.way,
                shot: self.shot,
                query_per_class: self.query,
                seed,
            }),
            Protocol::Variable => SamplerConfig::Variable(VariableSamplerConfig {
                way_min: self.way_min,
                way_max: self.way_max,
                shot_min: self.shot_min,
                shot_max: self.shot_max,
                query_per_class: self.query,
                support_cap: self.support_cap,
                seed,
            }),
        }
    }
}

fn load(args: &DataArgs) -> Result<EmbeddingDataset> {
    let format = match args.data_format {
        Some(f) => f,
        None => DatasetFormat::from_path(&args.data)?,
    };
    load_dataset(&args.data, format)
}

fn episodes_csv(episodes: &[Episode]) -> String {
    let mut s = String::from("episode,role,class,class_name,row");
    let dim = episodes.first().map_or(0, |ep| ep.task.dim());
    for i in 1..=dim {
        s.push_str(&format!(",f_{i}"));
    }
    s.push('\n');
    for ep in episodes {
        let support = ep
            .task
            .support()
            .iter()
            .zip(&ep.support_refs)
            .map(|(le, r)| ("support", le.y, r, &le.z));
        let query = ep
            .task
            .query()
            .iter()
            .zip(&ep.truth)
            .zip(&ep.query_refs)
            .map(|((z, &y), r)| ("query", y, r, z));
        for (role, y, r, z) in support.chain(query) {
            let feats: Vec<String> = z.iter().map(|&v| fmt_real(v)).collect();
            s.push_str(&format!(
                "{},{role},{y},{},{},{}\n",
                ep.index,
                ep.class_names[y],
                r.row,
                feats.join(",")
            ));
        }
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    let refine_cfg = RefineConfig {
        min_steps: cli.min_steps,
        max_steps: cli.max_steps,
        rule: cli.rule.clone(),
        beta: cli.beta,
    };
    let out = cli.out.as_deref();
    match &cli.command {
        Command::GenSynthetic(g) => {
            let path = out.ok_or_else(|| Error::InvalidConfig("gen-synthetic needs --out".into()))?;
            let format = match g.data_format {
                Some(f) => f,
                None => DatasetFormat::from_path(path)?,
            };
            let spec = SyntheticSpec {
                n_classes: g.classes,
                dim: g.dim,
                mean_scale: g.mean_scale,
                shared_scale: g.shared_scale,
                perturbation: g.perturbation,
                per_class: g.per_class,
                seed: cli.seed,
            };
            let ds = generate_synthetic(&spec)?;
            write_dataset(&ds, path, format)?;
            eprintln!(
                "wrote {} classes x {} dims ({} embeddings) to {}",
                ds.n_classes(),
                ds.dim(),
                ds.n_embeddings(),
                path.display()
            );
        }
        Command::Sample { data, sampler } => {
            let ds = load(data)?;
            let cfg = sampler.config(cli.seed);
            let episodes = (0..cli.episodes as u64)
                .map(|i| cfg.sample(&ds, i))
                .collect::<Result<Vec<_>>>()?;
            let text = match cli.format {
                ReportFormat::Json => serde_json::to_string_pretty(&episodes)? + "\n",
                ReportFormat::Csv => episodes_csv(&episodes),
            };
            write_text(&text, out)?;
        }
        Command::Eval {
            data,
            sampler,
            recall_out,
        } => {
            let ds = load(data)?;
            let opts = EvalOptions {
                episodes: cli.episodes,
                parallelism: cli.parallelism,
                shot_bins: DEFAULT_SHOT_BINS,
            };
            let report = evaluate(&ds, &sampler.config(cli.seed), &refine_cfg, &opts)?;
            emit_report(ReportRef::Eval(&report), cli.format, out)?;
            if let Some(p) = recall_out {
                write_text(&render_recall_csv(&report), Some(p))?;
            }
            eprintln!(
                "{}: accuracy {:.4} ± {:.4} over {} episodes",
                report.method, report.mean_accuracy, report.ci95, report.episodes
            );
        }
        Command::Ablate {
            data,
            sampler,
            min_axis,
            max_axis,
            rule_axis,
            query_axis,
            repeats,
        } => {
            let ds = load(data)?;
            let query_per_class = if query_axis.is_empty() {
                vec![sampler.query]
            } else {
                query_axis.clone()
            };
            let spec = GridSpec {
                sampler: sampler.config(cli.seed),
                base: refine_cfg,
                axes: GridAxes {
                    min_steps: min_axis.clone(),
                    max_steps: max_axis.clone(),
                    rules: rule_axis.clone(),
                    query_per_class,
                },
                episodes: cli.episodes,
                repeats: *repeats,
                parallelism: cli.parallelism,
                shot_bins: DEFAULT_SHOT_BINS,
            };
            let grid = run_ablation(&ds, &spec)?;
            emit_report(ReportRef::Grid(&grid), cli.format, out)?;
            eprintln!("{} cells evaluated, {} skipped (min > max)", grid.cells.len(), grid.skipped);
        }
        Command::Selftest => {
            let results = run_selftest(cli.seed);
            let mut failed = 0;
            for r in &results {
                println!("[{}] {} ({})", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::InvalidTask(format!("{failed} selftest checks failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
