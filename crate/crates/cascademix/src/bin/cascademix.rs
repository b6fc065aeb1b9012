//! Command-line frontend: simulate cascade corpora, query the exact oracle,
//! estimate moment tables, recover mixtures, and run error-vs-sample-size
//! experiment sweeps.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cascademix::cascade::{parse_corpus_jsonl, run_corpus, write_corpus_jsonl, write_labels_jsonl};
use cascademix::experiment::{
    deterministic_view, emit_report, parse_mode, run_experiment, ExperimentSpec, ReportFormat,
};
use cascademix::model::{MixtureModel, VertexId};
use cascademix::moments::{all_x_queries, build_table, exact_table, required_queries, MomentTable};
use cascademix::oracle::{enumerate_distribution, exact_moment};
use cascademix::query::EventQuery;
use cascademix::recovery::{
    estimate_alpha, recover_balanced, recover_directed, recover_general, RecoveredMixture,
};
use cascademix::{Error, Result};

#[derive(Parser)]
#[command(name = "cascademix", version, about = "Learn a two-graph mixture from epidemic cascades")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cascade corpus from a model file.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Number of cascades.
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores). The output is identical for any
        /// worker count.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Also write the hidden per-cascade component labels.
        #[arg(long)]
        with_labels: Option<PathBuf>,
    },
    /// Exact-enumeration oracle for small models.
    Oracle {
        #[arg(long)]
        model: PathBuf,
        /// Conditional moment to evaluate, e.g. "Y_star 0 1 2".
        #[arg(long)]
        query: Option<String>,
        /// Write the full outcome distribution as JSON.
        #[arg(long)]
        dump_dist: Option<PathBuf>,
    },
    /// Estimate a moment table from a corpus (or exactly from a model).
    Estimate {
        /// Cascade corpus (JSONL). Not needed with --exact.
        #[arg(long, required_unless_present = "exact")]
        corpus: Option<PathBuf>,
        /// Edge list file: either a model JSON or a JSON array of [u,v] pairs.
        #[arg(long)]
        edges: PathBuf,
        /// Query plan flavor: balanced, general_alpha or directed.
        #[arg(long, default_value = "balanced")]
        mode: String,
        /// Compute the population values by exact enumeration instead of
        /// counting; --edges must then be a model file.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover both components' edge weights from a moments file.
    Recover {
        #[arg(long)]
        moments: PathBuf,
        /// Known mixing weight (default 0.5).
        #[arg(long, conflicts_with = "estimate_alpha")]
        alpha: Option<f64>,
        /// Estimate the mixing weight from a star vertex first.
        #[arg(long)]
        estimate_alpha: bool,
        /// Treat the moments as directed (per-edge orientation).
        #[arg(long)]
        directed: bool,
        /// Edge-detection threshold on first moments; defaults to the
        /// table's noise tolerance.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an error-vs-sample-size sweep described by a TOML spec.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = CliFormat::Csv)]
        format: CliFormat,
        /// Cell-level worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Zero the runtime_ms column (the one field outside the
        /// determinism contract), for byte-stable output.
        #[arg(long)]
        scrub_runtime: bool,
    },
}

fn load_model(path: &PathBuf) -> Result<MixtureModel> {
    MixtureModel::from_json(&std::fs::read_to_string(path)?)
}

/// Edge list input: a bare JSON array of pairs, or a model file.
fn load_edges(path: &PathBuf) -> Result<(usize, BTreeSet<(VertexId, VertexId)>, Option<MixtureModel>)> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(pairs) = serde_json::from_str::<Vec<(VertexId, VertexId)>>(&text) {
        let n = pairs
            .iter()
            .flat_map(|&(u, v)| [u, v])
            .max()
            .map(|m| m + 1)
            .ok_or_else(|| Error::Invalid("empty edge list".into()))?;
        return Ok((n, pairs.into_iter().collect(), None));
    }
    let model = MixtureModel::from_json(&text)?;
    let edges = model.edges().map(|(&p, _)| p).collect();
    Ok((model.n_vertices(), edges, Some(model)))
}

fn recovered_json(mix: &RecoveredMixture) -> String {
    let edges: Vec<serde_json::Value> = mix
        .edges
        .values()
        .map(|e| {
            serde_json::json!([e.pair.0, e.pair.1, e.p_hat, e.q_hat, e.method.to_string()])
        })
        .collect();
    let out = serde_json::json!({
        "alpha": mix.alpha_used,
        "anchor": mix.anchor,
        "edges": edges,
        "warnings": mix.warnings,
    });
    serde_json::to_string_pretty(&out).expect("recovery serialization cannot fail")
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate { model, count, seed, out, workers, with_labels } => {
            let model = load_model(&model)?;
            let corpus = run_corpus(&model, count, seed, workers)?;
            std::fs::write(&out, write_corpus_jsonl(&corpus))?;
            if let Some(path) = with_labels {
                std::fs::write(&path, write_labels_jsonl(&corpus))?;
            }
            Ok(0)
        }
        Command::Oracle { model, query, dump_dist } => {
            let model = load_model(&model)?;
            if let Some(text) = &query {
                let q = EventQuery::parse(text)?;
                q.validate(model.n_vertices())?;
                println!("{}", exact_moment(&model, q)?);
            }
            if let Some(path) = dump_dist {
                let dist = enumerate_distribution(&model)?;
                let records: Vec<serde_json::Value> = dist
                    .support
                    .iter()
                    .map(|((source, events), prob)| {
                        let ev: Vec<(u32, VertexId, VertexId)> = events
                            .iter()
                            .map(|e| (e.time, e.infector, e.infectee))
                            .collect();
                        serde_json::json!({ "src": source, "ev": ev, "prob": prob })
                    })
                    .collect();
                std::fs::write(&path, serde_json::to_string_pretty(&records)?)?;
            } else if query.is_none() {
                return Err(Error::Invalid("nothing to do: pass --query or --dump-dist".into()));
            }
            Ok(0)
        }
        Command::Estimate { corpus, edges, mode, exact, out } => {
            let mode = parse_mode(&mode)?;
            let (n, edge_set, model) = load_edges(&edges)?;
            let mut queries = required_queries(n, &edge_set, mode);
            queries.extend(all_x_queries(n));
            let table = if exact {
                let model = model.ok_or_else(|| {
                    Error::Invalid("--exact needs --edges to be a model file".into())
                })?;
                exact_table(&model, &queries)?
            } else {
                let path = corpus.expect("clap enforces --corpus without --exact");
                let corpus = parse_corpus_jsonl(&std::fs::read_to_string(&path)?)?;
                build_table(&corpus, &queries)?
            };
            std::fs::write(&out, table.to_json())?;
            Ok(0)
        }
        Command::Recover { moments, alpha, estimate_alpha: est, directed, threshold, out } => {
            let table = MomentTable::from_json(&std::fs::read_to_string(&moments)?)?;
            let threshold = threshold.unwrap_or_else(|| table.zero_tolerance());
            let mix = if directed {
                recover_directed(&table, threshold)?
            } else if est {
                let star = (0..table.n)
                    .max_by_key(|&u| {
                        (0..table.n)
                            .filter(|&v| {
                                v != u && table.x_sym(u, v).unwrap_or(0.0) > threshold
                            })
                            .count()
                    })
                    .ok_or_else(|| Error::Invalid("empty table".into()))?;
                let alpha_hat = estimate_alpha(&table, star)?;
                recover_general(&table, threshold, alpha_hat)?
            } else {
                let alpha = alpha.unwrap_or(0.5);
                if (alpha - 0.5).abs() < 1e-12 {
                    recover_balanced(&table, threshold)?
                } else {
                    recover_general(&table, threshold, alpha)?
                }
            };
            std::fs::write(&out, recovered_json(&mix))?;
            for w in &mix.warnings {
                eprintln!("warning: {w}");
            }
            Ok(0)
        }
        Command::Experiment { spec, out, format, workers, scrub_runtime } => {
            let base = spec.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
            let spec = ExperimentSpec::from_toml(&std::fs::read_to_string(&spec)?, &base)?;
            let report = run_experiment(&spec, workers)?;
            let format = match format {
                CliFormat::Csv => ReportFormat::Csv,
                CliFormat::Json => ReportFormat::Json,
            };
            let text = if scrub_runtime {
                deterministic_view(&report, format)
            } else {
                emit_report(&report, format)
            };
            std::fs::write(&out, text)?;
            for f in &report.failures {
                eprintln!("warning: cell failed: {f}");
            }
            Ok(if report.has_failures() { 2 } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
