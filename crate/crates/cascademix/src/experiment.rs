//! Error-vs-sample-size experiment harness: run the full pipeline (simulate,
//! estimate moments, recover) over a grid of corpus sizes and seeds, and
//! report the achieved weight error next to the theoretical bound.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{MixtureModel, Topology};
use crate::moments::{all_x_queries, build_table, exact_table, required_queries, QueryMode};
use crate::recovery::{
    estimate_alpha, max_error_up_to_swap, recover_balanced, recover_directed, recover_general,
};
use crate::{Error, Result};

/// Where the ground-truth model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    /// A model JSON file.
    File(PathBuf),
    /// Generator parameters for [`MixtureModel::random`].
    Generate {
        n: usize,
        topology: Topology,
        weight_range: (f64, f64),
        min_delta: f64,
        alpha: f64,
        seed: u64,
    },
}

/// A validated sweep description. `m_grid` entry 0 is the exact-oracle
/// sentinel ("infinite samples"); all other entries are corpus sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub source: ModelSource,
    pub m_grid: Vec<u64>,
    pub seeds: Vec<u64>,
    pub epsilon_target: f64,
    pub delta: f64,
    pub mode: QueryMode,
}

/// Flat key-value file layout, mapped 1:1 to the CLI flags.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    model: Option<String>,
    n: Option<usize>,
    topology: Option<String>,
    weight_min: Option<f64>,
    weight_max: Option<f64>,
    min_delta: Option<f64>,
    alpha: Option<f64>,
    model_seed: Option<u64>,
    m_grid: Vec<u64>,
    seeds: Vec<u64>,
    epsilon_target: f64,
    delta: f64,
    mode: String,
}

pub fn parse_topology(s: &str) -> Result<Topology> {
    Ok(match s {
        "line" => Topology::Line,
        "star" => Topology::Star,
        "cycle" => Topology::Cycle,
        "tree" => Topology::Tree,
        other => match other.strip_prefix("er:").and_then(|p| p.parse::<f64>().ok()) {
            Some(p) if p > 0.0 && p <= 1.0 => Topology::ErdosRenyi(p),
            _ => return Err(Error::Parse(format!("unknown topology '{other}'"))),
        },
    })
}

pub fn parse_mode(s: &str) -> Result<QueryMode> {
    Ok(match s {
        "balanced" => QueryMode::Balanced,
        "general_alpha" => QueryMode::GeneralAlpha,
        "directed" => QueryMode::Directed,
        other => return Err(Error::Parse(format!("unknown mode '{other}'"))),
    })
}

impl ExperimentSpec {
    /// Parse the TOML text; relative model paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<ExperimentSpec> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let source = match raw.model {
            Some(path) => ModelSource::File(base_dir.join(path)),
            None => ModelSource::Generate {
                n: raw.n.ok_or_else(|| Error::Parse("missing 'n' or 'model'".into()))?,
                topology: parse_topology(
                    raw.topology.as_deref().ok_or_else(|| Error::Parse("missing 'topology'".into()))?,
                )?,
                weight_range: (
                    raw.weight_min.ok_or_else(|| Error::Parse("missing 'weight_min'".into()))?,
                    raw.weight_max.ok_or_else(|| Error::Parse("missing 'weight_max'".into()))?,
                ),
                min_delta: raw.min_delta.ok_or_else(|| Error::Parse("missing 'min_delta'".into()))?,
                alpha: raw.alpha.unwrap_or(0.5),
                seed: raw.model_seed.unwrap_or(0),
            },
        };
        let spec = ExperimentSpec {
            source,
            m_grid: raw.m_grid,
            seeds: raw.seeds,
            epsilon_target: raw.epsilon_target,
            delta: raw.delta,
            mode: parse_mode(&raw.mode)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.m_grid.windows(2).all(|w| w[0] < w[1]) || self.m_grid.is_empty() {
            return Err(Error::Invalid("m_grid must be nonempty and strictly increasing".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Invalid("seeds must be nonempty".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Invalid("delta must be in (0,1)".into()));
        }
        if !(self.epsilon_target > 0.0) {
            return Err(Error::Invalid("epsilon_target must be positive".into()));
        }
        Ok(())
    }

    /// Load or generate the ground-truth model.
    pub fn resolve_model(&self) -> Result<MixtureModel> {
        match &self.source {
            ModelSource::File(path) => MixtureModel::from_json(&std::fs::read_to_string(path)?),
            ModelSource::Generate { n, topology, weight_range, min_delta, alpha, seed } => {
                MixtureModel::random(*n, *topology, *weight_range, *min_delta, *alpha, *seed)
            }
        }
    }
}

/// One (M, seed) cell of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub delta: f64,
    pub p_min: f64,
    pub alpha: f64,
    #[serde(rename = "M")]
    pub m: u64,
    pub seed: u64,
    pub max_err: f64,
    pub runtime_ms: u64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    /// Ordered by (M, seed) regardless of completion order.
    pub rows: Vec<ExperimentRow>,
    /// One reason string per NaN row, in row order.
    pub failures: Vec<String>,
}

impl ExperimentReport {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// High-probability error bound after `m` cascades, from the concentration
/// constants of the recovery chain: `(41 / (p_min^3 delta^2)) *
/// sqrt((2 n / m) ln(12 n^2 / delta_prob))`.
pub fn theoretical_bound(n: usize, p_min: f64, delta_sep: f64, m: u64, delta_prob: f64) -> f64 {
    if m == 0 {
        return f64::INFINITY;
    }
    let n = n as f64;
    let amplification = 41.0 / (p_min.powi(3) * delta_sep * delta_sep);
    amplification * ((2.0 * n / m as f64) * (12.0 * n * n / delta_prob).ln()).sqrt()
}

fn recover_cell(
    model: &MixtureModel,
    spec: &ExperimentSpec,
    m: u64,
    seed: u64,
) -> Result<f64> {
    let edges = model.edges().map(|(&p, _)| p).collect();
    let mut queries = required_queries(model.n_vertices(), &edges, spec.mode);
    queries.extend(all_x_queries(model.n_vertices()));
    let table = if m == 0 {
        exact_table(model, &queries)?
    } else {
        let corpus = crate::cascade::run_corpus(model, m as usize, seed, 1)?;
        // Every vertex must appear as a source or the conditional moments
        // are undefined.
        let mut counts = vec![0u64; model.n_vertices()];
        for c in &corpus.cascades {
            counts[c.source] += 1;
        }
        if let Some(v) = counts.iter().position(|&c| c == 0) {
            return Err(Error::NoConditioningSamples(v));
        }
        build_table(&corpus, &queries)?
    };
    let (_, p_min) = model.separation_stats()?;
    let threshold = p_min / 2.0;
    let recovered = match spec.mode {
        QueryMode::Balanced => recover_balanced(&table, threshold)?,
        QueryMode::Directed => recover_directed(&table, threshold)?,
        QueryMode::GeneralAlpha => {
            let star = (0..model.n_vertices())
                .max_by_key(|&u| model.out_neighbors(u).len())
                .filter(|&u| model.out_neighbors(u).len() >= 3)
                .ok_or_else(|| {
                    Error::Invalid("no star vertex for alpha estimation".into())
                })?;
            let alpha_hat = estimate_alpha(&table, star)?;
            recover_general(&table, threshold, alpha_hat)?
        }
    };
    Ok(max_error_up_to_swap(model, &recovered))
}

/// Run the full sweep. Cells run in parallel (`workers` threads, 0 = rayon
/// default) and are each internally deterministic, so the report content
/// depends only on the spec.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentReport> {
    spec.validate()?;
    let model = spec.resolve_model()?;
    let report = model.validate_conditions();
    if !report.condition1_ok {
        return Err(Error::Condition1Violated(format!(
            "{} edges, connected: {}",
            report.edge_count, report.connected
        )));
    }
    if !report.condition2_ok {
        return Err(Error::Invalid(format!(
            "Condition 2 violated: shared edges with equal weights: {:?}",
            report.offending_items
        )));
    }
    let (delta_sep, p_min) = model.separation_stats()?;
    let alpha = model.alpha();
    let n = model.n_vertices();

    let cells: Vec<(u64, u64)> = spec
        .m_grid
        .iter()
        .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let run_cell = |&(m, seed): &(u64, u64)| -> (ExperimentRow, Option<String>) {
        let start = Instant::now();
        let outcome = recover_cell(&model, spec, m, seed);
        let runtime_ms = start.elapsed().as_millis() as u64;
        let (max_err, failure) = match outcome {
            Ok(err) => (err, None),
            Err(e) => (f64::NAN, Some(format!("M={m} seed={seed}: {e}"))),
        };
        let row = ExperimentRow {
            n,
            delta: delta_sep,
            p_min,
            alpha,
            m,
            seed,
            max_err,
            runtime_ms,
            bound: theoretical_bound(n, p_min, delta_sep, m, spec.delta),
        };
        (row, failure)
    };
    let results: Vec<(ExperimentRow, Option<String>)> = if workers == 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Invalid(e.to_string()))?;
        pool.install(|| cells.par_iter().map(run_cell).collect())
    };

    let mut out = ExperimentReport::default();
    for (row, failure) in results {
        out.rows.push(row);
        out.failures.extend(failure);
    }
    // Cell order is already (M, seed) by construction; keep the sort as a
    // guard for future cell sources.
    out.rows.sort_by(|a, b| (a.m, a.seed).cmp(&(b.m, b.seed)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: &str = "n,delta,p_min,alpha,M,seed,max_err,runtime_ms,bound";

/// Render the report. CSV column order is fixed; JSON is an array of row
/// objects with the header names as fields.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in &report.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.n, r.delta, r.p_min, r.alpha, r.m, r.seed, r.max_err, r.runtime_ms, r.bound
                ));
            }
            out
        }
        ReportFormat::Json => {
            serde_json::to_string_pretty(&report.rows).expect("report serialization cannot fail")
        }
    }
}

/// The determinism contract excludes the wall-clock column: this is the
/// report with `runtime_ms` zeroed, suitable for byte comparison.
pub fn deterministic_view(report: &ExperimentReport, format: ReportFormat) -> String {
    let mut scrubbed = report.clone();
    for r in &mut scrubbed.rows {
        r.runtime_ms = 0;
    }
    emit_report(&scrubbed, format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn star_spec(m_grid: Vec<u64>, seeds: Vec<u64>) -> ExperimentSpec {
        ExperimentSpec {
            source: ModelSource::Generate {
                n: 4,
                topology: Topology::Star,
                weight_range: (0.2, 0.8),
                min_delta: 0.4,
                alpha: 0.5,
                seed: 7,
            },
            m_grid,
            seeds,
            epsilon_target: 0.05,
            delta: 0.1,
            mode: QueryMode::Balanced,
        }
    }

    #[test]
    fn toml_round_trip_generator() {
        let text = r#"
n = 4
topology = "star"
weight_min = 0.2
weight_max = 0.8
min_delta = 0.4
alpha = 0.5
model_seed = 7
m_grid = [10000, 40000]
seeds = [1, 2, 3]
epsilon_target = 0.05
delta = 0.1
mode = "balanced"
"#;
        let spec = ExperimentSpec::from_toml(text, Path::new(".")).unwrap();
        assert_eq!(spec.m_grid, vec![10000, 40000]);
        assert_eq!(spec.mode, QueryMode::Balanced);
        assert!(matches!(spec.source, ModelSource::Generate { n: 4, .. }));
    }

    #[test]
    fn toml_rejects_bad_grid_and_seeds() {
        let bad_grid = r#"
model = "m.json"
m_grid = [100, 100]
seeds = [1]
epsilon_target = 0.05
delta = 0.1
mode = "balanced"
"#;
        assert!(ExperimentSpec::from_toml(bad_grid, Path::new(".")).is_err());
        let no_seeds = bad_grid.replace("[100, 100]", "[100, 200]").replace("[1]", "[]");
        assert!(ExperimentSpec::from_toml(&no_seeds, Path::new(".")).is_err());
        let bad_key = bad_grid.replace("m_grid", "mgrid");
        assert!(ExperimentSpec::from_toml(&bad_key, Path::new(".")).is_err());
    }

    #[test]
    fn bound_formula_worked_value() {
        // 41/(0.2^3 * 0.4^2) * sqrt((2*4/1e4) * ln(12*16/0.1))
        let b = theoretical_bound(4, 0.2, 0.4, 10_000, 0.1);
        let expected = 41.0 / (0.008 * 0.16) * ((8.0 / 1e4) * (1920.0f64).ln()).sqrt();
        assert!((b - expected).abs() < 1e-12);
        assert!(theoretical_bound(4, 0.2, 0.4, 0, 0.1).is_infinite());
    }

    #[test]
    fn exact_sentinel_rows_are_exact() {
        let spec = star_spec(vec![0], vec![1, 2]);
        let report = run_experiment(&spec, 1).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in &report.rows {
            assert!(r.max_err <= 1e-9, "err {}", r.max_err);
            assert!(r.bound.is_infinite());
        }
        assert!(!report.has_failures());
    }

    #[test]
    fn small_corpus_yields_nan_rows_and_continues() {
        // M=4 on 4 vertices: with high probability some vertex is never the
        // source; seed 3 is one such case.
        let spec = star_spec(vec![4, 2000], vec![3]);
        let report = run_experiment(&spec, 1).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows[0].max_err.is_nan());
        assert!(report.has_failures());
        assert!(report.failures[0].contains("no conditioning samples"), "{:?}", report.failures);
        assert!(report.rows[1].max_err.is_finite());
    }

    #[test]
    fn report_rendering() {
        let empty = ExperimentReport::default();
        assert_eq!(emit_report(&empty, ReportFormat::Csv), format!("{CSV_HEADER}\n"));
        let one = ExperimentReport {
            rows: vec![ExperimentRow {
                n: 4,
                delta: 0.4,
                p_min: 0.2,
                alpha: 0.5,
                m: 100,
                seed: 1,
                max_err: 0.25,
                runtime_ms: 12,
                bound: 1.5,
            }],
            failures: vec![],
        };
        let csv = emit_report(&one, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap(), "4,0.4,0.2,0.5,100,1,0.25,12,1.5");
        let json = emit_report(&one, ReportFormat::Json);
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed[0]["M"], 100);
        assert_eq!(parsed[0]["max_err"], 0.25);
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let spec = star_spec(vec![2000, 4000], vec![1, 2]);
        let a = run_experiment(&spec, 1).unwrap();
        let b = run_experiment(&spec, 4).unwrap();
        assert_eq!(
            deterministic_view(&a, ReportFormat::Csv),
            deterministic_view(&b, ReportFormat::Csv)
        );
        assert_eq!(a.failures, b.failures);
    }

    #[test]
    fn condition_violations_are_hard_errors() {
        let mut spec = star_spec(vec![1000], vec![1]);
        spec.source = ModelSource::Generate {
            n: 6,
            topology: Topology::Line,
            weight_range: (0.3, 0.8),
            min_delta: 0.2,
            alpha: 0.5,
            seed: 1,
        };
        // A valid line model passes; a 1-edge file-based model must not.
        run_experiment(&spec, 1).unwrap();
        let mut tiny = MixtureModel::new(2, 0.5, false).unwrap();
        tiny.set_edge(0, 1, 0.8, 0.2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.json");
        std::fs::write(&path, tiny.to_json()).unwrap();
        spec.source = ModelSource::File(path);
        let err = run_experiment(&spec, 1).unwrap_err();
        assert!(matches!(err, Error::Condition1Violated(_)));
    }
}
