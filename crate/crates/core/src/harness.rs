//! Experiment orchestration: seeding, the shared measurement loop,
//! persistence and reporting.
//!
//! Within one run index every strategy sees the same process, initial design,
//! candidate set and noise sequence; the noise of measurement `i` depends only
//! on `(run seed, i)`. Runs are independent and may execute in parallel.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{initial_design, CandidateSet};
use crate::dataset::Dataset;
use crate::error::{AosError, Result};
use crate::gp::{self, FitConfig, GpModel};
use crate::metrics::{self, AggregateCurve, LearningCurve, Record};
use crate::seed::{self, Stream};
use crate::strategy::{StrategyConfig, StrategyKind, StrategyState};
use crate::toy::{self, SetupSpec, ToyProcess};

mod strategy_list {
    use super::StrategyKind;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[StrategyKind], s: S) -> Result<S::Ok, S::Error> {
        let names: Vec<String> = v.iter().map(|k| k.to_string()).collect();
        s.serialize_str(&names.join(","))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<StrategyKind>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_strategies(&s).map_err(D::Error::custom)
    }
}

/// Parse a comma-separated strategy list such as `SF,CVHn`.
pub fn parse_strategies(s: &str) -> Result<Vec<StrategyKind>> {
    let kinds = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(AosError::Config("at least one strategy required".into()));
    }
    Ok(kinds)
}

/// Everything needed to re-execute an experiment. Serialized as a flat
/// key-value TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setup_id: u8,
    #[serde(with = "strategy_list")]
    pub strategies: Vec<StrategyKind>,
    pub n_runs: usize,
    pub budget: usize,
    pub n_init: usize,
    pub cv_folds: usize,
    pub filter_window: usize,
    pub quality_threshold: Option<f64>,
    pub candidate_count: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Random restarts per hyperparameter fit.
    pub fit_restarts: usize,
    /// Also start each fit from the previous iteration's hyperparameters.
    pub warm_start: bool,
    pub cv_refit: bool,
    /// Overrides the setup's default target SNRs.
    pub target_snrs: Option<Vec<f64>>,
    /// Parallel runs; 0 uses all available threads.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setup_id: 1,
            strategies: StrategyKind::ALL.to_vec(),
            n_runs: 15,
            budget: 100,
            n_init: 9,
            cv_folds: 10,
            filter_window: 3,
            quality_threshold: None,
            candidate_count: 5000,
            master_seed: 0,
            output_dir: PathBuf::from("results"),
            fit_restarts: 5,
            warm_start: true,
            cv_refit: false,
            target_snrs: None,
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(AosError::Config(m));
        if !(1..=3).contains(&self.setup_id) {
            return fail(format!("setup_id must be 1, 2 or 3, got {}", self.setup_id));
        }
        if self.strategies.is_empty() {
            return fail("at least one strategy required".into());
        }
        if self.n_runs == 0 {
            return fail("n_runs must be at least 1".into());
        }
        if self.n_init == 0 {
            return fail("n_init must be at least 1".into());
        }
        if self.budget < self.n_init {
            return fail(format!("budget {} is below n_init {}", self.budget, self.n_init));
        }
        if self.cv_folds < 2 {
            return fail("cv_folds must be at least 2".into());
        }
        if self.filter_window == 0 {
            return fail("filter_window must be at least 1".into());
        }
        if self.candidate_count == 0 {
            return fail("candidate_count must be at least 1".into());
        }
        if self.fit_restarts == 0 && !self.warm_start {
            return fail("fit needs restarts or a warm start".into());
        }
        if let Some(t) = self.quality_threshold {
            if !(t >= 0.0) {
                return fail("quality_threshold must be non-negative".into());
            }
        }
        self.setup_spec()?;
        Ok(())
    }

    pub fn setup_spec(&self) -> Result<SetupSpec> {
        let mut spec = SetupSpec::standard(self.setup_id)?;
        if let Some(snrs) = &self.target_snrs {
            spec.target_snrs = snrs.clone();
            spec.validate()?;
        }
        Ok(spec)
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            cv_folds: self.cv_folds,
            filter_window: self.filter_window,
            quality_threshold: self.quality_threshold,
            cv_refit: self.cv_refit,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AosError::Serde(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| AosError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AosError::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// A strategy that aborted within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub strategy: StrategyKind,
    pub message: String,
}

/// Output of one run index: all strategies against one process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config: ExperimentConfig,
    pub run_index: usize,
    pub run_seed: u64,
    pub process: ToyProcess,
    pub curves: Vec<LearningCurve>,
    pub failures: Vec<RunFailure>,
    pub duration_secs: f64,
}

impl RunArtifact {
    pub fn curve(&self, kind: StrategyKind) -> Option<&LearningCurve> {
        self.curves.iter().find(|c| c.strategy == kind)
    }

    pub fn file_name(&self) -> String {
        format!("run_{:03}.json", self.run_index)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AosError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fixed inputs shared by every strategy of one run.
struct RunContext<'a> {
    config: &'a ExperimentConfig,
    run_seed: u64,
    process: ToyProcess,
    design: Vec<Vec<f64>>,
    candidates: CandidateSet,
    grid: Vec<Vec<f64>>,
    truths: Vec<Vec<f64>>,
}

impl RunContext<'_> {
    fn measure(&self, index: usize, x: &[f64]) -> Result<Vec<f64>> {
        let mut rng = seed::rng(seed::derive(self.run_seed, Stream::Noise, &[index as u64]));
        toy::measure(&self.process, x, &mut rng)
    }

    fn fit_models(&self, dataset: &Dataset, previous: Option<&[GpModel]>) -> Result<Vec<GpModel>> {
        (0..dataset.n_outputs)
            .map(|m| {
                let warm = match (self.config.warm_start, previous) {
                    (true, Some(prev)) => Some(prev[m].params.clone()),
                    _ => None,
                };
                let cfg = FitConfig {
                    restarts: self.config.fit_restarts,
                    ..FitConfig::default()
                }
                .with_seed(seed::derive(self.run_seed, Stream::Fit, &[dataset.len() as u64, m as u64]))
                .with_warm_start(warm);
                gp::fit(&dataset.inputs, &dataset.targets(m), &cfg)
            })
            .collect()
    }

    fn evaluate(&self, models: &[GpModel]) -> Result<Vec<f64>> {
        models
            .iter()
            .enumerate()
            .map(|(m, model)| {
                let pred: Vec<f64> = model.predict_many(&self.grid)?.iter().map(|p| p.mean).collect();
                let (lo, hi) = self.process.output_ranges[m];
                metrics::nrmse_val(&pred, &self.truths[m], hi - lo)
            })
            .collect()
    }

    fn run_strategy(&self, kind: StrategyKind) -> Result<LearningCurve> {
        let m = self.process.n_outputs();
        let mut dataset = Dataset::new(m);
        for (i, x) in self.design.iter().enumerate() {
            dataset.push(x.clone(), self.measure(i, x)?)?;
        }
        let mut models = self.fit_models(&dataset, None)?;
        let nrmse = self.evaluate(&models)?;
        let mut records = vec![Record {
            n_meas: dataset.len(),
            leader: None,
            query: None,
            nrmse_sum: metrics::nrmse_sum(&nrmse),
            nrmse,
            cv: None,
        }];

        let mut state = StrategyState::new(kind, m, self.config.strategy_config(), self.run_seed);
        while dataset.len() < self.config.budget {
            let outcome = state.step(&models, &dataset, &self.candidates)?;
            let Some(query) = outcome.query else {
                break;
            };
            let y = self.measure(dataset.len(), &query.point)?;
            dataset.push(query.point.clone(), y)?;
            models = self.fit_models(&dataset, Some(&models))?;
            let nrmse = self.evaluate(&models)?;
            records.push(Record {
                n_meas: dataset.len(),
                leader: Some(query.proposed_by),
                query: Some(query.point),
                nrmse_sum: metrics::nrmse_sum(&nrmse),
                nrmse,
                cv: outcome.scores,
            });
        }
        Ok(LearningCurve {
            strategy: kind,
            run_index: 0,
            run_seed: self.run_seed,
            records,
        })
    }
}

/// Execute one run index for every configured strategy.
pub fn run_single(config: &ExperimentConfig, run_index: usize) -> Result<RunArtifact> {
    config.validate()?;
    let start = Instant::now();
    let run_seed = seed::run_seed(config.master_seed, run_index);
    let process = toy::generate_process(&config.setup_spec()?, seed::derive(run_seed, Stream::Process, &[]))?;
    let design = initial_design(
        config.n_init,
        process.dim,
        seed::derive(run_seed, Stream::InitialDesign, &[]),
    )?;
    let candidates = CandidateSet::sobol(
        config.candidate_count,
        process.dim,
        seed::derive(run_seed, Stream::Candidates, &[]),
    )?;
    let (grid, truths) = toy::validation_set(&process);
    let ctx = RunContext {
        config,
        run_seed,
        process,
        design,
        candidates,
        grid,
        truths,
    };

    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for &kind in &config.strategies {
        match ctx.run_strategy(kind) {
            Ok(mut c) => {
                c.run_index = run_index;
                curves.push(c);
            }
            Err(e) => failures.push(RunFailure {
                strategy: kind,
                message: e.to_string(),
            }),
        }
    }
    Ok(RunArtifact {
        config: config.clone(),
        run_index,
        run_seed,
        process: ctx.process,
        curves,
        failures,
        duration_secs: start.elapsed().as_secs_f64(),
    })
}

/// Execute all runs of an experiment, in parallel up to `config.workers`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunArtifact>> {
    config.validate()?;
    let runs = || {
        (0..config.n_runs)
            .into_par_iter()
            .map(|r| run_single(config, r))
            .collect::<Result<Vec<_>>>()
    };
    if config.workers == 0 {
        runs()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| AosError::Config(e.to_string()))?
            .install(runs)
    }
}

/// Re-execute the run recorded in `artifact`.
pub fn replay(artifact: &RunArtifact) -> Result<RunArtifact> {
    run_single(&artifact.config, artifact.run_index)
}

/// Whether two artifacts carry identical metric values, bit for bit.
pub fn same_metrics(a: &RunArtifact, b: &RunArtifact) -> bool {
    a.run_seed == b.run_seed
        && a.process == b.process
        && a.curves.len() == b.curves.len()
        && a.curves.iter().zip(&b.curves).all(|(x, y)| x == y)
}

/// Mean/std curve per strategy, in configured strategy order.
pub fn aggregate(artifacts: &[RunArtifact]) -> Result<Vec<AggregateCurve>> {
    let mut by_kind: BTreeMap<StrategyKind, Vec<LearningCurve>> = BTreeMap::new();
    for a in artifacts {
        for c in &a.curves {
            by_kind.entry(c.strategy).or_default().push(c.clone());
        }
    }
    by_kind.values().map(|c| metrics::aggregate_runs(c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsRow {
    pub strategy: StrategyKind,
    /// Mean SF value at the full budget.
    pub reference: f64,
    pub n_reach: Option<usize>,
    pub fraction_of_budget: Option<f64>,
}

/// Measurements each strategy needs to reach the SF end value. Empty when SF
/// was not run.
pub fn savings(curves: &[AggregateCurve], budget: usize) -> Vec<SavingsRow> {
    let Some(reference) = curves
        .iter()
        .find(|c| c.strategy == StrategyKind::SF)
        .and_then(|c| c.final_mean())
    else {
        return Vec::new();
    };
    curves
        .iter()
        .map(|c| {
            let n_reach = metrics::measurements_to_reach(c, reference);
            SavingsRow {
                strategy: c.strategy,
                reference,
                n_reach,
                fraction_of_budget: n_reach.map(|n| n as f64 / budget as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = AosError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            _ => Err(AosError::Config(format!("unknown format {s:?}, expected csv or json"))),
        }
    }
}

/// Long-format row of the per-run table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub strategy: StrategyKind,
    pub n_meas: usize,
    pub leader: String,
    pub nrmse: Vec<f64>,
    pub nrmse_sum: f64,
}

pub fn run_rows(artifacts: &[RunArtifact]) -> Vec<RunRow> {
    artifacts
        .iter()
        .flat_map(|a| a.curves.iter())
        .flat_map(|c| {
            c.records.iter().map(move |r| RunRow {
                run: c.run_index,
                strategy: c.strategy,
                n_meas: r.n_meas,
                leader: r.leader.map_or_else(|| "init".to_string(), |l| l.to_string()),
                nrmse: r.nrmse.clone(),
                nrmse_sum: r.nrmse_sum,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| AosError::io(path, e))
}

/// Paths written by [`export_results`].
#[derive(Debug, Clone)]
pub struct ExportedFiles {
    pub runs: PathBuf,
    pub aggregate: PathBuf,
    pub savings: PathBuf,
    pub config: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

/// Write per-run records, aggregate curves, the savings table, the resolved
/// config and one JSON artifact (config + process + curves) per run.
/// Floats are written in shortest round-trip form.
pub fn export_results(artifacts: &[RunArtifact], dir: &Path, format: ExportFormat) -> Result<ExportedFiles> {
    let first = artifacts
        .first()
        .ok_or_else(|| AosError::Contract("nothing to export".into()))?;
    fs::create_dir_all(dir).map_err(|e| AosError::io(dir, e))?;
    let budget = first.config.budget;
    let rows = run_rows(artifacts);
    let agg = aggregate(artifacts)?;
    let sav = savings(&agg, budget);
    let n_out = first.process.n_outputs();

    let (runs, aggregate_path, savings_path) = match format {
        ExportFormat::Csv => {
            let mut s = String::from("run,strategy,n_meas,leader");
            for m in 1..=n_out {
                write!(s, ",nrmse_out{m}").unwrap();
            }
            s.push_str(",nrmse_sum\n");
            for r in &rows {
                write!(s, "{},{},{},{}", r.run, r.strategy, r.n_meas, r.leader).unwrap();
                for v in &r.nrmse {
                    write!(s, ",{v:?}").unwrap();
                }
                writeln!(s, ",{:?}", r.nrmse_sum).unwrap();
            }
            let runs = dir.join("runs.csv");
            write_file(&runs, &s)?;

            let mut s = String::from("strategy,n_meas,mean,std\n");
            for c in &agg {
                for i in 0..c.n_meas.len() {
                    writeln!(s, "{},{},{:?},{:?}", c.strategy, c.n_meas[i], c.mean[i], c.std[i]).unwrap();
                }
            }
            let aggregate_path = dir.join("aggregate.csv");
            write_file(&aggregate_path, &s)?;

            let mut s = String::from("strategy,reference,n_reach,fraction_of_budget\n");
            for r in &sav {
                let n = r.n_reach.map_or_else(|| "never".into(), |n| n.to_string());
                let f = r.fraction_of_budget.map_or_else(|| "never".into(), |f| format!("{f:?}"));
                writeln!(s, "{},{:?},{},{}", r.strategy, r.reference, n, f).unwrap();
            }
            let savings_path = dir.join("savings.csv");
            write_file(&savings_path, &s)?;
            (runs, aggregate_path, savings_path)
        }
        ExportFormat::Json => {
            let runs = dir.join("runs.json");
            write_file(&runs, &serde_json::to_string_pretty(&rows)?)?;
            let aggregate_path = dir.join("aggregate.json");
            write_file(&aggregate_path, &serde_json::to_string_pretty(&agg)?)?;
            let savings_path = dir.join("savings.json");
            write_file(&savings_path, &serde_json::to_string_pretty(&sav)?)?;
            (runs, aggregate_path, savings_path)
        }
    };

    let config = dir.join("config.toml");
    write_file(&config, &first.config.to_toml()?)?;
    let art_dir = dir.join("artifacts");
    fs::create_dir_all(&art_dir).map_err(|e| AosError::io(&art_dir, e))?;
    let mut paths = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let p = art_dir.join(a.file_name());
        write_file(&p, &serde_json::to_string(a)?)?;
        paths.push(p);
    }
    Ok(ExportedFiles {
        runs,
        aggregate: aggregate_path,
        savings: savings_path,
        config,
        artifacts: paths,
    })
}

/// Load every stored run artifact under `dir/artifacts`, ordered by run.
pub fn load_artifacts(dir: &Path) -> Result<Vec<RunArtifact>> {
    let art_dir = dir.join("artifacts");
    let mut paths: Vec<PathBuf> = fs::read_dir(&art_dir)
        .map_err(|e| AosError::io(&art_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut arts = paths.iter().map(|p| RunArtifact::load(p)).collect::<Result<Vec<_>>>()?;
    arts.sort_by_key(|a| a.run_index);
    if arts.is_empty() {
        return Err(AosError::Contract(format!("no run artifacts in {}", art_dir.display())));
    }
    Ok(arts)
}

/// Per-setup configs of the full benchmark: three setups, all four
/// strategies, 15 runs of 100 measurements.
pub fn reproduce_configs(master_seed: u64, output_dir: &Path) -> Vec<ExperimentConfig> {
    (1..=3)
        .map(|setup_id| ExperimentConfig {
            setup_id,
            master_seed,
            output_dir: output_dir.join(format!("setup{setup_id}")),
            ..ExperimentConfig::default()
        })
        .collect()
}
