//! Run directories and the files in them.
//!
//! A run directory holds
//!
//! * `manifest.json`: [`RunManifest`], written last and atomically;
//! * `config.toml`: the effective configuration;
//! * `evaluation.csv`: per-cluster totals averaged over seeds, columns
//!   `cluster_id,cost_usd,baseline_cost_usd,saving_percent,consumption_kwh,grid_kwh,bought_kwh,sold_kwh,avg_reward`;
//! * `seed-<s>/trace.csv`: the step trace of the evaluated days;
//! * `seed-<s>/evaluation.csv`: the same totals for one seed;
//! * `seed-<s>/curve.csv`: `epoch,agent_id,avg_reward,epsilon,loss` (learning runs);
//! * `seed-<s>/agent-<i>.{json,bin}`: agent checkpoints (learning runs).
//!
//! A compare directory holds `summary.csv` (Table 2 layout),
//! `metrics.csv` (`method,cluster_id,cost_usd,consumption_kwh,bought_kwh,sold_kwh`),
//! `curves.csv` (`method,epoch,avg_reward`) and its own manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::run::{build_agents, evaluate_traced, saving_percent, train_agents, CurveRow, Evaluation, CURVE_HEADER};
use crate::agents::Agent;
use crate::assets::INTERVALS_PER_DAY;
use crate::demand;
use crate::env::{synthetic_generation, write_step_trace_csv, ActionSpace, DataSource, Scenario, StepRecord};
use crate::error::{Error, Result};
use crate::tariff::SmpSeries;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVES_FILE: &str = "curves.csv";

pub const EVALUATION_HEADER: [&str; 9] = [
    "cluster_id",
    "cost_usd",
    "baseline_cost_usd",
    "saving_percent",
    "consumption_kwh",
    "grid_kwh",
    "bought_kwh",
    "sold_kwh",
    "avg_reward",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Simulate,
    Train,
    Evaluate,
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: RunKind,
    pub method: String,
    pub config_hash: String,
    pub scenario_hash: String,
    pub seeds: Vec<u64>,
    /// Evaluated scenario days, `[start, end)`.
    pub days: [usize; 2],
    pub code_version: String,
    pub started: String,
    pub finished: String,
    /// Emitted files relative to the run directory.
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes `manifest.json` through a temporary file and a rename.
    pub fn write_atomic(&self, dir: &Path) -> Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        serde_json::to_writer_pretty(&mut tmp, self)?;
        tmp.write_all(b"\n").map_err(|e| Error::io(tmp.path(), e))?;
        let path = dir.join(MANIFEST_FILE);
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

pub fn timestamp() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

/// Collects emitted file names relative to the run directory.
struct Emitter {
    dir: PathBuf,
    files: Vec<String>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, rel: &str) -> Result<fs::File> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.push(rel.to_string());
        fs::File::create(&path).map_err(|e| Error::io(&path, e))
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let mut f = self.create(rel)?;
        f.write_all(bytes).map_err(|e| Error::io(self.dir.join(rel), e))
    }

    fn finish(mut self, cfg: &ExperimentConfig, kind: RunKind, method: String, started: String) -> Result<RunManifest> {
        self.files.sort();
        let manifest = RunManifest {
            kind,
            method,
            config_hash: cfg.hash(),
            scenario_hash: cfg.scenario_hash(),
            seeds: cfg.seeds.clone(),
            days: match kind {
                RunKind::Simulate => [0, cfg.total_days()],
                _ => [cfg.train_days, cfg.total_days()],
            },
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started,
            finished: timestamp(),
            files: self.files,
        };
        manifest.write_atomic(&self.dir)?;
        Ok(manifest)
    }
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CURVE_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.epoch.to_string(),
            r.agent_id.to_string(),
            r.avg_reward.to_string(),
            r.epsilon.to_string(),
            r.loss.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<curve>", e))
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct EvaluationRow {
    cluster_id: usize,
    cost_usd: f64,
    baseline_cost_usd: f64,
    saving_percent: f64,
    consumption_kwh: f64,
    grid_kwh: f64,
    bought_kwh: f64,
    sold_kwh: f64,
    avg_reward: f64,
}

pub fn write_evaluation_csv<W: Write>(ev: &Evaluation, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(EVALUATION_HEADER)?;
    let savings = ev.saving_percent();
    for c in 0..ev.clusters() {
        wtr.serialize(EvaluationRow {
            cluster_id: c,
            cost_usd: ev.cost[c],
            baseline_cost_usd: ev.baseline_cost[c],
            saving_percent: savings[c],
            consumption_kwh: ev.consumption_kwh[c],
            grid_kwh: ev.grid_kwh[c],
            bought_kwh: ev.bought_kwh[c],
            sold_kwh: ev.sold_kwh[c],
            avg_reward: ev.avg_reward[c],
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<evaluation>", e))
}

pub fn read_evaluation_csv(path: &Path) -> Result<Evaluation> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut ev = Evaluation::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if i == 0 {
            if rec.iter().ne(EVALUATION_HEADER) {
                return Err(Error::Config(format!("{}: unexpected header", path.display())));
            }
            continue;
        }
        let row: EvaluationRow = rec.deserialize(None)?;
        if row.cluster_id != i - 1 {
            return Err(Error::Config(format!("{}: clusters out of order", path.display())));
        }
        ev.cost.push(row.cost_usd);
        ev.baseline_cost.push(row.baseline_cost_usd);
        ev.consumption_kwh.push(row.consumption_kwh);
        ev.grid_kwh.push(row.grid_kwh);
        ev.bought_kwh.push(row.bought_kwh);
        ev.sold_kwh.push(row.sold_kwh);
        ev.avg_reward.push(row.avg_reward);
    }
    Ok(ev)
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

fn agent_stem(dir: &Path, seed: u64, agent: usize) -> PathBuf {
    dir.join(seed_dir(seed)).join(format!("agent-{agent}"))
}

/// Everything one seed of a run produced.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub curve: Vec<CurveRow>,
    pub evaluation: Evaluation,
    pub trace: Vec<StepRecord>,
}

pub fn build_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<Arc<Scenario>> {
    Ok(Arc::new(Scenario::generate(&cfg.scenario, seed, 0, cfg.total_days())?))
}

/// Trains and evaluates one seed without touching the filesystem.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(SeedOutcome, Vec<Agent>)> {
    let method = cfg.method()?;
    let scenario = build_scenario(cfg, seed)?;
    let Some(variant) = method.variant() else {
        let (evaluation, trace) = evaluate_traced(&scenario, None, ActionSpace::Res, cfg.eval_range(), cfg.horizon, true)?;
        return Ok((
            SeedOutcome {
                seed,
                curve: Vec::new(),
                evaluation,
                trace,
            },
            Vec::new(),
        ));
    };
    let hp = &cfg.algorithm.hyperparams;
    let mut agents = build_agents(variant, hp, cfg.scenario.clusters, seed)?;
    let space = variant.action_space;
    let curve = train_agents(&scenario, &mut agents, space, cfg.epochs, 0..cfg.train_days, cfg.horizon)?;
    let (evaluation, trace) = evaluate_traced(&scenario, Some(&mut agents), space, cfg.eval_range(), cfg.horizon, true)?;
    Ok((
        SeedOutcome {
            seed,
            curve,
            evaluation,
            trace,
        },
        agents,
    ))
}

fn emit_seed(em: &mut Emitter, out: &SeedOutcome) -> Result<()> {
    let sd = seed_dir(out.seed);
    em.write(&format!("{sd}/{EVALUATION_FILE}"), &to_bytes(|b| write_evaluation_csv(&out.evaluation, b))?)?;
    em.write(&format!("{sd}/{TRACE_FILE}"), &to_bytes(|b| write_step_trace_csv(&out.trace, b))?)?;
    if !out.curve.is_empty() {
        em.write(&format!("{sd}/{CURVE_FILE}"), &to_bytes(|b| write_curve_csv(&out.curve, b))?)?;
    }
    Ok(())
}

fn emit_summary(
    mut em: Emitter,
    cfg: &ExperimentConfig,
    outcomes: &[SeedOutcome],
    kind: RunKind,
    started: String,
) -> Result<RunManifest> {
    for o in outcomes {
        emit_seed(&mut em, o)?;
    }
    let evals: Vec<Evaluation> = outcomes.iter().map(|o| o.evaluation.clone()).collect();
    em.write(EVALUATION_FILE, &to_bytes(|b| write_evaluation_csv(&Evaluation::mean(&evals)?, b))?)?;
    em.write(CONFIG_FILE, cfg.to_toml()?.as_bytes())?;
    let method = cfg.method()?.to_string();
    em.finish(cfg, kind, method, started)
}

/// Result of a run together with its manifest.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub outcomes: Vec<SeedOutcome>,
}

/// Trains one agent set per seed, seeds in parallel, and writes the run
/// directory. The baseline method only evaluates.
pub fn run_train(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = timestamp();
    let dir = cfg.output.clone();
    let mut em = Emitter::new(&dir)?;
    let results: Vec<(SeedOutcome, Vec<Agent>)> = cfg
        .seeds
        .par_iter()
        .map(|&s| train_seed(cfg, s))
        .collect::<Result<_>>()?;
    let mut outcomes = Vec::with_capacity(results.len());
    for (out, agents) in results {
        for (i, a) in agents.iter().enumerate() {
            let stem = agent_stem(&dir, out.seed, i);
            fs::create_dir_all(stem.parent().unwrap_or(&dir)).map_err(|e| Error::io(&dir, e))?;
            a.save(&stem)?;
            let prefix = format!("{}/agent-{i}", seed_dir(out.seed));
            match a {
                Agent::Q(_) => em.files.extend([format!("{prefix}.bin"), format!("{prefix}.json")]),
                Agent::Ppo(_) => em.files.extend(
                    ["actor", "critic"]
                        .iter()
                        .flat_map(|r| [format!("{prefix}_{r}.bin"), format!("{prefix}_{r}.json")]),
                ),
            }
        }
        outcomes.push(out);
    }
    let manifest = emit_summary(em, cfg, &outcomes, RunKind::Train, started)?;
    Ok(RunReport { manifest, outcomes })
}

/// Re-evaluates the checkpoints stored in `cfg.output`.
pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = timestamp();
    let dir = cfg.output.clone();
    let method = cfg.method()?;
    if let Method::Rl(_) = method {
        let missing: Vec<String> = cfg
            .seeds
            .iter()
            .flat_map(|&s| (0..cfg.scenario.clusters).map(move |i| (s, i)))
            .filter(|&(s, i)| !checkpoint_exists(&agent_stem(&dir, s, i)))
            .map(|(s, i)| format!("{}/agent-{i} checkpoint", seed_dir(s)))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingArtifacts { dir, missing });
        }
    }
    let outcomes: Vec<SeedOutcome> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let scenario = build_scenario(cfg, seed)?;
            let (evaluation, trace) = match method {
                Method::Baseline => {
                    evaluate_traced(&scenario, None, ActionSpace::Res, cfg.eval_range(), cfg.horizon, true)?
                }
                Method::Rl(v) => {
                    let mut agents = build_agents(v, &cfg.algorithm.hyperparams, cfg.scenario.clusters, seed)?;
                    for (i, a) in agents.iter_mut().enumerate() {
                        a.load(&agent_stem(&dir, seed, i))?;
                    }
                    evaluate_traced(&scenario, Some(&mut agents), v.action_space, cfg.eval_range(), cfg.horizon, true)?
                }
            };
            Ok(SeedOutcome {
                seed,
                curve: read_curve_csv(&dir.join(seed_dir(seed)).join(CURVE_FILE)).unwrap_or_default(),
                evaluation,
                trace,
            })
        })
        .collect::<Result<_>>()?;
    let em = Emitter::new(&dir)?;
    let manifest = emit_summary(em, cfg, &outcomes, RunKind::Evaluate, started)?;
    Ok(RunReport { manifest, outcomes })
}

fn checkpoint_exists(stem: &Path) -> bool {
    let has = |s: &Path| s.with_extension("json").is_file();
    has(stem) || has(&PathBuf::from(format!("{}_actor", stem.display())))
}

/// Runs the rule-based policy over every scenario day and writes step traces.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = timestamp();
    let em = Emitter::new(&cfg.output)?;
    let outcomes: Vec<SeedOutcome> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let scenario = build_scenario(cfg, seed)?;
            let (evaluation, trace) =
                evaluate_traced(&scenario, None, ActionSpace::Res, 0..cfg.total_days(), cfg.horizon, true)?;
            Ok(SeedOutcome {
                seed,
                curve: Vec::new(),
                evaluation,
                trace,
            })
        })
        .collect::<Result<_>>()?;
    let mut baseline = cfg.clone();
    baseline.algorithm = Default::default();
    let manifest = emit_summary(em, &baseline, &outcomes, RunKind::Simulate, started)?;
    Ok(RunReport { manifest, outcomes })
}

/// Per-cluster costs of several methods against one baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub baseline: Vec<f64>,
    /// `(method, per-cluster cost)` in column order.
    pub variants: Vec<(String, Vec<f64>)>,
}

impl CompareTable {
    pub fn new(baseline: Vec<f64>, variants: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let k = baseline.len();
        if k == 0 {
            return Err(Error::Contract("no clusters to compare".into()));
        }
        if let Some((name, _)) = variants.iter().find(|(_, c)| c.len() != k) {
            return Err(Error::Contract(format!("{name} reports a different number of clusters")));
        }
        Ok(CompareTable { baseline, variants })
    }

    pub fn clusters(&self) -> usize {
        self.baseline.len()
    }

    /// `[variant][cluster]` saving in percent.
    pub fn savings(&self) -> Vec<Vec<f64>> {
        self.variants
            .iter()
            .map(|(_, cost)| cost.iter().zip(&self.baseline).map(|(&v, &b)| saving_percent(b, v)).collect())
            .collect()
    }

    /// Arithmetic mean of each variant's per-cluster savings.
    pub fn mean_saving(&self) -> Vec<f64> {
        self.savings().iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect()
    }

    /// Rows `cluster_id,metric,baseline,<methods...>`: a cost row and a
    /// saving row per cluster, then the labelled arithmetic mean saving.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["cluster_id".to_string(), "metric".into(), "baseline".into()];
        header.extend(self.variants.iter().map(|(n, _)| n.clone()));
        wtr.write_record(&header)?;
        let savings = self.savings();
        for c in 0..self.clusters() {
            let mut cost = vec![c.to_string(), "cost_usd".into(), self.baseline[c].to_string()];
            cost.extend(self.variants.iter().map(|(_, v)| v[c].to_string()));
            wtr.write_record(&cost)?;
            let mut save = vec![c.to_string(), "saving_percent".into(), String::new()];
            save.extend(savings.iter().map(|s| s[c].to_string()));
            wtr.write_record(&save)?;
        }
        let mut mean = vec!["all".to_string(), "mean_saving_percent_arithmetic".into(), String::new()];
        mean.extend(self.mean_saving().iter().map(f64::to_string));
        wtr.write_record(&mean)?;
        wtr.flush().map_err(|e| Error::io("<summary>", e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let names: Vec<String> = rdr.headers()?.iter().skip(3).map(str::to_string).collect();
        let mut baseline = Vec::new();
        let mut costs = vec![Vec::new(); names.len()];
        for rec in rdr.records() {
            let rec = rec?;
            if rec.get(1) != Some("cost_usd") {
                continue;
            }
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Config(format!("{}: bad number in column {i}", path.display())))
            };
            baseline.push(num(2)?);
            for (j, c) in costs.iter_mut().enumerate() {
                c.push(num(3 + j)?);
            }
        }
        CompareTable::new(baseline, names.into_iter().zip(costs).collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub cluster_id: usize,
    pub cost_usd: f64,
    pub consumption_kwh: f64,
    pub bought_kwh: f64,
    pub sold_kwh: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub epoch: usize,
    pub avg_reward: f64,
}

/// Mean reward per epoch over agents and seeds.
pub fn mean_curve(curves: &[Vec<CurveRow>]) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for row in curves.iter().flatten() {
        let e = acc.entry(row.epoch).or_default();
        e.0 += row.avg_reward;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Compares finished runs against the baseline run among them and writes
/// `summary.csv`, `metrics.csv` and `curves.csv` to `out`.
pub fn run_compare(run_dirs: &[PathBuf], out: &Path) -> Result<CompareTable> {
    let started = timestamp();
    let mut runs = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let missing: Vec<String> = [MANIFEST_FILE, EVALUATION_FILE]
            .iter()
            .filter(|f| !dir.join(f).is_file())
            .map(|f| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingArtifacts {
                dir: dir.clone(),
                missing,
            });
        }
        let manifest = RunManifest::read(dir)?;
        if manifest.kind == RunKind::Compare {
            return Err(Error::Contract(format!("{} is a compare directory, not a run", dir.display())));
        }
        let ev = read_evaluation_csv(&dir.join(EVALUATION_FILE))?;
        runs.push((dir, manifest, ev));
    }
    let Some((_, first, _)) = runs.first() else {
        return Err(Error::Contract("compare needs at least one run".into()));
    };
    for (dir, m, _) in &runs {
        if m.scenario_hash != first.scenario_hash || m.days != first.days {
            return Err(Error::Contract(format!(
                "{} simulates a different scenario (hash {}, days {:?}) than {} (hash {}, days {:?})",
                dir.display(),
                &m.scenario_hash[..12.min(m.scenario_hash.len())],
                m.days,
                run_dirs[0].display(),
                &first.scenario_hash[..12.min(first.scenario_hash.len())],
                first.days
            )));
        }
    }
    let mut seen = std::collections::HashSet::new();
    if let Some((dir, m, _)) = runs.iter().find(|(_, m, _)| !seen.insert(m.method.clone())) {
        return Err(Error::Contract(format!("method {} appears twice ({})", m.method, dir.display())));
    }
    let baseline = runs
        .iter()
        .find(|(_, m, _)| m.method == "baseline")
        .map(|(_, _, ev)| ev.cost.clone())
        .ok_or_else(|| Error::Contract("compare needs a baseline run".into()))?;
    let table = CompareTable::new(
        baseline,
        runs.iter()
            .filter(|(_, m, _)| m.method != "baseline")
            .map(|(_, m, ev)| (m.method.clone(), ev.cost.clone()))
            .collect(),
    )?;

    let mut em = Emitter::new(out)?;
    em.write(SUMMARY_FILE, &to_bytes(|b| table.write_csv(b))?)?;
    let metrics = to_bytes(|b| {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(b);
        wtr.write_record(["method", "cluster_id", "cost_usd", "consumption_kwh", "bought_kwh", "sold_kwh"])?;
        for (_, m, ev) in &runs {
            for c in 0..ev.clusters() {
                wtr.serialize(MetricsRow {
                    method: m.method.clone(),
                    cluster_id: c,
                    cost_usd: ev.cost[c],
                    consumption_kwh: ev.consumption_kwh[c],
                    bought_kwh: ev.bought_kwh[c],
                    sold_kwh: ev.sold_kwh[c],
                })?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<metrics>", e))
    })?;
    em.write(METRICS_FILE, &metrics)?;
    let curves = to_bytes(|b| {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(b);
        wtr.write_record(["method", "epoch", "avg_reward"])?;
        for (dir, m, _) in &runs {
            let per_seed: Vec<Vec<CurveRow>> = m
                .seeds
                .iter()
                .map(|&s| dir.join(seed_dir(s)).join(CURVE_FILE))
                .filter(|p| p.is_file())
                .map(|p| read_curve_csv(&p))
                .collect::<Result<_>>()?;
            for (epoch, r) in mean_curve(&per_seed) {
                wtr.serialize(CurvePoint {
                    method: m.method.clone(),
                    epoch,
                    avg_reward: r,
                })?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<curves>", e))
    })?;
    em.write(CURVES_FILE, &curves)?;

    em.files.sort();
    let manifest = RunManifest {
        kind: RunKind::Compare,
        method: runs.iter().map(|(_, m, _)| m.method.as_str()).collect::<Vec<_>>().join(","),
        config_hash: String::new(),
        scenario_hash: first.scenario_hash.clone(),
        seeds: first.seeds.clone(),
        days: first.days,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: timestamp(),
        files: em.files,
    };
    manifest.write_atomic(out)?;
    Ok(table)
}

pub const GENERATION_DATA: &str = "generation.csv";
pub const SMP_DATA: &str = "smp.csv";
pub const APPLIANCE_DATA: &str = "appliances.csv";

/// Writes the synthetic generation, SMP and appliance data of `cfg`'s first
/// seed, plus a `config.toml` that reads them back. Simulating that config
/// reproduces the synthetic scenario.
pub fn synth_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let days = cfg.total_days();
    let seed = cfg.seeds[0];
    let gen = synthetic_generation(&cfg.scenario, seed, days)?;
    let smp = SmpSeries::synthetic_diurnal((cfg.scenario.start_day_of_year * 24) as f64, days + 1);
    let create = |name: &str| -> Result<(PathBuf, fs::File)> {
        let p = out.join(name);
        let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, f))
    };
    let (gp, gf) = create(GENERATION_DATA)?;
    gen.write_csv(std::io::BufWriter::new(gf))?;
    let (sp, sf) = create(SMP_DATA)?;
    smp.write_csv(sf)?;
    let (ap, af) = create(APPLIANCE_DATA)?;
    demand::write_catalog(&demand::default_catalog(), af)?;

    let mut file_cfg = cfg.clone();
    file_cfg.scenario.generation = DataSource::Csv(GENERATION_DATA.into());
    file_cfg.scenario.tariff.smp = DataSource::Csv(SMP_DATA.into());
    file_cfg.scenario.appliances = Some(APPLIANCE_DATA.into());
    let cp = out.join(CONFIG_FILE);
    fs::write(&cp, file_cfg.to_toml()?).map_err(|e| Error::io(&cp, e))?;
    debug_assert_eq!(gen.len(), days * INTERVALS_PER_DAY);
    Ok(vec![gp, sp, ap, cp])
}
