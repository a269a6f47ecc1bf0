//! Experiment harness: seeded scenario batches, ablation matrices, aggregate
//! statistics, and plan export.
//!
//! A batch runs one scenario over a list of seeds; seed k drives both the
//! vision draw and the search. Seeds are independent, so batches may run in
//! parallel without affecting any reported value except wall time, which is
//! also the only field excluded from the deterministic view used by the
//! reproducibility checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rayon::prelude::*;

use crate::constraints;
use crate::formats::{plan_to_file, FormatError, Scenario};
use crate::planner::{
    self, PlanError, RewardMode, RolloutRecord, SearchConfig, SearchMethod, UctVariant,
};
use crate::scene::{Catalog, Observation, PlanResult};
use crate::vision::{self, VisionError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Run seeds sequentially (the reproducibility suites use this).
    pub serial: bool,
    /// Keep per-rollout traces for every seed.
    pub collect_trace: bool,
}

/// Outcome of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub success: bool,
    pub rollouts_used: u64,
    pub reward: f64,
    pub avg_reward_per_rollout: f64,
    pub wall_ms: f64,
    /// Best-so-far reward change points: (rollout index, best reward).
    pub trajectory: Vec<(u64, f64)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for n <= 1).
    pub std: f64,
    pub median: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() <= 1 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn summarize(values: &[f64]) -> StatSummary {
    StatSummary {
        mean: mean(values),
        std: sample_std(values),
        median: median(values),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub success_rate_pct: f64,
    pub rollouts: StatSummary,
    pub reward: StatSummary,
    pub avg_reward_per_rollout: StatSummary,
    pub wall_ms: StatSummary,
}

impl Aggregates {
    pub fn compute(records: &[SeedRecord]) -> Self {
        let pick = |f: fn(&SeedRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
        let successes = records.iter().filter(|r| r.success).count();
        Aggregates {
            success_rate_pct: if records.is_empty() {
                0.0
            } else {
                100.0 * successes as f64 / records.len() as f64
            },
            rollouts: summarize(&pick(|r| r.rollouts_used as f64)),
            reward: summarize(&pick(|r| r.reward)),
            avg_reward_per_rollout: summarize(&pick(|r| r.avg_reward_per_rollout)),
            wall_ms: summarize(&pick(|r| r.wall_ms)),
        }
    }
}

/// Results of one scenario over a batch of seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub search: SearchConfig,
    pub records: Vec<SeedRecord>,
    pub aggregates: Aggregates,
}

pub const CSV_HEADER: &str = "seed,success,rollouts_used,reward,avg_reward_per_rollout,wall_ms";

pub const TRACE_CSV_HEADER: &str = "rollout,reward,feasible,sequence_len";

impl RunReport {
    pub fn new(scenario: String, search: SearchConfig, records: Vec<SeedRecord>) -> Self {
        let aggregates = Aggregates::compute(&records);
        RunReport {
            scenario,
            search,
            records,
            aggregates,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.seed, r.success, r.rollouts_used, r.reward, r.avg_reward_per_rollout, r.wall_ms
            ));
        }
        out
    }

    /// JSON of the report with wall-clock fields zeroed; two runs of the
    /// same scenario and seeds must produce byte-identical views.
    pub fn deterministic_view(&self) -> String {
        let mut clone = self.clone();
        for r in &mut clone.records {
            r.wall_ms = 0.0;
        }
        clone.aggregates.wall_ms = StatSummary::default();
        serde_json::to_string_pretty(&clone).expect("report serializes")
    }
}

pub fn trace_to_csv(trace: &[RolloutRecord]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.rollout, r.reward, r.feasible, r.sequence_len
        ));
    }
    out
}

/// Observation used for a given seed: the pinned one when the scenario fixes
/// it, otherwise a fresh vision draw seeded by the run seed.
pub fn observation_for_seed(scenario: &Scenario, seed: u64) -> Result<Observation, HarnessError> {
    match &scenario.observation {
        Some(obs) => Ok(obs.clone()),
        None => {
            let mut cfg = scenario.vision.clone();
            cfg.seed = seed;
            Ok(vision::observe(&scenario.scene, &cfg)?)
        }
    }
}

fn run_seed(
    scenario: &Scenario,
    search: &SearchConfig,
    seed: u64,
) -> Result<(SeedRecord, Vec<RolloutRecord>, Option<PlanResult>), HarnessError> {
    let observation = observation_for_seed(scenario, seed)?;
    let mut cfg = search.clone();
    cfg.seed = seed;
    let start = std::time::Instant::now();
    let outcome = planner::plan_traced(
        &scenario.scene.catalog,
        scenario.scene.table,
        &observation,
        &scenario.layout,
        &cfg,
    );
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let (record, trace, plan) = match outcome {
        Ok((plan, trace)) => {
            let record = SeedRecord {
                seed,
                success: plan.success,
                rollouts_used: plan.rollouts_used,
                reward: plan.reward,
                avg_reward_per_rollout: mean(&trace.iter().map(|r| r.reward).collect::<Vec<_>>()),
                wall_ms,
                trajectory: trajectory(&trace),
            };
            (record, trace, Some(plan))
        }
        Err(PlanError::NoFeasiblePlan) => {
            let record = SeedRecord {
                seed,
                success: false,
                rollouts_used: search.rollout_budget,
                reward: 0.0,
                avg_reward_per_rollout: 0.0,
                wall_ms,
                trajectory: Vec::new(),
            };
            (record, Vec::new(), None)
        }
        Err(e) => return Err(e.into()),
    };
    Ok((record, trace, plan))
}

fn trajectory(trace: &[RolloutRecord]) -> Vec<(u64, f64)> {
    let mut out = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for r in trace {
        if r.reward > best {
            best = r.reward;
            out.push((r.rollout, r.reward));
        }
    }
    out
}

/// Output of a batch: the report, plus traces and plans when requested.
pub struct RunOutput {
    pub report: RunReport,
    pub traces: Vec<(u64, Vec<RolloutRecord>)>,
    pub plans: Vec<(u64, Option<PlanResult>)>,
}

/// Runs `scenario` once per seed with its own search config.
pub fn run_scenario(
    scenario: &Scenario,
    seeds: &[u64],
    opts: RunOptions,
) -> Result<RunOutput, HarnessError> {
    run_scenario_with(scenario, &scenario.search.clone(), seeds, opts)
}

/// Runs `scenario` once per seed under an explicit search config (used by
/// the ablation matrix).
pub fn run_scenario_with(
    scenario: &Scenario,
    search: &SearchConfig,
    seeds: &[u64],
    opts: RunOptions,
) -> Result<RunOutput, HarnessError> {
    let results: Vec<Result<_, HarnessError>> = if opts.serial {
        seeds
            .iter()
            .map(|&s| run_seed(scenario, search, s))
            .collect()
    } else {
        seeds
            .par_iter()
            .map(|&s| run_seed(scenario, search, s))
            .collect()
    };
    let mut records = Vec::with_capacity(seeds.len());
    let mut traces = Vec::new();
    let mut plans = Vec::new();
    for (result, &seed) in results.into_iter().zip(seeds) {
        let (record, trace, plan) = result?;
        records.push(record);
        if opts.collect_trace {
            traces.push((seed, trace));
        }
        plans.push((seed, plan));
    }
    Ok(RunOutput {
        report: RunReport::new(scenario.name.clone(), search.clone(), records),
        traces,
        plans,
    })
}

/// One row of the search-method comparison.
#[derive(Clone, Debug, Serialize)]
pub struct MatrixRow {
    pub method: SearchMethod,
    /// `None` for random search, which never consults the reward during
    /// selection.
    pub reward_mode: Option<RewardMode>,
    pub guided: bool,
    pub report: RunReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub scenario: String,
    pub search_rows: Vec<MatrixRow>,
    pub removal_rows: Vec<(bool, RunReport)>,
    pub uct_rows: Vec<(UctVariant, RunReport)>,
}

impl AblationReport {
    /// Text table in the shape of the search-method and collision-removal
    /// comparisons.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scenario: {}\n\n", self.scenario));
        out.push_str("search    reward  guided  success%  rollouts(mean+-std)     median\n");
        for row in &self.search_rows {
            let method = match row.method {
                SearchMethod::Random => "R.S. ",
                SearchMethod::Mcts => "MCTS ",
            };
            let reward = match row.reward_mode {
                None => "---   ",
                Some(RewardMode::Sparse) => "sparse",
                Some(RewardMode::Dense) => "dense ",
            };
            let a = &row.report.aggregates;
            out.push_str(&format!(
                "{method}     {reward}  {}       {:6.1}   {:8.1}+-{:<8.1}   {:8.1}\n",
                if row.guided { "yes" } else { "no " },
                a.success_rate_pct,
                a.rollouts.mean,
                a.rollouts.std,
                a.rollouts.median,
            ));
        }
        out.push_str("\ncollision-removal  success%  rollouts(mean+-std)\n");
        for (enabled, report) in &self.removal_rows {
            let a = &report.aggregates;
            out.push_str(&format!(
                "{}                 {:6.1}   {:8.1}+-{:<8.1}\n",
                if *enabled { "on " } else { "off" },
                a.success_rate_pct,
                a.rollouts.mean,
                a.rollouts.std,
            ));
        }
        out.push_str("\nuct-variant    success%  rollouts(mean+-std)\n");
        for (variant, report) in &self.uct_rows {
            let a = &report.aggregates;
            out.push_str(&format!(
                "{}  {:6.1}   {:8.1}+-{:<8.1}\n",
                match variant {
                    UctVariant::Standard => "standard     ",
                    UctVariant::PaperLiteral => "paper-literal",
                },
                a.success_rate_pct,
                a.rollouts.mean,
                a.rollouts.std,
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("section,method,reward,guided,success_rate_pct,rollouts_mean,rollouts_std,rollouts_median\n");
        for row in &self.search_rows {
            let a = &row.report.aggregates;
            out.push_str(&format!(
                "search,{},{},{},{},{},{},{}\n",
                match row.method {
                    SearchMethod::Random => "rs",
                    SearchMethod::Mcts => "mcts",
                },
                match row.reward_mode {
                    None => "-".to_string(),
                    Some(RewardMode::Dense) => "dense".to_string(),
                    Some(RewardMode::Sparse) => "sparse".to_string(),
                },
                row.guided,
                a.success_rate_pct,
                a.rollouts.mean,
                a.rollouts.std,
                a.rollouts.median
            ));
        }
        for (enabled, report) in &self.removal_rows {
            let a = &report.aggregates;
            out.push_str(&format!(
                "removal,mcts,{},{},{},{},{},{}\n",
                "dense",
                enabled,
                a.success_rate_pct,
                a.rollouts.mean,
                a.rollouts.std,
                a.rollouts.median
            ));
        }
        for (variant, report) in &self.uct_rows {
            let a = &report.aggregates;
            out.push_str(&format!(
                "uct,{},dense,true,{},{},{},{}\n",
                match variant {
                    UctVariant::Standard => "standard",
                    UctVariant::PaperLiteral => "paper_literal",
                },
                a.success_rate_pct,
                a.rollouts.mean,
                a.rollouts.std,
                a.rollouts.median
            ));
        }
        out
    }
}

/// Runs the 6-row search matrix (random search and MCTS with sparse or dense
/// reward, each unguided and guided), the penetration-removal on/off pair,
/// and the two UCT selection variants.
pub fn run_ablation_matrix(
    scenario: &Scenario,
    seeds: &[u64],
    opts: RunOptions,
) -> Result<AblationReport, HarnessError> {
    let base = scenario.search.clone();
    let mut search_rows = Vec::new();
    let combos: [(SearchMethod, Option<RewardMode>, bool); 6] = [
        (SearchMethod::Random, None, false),
        (SearchMethod::Random, None, true),
        (SearchMethod::Mcts, Some(RewardMode::Sparse), false),
        (SearchMethod::Mcts, Some(RewardMode::Sparse), true),
        (SearchMethod::Mcts, Some(RewardMode::Dense), false),
        (SearchMethod::Mcts, Some(RewardMode::Dense), true),
    ];
    for (method, reward_mode, guided) in combos {
        let mut cfg = base.clone();
        cfg.search_method = method;
        cfg.reward_mode = reward_mode.unwrap_or(RewardMode::Dense);
        cfg.guided = guided;
        let output = run_scenario_with(scenario, &cfg, seeds, opts)?;
        search_rows.push(MatrixRow {
            method,
            reward_mode,
            guided,
            report: output.report,
        });
    }
    let mut removal_rows = Vec::new();
    for enabled in [false, true] {
        let mut cfg = base.clone();
        cfg.penetration_removal = enabled;
        let output = run_scenario_with(scenario, &cfg, seeds, opts)?;
        removal_rows.push((enabled, output.report));
    }
    let mut uct_rows = Vec::new();
    for variant in [UctVariant::Standard, UctVariant::PaperLiteral] {
        let mut cfg = base.clone();
        cfg.uct_variant = variant;
        let output = run_scenario_with(scenario, &cfg, seeds, opts)?;
        uct_rows.push((variant, output.report));
    }
    Ok(AblationReport {
        scenario: scenario.name.clone(),
        search_rows,
        removal_rows,
        uct_rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    StepList,
}

/// Renders a plan either as its JSON file form or as a numbered
/// human-readable step list.
pub fn export_plan(plan: &PlanResult, catalog: &Catalog, format: ExportFormat) -> String {
    match format {
        ExportFormat::Json => {
            serde_json::to_string_pretty(&plan_to_file(plan, catalog)).expect("plan serializes")
                + "\n"
        }
        ExportFormat::StepList => {
            let mut out = String::new();
            if !plan.success {
                out.push_str(&format!(
                    "# best-effort plan (search budget exhausted, reward {:.3})\n",
                    plan.reward
                ));
            }
            for (k, step) in plan.steps.iter().enumerate() {
                let label = catalog
                    .by_id(step.id)
                    .map(|p| p.label.as_str())
                    .unwrap_or("?");
                out.push_str(&format!(
                    "{}. pick {label}[{}] at ({:.3}, {:.3}) -> place at ({:.3}, {:.3}, {:.3}) rot {}\n",
                    k + 1,
                    step.id,
                    step.pick.pos.x,
                    step.pick.pos.y,
                    step.place.pos.x,
                    step.place.pos.y,
                    step.place.pos.z,
                    step.place.rot.quarter_turns(),
                ));
            }
            out
        }
    }
}

/// A placement whose center sits within `threshold` of its support footprint
/// boundary; such plans are physically brittle.
#[derive(Clone, Debug, Serialize)]
pub struct MarginWarning {
    pub id: crate::scene::PrimId,
    pub margin: f64,
}

/// Smallest center-to-support-edge margin per placed object, flagging those
/// below `threshold`.
pub fn margin_warnings(
    plan: &PlanResult,
    catalog: &Catalog,
    table: &crate::scene::Rect,
    threshold: f64,
) -> Result<Vec<MarginWarning>, constraints::StackError> {
    let sys = constraints::stability_constraints(&plan.operator_sequence, catalog, table)?;
    let xy: Vec<[f64; 2]> = (0..catalog.len())
        .map(|ix| {
            let pose = plan.solved_poses[&catalog.get(ix).id];
            [pose.pos.x, pose.pos.y]
        })
        .collect();
    let mut warnings = Vec::new();
    for ix in 0..catalog.len() {
        let margin = match sys.supports[ix] {
            crate::strips::Placement::OnTable => {
                let [x, y] = xy[ix];
                (x - table.min[0])
                    .min(table.max[0] - x)
                    .min(y - table.min[1])
                    .min(table.max[1] - y)
            }
            crate::strips::Placement::On(b) => {
                let (wb, db) = sys.xy_extents(catalog, b);
                let dx = (xy[ix][0] - xy[b][0]).abs();
                let dy = (xy[ix][1] - xy[b][1]).abs();
                (wb / 2.0 - dx).min(db / 2.0 - dy)
            }
            crate::strips::Placement::AlongX(b, c) | crate::strips::Placement::AlongY(b, c) => {
                let mut m = f64::INFINITY;
                for s in [b, c] {
                    let (ws, ds) = sys.xy_extents(catalog, s);
                    let dx = (xy[ix][0] - xy[s][0]).abs();
                    let dy = (xy[ix][1] - xy[s][1]).abs();
                    let (wa, da) = sys.xy_extents(catalog, ix);
                    let overlap_x = ((wa + ws) / 2.0 - dx).min(wa.min(ws));
                    let overlap_y = ((da + ds) / 2.0 - dy).min(da.min(ds));
                    let needed = match sys.supports[ix] {
                        crate::strips::Placement::AlongX(..) => {
                            constraints::BRIDGE_OVERLAP_FRACTION * ws
                        }
                        _ => constraints::BRIDGE_OVERLAP_FRACTION * ds,
                    };
                    let slack = match sys.supports[ix] {
                        crate::strips::Placement::AlongX(..) => (overlap_x - needed).min(overlap_y),
                        _ => (overlap_y - needed).min(overlap_x),
                    };
                    m = m.min(slack);
                }
                m
            }
        };
        if margin < threshold {
            warnings.push(MarginWarning {
                id: catalog.get(ix).id,
                margin,
            });
        }
    }
    Ok(warnings)
}
