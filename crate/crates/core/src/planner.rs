//! Monte Carlo tree search over stacking operator sequences.
//!
//! A node of the tree is a STRIPS state, a branch is an admissible operator.
//! Each iteration descends by UCT among visited children (untried operators
//! take priority), expands one operator, completes the sequence with random
//! operators, scores the completed sequence by solving its pose-recovery
//! problem, and backpropagates the reward along the path. Search stops at the
//! first sequence that matches every visible object, or when the rollout
//! budget is exhausted.
//!
//! Operators are filtered per node: placements whose symbolic height, support
//! footprint or rotation class contradicts an observed pose can never match
//! the target and are pruned. Guided mode prefers acting on detected objects,
//! whose target poses are known.
//!
//! A search is single-threaded and, for a fixed seed, fully deterministic;
//! parallelism lives one level up, across independent seeded searches in the
//! harness.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::constraints::{self, PoseSolve};
use crate::scene::{Catalog, Observation, PlanResult, PlanStep, Pose, PrimId, Rect, Vec3};
use crate::strips::{self, Operator, StripsState, Support};

/// Pick poses for every catalog object, plus the global offset added to
/// place poses so the copy is built next to the original.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub picks: BTreeMap<PrimId, Pose>,
    #[serde(default)]
    pub place_offset: [f64; 2],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    #[default]
    Dense,
    Sparse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UctVariant {
    /// Parent visits inside the logarithm, child visits in the denominator.
    #[default]
    Standard,
    /// The transposed form: child visits inside the logarithm.
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    #[default]
    Mcts,
    /// Uniform random descent instead of UCT selection.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub exploration_c: f64,
    pub reward_mode: RewardMode,
    pub guided: bool,
    pub rollout_budget: u64,
    /// Position match tolerance of the reward, meters.
    pub epsilon: f64,
    pub uct_variant: UctVariant,
    pub seed: u64,
    pub penetration_removal: bool,
    pub search_method: SearchMethod,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            exploration_c: std::f64::consts::SQRT_2,
            reward_mode: RewardMode::Dense,
            guided: true,
            rollout_budget: 20_000,
            epsilon: 0.01,
            uct_variant: UctVariant::Standard,
            seed: 0,
            penetration_removal: true,
            search_method: SearchMethod::Mcts,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.exploration_c.is_nan() || self.exploration_c <= 0.0 {
            return Err(PlanError::InvalidConfig("exploration_c must be > 0".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(PlanError::InvalidConfig("epsilon must be > 0".into()));
        }
        if self.rollout_budget < 1 {
            return Err(PlanError::InvalidConfig(
                "rollout_budget must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("no visible objects: the reward is undefined for an empty detection set")]
    NoVisibleObjects,
    #[error("detection id {0} is not in the catalog")]
    UnknownDetection(PrimId),
    #[error("layout provides no pick pose for object {0}")]
    MissingPickPose(PrimId),
    #[error("every operator at the root contradicts the observation")]
    AllOperatorsPruned,
    #[error("budget exhausted without a single feasible candidate sequence")]
    NoFeasiblePlan,
}

/// UCT selection score of a visited child.
pub fn uct_score(
    parent_visits: u64,
    child_visits: u64,
    child_return: f64,
    cfg: &SearchConfig,
) -> f64 {
    let q = child_return / child_visits as f64;
    let bonus = match cfg.uct_variant {
        UctVariant::Standard => ((parent_visits as f64).ln() / child_visits as f64).sqrt(),
        UctVariant::PaperLiteral => ((child_visits as f64).ln() / parent_visits as f64).sqrt(),
    };
    q + cfg.exploration_c * bonus
}

/// Shared read-only inputs of one search.
struct PlanContext<'a> {
    catalog: &'a Catalog,
    table: Rect,
    observation: &'a Observation,
    /// Observed pose per catalog index, `None` for hidden objects.
    obs_pose: Vec<Option<Pose>>,
    epsilon: f64,
}

impl<'a> PlanContext<'a> {
    fn new(
        catalog: &'a Catalog,
        table: Rect,
        observation: &'a Observation,
        epsilon: f64,
    ) -> Result<Self, PlanError> {
        let mut obs_pose = vec![None; catalog.len()];
        for (&id, pose) in &observation.detections {
            let ix = catalog
                .index_of(id)
                .ok_or(PlanError::UnknownDetection(id))?;
            obs_pose[ix] = Some(*pose);
        }
        if obs_pose.iter().all(|p| p.is_none()) {
            return Err(PlanError::NoVisibleObjects);
        }
        Ok(PlanContext {
            catalog,
            table,
            observation,
            obs_pose,
            epsilon,
        })
    }

    fn actor_visible(&self, obj: usize) -> bool {
        self.obs_pose[obj].is_some()
    }
}

/// Cheap feasibility filter: prunes operators that provably contradict an
/// observed pose (wrong rotation class, wrong symbolic height, observed
/// center off the support footprint or off the table). Hidden actors are
/// never constrained by it.
fn operator_passes(op: Operator, state: &StripsState, ctx: &PlanContext) -> bool {
    let slack = 2.0 * ctx.epsilon;
    match op {
        Operator::Rotate { actor } => match ctx.obs_pose[actor] {
            Some(obs) => obs.rot == crate::scene::RotationClass::Deg90,
            None => true,
        },
        _ => {
            let actor = op.actor();
            let obs = match ctx.obs_pose[actor] {
                Some(o) => o,
                None => return true,
            };
            if state.rotation(actor) != obs.rot {
                return false;
            }
            let half = ctx.catalog.get(actor).half_height();
            let z = match op {
                Operator::PutOn {
                    support: Support::Table,
                    ..
                } => half,
                Operator::PutOn {
                    support: Support::Obj(b),
                    ..
                } => state.top_z(b) + half,
                Operator::PutOnAlongX { s1, .. } | Operator::PutOnAlongY { s1, .. } => {
                    state.top_z(s1) + half
                }
                Operator::Rotate { .. } => unreachable!(),
            };
            if (z - obs.pos.z).abs() > slack {
                return false;
            }
            if obs.pos.x < ctx.table.min[0] - slack
                || obs.pos.x > ctx.table.max[0] + slack
                || obs.pos.y < ctx.table.min[1] - slack
                || obs.pos.y > ctx.table.max[1] + slack
            {
                return false;
            }
            let support_ok = |s: usize, bridge: Option<crate::scene::Axis>| -> bool {
                let sobs = match ctx.obs_pose[s] {
                    Some(o) => o,
                    None => return true,
                };
                let (ws, ds) = ctx.catalog.get(s).xy_extents(state.rotation(s));
                let (wa, da) = ctx.catalog.get(actor).xy_extents(state.rotation(actor));
                let (dx, dy) = (
                    (obs.pos.x - sobs.pos.x).abs(),
                    (obs.pos.y - sobs.pos.y).abs(),
                );
                match bridge {
                    None => dx <= ws / 2.0 + slack && dy <= ds / 2.0 + slack,
                    Some(crate::scene::Axis::X) => {
                        dx <= (wa + ws) / 2.0 - constraints::BRIDGE_OVERLAP_FRACTION * ws + slack
                            && dy <= (da + ds) / 2.0 + slack
                    }
                    Some(crate::scene::Axis::Y) => {
                        dy <= (da + ds) / 2.0 - constraints::BRIDGE_OVERLAP_FRACTION * ds + slack
                            && dx <= (wa + ws) / 2.0 + slack
                    }
                }
            };
            match op {
                Operator::PutOn {
                    support: Support::Obj(b),
                    ..
                } => support_ok(b, None),
                Operator::PutOnAlongX { s1, s2, .. } => {
                    support_ok(s1, Some(crate::scene::Axis::X))
                        && support_ok(s2, Some(crate::scene::Axis::X))
                }
                Operator::PutOnAlongY { s1, s2, .. } => {
                    support_ok(s1, Some(crate::scene::Axis::Y))
                        && support_ok(s2, Some(crate::scene::Axis::Y))
                }
                _ => true,
            }
        }
    }
}

fn filtered_operators(state: &StripsState, ctx: &PlanContext) -> Vec<Operator> {
    strips::applicable_operators(state, ctx.catalog)
        .into_iter()
        .filter(|&op| operator_passes(op, state, ctx))
        .collect()
}

fn ranked(ops: Vec<Operator>) -> Vec<(u32, Operator)> {
    ops.into_iter()
        .enumerate()
        .map(|(k, op)| (k as u32, op))
        .collect()
}

/// Index into `ops` chosen for expansion or rollout: uniform, restricted to
/// operators acting on visible objects when guidance is on and any exist.
fn pick_preferred(
    ops: &[Operator],
    ctx: &PlanContext,
    guided: bool,
    rng: &mut ChaCha12Rng,
) -> usize {
    if guided {
        let preferred: Vec<usize> = (0..ops.len())
            .filter(|&i| ctx.actor_visible(ops[i].actor()))
            .collect();
        if !preferred.is_empty() {
            return preferred[rng.gen_range(0..preferred.len())];
        }
    }
    rng.gen_range(0..ops.len())
}

/// Outcome of scoring one terminal sequence.
#[derive(Clone, Debug)]
pub struct Scored {
    /// Reward under the configured mode (what gets backpropagated).
    pub reward: f64,
    pub dense: f64,
    pub sparse: f64,
    pub all_matched: bool,
    pub feasible: bool,
    pub solve: Option<PoseSolve>,
}

impl Scored {
    fn failure() -> Self {
        Scored {
            reward: 0.0,
            dense: 0.0,
            sparse: 0.0,
            all_matched: false,
            feasible: false,
            solve: None,
        }
    }
}

/// Solves the pose-recovery problem of a terminal sequence and evaluates the
/// match-fraction reward: a visible object counts as matched when its solved
/// position is within epsilon of the observed position and its rotation
/// class agrees. Dense reward is the matched fraction of the visible set,
/// sparse is one only when everything matched. Infeasible sequences score 0.
pub fn score_sequence(
    seq: &[Operator],
    catalog: &Catalog,
    table: &Rect,
    observation: &Observation,
    cfg: &SearchConfig,
) -> Scored {
    let solve = match constraints::solve_with_penetration_removal(
        seq,
        catalog,
        table,
        observation,
        cfg.penetration_removal,
    ) {
        Ok(s) if s.feasible => s,
        _ => return Scored::failure(),
    };
    let mut matched = 0usize;
    let mut total = 0usize;
    for (id, obs_pose) in &observation.detections {
        total += 1;
        let solved = &solve.poses[id];
        if solved.rot == obs_pose.rot && solved.pos.distance(obs_pose.pos) <= cfg.epsilon {
            matched += 1;
        }
    }
    let dense = matched as f64 / total as f64;
    let all = matched == total;
    let sparse = if all { 1.0 } else { 0.0 };
    Scored {
        reward: match cfg.reward_mode {
            RewardMode::Dense => dense,
            RewardMode::Sparse => sparse,
        },
        dense,
        sparse,
        all_matched: all,
        feasible: true,
        solve: Some(solve),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NodeKind {
    Interior,
    Terminal,
    /// Non-terminal but with every operator pruned: a dead end.
    Dead,
}

struct Node {
    state: StripsState,
    kind: NodeKind,
    visits: u64,
    return_sum: f64,
    /// (operator, child node, canonical operator rank at this node).
    children: Vec<(Operator, usize, u32)>,
    /// Untried operators with their canonical enumeration rank, which
    /// serves as the deterministic tie-break index.
    untried: Vec<(u32, Operator)>,
    /// Reward memo for terminal and dead nodes (re-selecting them must not
    /// re-solve the same QP).
    cached: Option<(f64, bool)>,
}

/// One iteration record for the trace log.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RolloutRecord {
    pub rollout: u64,
    pub reward: f64,
    pub feasible: bool,
    pub sequence_len: usize,
}

struct BestCandidate {
    reward: f64,
    sequence: Vec<Operator>,
    solve: PoseSolve,
}

struct Search<'a> {
    ctx: PlanContext<'a>,
    cfg: &'a SearchConfig,
    nodes: Vec<Node>,
    rng: ChaCha12Rng,
    best: Option<BestCandidate>,
}

struct StepOutcome {
    #[cfg_attr(not(test), allow(dead_code))]
    path: Vec<usize>,
    reward: f64,
    feasible: bool,
    sequence_len: usize,
    success: Option<(Vec<Operator>, PoseSolve)>,
}

impl<'a> Search<'a> {
    fn new(ctx: PlanContext<'a>, cfg: &'a SearchConfig) -> Result<Self, PlanError> {
        let state = StripsState::initial(ctx.catalog.len());
        let untried = ranked(filtered_operators(&state, &ctx));
        let kind = if state.is_terminal() {
            NodeKind::Terminal
        } else if untried.is_empty() {
            return Err(PlanError::AllOperatorsPruned);
        } else {
            NodeKind::Interior
        };
        let root = Node {
            state,
            kind,
            visits: 0,
            return_sum: 0.0,
            children: Vec::new(),
            untried,
            cached: None,
        };
        let rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        Ok(Search {
            ctx,
            cfg,
            nodes: vec![root],
            rng,
            best: None,
        })
    }

    fn make_node(&mut self, state: StripsState) -> usize {
        let untried = if state.is_terminal() {
            Vec::new()
        } else {
            ranked(filtered_operators(&state, &self.ctx))
        };
        let kind = if state.is_terminal() {
            NodeKind::Terminal
        } else if untried.is_empty() {
            NodeKind::Dead
        } else {
            NodeKind::Interior
        };
        self.nodes.push(Node {
            state,
            kind,
            visits: 0,
            return_sum: 0.0,
            children: Vec::new(),
            untried,
            cached: None,
        });
        self.nodes.len() - 1
    }

    /// Selection + expansion: returns the path and the operator prefix.
    fn select(&mut self) -> (Vec<usize>, Vec<Operator>) {
        let mut path = vec![0usize];
        let mut seq = Vec::new();
        let mut ix = 0usize;
        loop {
            match self.nodes[ix].kind {
                NodeKind::Terminal | NodeKind::Dead => return (path, seq),
                NodeKind::Interior => {}
            }
            if !self.nodes[ix].untried.is_empty() {
                let ops: Vec<Operator> = self.nodes[ix].untried.iter().map(|&(_, op)| op).collect();
                let pick = pick_preferred(&ops, &self.ctx, self.cfg.guided, &mut self.rng);
                let (rank, op) = self.nodes[ix].untried.remove(pick);
                let child_state = strips::apply(&self.nodes[ix].state, op, self.ctx.catalog)
                    .expect("untried operators are applicable by construction");
                let child = self.make_node(child_state);
                self.nodes[ix].children.push((op, child, rank));
                path.push(child);
                seq.push(op);
                return (path, seq);
            }
            if self.nodes[ix].children.is_empty() {
                // Interior node whose operators were all consumed into dead
                // children; nothing to descend into.
                return (path, seq);
            }
            let chosen = match self.cfg.search_method {
                SearchMethod::Random => self.rng.gen_range(0..self.nodes[ix].children.len()),
                SearchMethod::Mcts => {
                    let parent_visits = self.nodes[ix].visits;
                    let mut best_ix = 0usize;
                    let mut best_score = f64::NEG_INFINITY;
                    let mut best_rank = u32::MAX;
                    for (k, &(_, child, rank)) in self.nodes[ix].children.iter().enumerate() {
                        let c = &self.nodes[child];
                        let score = uct_score(parent_visits, c.visits, c.return_sum, self.cfg);
                        // Ties break toward the lowest operator index.
                        if score > best_score || (score == best_score && rank < best_rank) {
                            best_score = score;
                            best_ix = k;
                            best_rank = rank;
                        }
                    }
                    best_ix
                }
            };
            let (op, child, _) = self.nodes[ix].children[chosen];
            path.push(child);
            seq.push(op);
            ix = child;
        }
    }

    fn rollout(&mut self, mut state: StripsState, seq: &mut Vec<Operator>) -> bool {
        while !state.is_terminal() {
            let ops = filtered_operators(&state, &self.ctx);
            if ops.is_empty() {
                return false;
            }
            let pick = pick_preferred(&ops, &self.ctx, self.cfg.guided, &mut self.rng);
            let op = ops[pick];
            state = strips::apply(&state, op, self.ctx.catalog).expect("filtered ops apply");
            seq.push(op);
        }
        true
    }

    fn step(&mut self) -> StepOutcome {
        let (path, mut seq) = self.select();
        let leaf = *path.last().unwrap();

        let scored = if let Some((reward, feasible)) = self.nodes[leaf].cached {
            Scored {
                reward,
                feasible,
                ..Scored::failure()
            }
        } else {
            let complete = match self.nodes[leaf].kind {
                NodeKind::Terminal => true,
                NodeKind::Dead => false,
                NodeKind::Interior => {
                    let state = self.nodes[leaf].state.clone();
                    self.rollout(state, &mut seq)
                }
            };
            let scored = if complete {
                score_sequence(
                    &seq,
                    self.ctx.catalog,
                    &self.ctx.table,
                    self.ctx.observation,
                    self.cfg,
                )
            } else {
                Scored::failure()
            };
            if self.nodes[leaf].kind != NodeKind::Interior {
                self.nodes[leaf].cached = Some((scored.reward, scored.feasible));
            }
            scored
        };

        for &ix in &path {
            self.nodes[ix].visits += 1;
            self.nodes[ix].return_sum += scored.reward;
        }

        let mut success = None;
        if scored.feasible {
            if let Some(solve) = scored.solve {
                if scored.all_matched {
                    success = Some((seq.clone(), solve));
                } else if self.best.as_ref().is_none_or(|b| scored.reward > b.reward) {
                    self.best = Some(BestCandidate {
                        reward: scored.reward,
                        sequence: seq.clone(),
                        solve,
                    });
                }
            }
        }
        StepOutcome {
            path,
            reward: scored.reward,
            feasible: scored.feasible,
            sequence_len: seq.len(),
            success,
        }
    }
}

fn build_result(
    sequence: Vec<Operator>,
    solve: &PoseSolve,
    reward: f64,
    rollouts_used: u64,
    success: bool,
    catalog: &Catalog,
    layout: &Layout,
) -> PlanResult {
    let [ox, oy] = layout.place_offset;
    let steps = sequence
        .iter()
        .filter(|op| op.is_placement())
        .map(|op| {
            let id = catalog.get(op.actor()).id;
            let solved = solve.poses[&id];
            PlanStep {
                id,
                pick: layout.picks[&id],
                place: Pose {
                    pos: Vec3::new(solved.pos.x + ox, solved.pos.y + oy, solved.pos.z),
                    rot: solved.rot,
                },
                grasp_axis: None,
            }
        })
        .collect();
    PlanResult {
        success,
        reward,
        rollouts_used,
        steps,
        solved_poses: solve.poses.clone(),
        operator_sequence: sequence,
    }
}

/// Runs the search and additionally returns the per-rollout trace.
pub fn plan_traced(
    catalog: &Catalog,
    table: Rect,
    observation: &Observation,
    layout: &Layout,
    cfg: &SearchConfig,
) -> Result<(PlanResult, Vec<RolloutRecord>), PlanError> {
    cfg.validate()?;
    for id in catalog.ids() {
        if !layout.picks.contains_key(&id) {
            return Err(PlanError::MissingPickPose(id));
        }
    }
    let ctx = PlanContext::new(catalog, table, observation, cfg.epsilon)?;
    let mut search = Search::new(ctx, cfg)?;
    let mut trace = Vec::new();

    for rollout in 1..=cfg.rollout_budget {
        let outcome = search.step();
        trace.push(RolloutRecord {
            rollout,
            reward: outcome.reward,
            feasible: outcome.feasible,
            sequence_len: outcome.sequence_len,
        });
        if let Some((sequence, solve)) = outcome.success {
            // All visible objects matched: both reward modes read 1.
            let result = build_result(sequence, &solve, 1.0, rollout, true, catalog, layout);
            return Ok((result, trace));
        }
    }

    match search.best.take() {
        Some(best) => {
            let result = build_result(
                best.sequence,
                &best.solve,
                best.reward,
                cfg.rollout_budget,
                false,
                catalog,
                layout,
            );
            Ok((result, trace))
        }
        None => Err(PlanError::NoFeasiblePlan),
    }
}

/// Plans an assembly for the observed structure.
pub fn plan(
    catalog: &Catalog,
    table: Rect,
    observation: &Observation,
    layout: &Layout,
    cfg: &SearchConfig,
) -> Result<PlanResult, PlanError> {
    plan_traced(catalog, table, observation, layout, cfg).map(|(result, _)| result)
}

/// Exhaustively enumerates every terminal sequence reachable through the
/// operator filter and returns the best reward and one sequence achieving
/// it. Only intended for small catalogs; `max_sequences` caps the walk.
pub fn exhaustive_best(
    catalog: &Catalog,
    table: Rect,
    observation: &Observation,
    cfg: &SearchConfig,
    max_sequences: usize,
) -> Result<Option<(f64, Vec<Operator>)>, PlanError> {
    cfg.validate()?;
    let ctx = PlanContext::new(catalog, table, observation, cfg.epsilon)?;
    let mut best: Option<(f64, Vec<Operator>)> = None;
    let mut count = 0usize;
    let mut stack: Vec<(StripsState, Vec<Operator>)> =
        vec![(StripsState::initial(catalog.len()), Vec::new())];
    while let Some((state, seq)) = stack.pop() {
        if state.is_terminal() {
            count += 1;
            if count > max_sequences {
                break;
            }
            let scored = score_sequence(&seq, catalog, &table, observation, cfg);
            if scored.feasible && best.as_ref().is_none_or(|(r, _)| scored.reward > *r) {
                best = Some((scored.reward, seq));
            }
            continue;
        }
        for op in filtered_operators(&state, &ctx) {
            let next = strips::apply(&state, op, catalog).expect("filtered ops apply");
            let mut next_seq = seq.clone();
            next_seq.push(op);
            stack.push((next, next_seq));
        }
    }
    Ok(best)
}
