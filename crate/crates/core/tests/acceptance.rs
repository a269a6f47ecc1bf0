//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers.
//!
//! Run with `cargo test -p stackplan --test acceptance`.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use stackplan::constraints::{self, solve_with_penetration_removal};
use stackplan::formats::{load_scenario, Scenario};
use stackplan::harness::{self, median, run_scenario, run_scenario_with, RunOptions, RunOutput};
use stackplan::planner::{self, SearchConfig, SearchMethod};
use stackplan::qp::{self, LinearIneq, QpProblem};
use stackplan::scene::{
    boxes_interpenetrate, Catalog, Observation, PlanResult, Pose, PrimId, Primitive, Rect,
};
use stackplan::strips::{self, Operator, StripsState, Support};

const SEEDS: [u64; 20] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19,
];

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn load(name: &str) -> Scenario {
    load_scenario(&scenario_path(name)).expect("bundled scenario loads")
}

fn serial() -> RunOptions {
    RunOptions {
        serial: true,
        collect_trace: false,
    }
}

/// Checks a finished plan against its own constraint system: residual within
/// 1e-6 and no interpenetrating pair at 1e-6.
fn assert_plan_physical(plan: &PlanResult, catalog: &Catalog, table: &Rect) {
    let sys = constraints::stability_constraints(&plan.operator_sequence, catalog, table)
        .expect("plan sequence regenerates constraints");
    let xy: Vec<[f64; 2]> = (0..catalog.len())
        .map(|ix| {
            let p = plan.solved_poses[&catalog.get(ix).id];
            [p.pos.x, p.pos.y]
        })
        .collect();
    let residual = sys.max_residual(&xy);
    assert!(
        residual <= 1e-6,
        "constraint residual {residual} above 1e-6"
    );
    for a in 0..catalog.len() {
        for b in (a + 1)..catalog.len() {
            let (pa, pb) = (catalog.get(a), catalog.get(b));
            let (qa, qb) = (plan.solved_poses[&pa.id], plan.solved_poses[&pb.id]);
            assert!(
                !boxes_interpenetrate(pa, &qa, pb, &qb, 1e-6),
                "objects {} and {} interpenetrate",
                pa.id,
                pb.id
            );
        }
    }
}

fn c_guided() -> &'static RunOutput {
    static CELL: OnceLock<RunOutput> = OnceLock::new();
    CELL.get_or_init(|| {
        let scenario = load("c_analog");
        run_scenario(&scenario, &SEEDS, serial()).expect("c_analog guided batch")
    })
}

#[test]
fn criterion_1_fully_visible_single_rollout() {
    let scenario = load("a_analog");
    let start = Instant::now();
    let output = run_scenario(&scenario, &SEEDS, serial()).expect("a_analog batch");
    let elapsed = start.elapsed();
    for record in &output.report.records {
        assert!(record.success, "seed {} failed", record.seed);
        assert_eq!(
            record.rollouts_used, 1,
            "seed {} took >1 rollout",
            record.seed
        );
    }
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "took {elapsed:?}, budget is 1 s"
    );
    println!(
        "criterion 1 (fully visible, 20 seeds, exactly 1 rollout, {:.0} ms total): PASS",
        elapsed.as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_2_hidden_object_recovery() {
    let scenario_b = load("b_analog");
    let out_b = run_scenario(&scenario_b, &SEEDS, serial()).expect("b_analog batch");
    let out_c = c_guided();
    for (name, scenario, output) in [("B", &scenario_b, &out_b), ("C", &load("c_analog"), out_c)] {
        let hidden = scenario.scene.catalog.len()
            - harness::observation_for_seed(scenario, 0)
                .unwrap()
                .detections
                .len();
        assert_eq!(hidden, if name == "B" { 2 } else { 3 });
        for record in &output.report.records {
            assert!(record.success, "{name} seed {} failed", record.seed);
            assert!(record.rollouts_used <= 20_000);
            assert_eq!(record.reward, 1.0);
        }
        for (seed, plan) in &output.plans {
            let plan = plan
                .as_ref()
                .unwrap_or_else(|| panic!("{name} seed {seed} has no plan"));
            assert_plan_physical(plan, &scenario.scene.catalog, &scenario.scene.table);
        }
    }
    println!(
        "criterion 2 (hidden recovery: B 100% success, C 100% success, plans clean to 1e-6): PASS"
    );
}

#[test]
fn criterion_3_penetration_removal_ablation() {
    let scenario = load("overlap_pair");

    let mut disabled_cfg = scenario.search.clone();
    disabled_cfg.penetration_removal = false;
    let disabled = run_scenario_with(&scenario, &disabled_cfg, &SEEDS, serial()).unwrap();
    let catalog = &scenario.scene.catalog;
    let mut bad_seeds = 0usize;
    for (seed, plan) in &disabled.plans {
        let dirty = match plan {
            None => true,
            Some(plan) => {
                let a = catalog.get(0);
                let b = catalog.get(1);
                !plan.success
                    || boxes_interpenetrate(
                        a,
                        &plan.solved_poses[&a.id],
                        b,
                        &plan.solved_poses[&b.id],
                        1e-6,
                    )
            }
        };
        if dirty {
            bad_seeds += 1;
        }
        let _ = seed;
    }
    assert!(
        bad_seeds >= 1,
        "removal disabled must leave at least one interpenetrating or failed plan"
    );

    let enabled = run_scenario(&scenario, &SEEDS, serial()).unwrap();
    let mut successes = 0usize;
    for (seed, plan) in &enabled.plans {
        let plan = plan
            .as_ref()
            .unwrap_or_else(|| panic!("seed {seed} has no plan"));
        if plan.success {
            successes += 1;
            assert_plan_physical(plan, catalog, &scenario.scene.table);
        }
    }
    assert!(successes > 0);
    println!(
        "criterion 3 (removal off: {bad_seeds}/20 interpenetrating; removal on: {successes}/{successes} successful plans penetration-free): PASS"
    );
}

#[test]
fn criterion_4_guided_search_speedup() {
    let scenario = load("c_analog");
    let guided_median = median(
        &c_guided()
            .report
            .records
            .iter()
            .map(|r| r.rollouts_used as f64)
            .collect::<Vec<_>>(),
    );

    let mut unguided_cfg = scenario.search.clone();
    unguided_cfg.guided = false;
    let unguided = run_scenario_with(&scenario, &unguided_cfg, &SEEDS, serial()).unwrap();
    let unguided_median = unguided.report.aggregates.rollouts.median;

    let mut rs_cfg = scenario.search.clone();
    rs_cfg.search_method = SearchMethod::Random;
    let rs = run_scenario_with(&scenario, &rs_cfg, &SEEDS, serial()).unwrap();
    let rs_median = rs.report.aggregates.rollouts.median;

    assert!(
        guided_median < unguided_median,
        "guided median {guided_median} must beat unguided {unguided_median}"
    );
    assert!(
        guided_median <= rs_median,
        "guided MCTS median {guided_median} must not exceed guided random search {rs_median}"
    );
    println!(
        "criterion 4 (C-analog medians: guided {guided_median} < unguided {unguided_median}, guided <= random-search {rs_median}): PASS"
    );
}

/// Dense grid argmin over the feasible set, the independent oracle for the
/// QP solver.
fn grid_search(problem: &QpProblem, boxes: &[(f64, f64)], step: f64) -> Option<Vec<f64>> {
    let n = boxes.len();
    let counts: Vec<usize> = boxes
        .iter()
        .map(|(lo, hi)| ((hi - lo) / step).round() as usize + 1)
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut index = vec![0usize; n];
    loop {
        let x: Vec<f64> = (0..n)
            .map(|k| boxes[k].0 + step * index[k] as f64)
            .collect();
        if problem.max_violation(&x) <= 0.0 {
            let value = problem.objective(&x);
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, x));
            }
        }
        let mut k = 0;
        loop {
            if k == n {
                return best.map(|(_, x)| x);
            }
            index[k] += 1;
            if index[k] < counts[k] {
                break;
            }
            index[k] = 0;
            k += 1;
        }
    }
}

#[test]
fn criterion_5_qp_matches_grid_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    let mut worst_gap = 0.0f64;
    for case in 0..50 {
        let n = 1 + case % 4;
        let half = match n {
            1 => 0.05,
            2 => 0.04,
            3 => 0.015,
            _ => 0.01,
        };
        let boxes: Vec<(f64, f64)> = (0..n).map(|_| (-half, half)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let targets: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(-1.5 * half..1.5 * half))
            .collect();

        let mut rows = Vec::new();
        for k in 0..n {
            let mut lo = vec![0.0; n];
            lo[k] = -1.0;
            rows.push(LinearIneq {
                coeffs: lo,
                bound: half,
            });
            let mut hi = vec![0.0; n];
            hi[k] = 1.0;
            rows.push(LinearIneq {
                coeffs: hi,
                bound: half,
            });
        }
        // Extra random cuts anchored at an interior point so the feasible
        // set keeps an interior ball the grid can see.
        let anchor: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(-half / 2.0..half / 2.0))
            .collect();
        for _ in 0..(n - 1) {
            let coeffs: Vec<f64> = loop {
                let c: Vec<f64> = (0..n)
                    .map(|_| [-1.0, 0.0, 1.0][rng.gen_range(0..3)])
                    .collect();
                if c.iter().any(|&v| v != 0.0) {
                    break c;
                }
            };
            let margin = rng.gen_range(0.004..0.02);
            let bound = coeffs.iter().zip(&anchor).map(|(c, a)| c * a).sum::<f64>() + margin;
            rows.push(LinearIneq { coeffs, bound });
        }

        let problem = QpProblem::new(weights, targets, rows).unwrap();
        let solution = qp::solve(&problem);
        assert!(solution.is_optimal(), "case {case} not optimal");
        assert!(
            solution.kkt_residual <= qp::KKT_TOL,
            "case {case} kkt residual too large"
        );

        let grid = grid_search(&problem, &boxes, 1e-3).expect("grid finds a feasible point");
        for (k, (qp_val, grid_val)) in solution.values.iter().zip(&grid).enumerate() {
            let gap = (qp_val - grid_val).abs();
            worst_gap = worst_gap.max(gap);
            assert!(
                gap <= 2e-3,
                "case {case} variable {k} differs from grid by {gap}"
            );
        }
        assert!(problem.objective(&solution.values) <= problem.objective(&grid) + 1e-12);
    }
    println!(
        "criterion 5 (50 random QPs vs 1e-3 grid oracle, worst gap {worst_gap:.2e} <= 2e-3, KKT <= 1e-5): PASS"
    );
}

#[test]
fn criterion_6_exhaustive_search_equivalence() {
    let scenario = load("mini");
    assert!(scenario.scene.catalog.len() <= 4);
    let mut cfg = scenario.search.clone();
    cfg.rollout_budget = 2000;
    for &seed in &SEEDS {
        let observation = harness::observation_for_seed(&scenario, seed).unwrap();
        let (best_reward, _) = planner::exhaustive_best(
            &scenario.scene.catalog,
            scenario.scene.table,
            &observation,
            &cfg,
            1_000_000,
        )
        .unwrap()
        .expect("mini scenario has feasible sequences");
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        let plan = planner::plan(
            &scenario.scene.catalog,
            scenario.scene.table,
            &observation,
            &scenario.layout,
            &run_cfg,
        )
        .unwrap();
        assert_eq!(
            plan.reward, best_reward,
            "seed {seed}: MCTS reward {} vs exhaustive {best_reward}",
            plan.reward
        );
    }
    println!("criterion 6 (mini scenario: MCTS best reward equals exhaustive enumeration on 20 seeds): PASS");
}

#[test]
fn criterion_7_two_cube_separation_regression() {
    let catalog = Catalog::new(vec![
        Primitive::new(0, "cube", 0.06, 0.06, 0.06),
        Primitive::new(1, "cube", 0.06, 0.06, 0.06),
    ])
    .unwrap();
    let table = Rect::new(-0.4, -0.3, 0.4, 0.3);
    let mut obs = Observation::default();
    obs.detections
        .insert(PrimId(0), Pose::upright(0.0, 0.0, 0.03));
    obs.detections
        .insert(PrimId(1), Pose::upright(0.04, 0.0, 0.03));
    let seq = [
        Operator::PutOn {
            actor: 0,
            support: Support::Table,
        },
        Operator::PutOn {
            actor: 1,
            support: Support::Table,
        },
    ];
    let solve = solve_with_penetration_removal(&seq, &catalog, &table, &obs, true).unwrap();
    assert!(solve.feasible);
    let (xa, xb) = (solve.xy[0][0], solve.xy[1][0]);
    assert!((xa + 0.01).abs() <= 1e-9, "x_a = {xa}, want -0.01");
    assert!((xb - 0.05).abs() <= 1e-9, "x_b = {xb}, want 0.05");
    println!("criterion 7 (two-cube separation: x_a = {xa:.12}, x_b = {xb:.12}): PASS");
}

#[test]
fn criterion_8a_strips_invariant_fuzzing() {
    let mut rng = ChaCha12Rng::seed_from_u64(88);
    let mut sequences = 0usize;
    while sequences < 10_000 {
        let n = rng.gen_range(0..8usize);
        let catalog = Catalog::new(
            (0..n as u32)
                .map(|i| {
                    Primitive::new(
                        i,
                        "box",
                        rng.gen_range(0.02..0.12),
                        rng.gen_range(0.02..0.12),
                        rng.gen_range(0.02..0.1),
                    )
                })
                .collect(),
        )
        .unwrap();
        let mut state = StripsState::initial(n);
        let mut steps = 0usize;
        loop {
            let ops = strips::applicable_operators(&state, &catalog);
            assert!(ops.len() <= 4 * n);
            if state.is_terminal() {
                break;
            }
            assert!(!ops.is_empty());
            let op = ops[rng.gen_range(0..ops.len())];
            state = strips::apply(&state, op, &catalog).unwrap();
            state.check_invariants(&catalog).unwrap();
            steps += 1;
            assert!(steps <= 2 * n);
        }
        sequences += 1;
    }
    println!("criterion 8a (10,000 random operator sequences, no invariant violation): PASS");
}

#[test]
fn criterion_8b_bit_identical_reports() {
    let a = load("a_analog");
    let views: Vec<String> = (0..3)
        .map(|_| {
            run_scenario(&a, &SEEDS, serial())
                .unwrap()
                .report
                .deterministic_view()
        })
        .collect();
    assert_eq!(views[0], views[1]);
    assert_eq!(views[1], views[2]);

    let b = load("b_analog");
    let seeds = [3u64, 7];
    let views_b: Vec<String> = (0..3)
        .map(|_| {
            run_scenario(&b, &seeds, serial())
                .unwrap()
                .report
                .deterministic_view()
        })
        .collect();
    assert_eq!(views_b[0], views_b[1]);
    assert_eq!(views_b[1], views_b[2]);
    println!("criterion 8b (3 repeated runs produce bit-identical reports): PASS");
}

#[test]
fn criterion_8c_reward_bounds_on_random_sequences() {
    let mut rng = ChaCha12Rng::seed_from_u64(888);
    let table = Rect::new(-0.4, -0.3, 0.4, 0.3);
    let cfg = SearchConfig::default();
    for case in 0..1000 {
        let n = rng.gen_range(1..6usize);
        let catalog = Catalog::new(
            (0..n as u32)
                .map(|i| {
                    Primitive::new(
                        i,
                        "box",
                        rng.gen_range(0.03..0.1),
                        rng.gen_range(0.03..0.1),
                        rng.gen_range(0.02..0.08),
                    )
                })
                .collect(),
        )
        .unwrap();
        let mut obs = Observation::default();
        for i in 0..n {
            if i == 0 || rng.gen_bool(0.5) {
                obs.detections.insert(
                    PrimId(i as u32),
                    Pose::upright(
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.2..0.2),
                        rng.gen_range(0.01..0.25),
                    ),
                );
            }
        }
        let mut state = StripsState::initial(n);
        let mut seq = Vec::new();
        while !state.is_terminal() {
            let ops = strips::applicable_operators(&state, &catalog);
            let op = ops[rng.gen_range(0..ops.len())];
            state = strips::apply(&state, op, &catalog).unwrap();
            seq.push(op);
        }
        let scored = planner::score_sequence(&seq, &catalog, &table, &obs, &cfg);
        assert!(
            (0.0..=1.0).contains(&scored.dense) && (0.0..=1.0).contains(&scored.sparse),
            "case {case}: reward out of bounds"
        );
        assert!(
            scored.sparse <= scored.dense,
            "case {case}: sparse above dense"
        );
    }
    println!(
        "criterion 8c (1,000 random scored sequences: rewards in [0,1], sparse <= dense): PASS"
    );
}
