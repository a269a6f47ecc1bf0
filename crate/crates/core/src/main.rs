//! Experiment command line: observation generation, planning, seeded batch
//! runs, ablation matrices, plan verification and export.
//!
//! Exit codes: 0 on success, 1 when planning or verification fails (budget
//! exhausted, constraint violations), 2 on input errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stackplan::constraints;
use stackplan::formats::{
    load_plan, load_scenario, plan_to_file, write_json, ObservationFile, Scenario,
};
use stackplan::harness::{
    self, export_plan, margin_warnings, run_ablation_matrix, run_scenario_with, ExportFormat,
    RunOptions,
};
use stackplan::planner::{RewardMode, SearchConfig, SearchMethod, UctVariant};
use stackplan::qp;
use stackplan::scene::boxes_interpenetrate;

#[derive(Parser)]
#[command(
    name = "stackplan",
    about = "Assembly planning experiments for box stacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the vision stage on a scenario's scene and write the
    /// observation JSON.
    GenerateObservation(GenerateArgs),
    /// Plan a single seeded run of a scenario.
    Plan(PlanArgs),
    /// Run a scenario over a batch of seeds and write report JSON + CSV.
    Run(RunArgs),
    /// Run the search-method and penetration-removal ablation matrix.
    Ablate(AblateArgs),
    /// Re-check a stored plan: constraint residuals, KKT certificate,
    /// penetration freedom, support margins.
    Verify(VerifyArgs),
    /// Convert a stored plan to JSON or a human-readable step list.
    Export(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct SearchOverrides {
    #[arg(long)]
    exploration_c: Option<f64>,
    #[arg(long, value_enum)]
    reward_mode: Option<RewardModeArg>,
    #[arg(long)]
    guided: Option<bool>,
    #[arg(long)]
    rollout_budget: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    uct_variant: Option<UctVariantArg>,
    #[arg(long)]
    penetration_removal: Option<bool>,
    #[arg(long, value_enum)]
    search_method: Option<SearchMethodArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardModeArg {
    Dense,
    Sparse,
}

#[derive(Clone, Copy, ValueEnum)]
enum UctVariantArg {
    Standard,
    PaperLiteral,
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchMethodArg {
    Mcts,
    Random,
}

impl SearchOverrides {
    fn apply(&self, cfg: &mut SearchConfig) {
        if let Some(c) = self.exploration_c {
            cfg.exploration_c = c;
        }
        if let Some(m) = self.reward_mode {
            cfg.reward_mode = match m {
                RewardModeArg::Dense => RewardMode::Dense,
                RewardModeArg::Sparse => RewardMode::Sparse,
            };
        }
        if let Some(g) = self.guided {
            cfg.guided = g;
        }
        if let Some(b) = self.rollout_budget {
            cfg.rollout_budget = b;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(u) = self.uct_variant {
            cfg.uct_variant = match u {
                UctVariantArg::Standard => UctVariant::Standard,
                UctVariantArg::PaperLiteral => UctVariant::PaperLiteral,
            };
        }
        if let Some(p) = self.penetration_removal {
            cfg.penetration_removal = p;
        }
        if let Some(s) = self.search_method {
            cfg.search_method = match s {
                SearchMethodArg::Mcts => SearchMethod::Mcts,
                SearchMethodArg::Random => SearchMethod::Random,
            };
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the plan JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-rollout trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print the generated constraint system of the returned plan.
    #[arg(long)]
    dump_constraints: bool,
    #[command(flatten)]
    overrides: SearchOverrides,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Number of seeds (0..n).
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Explicit comma-separated seed list; overrides --seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Vec<u64>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Run seeds sequentially for bit-identical reproducibility checks.
    #[arg(long)]
    serial: bool,
    /// Also write one per-rollout trace CSV per seed.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    overrides: SearchOverrides,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// Seed that produced the plan (fixes the observation draw).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dump_constraints: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::StepList)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    StepList,
}

const EXIT_PLANNING_FAILURE: u8 = 1;
const EXIT_INPUT_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateObservation(args) => generate_observation(args),
        Command::Plan(args) => plan_cmd(args),
        Command::Run(args) => run_cmd(args),
        Command::Ablate(args) => ablate_cmd(args),
        Command::Verify(args) => verify_cmd(args),
        Command::Export(args) => export_cmd(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT_ERROR)
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn emit(out: &Option<PathBuf>, text: &str) -> std::io::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn generate_observation(args: GenerateArgs) -> CmdResult {
    let scenario = load_scenario(&args.scenario)?;
    let obs = harness::observation_for_seed(&scenario, args.seed)?;
    let text = serde_json::to_string_pretty(&ObservationFile::from(&obs))? + "\n";
    emit(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn scenario_with_overrides(
    path: &std::path::Path,
    overrides: &SearchOverrides,
) -> Result<Scenario, Box<dyn std::error::Error>> {
    let mut scenario = load_scenario(path)?;
    overrides.apply(&mut scenario.search);
    Ok(scenario)
}

fn plan_cmd(args: PlanArgs) -> CmdResult {
    let scenario = scenario_with_overrides(&args.scenario, &args.overrides)?;
    let output = run_scenario_with(
        &scenario,
        &scenario.search.clone(),
        &[args.seed],
        RunOptions {
            serial: true,
            collect_trace: args.trace.is_some(),
        },
    )?;
    if let Some(path) = &args.trace {
        std::fs::write(path, harness::trace_to_csv(&output.traces[0].1))?;
    }
    let record = &output.report.records[0];
    match &output.plans[0].1 {
        Some(plan) => {
            if args.dump_constraints {
                let sys = constraints::stability_constraints(
                    &plan.operator_sequence,
                    &scenario.scene.catalog,
                    &scenario.scene.table,
                )?;
                eprint!("{}", sys.render(&scenario.scene.catalog));
            }
            let text =
                serde_json::to_string_pretty(&plan_to_file(plan, &scenario.scene.catalog))? + "\n";
            emit(&args.out, &text)?;
            eprintln!(
                "seed {}: success={} reward={:.3} rollouts={} wall={:.1}ms",
                record.seed, plan.success, plan.reward, plan.rollouts_used, record.wall_ms
            );
            if plan.success {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_PLANNING_FAILURE))
            }
        }
        None => {
            eprintln!(
                "seed {}: no feasible sequence found within budget",
                record.seed
            );
            Ok(ExitCode::from(EXIT_PLANNING_FAILURE))
        }
    }
}

fn seed_vec(seeds: u64, seed_list: &[u64]) -> Vec<u64> {
    if seed_list.is_empty() {
        (0..seeds).collect()
    } else {
        seed_list.to_vec()
    }
}

fn run_cmd(args: RunArgs) -> CmdResult {
    let scenario = scenario_with_overrides(&args.scenario, &args.overrides)?;
    let seeds = seed_vec(args.seeds, &args.seed_list);
    let opts = RunOptions {
        serial: args.serial,
        collect_trace: args.trace,
    };
    let output = run_scenario_with(&scenario, &scenario.search.clone(), &seeds, opts)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_json(&args.out_dir.join("report.json"), &output.report)?;
    std::fs::write(args.out_dir.join("report.csv"), output.report.to_csv())?;
    for (seed, trace) in &output.traces {
        std::fs::write(
            args.out_dir.join(format!("trace_seed{seed}.csv")),
            harness::trace_to_csv(trace),
        )?;
    }
    let a = &output.report.aggregates;
    println!(
        "{}: success {:.0}% | rollouts {:.1}+-{:.1} (median {:.1}) | reward/rollout {:.4}",
        scenario.name,
        a.success_rate_pct,
        a.rollouts.mean,
        a.rollouts.std,
        a.rollouts.median,
        a.avg_reward_per_rollout.mean,
    );
    if (a.success_rate_pct - 100.0).abs() < 1e-9 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_PLANNING_FAILURE))
    }
}

fn ablate_cmd(args: AblateArgs) -> CmdResult {
    let scenario = load_scenario(&args.scenario)?;
    let seeds = seed_vec(args.seeds, &[]);
    let report = run_ablation_matrix(
        &scenario,
        &seeds,
        RunOptions {
            serial: args.serial,
            collect_trace: false,
        },
    )?;
    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(args.out_dir.join("ablation.txt"), report.render_text())?;
    std::fs::write(args.out_dir.join("ablation.csv"), report.to_csv())?;
    write_json(&args.out_dir.join("ablation.json"), &report)?;
    print!("{}", report.render_text());
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(args: VerifyArgs) -> CmdResult {
    let scenario = load_scenario(&args.scenario)?;
    let catalog = &scenario.scene.catalog;
    let plan = load_plan(&args.plan, catalog)?;
    let observation = harness::observation_for_seed(&scenario, args.seed)?;

    let sys = constraints::stability_constraints(
        &plan.operator_sequence,
        catalog,
        &scenario.scene.table,
    )?;
    if args.dump_constraints {
        eprint!("{}", sys.render(catalog));
    }
    let xy: Vec<[f64; 2]> = (0..catalog.len())
        .map(|ix| {
            let p = plan.solved_poses[&catalog.get(ix).id];
            [p.pos.x, p.pos.y]
        })
        .collect();

    let mut ok = true;
    let residual = sys.max_residual(&xy);
    let residual_ok = residual <= 1e-6;
    ok &= residual_ok;
    println!("constraint residual: {residual:.3e} {}", pass(residual_ok));

    let mut penetrating = 0usize;
    for a in 0..catalog.len() {
        for b in (a + 1)..catalog.len() {
            let (pa, pb) = (catalog.get(a), catalog.get(b));
            let (qa, qb) = (plan.solved_poses[&pa.id], plan.solved_poses[&pb.id]);
            if boxes_interpenetrate(pa, &qa, pb, &qb, 1e-6) {
                penetrating += 1;
            }
        }
    }
    let pen_ok = penetrating == 0;
    ok &= pen_ok;
    println!("interpenetrating pairs: {penetrating} {}", pass(pen_ok));

    let solve = constraints::solve_with_penetration_removal(
        &plan.operator_sequence,
        catalog,
        &scenario.scene.table,
        &observation,
        scenario.search.penetration_removal,
    )?;
    let kkt_ok = match &solve.qp {
        Some(sol) if sol.is_optimal() => {
            let problem =
                constraints::build_qp(&solve.system, catalog, &observation, &scenario.scene.table);
            let report = qp::check_kkt(&problem, &sol.values, &sol.duals);
            println!(
                "kkt residual: {:.3e} (stationarity {:.1e}, primal {:.1e}, dual {:.1e}, compl {:.1e}) {}",
                report.max_residual(),
                report.stationarity,
                report.primal_feasibility,
                report.dual_feasibility,
                report.complementarity,
                pass(report.within(qp::KKT_TOL))
            );
            report.within(qp::KKT_TOL)
        }
        _ => {
            println!("kkt residual: unavailable (re-solve infeasible) FAIL");
            false
        }
    };
    ok &= kkt_ok;

    match margin_warnings(&plan, catalog, &scenario.scene.table, 0.005) {
        Ok(warnings) if warnings.is_empty() => println!("support margins: all >= 5 mm PASS"),
        Ok(warnings) => {
            for w in warnings {
                println!(
                    "support margin warning: object {} sits {:.1} mm from a support edge",
                    w.id,
                    w.margin * 1e3
                );
            }
        }
        Err(e) => println!("support margins: not evaluable ({e})"),
    }

    if ok {
        println!("verification PASSED");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verification FAILED");
        Ok(ExitCode::from(EXIT_PLANNING_FAILURE))
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn export_cmd(args: ExportArgs) -> CmdResult {
    let scenario = load_scenario(&args.scenario)?;
    let plan = load_plan(&args.plan, &scenario.scene.catalog)?;
    let format = match args.format {
        FormatArg::Json => ExportFormat::Json,
        FormatArg::StepList => ExportFormat::StepList,
    };
    let text = export_plan(&plan, &scenario.scene.catalog, format);
    emit(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}
