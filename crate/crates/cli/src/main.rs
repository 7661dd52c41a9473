//! Command-line front end for the dispatch toolkit: validate feeder files,
//! dump the assembled linear model, solve dispatch programs, and benchmark
//! the linear predictions against the nonlinear sweep solver.
//!
//! Standard output carries human-readable tables; machine-format documents
//! go to `--out`. Identical inputs and flags produce byte-identical machine
//! output: wall-clock times are only reported under `--timing`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use derdispatch::bench::{self, BenchError, ErrorReport};
use derdispatch::dispatch::{
    self, apply_mode_rule, build_problem, extract_commands, DerCommand, DispatchError,
    DispatchStatus, ModeRule, ScenarioConfig,
};
use derdispatch::feeder::{self, DerMode, FeederError, FeederModel};
use derdispatch::lindist::{
    assemble_system, build_index, build_partition, LinearSystem, LindistError,
};
use derdispatch::lp::SimplexOptions;
use derdispatch::oracle::{PfOptions, PowerFlowSolution};

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

/// Validation or configuration problem in the inputs or flags.
const EXIT_INVALID: u8 = 1;
/// The feeder file is missing or cannot be parsed.
const EXIT_PARSE: u8 = 2;
/// The dispatch program has no feasible point.
const EXIT_INFEASIBLE: u8 = 3;
/// A solver gave up: pivot budget, numerics, or sweep divergence.
const EXIT_SOLVER: u8 = 4;
/// `bench --check` found a metric outside its accepted band.
const EXIT_BAND: u8 = 5;

// ---------------------------------------------------------------------------
// Accepted bands for `bench --check`
// ---------------------------------------------------------------------------

/// Largest tolerated per-node gap between predicted and swept voltage (pu).
const MAX_VOLTAGE_ERROR_PU: f64 = 0.02;
/// Largest tolerated per-scenario voltage L1 metric (%).
const MAX_L1_VOLTAGE_PCT: f64 = 1.0;
/// Largest tolerated reactive L1 metric (%) for the pv and vv scenarios.
const MAX_L1_REACTIVE_PCT: f64 = 12.0;
/// Allowed fractional miss of the aggregate curve's substation target.
const MAX_CURVE_MISS_FRAC: f64 = 0.10;
/// Dispatch solve budget (s), enforced under `--check --timing`.
const MAX_SOLVE_SECONDS: f64 = 0.5;

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "derdispatch", version, about = "Reactive power dispatch for DER fleets on unbalanced radial feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print progress detail to standard error.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a feeder file against every model invariant.
    Validate {
        /// Feeder file (JSON).
        feeder: PathBuf,
    },
    /// Assemble the linear voltage model and dump its matrices.
    Assemble {
        feeder: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Solve one dispatch program and emit per-DER commands.
    Dispatch {
        feeder: PathBuf,
        /// Scenario selector: pq, pv, vv, mixed, or map=<file>.
        #[arg(long, default_value = "mixed")]
        scenario: String,
        #[command(flatten)]
        out: OutputArgs,
        #[command(flatten)]
        tols: TolArgs,
        /// Report the wall-clock solve time.
        #[arg(long)]
        timing: bool,
    },
    /// Run the four standard scenarios and compare against the sweep solver.
    Bench {
        feeder: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        #[command(flatten)]
        tols: TolArgs,
        /// Exit 5 when any metric leaves its accepted band.
        #[arg(long)]
        check: bool,
        /// Report solve times and, with --check, enforce the solve budget.
        #[arg(long)]
        timing: bool,
    },
}

/// Machine-output destination and format.
#[derive(Args)]
struct OutputArgs {
    /// Write the machine-format document to this path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Machine output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

/// Tolerance and operating-band overrides shared by dispatch and bench.
#[derive(Args)]
struct TolArgs {
    /// Allowed substation reactive spread between any two phases (pu).
    #[arg(long)]
    eps: Option<f64>,
    /// LP feasibility tolerance.
    #[arg(long)]
    lp_tol: Option<f64>,
    /// Sweep convergence tolerance.
    #[arg(long)]
    pf_tol: Option<f64>,
    /// Lower edge of the voltage band (pu).
    #[arg(long)]
    v_min: Option<f64>,
    /// Upper edge of the voltage band (pu).
    #[arg(long)]
    v_max: Option<f64>,
    /// Substation voltage scale (pu).
    #[arg(long)]
    v0: Option<f64>,
}

impl TolArgs {
    fn scenario_config(&self, mode_rule: ModeRule) -> ScenarioConfig {
        let mut cfg = ScenarioConfig { mode_rule, ..Default::default() };
        if let Some(e) = self.eps {
            cfg.epsilon = e;
        }
        if let Some(v) = self.v_min {
            cfg.y_low = v * v;
        }
        if let Some(v) = self.v_max {
            cfg.y_high = v * v;
        }
        if let Some(v) = self.v0 {
            cfg.y0 = v * v;
        }
        cfg
    }

    fn simplex(&self) -> SimplexOptions {
        let mut opts = SimplexOptions::default();
        if let Some(t) = self.lp_tol {
            opts.tol_feas = t;
        }
        opts
    }

    fn pf_options(&self, y0: f64) -> PfOptions {
        let mut opts = PfOptions { y0_scale: y0, ..Default::default() };
        if let Some(t) = self.pf_tol {
            opts.tol = t;
        }
        opts
    }
}

// ---------------------------------------------------------------------------
// Failure plumbing
// ---------------------------------------------------------------------------

/// A terminal failure carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

/// Loads and validates a feeder file, mapping failures to exit codes.
fn load(path: &Path) -> Result<FeederModel, Failure> {
    feeder::load_feeder(path).map_err(|e| {
        let code = match &e {
            FeederError::Invalid(_) => EXIT_INVALID,
            _ => EXIT_PARSE,
        };
        fail(code, format!("{}: {e}", path.display()))
    })
}

/// Builds the eliminated linear system for the model's recorded modes.
fn assemble(model: &FeederModel) -> Result<LinearSystem, Failure> {
    let index = build_index(model);
    let partition = build_partition(model, &index).map_err(assembly_failure)?;
    assemble_system(model, &index, &partition).map_err(assembly_failure)
}

fn assembly_failure(e: LindistError) -> Failure {
    fail(EXIT_INVALID, format!("assembly: {e}"))
}

fn dispatch_failure(e: DispatchError) -> Failure {
    let code = match &e {
        DispatchError::Lp(_) | DispatchError::Solver { .. } => EXIT_SOLVER,
        _ => EXIT_INVALID,
    };
    fail(code, format!("dispatch: {e}"))
}

fn bench_failure(e: BenchError) -> Failure {
    let code = match &e {
        BenchError::Dispatch { source, .. } => match source {
            DispatchError::Lp(_) | DispatchError::Solver { .. } => EXIT_SOLVER,
            _ => EXIT_INVALID,
        },
        BenchError::NotOptimal { status: DispatchStatus::Infeasible { .. }, .. } => {
            EXIT_INFEASIBLE
        }
        BenchError::NotOptimal { .. } | BenchError::Oracle { .. } => EXIT_SOLVER,
        BenchError::Model { .. } => EXIT_INVALID,
        BenchError::NodeSetMismatch { .. } | BenchError::DerSetMismatch { .. } => EXIT_SOLVER,
    };
    fail(code, format!("bench: {e}"))
}

// ---------------------------------------------------------------------------
// Scenario selection
// ---------------------------------------------------------------------------

/// Parses pq, pv, vv, mixed, or map=<file>.
fn parse_mode_rule(selector: &str) -> Result<ModeRule, Failure> {
    match selector {
        "pq" => Ok(ModeRule::UniformPq),
        "pv" => Ok(ModeRule::UniformPv),
        "vv" => Ok(ModeRule::UniformVv),
        "mixed" => Ok(ModeRule::FromModel),
        other => match other.strip_prefix("map=") {
            Some(path) => load_mode_map(Path::new(path)),
            None => Err(fail(
                EXIT_INVALID,
                format!("unknown scenario '{other}'; use pq, pv, vv, mixed, or map=<file>"),
            )),
        },
    }
}

/// Reads a JSON object of DER id to mode name ("pq", "pv", or "vv").
fn load_mode_map(path: &Path) -> Result<ModeRule, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(EXIT_PARSE, format!("cannot read {}: {e}", path.display())))?;
    let raw: BTreeMap<String, String> = serde_json::from_str(&text)
        .map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (id, mode) in raw {
        let Some(m) = DerMode::parse(&mode) else {
            return Err(fail(
                EXIT_INVALID,
                format!("{}: DER {id}: unknown mode '{mode}'", path.display()),
            ));
        };
        map.insert(id, m);
    }
    Ok(ModeRule::Map(map))
}

// ---------------------------------------------------------------------------
// Output documents
// ---------------------------------------------------------------------------

/// Dump of every assembled matrix, with a manifest of names and shapes.
#[derive(Serialize)]
struct MatrixDump {
    n_nodes: usize,
    n_vars: usize,
    n_subst_rows: usize,
    node_labels: Vec<String>,
    x_labels: Vec<String>,
    manifest: Vec<MatrixInfo>,
    matrices: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct MatrixInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize)]
struct DispatchDoc<'a> {
    scenario: &'a str,
    status: &'a DispatchStatus,
    objective: f64,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    solve_time: Option<f64>,
    substation_q: &'a BTreeMap<String, f64>,
    substation_q_total: f64,
    /// Predicted voltage magnitude (pu) per phase-node.
    node_voltages: Vec<(String, f64)>,
    commands: &'a [DerCommand],
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    scenario: &'a str,
    max_voltage_error: f64,
    l1_voltage_pct: f64,
    l1_reactive_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    solve_time: Option<f64>,
    per_node_voltage_error: &'a [(String, f64)],
    per_der_reactive_error: &'a [(String, f64)],
}

fn to_json_pretty<T: Serialize>(doc: &T) -> String {
    let mut text =
        serde_json::to_string_pretty(doc).expect("document serialization cannot fail");
    text.push('\n');
    text
}

/// Writes the machine document when `--out` was given.
fn write_machine(
    out: &OutputArgs,
    render: impl FnOnce(Format) -> String,
) -> Result<(), Failure> {
    let Some(path) = &out.out else { return Ok(()) };
    std::fs::write(path, render(out.format))
        .map_err(|e| fail(EXIT_INVALID, format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn manifest_table(manifest: &[MatrixInfo]) -> String {
    let mut out = format!("{:<10} {:>6} {:>6}\n", "matrix", "rows", "cols");
    for m in manifest {
        out.push_str(&format!("{:<10} {:>6} {:>6}\n", m.name, m.rows, m.cols));
    }
    out
}

fn manifest_csv(manifest: &[MatrixInfo]) -> String {
    let mut out = String::from("matrix,rows,cols\n");
    for m in manifest {
        out.push_str(&format!("{},{},{}\n", m.name, m.rows, m.cols));
    }
    out
}

fn commands_table(cmds: &[DerCommand]) -> String {
    let mut out = format!(
        "{:<12} {:<8} {:<5} {:<4} {:>12} {:>12}\n",
        "der", "bus", "phase", "mode", "v_set", "q"
    );
    for c in cmds {
        out.push_str(&format!(
            "{:<12} {:<8} {:<5} {:<4} {:>12} {:>12}\n",
            c.der_id,
            c.bus,
            c.phase,
            c.mode,
            fmt_opt(c.v_set),
            fmt_opt(c.q)
        ));
    }
    out
}

fn commands_csv(scenario: &str, cmds: &[DerCommand]) -> String {
    let mut out = String::from("scenario,der,bus,phase,mode,v_set,q\n");
    for c in cmds {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            scenario,
            c.der_id,
            c.bus,
            c.phase,
            c.mode,
            c.v_set.map_or(String::new(), |v| v.to_string()),
            c.q.map_or(String::new(), |v| v.to_string()),
        ));
    }
    out
}

/// One row per scenario; the solve column appears only under `--timing`.
fn report_table(reports: &[ErrorReport], timing: bool) -> String {
    let mut out = format!(
        "{:<10} {:>14} {:>10} {:>10}",
        "scenario", "max dV (pu)", "V L1 (%)", "Q L1 (%)"
    );
    if timing {
        out.push_str(&format!(" {:>10}", "solve (s)"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:>14.6} {:>10.4} {:>10.4}",
            r.scenario, r.max_voltage_error, r.l1_voltage_pct, r.l1_reactive_pct
        ));
        if timing {
            out.push_str(&format!(" {:>10.4}", r.solve_time));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Matrix dump
// ---------------------------------------------------------------------------

fn mat(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn col(v: &DVector<f64>) -> Vec<Vec<f64>> {
    v.iter().map(|&x| vec![x]).collect()
}

fn row(v: &RowDVector<f64>) -> Vec<Vec<f64>> {
    vec![v.iter().copied().collect()]
}

fn dump_system(sys: &LinearSystem, model: &FeederModel) -> MatrixDump {
    let mut manifest = Vec::new();
    let mut matrices = BTreeMap::new();
    {
        let mut put = |name: &str, rows: Vec<Vec<f64>>| {
            let (r, c) = (rows.len(), rows.first().map_or(0, Vec::len));
            manifest.push(MatrixInfo { name: name.into(), rows: r, cols: c });
            matrices.insert(name.to_string(), rows);
        };
        put("m", mat(&sys.m));
        put("m_inv", mat(&sys.m_inv));
        put("flow", mat(&sys.flow));
        put("r_eq", mat(&sys.r_eq));
        put("x_eq", mat(&sys.x_eq));
        put("a_y", mat(&sys.a_y));
        put("b_y", col(&sys.b_y));
        put("a_sys", mat(&sys.a_sys));
        put("b_sys", col(&sys.b_sys));
        put("a_v", mat(&sys.a_v));
        put("b_v", col(&sys.b_v));
        put("a_qvv", mat(&sys.a_qvv));
        put("b_qvv", col(&sys.b_qvv));
        put("a_qg", mat(&sys.a_qg));
        put("b_qg", col(&sys.b_qg));
        put("a_qflow", mat(&sys.a_qflow));
        put("b_qflow", col(&sys.b_qflow));
        put("w1", row(&sys.w1));
        put("w2", row(&sys.w2));
        put("w3", row(&sys.w3));
        put("y0_vec", col(&sys.y0_vec));
        put("p_l_eff", col(&sys.p_l_eff));
        put("q_l_eff", col(&sys.q_l_eff));
        put("p_g_vec", col(&sys.p_g_vec));
        put("kq_diag", col(&sys.kq_diag));
    }
    MatrixDump {
        n_nodes: sys.n(),
        n_vars: sys.nx(),
        n_subst_rows: sys.n_subst_rows,
        node_labels: sys.node_labels(model),
        x_labels: sys.x_labels(model),
        manifest,
        matrices,
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let model = load(path)?;
    println!(
        "ok: {} buses, {} lines, {} loads, {} DER units",
        model.buses.len(),
        model.lines.len(),
        model.loads.len(),
        model.ders.len()
    );
    Ok(())
}

fn cmd_assemble(path: &Path, out: &OutputArgs, verbose: bool) -> Result<(), Failure> {
    let model = load(path)?;
    let sys = assemble(&model)?;
    let dump = dump_system(&sys, &model);
    if verbose {
        eprintln!(
            "{} phase-nodes, {} variables, {} matrices",
            dump.n_nodes,
            dump.n_vars,
            dump.manifest.len()
        );
    }
    print!("{}", manifest_table(&dump.manifest));
    write_machine(out, |fmt| match fmt {
        Format::Json => to_json_pretty(&dump),
        Format::Csv => manifest_csv(&dump.manifest),
        Format::Table => manifest_table(&dump.manifest),
    })
}

fn cmd_dispatch(
    path: &Path,
    selector: &str,
    out: &OutputArgs,
    tols: &TolArgs,
    timing: bool,
    verbose: bool,
) -> Result<(), Failure> {
    let model = load(path)?;
    let rule = parse_mode_rule(selector)?;
    let scenario = bench::scenario_id(&rule);
    let cfg = tols.scenario_config(rule);
    let scenario_model = apply_mode_rule(&model, &cfg.mode_rule).map_err(dispatch_failure)?;
    let sys = assemble(&scenario_model)?;
    let problem = build_problem(&sys, &scenario_model, &cfg).map_err(dispatch_failure)?;
    if verbose {
        eprintln!(
            "{} phase-nodes, {} variables, {} constraint rows",
            sys.n(),
            sys.nx(),
            problem.rows.len()
        );
    }
    let sol = dispatch::solve_with(&problem, &sys, &tols.simplex()).map_err(dispatch_failure)?;
    match &sol.status {
        DispatchStatus::Optimal => {}
        DispatchStatus::Infeasible { tag, label, violation } => {
            return Err(fail(
                EXIT_INFEASIBLE,
                format!(
                    "infeasible: {} constraint '{label}' violated by {violation:.3e}",
                    tag.as_str()
                ),
            ));
        }
        DispatchStatus::Unbounded { component } => {
            return Err(fail(EXIT_SOLVER, format!("unbounded along {component}")));
        }
    }
    let commands = extract_commands(&sol, &scenario_model);

    println!("scenario     {scenario}");
    println!("status       optimal");
    println!("objective    {:.6}", sol.objective);
    println!("iterations   {}", sol.iterations);
    if timing {
        println!("solve time   {:.4} s", sol.solve_time);
    }
    let subst: Vec<String> =
        sol.substation_q.iter().map(|(p, q)| format!("{p}:{q:.6}")).collect();
    println!("substation q {} total:{:.6}", subst.join(" "), sol.substation_q_total);
    println!();
    print!("{}", commands_table(&commands));

    let doc = DispatchDoc {
        scenario,
        status: &sol.status,
        objective: sol.objective,
        iterations: sol.iterations,
        solve_time: timing.then_some(sol.solve_time),
        substation_q: &sol.substation_q,
        substation_q_total: sol.substation_q_total,
        node_voltages: sol
            .node_labels
            .iter()
            .cloned()
            .zip(sol.y_nodes.iter().map(|y| y.sqrt()))
            .collect(),
        commands: &commands,
    };
    write_machine(out, |fmt| match fmt {
        Format::Json => to_json_pretty(&doc),
        Format::Csv => commands_csv(scenario, &commands),
        Format::Table => commands_table(&commands),
    })
}

fn cmd_bench(
    path: &Path,
    out: &OutputArgs,
    tols: &TolArgs,
    check: bool,
    timing: bool,
    verbose: bool,
) -> Result<(), Failure> {
    let model = load(path)?;
    let lp_opts = tols.simplex();
    let mut reports: Vec<ErrorReport> = Vec::new();
    let mut failed: Vec<String> = Vec::new();

    for rule in
        [ModeRule::UniformPq, ModeRule::UniformPv, ModeRule::UniformVv, ModeRule::FromModel]
    {
        let cfg = tols.scenario_config(rule);
        let pf_opts = tols.pf_options(cfg.y0);
        let (sol, pf, report) =
            bench::run_scenario_with(&model, &cfg, &lp_opts, &pf_opts).map_err(bench_failure)?;
        if verbose {
            eprintln!(
                "scenario {}: {} pivots, {} sweep iterations",
                report.scenario, sol.iterations, pf.iterations
            );
        }
        if check {
            collect_band_failures(&model, &cfg, &pf, &report, timing, &mut failed);
        }
        reports.push(report);
    }

    print!("{}", report_table(&reports, timing));
    let docs: Vec<ReportDoc> = reports
        .iter()
        .map(|r| ReportDoc {
            scenario: &r.scenario,
            max_voltage_error: r.max_voltage_error,
            l1_voltage_pct: r.l1_voltage_pct,
            l1_reactive_pct: r.l1_reactive_pct,
            solve_time: timing.then_some(r.solve_time),
            per_node_voltage_error: &r.per_node_voltage_error,
            per_der_reactive_error: &r.per_der_reactive_error,
        })
        .collect();
    write_machine(out, |fmt| match fmt {
        Format::Json => to_json_pretty(&docs),
        Format::Csv => bench::render_csv(&reports),
        Format::Table => report_table(&reports, timing),
    })?;

    if check && !failed.is_empty() {
        for f in &failed {
            eprintln!("band violation: {f}");
        }
        return Err(fail(EXIT_BAND, format!("{} accuracy band(s) violated", failed.len())));
    }
    Ok(())
}

/// Appends one line per metric outside its accepted band.
fn collect_band_failures(
    model: &FeederModel,
    cfg: &ScenarioConfig,
    pf: &PowerFlowSolution,
    report: &ErrorReport,
    timing: bool,
    failed: &mut Vec<String>,
) {
    let s = report.scenario.as_str();
    if report.max_voltage_error > MAX_VOLTAGE_ERROR_PU {
        failed.push(format!(
            "{s}: max voltage error {:.4} pu > {MAX_VOLTAGE_ERROR_PU}",
            report.max_voltage_error
        ));
    }
    if report.l1_voltage_pct > MAX_L1_VOLTAGE_PCT {
        failed.push(format!(
            "{s}: voltage L1 {:.3} % > {MAX_L1_VOLTAGE_PCT}",
            report.l1_voltage_pct
        ));
    }
    match s {
        "pq" => {
            if report.l1_reactive_pct != 0.0 {
                failed.push(format!(
                    "{s}: reactive L1 {:.3e} % is not exactly 0",
                    report.l1_reactive_pct
                ));
            }
        }
        "pv" | "vv" => {
            if report.l1_reactive_pct > MAX_L1_REACTIVE_PCT {
                failed.push(format!(
                    "{s}: reactive L1 {:.3} % > {MAX_L1_REACTIVE_PCT}",
                    report.l1_reactive_pct
                ));
            }
        }
        _ => {}
    }
    if (s == "vv" || s == "mixed") && model.vpp.k_q != 0.0 {
        let target = model.vpp.k_q / 2.0 * (cfg.y0 - model.vpp.y_set);
        let measured = pf.substation_q_total();
        if (measured - target).abs() > MAX_CURVE_MISS_FRAC * target.abs() {
            failed.push(format!(
                "{s}: substation reactive {measured:.4} pu misses the curve target {target:.4} by more than {:.0} %",
                100.0 * MAX_CURVE_MISS_FRAC
            ));
        }
    }
    if timing && report.solve_time >= MAX_SOLVE_SECONDS {
        failed.push(format!(
            "{s}: dispatch solve took {:.3} s, budget {MAX_SOLVE_SECONDS}",
            report.solve_time
        ));
    }
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { feeder } => cmd_validate(feeder),
        Command::Assemble { feeder, out } => cmd_assemble(feeder, out, cli.verbose),
        Command::Dispatch { feeder, scenario, out, tols, timing } => {
            cmd_dispatch(feeder, scenario, out, tols, *timing, cli.verbose)
        }
        Command::Bench { feeder, out, tols, check, timing } => {
            cmd_bench(feeder, out, tols, *check, *timing, cli.verbose)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
