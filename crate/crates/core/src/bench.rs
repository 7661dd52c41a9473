//! Scenario runner and accuracy metrics.
//!
//! Runs the full pipeline (mode assignment, assembly, dispatch, nonlinear
//! validation) for a scenario and reduces the two solutions to the error
//! metrics used throughout: per-node voltage gaps between the linear
//! prediction and the sweep solver, and per-DER reactive gaps normalized by
//! the total realized reactive power.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{
    self, apply_mode_rule, build_problem, extract_commands, DispatchError, DispatchSolution,
    DispatchStatus, ModeRule, ScenarioConfig,
};
use crate::feeder::FeederModel;
use crate::lindist::{assemble_system, build_index, build_partition, LindistError};
use crate::lp::SimplexOptions;
use crate::oracle::{self, OracleError, PfOptions, PowerFlowSolution};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("scenario {scenario}: {source}")]
    Dispatch {
        scenario: String,
        #[source]
        source: DispatchError,
    },
    #[error("scenario {scenario}: dispatch ended {status:?}")]
    NotOptimal { scenario: String, status: DispatchStatus },
    #[error("scenario {scenario}: {source}")]
    Oracle {
        scenario: String,
        #[source]
        source: OracleError,
    },
    #[error("scenario {scenario}: {source}")]
    Model {
        scenario: String,
        #[source]
        source: LindistError,
    },
    #[error("node {node} is missing from the power flow solution")]
    NodeSetMismatch { node: String },
    #[error("DER {id} is missing from the power flow solution")]
    DerSetMismatch { id: String },
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Accuracy metrics for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub scenario: String,
    /// |sqrt(Y_linear) - |v|_oracle| per phase-node (pu).
    pub per_node_voltage_error: Vec<(String, f64)>,
    pub max_voltage_error: f64,
    /// 100 * sum(|dV|) / N.
    pub l1_voltage_pct: f64,
    /// |q_linear - q_oracle| per DER (pu).
    pub per_der_reactive_error: Vec<(String, f64)>,
    /// 100 * sum(|dq|) / sum(|q_oracle|); 0 when both sums vanish.
    pub l1_reactive_pct: f64,
    /// Wall-clock seconds of the dispatch solve.
    pub solve_time: f64,
}

/// Reduces a dispatch solution and a power flow run to error metrics.
pub fn compare_solutions(
    sol: &DispatchSolution,
    pf: &PowerFlowSolution,
) -> Result<ErrorReport, BenchError> {
    let mut per_node = Vec::with_capacity(sol.node_labels.len());
    let mut sum_v = 0.0;
    let mut max_v = 0.0f64;
    for (label, &y) in sol.node_labels.iter().zip(&sol.y_nodes) {
        let Some(v) = pf.voltages.get(label) else {
            return Err(BenchError::NodeSetMismatch { node: label.clone() });
        };
        let err = (y.sqrt() - v.norm()).abs();
        sum_v += err;
        max_v = max_v.max(err);
        per_node.push((label.clone(), err));
    }
    let n = per_node.len().max(1);

    let mut per_der = Vec::with_capacity(sol.der_q.len());
    let mut sum_dq = 0.0;
    let mut sum_q_oracle = 0.0;
    for (id, q_lin) in &sol.der_q {
        let Some(&q_orc) = pf.der_q.get(id) else {
            return Err(BenchError::DerSetMismatch { id: id.clone() });
        };
        let err = (q_lin - q_orc).abs();
        sum_dq += err;
        sum_q_oracle += q_orc.abs();
        per_der.push((id.clone(), err));
    }
    let l1_reactive_pct = if sum_dq == 0.0 {
        0.0
    } else {
        100.0 * sum_dq / sum_q_oracle
    };

    Ok(ErrorReport {
        scenario: String::new(),
        per_node_voltage_error: per_node,
        max_voltage_error: max_v,
        l1_voltage_pct: 100.0 * sum_v / n as f64,
        per_der_reactive_error: per_der,
        l1_reactive_pct,
        solve_time: sol.solve_time,
    })
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Stable scenario name for a mode rule.
pub fn scenario_id(rule: &ModeRule) -> &'static str {
    match rule {
        ModeRule::UniformPq => "pq",
        ModeRule::UniformPv => "pv",
        ModeRule::UniformVv => "vv",
        ModeRule::FromModel => "mixed",
        ModeRule::Map(_) => "map",
    }
}

/// The four standard scenarios at the default operating point.
pub fn default_scenarios() -> Vec<ScenarioConfig> {
    [ModeRule::UniformPq, ModeRule::UniformPv, ModeRule::UniformVv, ModeRule::FromModel]
        .into_iter()
        .map(|mode_rule| ScenarioConfig { mode_rule, ..Default::default() })
        .collect()
}

/// Runs mode assignment, assembly, dispatch, and nonlinear validation.
pub fn run_scenario(
    model: &FeederModel,
    cfg: &ScenarioConfig,
) -> Result<(DispatchSolution, PowerFlowSolution, ErrorReport), BenchError> {
    let pf_opts = PfOptions { y0_scale: cfg.y0, ..Default::default() };
    run_scenario_with(model, cfg, &SimplexOptions::default(), &pf_opts)
}

/// [`run_scenario`] with explicit solver settings.
pub fn run_scenario_with(
    model: &FeederModel,
    cfg: &ScenarioConfig,
    lp_opts: &SimplexOptions,
    pf_opts: &PfOptions,
) -> Result<(DispatchSolution, PowerFlowSolution, ErrorReport), BenchError> {
    let scenario = scenario_id(&cfg.mode_rule).to_string();
    let wrap_dispatch = |source| BenchError::Dispatch { scenario: scenario.clone(), source };
    let wrap_model = |source| BenchError::Model { scenario: scenario.clone(), source };

    let scenario_model = apply_mode_rule(model, &cfg.mode_rule).map_err(wrap_dispatch)?;
    let index = build_index(&scenario_model);
    let partition = build_partition(&scenario_model, &index).map_err(wrap_model)?;
    let sys = assemble_system(&scenario_model, &index, &partition).map_err(wrap_model)?;

    let problem = build_problem(&sys, &scenario_model, cfg).map_err(wrap_dispatch)?;
    let sol = dispatch::solve_with(&problem, &sys, lp_opts).map_err(wrap_dispatch)?;
    match &sol.status {
        DispatchStatus::Optimal => {}
        other => {
            return Err(BenchError::NotOptimal {
                scenario,
                status: other.clone(),
            })
        }
    }

    let commands = extract_commands(&sol, &scenario_model);
    let pf = oracle::solve_power_flow(&scenario_model, &commands, pf_opts)
        .map_err(|source| BenchError::Oracle { scenario: scenario.clone(), source })?;

    let mut report = compare_solutions(&sol, &pf)?;
    report.scenario = scenario;
    Ok((sol, pf, report))
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Aligned-column summary, one row per scenario.
pub fn render_table(reports: &[ErrorReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>14} {:>10} {:>10} {:>10}\n",
        "scenario", "max dV (pu)", "V L1 (%)", "Q L1 (%)", "solve (s)"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:>14.6} {:>10.4} {:>10.4} {:>10.4}\n",
            r.scenario, r.max_voltage_error, r.l1_voltage_pct, r.l1_reactive_pct, r.solve_time
        ));
    }
    out
}

/// Long-format CSV of every per-element error, for external plotting.
pub fn render_csv(reports: &[ErrorReport]) -> String {
    let mut out = String::from("metric,scenario,element,error\n");
    for r in reports {
        for (node, err) in &r.per_node_voltage_error {
            out.push_str(&format!("voltage,{},{},{}\n", r.scenario, node, err));
        }
        for (id, err) in &r.per_der_reactive_error {
            out.push_str(&format!("reactive,{},{},{}\n", r.scenario, id, err));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use num_complex::Complex64;
    use std::collections::BTreeMap;

    /// A power flow answer that mirrors a dispatch solution exactly.
    fn echo_power_flow(sol: &DispatchSolution) -> PowerFlowSolution {
        let voltages: BTreeMap<String, Complex64> = sol
            .node_labels
            .iter()
            .zip(&sol.y_nodes)
            .map(|(l, &y)| (l.clone(), Complex64::new(y.sqrt(), 0.0)))
            .collect();
        PowerFlowSolution {
            voltages,
            der_q: sol.der_q.iter().cloned().collect(),
            line_flows: BTreeMap::new(),
            line_currents: BTreeMap::new(),
            substation_p: BTreeMap::new(),
            substation_q: BTreeMap::new(),
            iterations: 1,
            converged: true,
            max_mismatch: 0.0,
            trace: Vec::new(),
        }
    }

    fn solved_two_bus() -> DispatchSolution {
        let model = fixtures::two_bus();
        let index = build_index(&model);
        let partition = build_partition(&model, &index).unwrap();
        let sys = assemble_system(&model, &index, &partition).unwrap();
        let cfg = ScenarioConfig { y0: 1.0, ..Default::default() };
        let problem = build_problem(&sys, &model, &cfg).unwrap();
        dispatch::solve(&problem, &sys).unwrap()
    }

    #[test]
    fn identical_inputs_give_a_zero_report() {
        let sol = solved_two_bus();
        let pf = echo_power_flow(&sol);
        let report = compare_solutions(&sol, &pf).unwrap();
        assert_eq!(report.max_voltage_error, 0.0);
        assert_eq!(report.l1_voltage_pct, 0.0);
        assert_eq!(report.l1_reactive_pct, 0.0);
    }

    #[test]
    fn single_offset_node_arithmetic() {
        let mut sol = solved_two_bus();
        // Widen to ten synthetic nodes, one off by 0.01 pu.
        sol.node_labels = (0..10).map(|i| format!("x{i}.a")).collect();
        sol.y_nodes = vec![1.0; 10];
        sol.der_q.clear();
        let mut pf = echo_power_flow(&sol);
        pf.voltages.insert("x3.a".into(), Complex64::new(0.99, 0.0));
        let report = compare_solutions(&sol, &pf).unwrap();
        assert!((report.max_voltage_error - 0.01).abs() < 1e-12);
        assert!((report.l1_voltage_pct - 0.1).abs() < 1e-9);
    }

    #[test]
    fn mismatched_node_sets_error() {
        let sol = solved_two_bus();
        let mut pf = echo_power_flow(&sol);
        pf.voltages.clear();
        match compare_solutions(&sol, &pf) {
            Err(BenchError::NodeSetMismatch { node }) => assert_eq!(node, "b1.a"),
            other => panic!("expected node mismatch, got {other:?}"),
        }
    }

    #[test]
    fn pq_scenario_reproduces_reactive_commands_exactly() {
        let model = fixtures::thirteen_bus();
        let cfg = ScenarioConfig { mode_rule: ModeRule::UniformPq, ..Default::default() };
        let (_, _, report) = run_scenario(&model, &cfg).unwrap();
        assert_eq!(report.scenario, "pq");
        assert_eq!(report.l1_reactive_pct, 0.0, "fixed-q injection is verbatim");
        assert!(report.per_der_reactive_error.iter().all(|(_, e)| *e == 0.0));
    }

    #[test]
    fn zero_load_scenario_has_zero_metrics() {
        let mut model = fixtures::two_bus();
        model.loads.clear();
        let cfg = ScenarioConfig { mode_rule: ModeRule::UniformPq, ..Default::default() };
        let (_, _, report) = run_scenario(&model, &cfg).unwrap();
        assert!(report.max_voltage_error < 1e-6);
        // One node, so the percentage metric is 100x the single error.
        assert!(report.l1_voltage_pct < 1e-4);
        assert!(report.l1_reactive_pct < 1e-6);
    }

    #[test]
    fn mixed_scenario_populates_all_groups() {
        let model = fixtures::thirteen_bus();
        let cfg = ScenarioConfig::default();
        let (sol, pf, report) = run_scenario(&model, &cfg).unwrap();
        assert_eq!(report.scenario, "mixed");
        assert_eq!(sol.q_vv.len(), 6);
        assert_eq!(sol.q_pq.len(), 10);
        assert_eq!(sol.q_pv.len(), 3);
        assert!(pf.converged);
        assert_eq!(report.per_der_reactive_error.len(), 19);
    }

    #[test]
    fn report_round_trips_through_json() {
        let model = fixtures::thirteen_bus();
        let cfg = ScenarioConfig { mode_rule: ModeRule::UniformVv, ..Default::default() };
        let (_, _, report) = run_scenario(&model, &cfg).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: ErrorReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn renderers_cover_every_row() {
        let model = fixtures::two_bus();
        let cfg = ScenarioConfig { mode_rule: ModeRule::UniformPq, y0: 1.0, ..Default::default() };
        let (_, _, report) = run_scenario(&model, &cfg).unwrap();
        let table = render_table(&[report.clone()]);
        assert!(table.contains("scenario"));
        assert!(table.contains("pq"));
        let csv = render_csv(&[report.clone()]);
        let rows = csv.lines().count();
        assert_eq!(
            rows,
            1 + report.per_node_voltage_error.len() + report.per_der_reactive_error.len()
        );
    }

    #[test]
    fn four_default_scenarios() {
        let ids: Vec<_> = default_scenarios()
            .iter()
            .map(|c| scenario_id(&c.mode_rule))
            .collect();
        assert_eq!(ids, ["pq", "pv", "vv", "mixed"]);
    }
}
