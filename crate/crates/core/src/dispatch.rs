//! Disaggregation of a feeder-level reactive power request into per-DER
//! setpoints via a sensitivity-weighted linear program.
//!
//! The decision vector X = (t_r, Y_set per VV unit, q per PQ unit, Y per PV
//! unit) is optimized against the eliminated voltage model: the substation
//! scale is pinned, substation phase flows are kept balanced, node voltages
//! stay inside a band, limited lines stay within their reactive ratings,
//! every unit respects its capability circle, and (when the aggregate curve
//! has nonzero gain) the total substation reactive flow tracks the curve.
//! The objective weights each decision entry by one minus its normalized
//! substation-flow sensitivity, so effective units move first.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::feeder::{DerMode, DerUnit, FeederModel};
use crate::lindist::{ColGroup, LinearSystem, RowGroup};
use crate::lp::{self, LinearProgram, LpStatus, Row, SimplexOptions, INF};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("voltage band is empty: y_low {y_low} is not below y_high {y_high}")]
    BadBand { y_low: f64, y_high: f64 },
    #[error("DER {id}: |p_g| = {p_g} exceeds s_rating = {s_rating}; no reactive capability")]
    Capability { id: String, p_g: f64, s_rating: f64 },
    #[error("mode map names unknown DER {id}")]
    UnknownDer { id: String },
    #[error(transparent)]
    Lp(#[from] lp::LpError),
    #[error("solver failed: {detail}")]
    Solver { detail: String },
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

/// How DER operating modes are assigned before assembly.
#[derive(Clone, Debug)]
pub enum ModeRule {
    UniformPq,
    UniformPv,
    UniformVv,
    /// Keep the modes recorded in the model.
    FromModel,
    /// Explicit per-DER assignment by id; unlisted DERs keep their mode.
    Map(BTreeMap<String, DerMode>),
}

/// Settings for one dispatch run.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub mode_rule: ModeRule,
    /// Squared-voltage band applied to every phase-node.
    pub y_low: f64,
    pub y_high: f64,
    /// Allowed substation reactive spread between any two phases.
    pub epsilon: f64,
    /// Measured squared substation voltage scale; pins t_r.
    pub y0: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode_rule: ModeRule::FromModel,
            y_low: 0.9025,
            y_high: 1.1025,
            epsilon: 0.03,
            y0: 0.9025,
        }
    }
}

/// Droop gain that reaches full capability 0.1 pu of voltage (about 0.2 in
/// squared voltage) below the setpoint.
pub fn default_droop_gain(der: &DerUnit) -> f64 {
    -2.0 * der.q_capability() / 0.2
}

/// Returns a copy of the model with DER modes reassigned per the rule.
pub fn apply_mode_rule(model: &FeederModel, rule: &ModeRule) -> Result<FeederModel, DispatchError> {
    let mut out = model.clone();
    let to_vv = |d: &mut DerUnit| {
        d.mode = DerMode::Vv;
        if d.k_q.map_or(true, |k| k == 0.0) {
            d.k_q = Some(default_droop_gain(d));
        }
    };
    match rule {
        ModeRule::FromModel => {}
        ModeRule::UniformPq => out.ders.iter_mut().for_each(|d| d.mode = DerMode::Pq),
        ModeRule::UniformPv => out.ders.iter_mut().for_each(|d| d.mode = DerMode::Pv),
        ModeRule::UniformVv => out.ders.iter_mut().for_each(to_vv),
        ModeRule::Map(map) => {
            for (id, mode) in map {
                let Some(d) = out.ders.iter_mut().find(|d| &d.id == id) else {
                    return Err(DispatchError::UnknownDer { id: id.clone() });
                };
                match mode {
                    DerMode::Vv => to_vv(d),
                    other => d.mode = *other,
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Problem
// ---------------------------------------------------------------------------

/// Constraint family a row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    TrPin,
    PhaseBalance,
    VoltageBand,
    LineLimit,
    CapabilityPv,
    CapabilityVv,
    VppCurve,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::TrPin => "tr-pin",
            Tag::PhaseBalance => "phase-balance",
            Tag::VoltageBand => "voltage-band",
            Tag::LineLimit => "line-limit",
            Tag::CapabilityPv => "capability-pv",
            Tag::CapabilityVv => "capability-vv",
            Tag::VppCurve => "vpp-curve",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One ranged constraint row with its provenance.
#[derive(Clone, Debug)]
pub struct TaggedRow {
    pub coeffs: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub tag: Tag,
    pub label: String,
}

impl TaggedRow {
    pub fn is_equality(&self) -> bool {
        self.lo == self.hi
    }
}

/// The dispatch linear program over X.
#[derive(Clone, Debug)]
pub struct DispatchProblem {
    pub objective: Vec<f64>,
    pub var_lo: Vec<f64>,
    pub var_hi: Vec<f64>,
    pub rows: Vec<TaggedRow>,
    pub x_labels: Vec<String>,
    /// Phase-node labels in index order, for keying derived voltages.
    pub node_labels: Vec<String>,
    /// (id, mode) per DER in model order.
    pub ders: Vec<(String, DerMode)>,
    /// Model-order DER index controlled by each setpoint column of X.
    pub col_ders: Vec<usize>,
}

impl DispatchProblem {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Rows with pinned activity, as (coefficients, rhs, tag).
    pub fn equality_rows(&self) -> Vec<(&[f64], f64, Tag)> {
        self.rows
            .iter()
            .filter(|r| r.is_equality())
            .map(|r| (r.coeffs.as_slice(), r.lo, r.tag))
            .collect()
    }

    /// One-sided rows in g.x <= h form; ranged rows contribute both sides.
    pub fn inequality_rows(&self) -> Vec<(Vec<f64>, f64, Tag)> {
        let mut out = Vec::new();
        for r in &self.rows {
            if r.is_equality() {
                continue;
            }
            if r.hi.is_finite() {
                out.push((r.coeffs.clone(), r.hi, r.tag));
            }
            if r.lo.is_finite() {
                out.push((r.coeffs.iter().map(|v| -v).collect(), -r.lo, r.tag));
            }
        }
        out
    }

    /// The same program in plain ranged-row form for the solver.
    pub fn as_lp(&self) -> LinearProgram {
        LinearProgram {
            objective: self.objective.clone(),
            var_lo: self.var_lo.clone(),
            var_hi: self.var_hi.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| Row { coeffs: r.coeffs.clone(), lo: r.lo, hi: r.hi })
                .collect(),
        }
    }
}

/// Builds the dispatch program for an assembled system.
pub fn build_problem(
    sys: &LinearSystem,
    model: &FeederModel,
    cfg: &ScenarioConfig,
) -> Result<DispatchProblem, DispatchError> {
    if !(cfg.y_low < cfg.y_high) {
        return Err(DispatchError::BadBand { y_low: cfg.y_low, y_high: cfg.y_high });
    }
    for d in &model.ders {
        if d.p_g.abs() > d.s_rating {
            return Err(DispatchError::Capability {
                id: d.id.clone(),
                p_g: d.p_g,
                s_rating: d.s_rating,
            });
        }
    }

    let nx = sys.nx();
    let part = &sys.partition;
    let mut rows: Vec<TaggedRow> = Vec::new();

    // Substation scale pin.
    let mut pin = vec![0.0; nx];
    pin[0] = 1.0;
    rows.push(TaggedRow {
        coeffs: pin,
        lo: cfg.y0,
        hi: cfg.y0,
        tag: Tag::TrPin,
        label: "t_r pin".into(),
    });

    // Pairwise balance of substation per-phase reactive flows.
    let mut per_phase: [Vec<usize>; 3] = Default::default();
    for r in 0..sys.n_subst_rows {
        per_phase[sys.line_phases[r].phase.index()].push(r);
    }
    let present: Vec<usize> = (0..3).filter(|&p| !per_phase[p].is_empty()).collect();
    for (ai, &pa) in present.iter().enumerate() {
        for &pb in &present[ai + 1..] {
            let mut coeffs = vec![0.0; nx];
            let mut base = 0.0;
            for &r in &per_phase[pa] {
                for c in 0..nx {
                    coeffs[c] += sys.a_qflow[(r, c)];
                }
                base += sys.b_qflow[r];
            }
            for &r in &per_phase[pb] {
                for c in 0..nx {
                    coeffs[c] -= sys.a_qflow[(r, c)];
                }
                base -= sys.b_qflow[r];
            }
            rows.push(TaggedRow {
                coeffs,
                lo: -cfg.epsilon - base,
                hi: cfg.epsilon - base,
                tag: Tag::PhaseBalance,
                label: format!(
                    "phase balance {}-{}",
                    crate::feeder::Phase::ALL[pa].letter(),
                    crate::feeder::Phase::ALL[pb].letter()
                ),
            });
        }
    }

    // Voltage band on every non-pinned phase-node.
    for (r, &node) in sys.v_nodes.iter().enumerate() {
        rows.push(TaggedRow {
            coeffs: sys.a_v.row(r).iter().copied().collect(),
            lo: cfg.y_low - sys.b_v[r],
            hi: cfg.y_high - sys.b_v[r],
            tag: Tag::VoltageBand,
            label: format!("voltage band {}", sys.index.label(model, node)),
        });
    }

    // Reactive flow limits on rated lines.
    for (r, lph) in sys.line_phases.iter().enumerate() {
        let Some(qm) = model.lines[lph.line].q_max else {
            continue;
        };
        let q = qm[lph.phase.index()];
        if !q.is_finite() {
            continue;
        }
        let line = &model.lines[lph.line];
        rows.push(TaggedRow {
            coeffs: sys.a_qflow.row(r).iter().copied().collect(),
            lo: -q - sys.b_qflow[r],
            hi: q - sys.b_qflow[r],
            tag: Tag::LineLimit,
            label: format!("line limit {}-{}.{}", line.from, line.to, lph.phase),
        });
    }

    // PV capability: the implied reactive output stays on the circle.
    let pv_rows = sys.row_range(RowGroup::Pv);
    for (j, &di) in part.pv_ders.iter().enumerate() {
        let cap = model.ders[di].q_capability();
        let r = pv_rows.start + j;
        rows.push(TaggedRow {
            coeffs: sys.a_sys.row(r).iter().copied().collect(),
            lo: -cap - sys.b_sys[r],
            hi: cap - sys.b_sys[r],
            tag: Tag::CapabilityPv,
            label: format!("pv capability {}", model.ders[di].id),
        });
    }

    // VV capability: droop output stays on the circle.
    for (j, &di) in part.vv_ders.iter().enumerate() {
        let cap = model.ders[di].q_capability();
        rows.push(TaggedRow {
            coeffs: sys.a_qvv.row(j).iter().copied().collect(),
            lo: -cap - sys.b_qvv[j],
            hi: cap - sys.b_qvv[j],
            tag: Tag::CapabilityVv,
            label: format!("vv capability {}", model.ders[di].id),
        });
    }

    // Aggregate curve: total substation reactive flow tracks the droop of
    // the measured substation voltage around the curve setpoint.
    if model.vpp.k_q != 0.0 {
        let mut coeffs = vec![0.0; nx];
        let mut base = 0.0;
        for r in 0..sys.n_subst_rows {
            for c in 0..nx {
                coeffs[c] += sys.a_qflow[(r, c)];
            }
            base += sys.b_qflow[r];
        }
        let half_k = model.vpp.k_q / 2.0;
        coeffs[0] -= half_k * model.mean_substation_y0();
        let rhs = -half_k * model.vpp.y_set - base;
        rows.push(TaggedRow {
            coeffs,
            lo: rhs,
            hi: rhs,
            tag: Tag::VppCurve,
            label: "vpp curve".into(),
        });
    }

    // Bounds: t_r and the VV setpoints are free (the pin and the droop
    // capability rows constrain them), PQ commands live on the capability
    // interval, PV voltage pins live in the band.
    let mut var_lo = vec![-INF; nx];
    let mut var_hi = vec![INF; nx];
    for (j, &di) in part.pq_ders.iter().enumerate() {
        let cap = model.ders[di].q_capability();
        let c = sys.col_range(ColGroup::QPq).start + j;
        var_lo[c] = -cap;
        var_hi[c] = cap;
    }
    for j in 0..part.n_pv() {
        let c = sys.col_range(ColGroup::YPv).start + j;
        var_lo[c] = cfg.y_low;
        var_hi[c] = cfg.y_high;
    }

    let mut objective = vec![0.0; nx];
    for (j, c) in sys.col_range(ColGroup::YSet).enumerate() {
        objective[c] = sys.w1[j];
    }
    for (j, c) in sys.col_range(ColGroup::QPq).enumerate() {
        objective[c] = sys.w2[j];
    }
    for (j, c) in sys.col_range(ColGroup::YPv).enumerate() {
        objective[c] = sys.w3[j];
    }

    Ok(DispatchProblem {
        objective,
        var_lo,
        var_hi,
        rows,
        x_labels: sys.x_labels(model),
        node_labels: sys.node_labels(model),
        ders: model.ders.iter().map(|d| (d.id.clone(), d.mode)).collect(),
        col_ders: part
            .vv_ders
            .iter()
            .chain(&part.pq_ders)
            .chain(&part.pv_ders)
            .copied()
            .collect(),
    })
}

/// Re-evaluates every constraint row and variable bound at a point.
pub fn check_solution(problem: &DispatchProblem, x: &[f64], tol: f64) -> Result<(), String> {
    for (j, &v) in x.iter().enumerate() {
        if v < problem.var_lo[j] - tol * (1.0 + problem.var_lo[j].abs())
            || v > problem.var_hi[j] + tol * (1.0 + problem.var_hi[j].abs())
        {
            return Err(format!(
                "{} = {v} outside [{}, {}]",
                problem.x_labels[j], problem.var_lo[j], problem.var_hi[j]
            ));
        }
    }
    for row in &problem.rows {
        let act: f64 = row.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        if act < row.lo - tol * (1.0 + row.lo.abs()) || act > row.hi + tol * (1.0 + row.hi.abs()) {
            return Err(format!(
                "{} ({}): activity {act} outside [{}, {}]",
                row.label, row.tag, row.lo, row.hi
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Solution
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DispatchStatus {
    Optimal,
    /// The elastic relaxation's largest irreducible violation.
    Infeasible { tag: Tag, label: String, violation: f64 },
    Unbounded { component: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct DispatchSolution {
    pub status: DispatchStatus,
    pub x: Vec<f64>,
    pub x_labels: Vec<String>,
    pub objective: f64,
    /// Squared voltage at every phase-node, index order.
    pub y_nodes: Vec<f64>,
    /// Phase-node labels aligned with `y_nodes`.
    pub node_labels: Vec<String>,
    /// Model-order DER index controlled by each setpoint column of X.
    pub col_ders: Vec<usize>,
    /// Predicted reactive output per DER id, model order.
    pub der_q: Vec<(String, f64)>,
    /// Droop outputs per VV DER, partition order.
    pub q_vv: Vec<f64>,
    /// Commands per PQ DER, partition order.
    pub q_pq: Vec<f64>,
    /// Implied reactive output per PV DER, partition order.
    pub q_pv: Vec<f64>,
    /// Substation reactive flow per phase (consumption-positive).
    pub substation_q: BTreeMap<String, f64>,
    pub substation_q_total: f64,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    /// Wall-clock seconds spent in the solver.
    pub solve_time: f64,
}

impl DispatchSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == DispatchStatus::Optimal
    }
}

/// Solves a dispatch program with default solver settings.
pub fn solve(problem: &DispatchProblem, sys: &LinearSystem) -> Result<DispatchSolution, DispatchError> {
    solve_with(problem, sys, &SimplexOptions::default())
}

/// Solves a dispatch program and derives the network quantities at X.
pub fn solve_with(
    problem: &DispatchProblem,
    sys: &LinearSystem,
    opts: &SimplexOptions,
) -> Result<DispatchSolution, DispatchError> {
    let lp_prob = problem.as_lp();
    let start = Instant::now();
    let lps = lp::solve_lp(&lp_prob, opts)?;
    let solve_time = start.elapsed().as_secs_f64();

    let status = match &lps.status {
        LpStatus::Optimal => DispatchStatus::Optimal,
        LpStatus::Infeasible { violations } => {
            let mut worst = violations[0];
            for &(row, v) in violations {
                if v > worst.1 {
                    worst = (row, v);
                }
            }
            let row = &problem.rows[worst.0];
            DispatchStatus::Infeasible {
                tag: row.tag,
                label: row.label.clone(),
                violation: worst.1,
            }
        }
        LpStatus::Unbounded { var } => {
            let component = if *var < problem.n_vars() {
                problem.x_labels[*var].clone()
            } else if *var < problem.n_vars() + problem.rows.len() {
                format!("row '{}'", problem.rows[*var - problem.n_vars()].label)
            } else {
                format!("internal column {var}")
            };
            DispatchStatus::Unbounded { component }
        }
        LpStatus::IterationLimit => {
            return Err(DispatchError::Solver { detail: "pivot budget exhausted".into() })
        }
        LpStatus::Numerical { detail } => {
            return Err(DispatchError::Solver { detail: detail.clone() })
        }
    };

    let x = DVector::from_column_slice(&lps.x);
    let y_nodes: Vec<f64> = sys.eval_y(&x).iter().copied().collect();
    let q_vv: Vec<f64> = sys.eval_qvv(&x).iter().copied().collect();
    let q_pq: Vec<f64> = sys
        .col_range(ColGroup::QPq)
        .map(|c| x[c])
        .collect();
    let pv_rows = sys.row_range(RowGroup::Pv);
    let q_pv: Vec<f64> = (pv_rows.start..pv_rows.end)
        .map(|r| sys.a_sys.row(r).transpose().dot(&x) + sys.b_sys[r])
        .collect();

    let flows = sys.eval_qflow(&x);
    let mut substation_q = BTreeMap::new();
    for r in 0..sys.n_subst_rows {
        *substation_q
            .entry(sys.line_phases[r].phase.letter().to_string())
            .or_insert(0.0) += flows[r];
    }
    let substation_q_total = substation_q.values().sum();

    // Group vectors are in column order; col_ders scatters them back onto
    // model-order DER slots.
    let mut der_q: Vec<(String, f64)> = problem
        .ders
        .iter()
        .map(|(id, _)| (id.clone(), 0.0))
        .collect();
    for (k, &di) in problem.col_ders.iter().enumerate() {
        let n_vv = q_vv.len();
        let n_pq = q_pq.len();
        der_q[di].1 = if k < n_vv {
            q_vv[k]
        } else if k < n_vv + n_pq {
            q_pq[k - n_vv]
        } else {
            q_pv[k - n_vv - n_pq]
        };
    }

    Ok(DispatchSolution {
        status,
        x: lps.x,
        x_labels: problem.x_labels.clone(),
        objective: lps.objective,
        y_nodes,
        node_labels: problem.node_labels.clone(),
        col_ders: problem.col_ders.clone(),
        der_q,
        q_vv,
        q_pq,
        q_pv,
        substation_q,
        substation_q_total,
        duals: lps.duals,
        reduced_costs: lps.reduced_costs,
        iterations: lps.iterations,
        solve_time,
    })
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// One actionable instruction for a DER.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerCommand {
    pub der_id: String,
    pub bus: String,
    pub phase: String,
    pub mode: String,
    /// Voltage setpoint (pu) for VV and PV units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_set: Option<f64>,
    /// Reactive power command (pu) for PQ units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

/// Translates an optimal solution into per-DER commands in model order.
///
/// `model` must be the same mode-assigned model the system was built from.
pub fn extract_commands(sol: &DispatchSolution, model: &FeederModel) -> Vec<DerCommand> {
    assert_eq!(
        1 + sol.col_ders.len(),
        sol.x.len(),
        "solution does not match the model's DER census"
    );
    assert_eq!(
        sol.col_ders.len(),
        model.ders.len(),
        "solution does not match the model's DER census"
    );
    let mut slot = vec![0usize; model.ders.len()];
    for (k, &di) in sol.col_ders.iter().enumerate() {
        slot[di] = 1 + k;
    }

    model
        .ders
        .iter()
        .enumerate()
        .map(|(di, d)| {
            let idx = slot[di];
            let (v_set, q) = match d.mode {
                DerMode::Vv | DerMode::Pv => (Some(sol.x[idx].sqrt()), None),
                DerMode::Pq => (None, Some(sol.x[idx])),
            };
            DerCommand {
                der_id: d.id.clone(),
                bus: d.bus.clone(),
                phase: d.phase.letter().to_string(),
                mode: d.mode.as_str().to_string(),
                v_set,
                q,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
