//! Linear feeder model assembly.
//!
//! Starting from a validated radial feeder this module builds the linearized
//! squared-voltage map with three-phase cross-coupling, partitions phase-nodes
//! by inverter control mode, eliminates the droop and voltage-pinned responses
//! into one affine map from the decision vector X = [t_r, Y_set, q_pq, Y_pv]
//! to node voltages and PV reactive output, derives the per-line reactive-flow
//! map, and computes the sensitivity weights used by the dispatch objective.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;

use nalgebra::linalg::FullPivLU;
use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;
use thiserror::Error;

use crate::feeder::{DerMode, FeederModel, Phase};

#[derive(Debug, Error)]
pub enum LindistError {
    #[error("model structure error: {0}")]
    Structure(String),
    #[error("ders {first} and {second} both sit on phase-node {node}; at most one der per phase-node")]
    DuplicateDerNode { first: String, second: String, node: String },
    #[error("der {id} sits on the substation bus; its output cannot be dispatched")]
    DerOnSubstation { id: String },
    #[error("{what} is singular (condition estimate {cond:.2e})")]
    Singular { what: String, cond: f64 },
    #[error("weight block {block} is singular: {hint}")]
    SingularWeightBlock { block: String, hint: String },
    #[error("K matrix must be {expected}x{expected}, got {rows}x{cols}")]
    KShape { expected: usize, rows: usize, cols: usize },
}

// ---------------------------------------------------------------------------
// Phase-node index
// ---------------------------------------------------------------------------

/// One served phase at a non-substation bus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PhaseNode {
    /// Position of the bus in `FeederModel::buses`.
    pub bus: usize,
    pub phase: Phase,
}

/// Deterministic enumeration of all non-substation phase-nodes: buses in file
/// order, phases a < b < c within a bus.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseNodeIndex {
    nodes: Vec<PhaseNode>,
    by_key: HashMap<(usize, Phase), usize>,
}

impl PhaseNodeIndex {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, k: usize) -> PhaseNode {
        self.nodes[k]
    }

    pub fn nodes(&self) -> &[PhaseNode] {
        &self.nodes
    }

    pub fn position(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.by_key.get(&(bus, phase)).copied()
    }

    /// Human-readable node name like "632.a".
    pub fn label(&self, model: &FeederModel, k: usize) -> String {
        let node = self.nodes[k];
        format!("{}.{}", model.buses[node.bus].id, node.phase)
    }

    pub fn labels(&self, model: &FeederModel) -> Vec<String> {
        (0..self.len()).map(|k| self.label(model, k)).collect()
    }
}

/// Builds the phase-node enumeration for a model.
pub fn build_index(model: &FeederModel) -> PhaseNodeIndex {
    let mut nodes = Vec::new();
    for (bi, bus) in model.buses.iter().enumerate() {
        if bus.is_substation {
            continue;
        }
        for phase in bus.phases.iter() {
            nodes.push(PhaseNode { bus: bi, phase });
        }
    }
    let by_key = nodes.iter().enumerate().map(|(k, n)| ((n.bus, n.phase), k)).collect();
    PhaseNodeIndex { nodes, by_key }
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

/// Rooted orientation of the radial graph.
struct Topology {
    substation: usize,
    /// Per bus: (parent bus, connecting line); None for the substation.
    parent: Vec<Option<(usize, usize)>>,
    /// Per bus: lines departing toward children.
    children: Vec<Vec<usize>>,
    /// Per line: the downstream endpoint.
    line_child: Vec<usize>,
}

fn build_topology(model: &FeederModel) -> Result<Topology, LindistError> {
    let pos = model.bus_positions();
    let substation = model
        .substation()
        .ok_or_else(|| LindistError::Structure("model has no substation bus".into()))?;
    let nb = model.buses.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nb];
    for (li, line) in model.lines.iter().enumerate() {
        let (Some(&f), Some(&t)) = (pos.get(line.from.as_str()), pos.get(line.to.as_str()))
        else {
            return Err(LindistError::Structure(format!(
                "line {} ({}-{}) references an unknown bus",
                li, line.from, line.to
            )));
        };
        adj[f].push((t, li));
        adj[t].push((f, li));
    }

    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nb];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nb];
    let mut line_child = vec![usize::MAX; model.lines.len()];
    let mut visited = vec![false; nb];
    let mut queue = std::collections::VecDeque::new();
    visited[substation] = true;
    queue.push_back(substation);
    while let Some(u) = queue.pop_front() {
        for &(v, li) in &adj[u] {
            if visited[v] {
                continue;
            }
            visited[v] = true;
            parent[v] = Some((u, li));
            children[u].push(li);
            line_child[li] = v;
            queue.push_back(v);
        }
    }
    if visited.iter().any(|v| !v) || line_child.contains(&usize::MAX) {
        return Err(LindistError::Structure(
            "graph is not a tree rooted at the substation".into(),
        ));
    }
    Ok(Topology { substation, parent, children, line_child })
}

// ---------------------------------------------------------------------------
// Base model
// ---------------------------------------------------------------------------

/// One carried phase of one line; identifies a row of the flow map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinePhase {
    /// Position of the line in `FeederModel::lines`.
    pub line: usize,
    pub phase: Phase,
}

/// Voltage-drop equivalents of the bare network, before mode partitioning.
///
/// With N phase-nodes there are exactly N line-phases, so `m` is square.
/// `m[k][l] = -1` if line-phase l feeds node k, `+1` for each line-phase
/// departing node k's bus on the same phase. `flow` aggregates downstream
/// injections into sending-end line flows, compounding per-line loss factors
/// along each path; at unit loss factors `flow == -m_inv`. The squared
/// voltage map is `Y = r_eq (p_g - p_l) + x_eq (q_g - q_l) + y0_vec`.
pub struct BaseModel {
    pub m: DMatrix<f64>,
    pub m_inv: DMatrix<f64>,
    pub r_eq: DMatrix<f64>,
    pub x_eq: DMatrix<f64>,
    pub flow: DMatrix<f64>,
    /// Flow rows in order: substation-rooted line-phases first.
    pub line_phases: Vec<LinePhase>,
    pub n_subst_rows: usize,
    pub y0_vec: DVector<f64>,
}

/// Builds incidence, path, and impedance-equivalent matrices.
pub fn build_base_model(
    model: &FeederModel,
    index: &PhaseNodeIndex,
) -> Result<BaseModel, LindistError> {
    let topo = build_topology(model)?;
    let n = index.len();

    let mut line_phases = Vec::with_capacity(n);
    let mut n_subst_rows = 0;
    for root_pass in [true, false] {
        for li in 0..model.lines.len() {
            let child = topo.line_child[li];
            let from_substation =
                topo.parent[child].map(|(p, _)| p == topo.substation).unwrap_or(false);
            if from_substation != root_pass {
                continue;
            }
            for phase in model.buses[child].phases.iter() {
                line_phases.push(LinePhase { line: li, phase });
                if root_pass {
                    n_subst_rows += 1;
                }
            }
        }
    }
    if line_phases.len() != n {
        return Err(LindistError::Structure(format!(
            "{} line-phases for {} phase-nodes; phases must narrow downstream",
            line_phases.len(),
            n
        )));
    }
    let col: HashMap<(usize, Phase), usize> =
        line_phases.iter().enumerate().map(|(c, lp)| ((lp.line, lp.phase), c)).collect();

    let mut m = DMatrix::zeros(n, n);
    for (k, node) in index.nodes().iter().enumerate() {
        let (_, pline) = topo.parent[node.bus].ok_or_else(|| {
            LindistError::Structure(format!(
                "bus {} has no parent line",
                model.buses[node.bus].id
            ))
        })?;
        m[(k, col[&(pline, node.phase)])] = -1.0;
        for &cl in &topo.children[node.bus] {
            if model.buses[topo.line_child[cl]].phases.contains(node.phase) {
                m[(k, col[&(cl, node.phase)])] = 1.0;
            }
        }
    }

    // Walk each node's path to the root: the path matrix marks membership,
    // the flow matrix compounds loss factors of every line from the flow row
    // down to the node.
    let mut m_inv = DMatrix::zeros(n, n);
    let mut flow = DMatrix::zeros(n, n);
    for (k, node) in index.nodes().iter().enumerate() {
        let mut cur = node.bus;
        let mut attenuation = 1.0;
        while let Some((pb, li)) = topo.parent[cur] {
            let c = col[&(li, node.phase)];
            m_inv[(c, k)] = -1.0;
            attenuation *= model.lines[li].loss_factor[node.phase.index()];
            flow[(c, k)] = attenuation;
            cur = pb;
        }
    }

    // Per-line cross-phase drop blocks: with delta the angle between phases,
    // the real part couples through r cos + x sin and the reactive part
    // through x cos - r sin.
    let mut r_tilde = DMatrix::zeros(n, n);
    let mut x_tilde = DMatrix::zeros(n, n);
    for (li, line) in model.lines.iter().enumerate() {
        let carried = model.buses[topo.line_child[li]].phases;
        for pi in carried.iter() {
            for pj in carried.iter() {
                let delta = pi.angle() - pj.angle();
                let (cd, sd) = (delta.cos(), delta.sin());
                let r = line.r[pi.index()][pj.index()];
                let x = line.x[pi.index()][pj.index()];
                r_tilde[(col[&(li, pi)], col[&(li, pj)])] = r * cd + x * sd;
                x_tilde[(col[&(li, pi)], col[&(li, pj)])] = x * cd - r * sd;
            }
        }
    }

    let u_path = -m_inv.transpose();
    let r_eq = (&u_path * &r_tilde * &flow) * 2.0;
    let x_eq = (&u_path * &x_tilde * &flow) * 2.0;

    let y0_vec = DVector::from_fn(n, |k, _| model.substation_y0[index.node(k).phase.index()]);

    Ok(BaseModel { m, m_inv, r_eq, x_eq, flow, line_phases, n_subst_rows, y0_vec })
}

// ---------------------------------------------------------------------------
// Mode partition
// ---------------------------------------------------------------------------

/// Assignment of every phase-node to exactly one control group.
///
/// Columns are ordered by phase-node index, so the partition is invariant to
/// the order DERs appear in the input file. `*_ders` holds, per column, the
/// position of the owning DER in `FeederModel::ders`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModePartition {
    pub id_vv: DMatrix<f64>,
    pub id_pq: DMatrix<f64>,
    pub id_pv: DMatrix<f64>,
    pub id_nan: DMatrix<f64>,
    pub vv_nodes: Vec<usize>,
    pub pq_nodes: Vec<usize>,
    pub pv_nodes: Vec<usize>,
    pub nan_nodes: Vec<usize>,
    pub vv_ders: Vec<usize>,
    pub pq_ders: Vec<usize>,
    pub pv_ders: Vec<usize>,
}

impl ModePartition {
    pub fn n_vv(&self) -> usize {
        self.vv_nodes.len()
    }

    pub fn n_pq(&self) -> usize {
        self.pq_nodes.len()
    }

    pub fn n_pv(&self) -> usize {
        self.pv_nodes.len()
    }

    pub fn n_nan(&self) -> usize {
        self.nan_nodes.len()
    }

    /// Node index of every row of the grouped system, vv then pq, pv, nan.
    pub fn grouped_nodes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(
            self.n_vv() + self.n_pq() + self.n_pv() + self.n_nan(),
        );
        out.extend_from_slice(&self.vv_nodes);
        out.extend_from_slice(&self.pq_nodes);
        out.extend_from_slice(&self.pv_nodes);
        out.extend_from_slice(&self.nan_nodes);
        out
    }
}

/// Groups phase-nodes by the control mode of the DER sitting on them.
pub fn build_partition(
    model: &FeederModel,
    index: &PhaseNodeIndex,
) -> Result<ModePartition, LindistError> {
    let pos = model.bus_positions();
    let n = index.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (di, der) in model.ders.iter().enumerate() {
        let bus = *pos.get(der.bus.as_str()).ok_or_else(|| {
            LindistError::Structure(format!("der {} references unknown bus {}", der.id, der.bus))
        })?;
        if model.buses[bus].is_substation {
            return Err(LindistError::DerOnSubstation { id: der.id.clone() });
        }
        let node = index.position(bus, der.phase).ok_or_else(|| {
            LindistError::Structure(format!(
                "der {} references missing phase-node {}.{}",
                der.id, der.bus, der.phase
            ))
        })?;
        if let Some(prev) = owner[node] {
            return Err(LindistError::DuplicateDerNode {
                first: model.ders[prev].id.clone(),
                second: der.id.clone(),
                node: index.label(model, node),
            });
        }
        owner[node] = Some(di);
    }

    let mut part = ModePartition {
        id_vv: DMatrix::zeros(0, 0),
        id_pq: DMatrix::zeros(0, 0),
        id_pv: DMatrix::zeros(0, 0),
        id_nan: DMatrix::zeros(0, 0),
        vv_nodes: Vec::new(),
        pq_nodes: Vec::new(),
        pv_nodes: Vec::new(),
        nan_nodes: Vec::new(),
        vv_ders: Vec::new(),
        pq_ders: Vec::new(),
        pv_ders: Vec::new(),
    };
    for node in 0..n {
        match owner[node] {
            Some(di) => match model.ders[di].mode {
                DerMode::Vv => {
                    part.vv_nodes.push(node);
                    part.vv_ders.push(di);
                }
                DerMode::Pq => {
                    part.pq_nodes.push(node);
                    part.pq_ders.push(di);
                }
                DerMode::Pv => {
                    part.pv_nodes.push(node);
                    part.pv_ders.push(di);
                }
            },
            None => part.nan_nodes.push(node),
        }
    }

    let id_of = |nodes: &[usize]| {
        let mut id = DMatrix::zeros(n, nodes.len());
        for (j, &node) in nodes.iter().enumerate() {
            id[(node, j)] = 1.0;
        }
        id
    };
    part.id_vv = id_of(&part.vv_nodes);
    part.id_pq = id_of(&part.pq_nodes);
    part.id_pv = id_of(&part.pv_nodes);
    part.id_nan = id_of(&part.nan_nodes);
    Ok(part)
}

// ---------------------------------------------------------------------------
// Linear system
// ---------------------------------------------------------------------------

/// One matrix per control group.
#[derive(Clone, Debug, PartialEq)]
pub struct PerMode<T> {
    pub vv: T,
    pub pq: T,
    pub pv: T,
    pub nan: T,
}

/// Row groups of the mode-ordered system: voltages at vv/pq/nan nodes and
/// reactive output at pv nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowGroup {
    Vv,
    Pq,
    Pv,
    Nan,
}

/// Column groups of the decision vector X = [t_r, Y_set, q_pq, Y_pv].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColGroup {
    Tr,
    YSet,
    QPq,
    YPv,
}

/// Assembly parameters beyond the model itself.
#[derive(Clone, Debug, Default)]
pub struct AssemblyOptions {
    /// Voltage-dependent load correction matrix; identity when absent.
    pub k_matrix: Option<DMatrix<f64>>,
}

/// The assembled affine model around one operating point.
///
/// All responses are captured as affine maps of the decision vector
/// X = [t_r, Y_set (vv), q_pq, Y_pv]: `a_y`/`b_y` give squared voltages at
/// every phase-node in index order, `a_sys`/`b_sys` the same information with
/// rows regrouped (vv, pq, pv, nan) and pv rows replaced by PV reactive
/// output, `a_v`/`b_v` only the voltage rows (non-PV nodes), `a_qvv`/`b_qvv`
/// the droop outputs, `a_qg`/`b_qg` per-node DER reactive injections, and
/// `a_qflow`/`b_qflow` sending-end line flows with substation rows first.
pub struct LinearSystem {
    pub index: PhaseNodeIndex,
    pub partition: ModePartition,
    pub line_phases: Vec<LinePhase>,
    pub n_subst_rows: usize,
    pub m: DMatrix<f64>,
    pub m_inv: DMatrix<f64>,
    pub flow: DMatrix<f64>,
    pub r_eq: DMatrix<f64>,
    pub x_eq: DMatrix<f64>,
    pub r_star: PerMode<DMatrix<f64>>,
    pub x_star: PerMode<DMatrix<f64>>,
    /// Column-regrouped equivalents: [vv | pq | pv | nan].
    pub r_r_eq: DMatrix<f64>,
    pub x_r_eq: DMatrix<f64>,
    pub y0_vec: DVector<f64>,
    /// Constant-power parts of the loads, aggregated per node.
    pub p_l_eff: DVector<f64>,
    pub q_l_eff: DVector<f64>,
    /// DER active injections, aggregated per node.
    pub p_g_vec: DVector<f64>,
    pub k_matrix: DMatrix<f64>,
    /// Droop gains aligned with the vv columns.
    pub kq_diag: DVector<f64>,
    pub a_sys: DMatrix<f64>,
    pub b_sys: DVector<f64>,
    pub a_y: DMatrix<f64>,
    pub b_y: DVector<f64>,
    pub a_v: DMatrix<f64>,
    pub b_v: DVector<f64>,
    /// Node index per row of `a_v`.
    pub v_nodes: Vec<usize>,
    pub a_qvv: DMatrix<f64>,
    pub b_qvv: DVector<f64>,
    pub a_qg: DMatrix<f64>,
    pub b_qg: DVector<f64>,
    pub a_qflow: DMatrix<f64>,
    pub b_qflow: DVector<f64>,
    pub w1: RowDVector<f64>,
    pub w2: RowDVector<f64>,
    pub w3: RowDVector<f64>,
    pub d: f64,
}

impl LinearSystem {
    pub fn n(&self) -> usize {
        self.index.len()
    }

    pub fn nx(&self) -> usize {
        1 + self.partition.n_vv() + self.partition.n_pq() + self.partition.n_pv()
    }

    pub fn col_range(&self, g: ColGroup) -> Range<usize> {
        let (n_vv, n_pq, n_pv) =
            (self.partition.n_vv(), self.partition.n_pq(), self.partition.n_pv());
        match g {
            ColGroup::Tr => 0..1,
            ColGroup::YSet => 1..1 + n_vv,
            ColGroup::QPq => 1 + n_vv..1 + n_vv + n_pq,
            ColGroup::YPv => 1 + n_vv + n_pq..1 + n_vv + n_pq + n_pv,
        }
    }

    pub fn row_range(&self, g: RowGroup) -> Range<usize> {
        let (n_vv, n_pq, n_pv, n_nan) = (
            self.partition.n_vv(),
            self.partition.n_pq(),
            self.partition.n_pv(),
            self.partition.n_nan(),
        );
        match g {
            RowGroup::Vv => 0..n_vv,
            RowGroup::Pq => n_vv..n_vv + n_pq,
            RowGroup::Pv => n_vv + n_pq..n_vv + n_pq + n_pv,
            RowGroup::Nan => n_vv + n_pq + n_pv..n_vv + n_pq + n_pv + n_nan,
        }
    }

    /// Block of `a_sys` for one row group and one column group.
    pub fn a_block(&self, r: RowGroup, c: ColGroup) -> DMatrix<f64> {
        let rows = self.row_range(r);
        let cols = self.col_range(c);
        self.a_sys
            .view((rows.start, cols.start), (rows.len(), cols.len()))
            .into_owned()
    }

    /// Block of `b_sys` for one row group.
    pub fn b_block(&self, r: RowGroup) -> DVector<f64> {
        let rows = self.row_range(r);
        self.b_sys.rows(rows.start, rows.len()).into_owned()
    }

    /// Squared voltage at every phase-node (index order).
    pub fn eval_y(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_y * x + &self.b_y
    }

    /// Sending-end reactive flow on every line-phase.
    pub fn eval_qflow(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_qflow * x + &self.b_qflow
    }

    /// DER reactive injection aggregated per phase-node.
    pub fn eval_der_q(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_qg * x + &self.b_qg
    }

    /// Droop outputs aligned with the vv columns.
    pub fn eval_qvv(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_qvv * x + &self.b_qvv
    }

    /// Total reactive flow leaving the substation (consumption-positive).
    pub fn substation_q(&self, x: &DVector<f64>) -> f64 {
        self.eval_qflow(x).rows(0, self.n_subst_rows).sum()
    }

    /// Max violation of the underlying voltage/droop/pin relations at X.
    ///
    /// Recomputes the squared-voltage balance from the raw equivalents and
    /// the droop law instead of the eliminated map, so it detects assembly
    /// mistakes rather than echoing them.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        let y = self.eval_y(x);
        let q_g = self.eval_der_q(x);
        let rhs_raw = &self.r_eq * (&self.p_g_vec - &self.p_l_eff)
            + &self.x_eq * (&q_g - &self.q_l_eff)
            + &self.y0_vec * x[0];
        let rhs = FullPivLU::new(self.k_matrix.clone())
            .solve(&rhs_raw)
            .expect("K was invertible at assembly");
        let mut res = (&y - &rhs).amax();
        // Droop law at vv nodes.
        let q_vv = self.eval_qvv(x);
        for (j, &node) in self.partition.vv_nodes.iter().enumerate() {
            let want = self.kq_diag[j] / 2.0 * (y[node] - x[self.col_range(ColGroup::YSet).start + j]);
            res = res.max((q_vv[j] - want).abs());
        }
        // Voltage pin at pv nodes.
        for (j, &node) in self.partition.pv_nodes.iter().enumerate() {
            let pin = x[self.col_range(ColGroup::YPv).start + j];
            res = res.max((y[node] - pin).abs());
        }
        res
    }

    /// Names for the decision vector entries.
    pub fn x_labels(&self, model: &FeederModel) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.nx());
        labels.push("t_r".to_string());
        for &di in &self.partition.vv_ders {
            labels.push(format!("Y_set[{}]", model.ders[di].id));
        }
        for &di in &self.partition.pq_ders {
            labels.push(format!("q_pq[{}]", model.ders[di].id));
        }
        for &di in &self.partition.pv_ders {
            labels.push(format!("Y_pv[{}]", model.ders[di].id));
        }
        labels
    }

    pub fn node_labels(&self, model: &FeederModel) -> Vec<String> {
        self.index.labels(model)
    }

    /// Names for the flow rows, parent-to-child like "650-632.a".
    pub fn line_phase_labels(&self, model: &FeederModel) -> Vec<String> {
        self.line_phases
            .iter()
            .map(|lp| {
                let line = &model.lines[lp.line];
                format!("{}-{}.{}", line.from, line.to, lp.phase)
            })
            .collect()
    }
}

fn cond_estimate(lu: &FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let u = lu.u();
    let dim = u.nrows().min(u.ncols());
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for i in 0..dim {
        let v = u[(i, i)].abs();
        max = max.max(v);
        min = min.min(v);
    }
    if min == 0.0 || dim == 0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Assembles the eliminated affine model with default options.
pub fn assemble_system(
    model: &FeederModel,
    index: &PhaseNodeIndex,
    partition: &ModePartition,
) -> Result<LinearSystem, LindistError> {
    assemble_system_with(model, index, partition, &AssemblyOptions::default())
}

/// Assembles the eliminated affine model.
///
/// Dependent unknowns are the N squared voltages plus the PV reactive
/// outputs. The droop law ties vv-node injections to their own voltages and
/// the PV pins tie pv-node voltages to the Y_pv decisions; collecting both
/// into one square system and factoring it yields the affine response to X.
pub fn assemble_system_with(
    model: &FeederModel,
    index: &PhaseNodeIndex,
    partition: &ModePartition,
    opts: &AssemblyOptions,
) -> Result<LinearSystem, LindistError> {
    let base = build_base_model(model, index)?;
    let n = index.len();
    let (n_vv, n_pq, n_pv) = (partition.n_vv(), partition.n_pq(), partition.n_pv());
    let nx = 1 + n_vv + n_pq + n_pv;
    let pos = model.bus_positions();

    let mut p_l_eff = DVector::zeros(n);
    let mut q_l_eff = DVector::zeros(n);
    for load in &model.loads {
        let Some(&bus) = pos.get(load.bus.as_str()) else { continue };
        // Substation-bus demand is served directly by the grid and never
        // traverses a line, so it has no phase-node.
        if let Some(k) = index.position(bus, load.phase) {
            p_l_eff[k] += load.a0 * load.p;
            q_l_eff[k] += load.a0 * load.q;
        }
    }
    let mut p_g_vec = DVector::zeros(n);
    for der in &model.ders {
        let Some(&bus) = pos.get(der.bus.as_str()) else { continue };
        if let Some(k) = index.position(bus, der.phase) {
            p_g_vec[k] += der.p_g;
        }
    }

    let kq_diag = DVector::from_iterator(
        n_vv,
        partition.vv_ders.iter().map(|&di| {
            model.ders[di].k_q.expect("validated VV der carries a droop gain")
        }),
    );

    let k_matrix = match &opts.k_matrix {
        Some(k) => {
            if k.nrows() != n || k.ncols() != n {
                return Err(LindistError::KShape {
                    expected: n,
                    rows: k.nrows(),
                    cols: k.ncols(),
                });
            }
            k.clone()
        }
        None => DMatrix::identity(n, n),
    };
    let k_lu = FullPivLU::new(k_matrix.clone());
    if !k_lu.is_invertible() {
        return Err(LindistError::Singular {
            what: "load correction matrix K".into(),
            cond: cond_estimate(&k_lu),
        });
    }

    let c_vv = k_lu.solve(&(&base.x_eq * &partition.id_vv)).expect("K invertible");
    let c_pq = k_lu.solve(&(&base.x_eq * &partition.id_pq)).expect("K invertible");
    let c_pv = k_lu.solve(&(&base.x_eq * &partition.id_pv)).expect("K invertible");
    let k_inv_y0 = k_lu.solve(&base.y0_vec).expect("K invertible");
    let h0 = k_lu
        .solve(&(&base.r_eq * (&p_g_vec - &p_l_eff) - &base.x_eq * &q_l_eff))
        .expect("K invertible");

    let mut c_vv_half_k = c_vv;
    for j in 0..n_vv {
        let mut col = c_vv_half_k.column_mut(j);
        col *= kq_diag[j] / 2.0;
    }

    // Square elimination system over [Y; q_pv].
    let ng = n + n_pv;
    let mut g = DMatrix::zeros(ng, ng);
    g.view_mut((0, 0), (n, n))
        .copy_from(&(DMatrix::identity(n, n) - &c_vv_half_k * partition.id_vv.transpose()));
    g.view_mut((0, n), (n, n_pv)).copy_from(&(-&c_pv));
    g.view_mut((n, 0), (n_pv, n)).copy_from(&partition.id_pv.transpose());

    let mut rhs = DMatrix::zeros(ng, nx + 1);
    rhs.view_mut((0, 0), (n, 1)).copy_from(&k_inv_y0);
    rhs.view_mut((0, 1), (n, n_vv)).copy_from(&(-&c_vv_half_k));
    rhs.view_mut((0, 1 + n_vv), (n, n_pq)).copy_from(&c_pq);
    for j in 0..n_pv {
        rhs[(n + j, 1 + n_vv + n_pq + j)] = 1.0;
    }
    rhs.view_mut((0, nx), (n, 1)).copy_from(&h0);

    let g_lu = FullPivLU::new(g);
    if !g_lu.is_invertible() {
        return Err(LindistError::Singular {
            what: "droop elimination system".into(),
            cond: cond_estimate(&g_lu),
        });
    }
    let sol = g_lu.solve(&rhs).expect("checked invertible");

    let a_y = sol.view((0, 0), (n, nx)).into_owned();
    let b_y: DVector<f64> = sol.view((0, nx), (n, 1)).column(0).into_owned();
    let a_qpv = sol.view((n, 0), (n_pv, nx)).into_owned();
    let b_qpv: DVector<f64> = sol.view((n, nx), (n_pv, 1)).column(0).into_owned();

    // Mode-grouped rows: voltages for vv/pq/nan, reactive output for pv.
    let mut a_sys = DMatrix::zeros(n, nx);
    let mut b_sys = DVector::zeros(n);
    let mut r = 0;
    for &node in &partition.vv_nodes {
        a_sys.row_mut(r).copy_from(&a_y.row(node));
        b_sys[r] = b_y[node];
        r += 1;
    }
    for &node in &partition.pq_nodes {
        a_sys.row_mut(r).copy_from(&a_y.row(node));
        b_sys[r] = b_y[node];
        r += 1;
    }
    for j in 0..n_pv {
        a_sys.row_mut(r).copy_from(&a_qpv.row(j));
        b_sys[r] = b_qpv[j];
        r += 1;
    }
    for &node in &partition.nan_nodes {
        a_sys.row_mut(r).copy_from(&a_y.row(node));
        b_sys[r] = b_y[node];
        r += 1;
    }

    // Voltage rows only: every node whose voltage is not a decision variable.
    let pv_set: HashSet<usize> = partition.pv_nodes.iter().copied().collect();
    let v_nodes: Vec<usize> = (0..n).filter(|k| !pv_set.contains(k)).collect();
    let mut a_v = DMatrix::zeros(v_nodes.len(), nx);
    let mut b_v = DVector::zeros(v_nodes.len());
    for (r, &node) in v_nodes.iter().enumerate() {
        a_v.row_mut(r).copy_from(&a_y.row(node));
        b_v[r] = b_y[node];
    }

    // Droop outputs and the per-node injection map.
    let mut a_qvv = DMatrix::zeros(n_vv, nx);
    let mut b_qvv = DVector::zeros(n_vv);
    for (j, &node) in partition.vv_nodes.iter().enumerate() {
        let half_k = kq_diag[j] / 2.0;
        a_qvv.row_mut(j).copy_from(&(a_y.row(node) * half_k));
        a_qvv[(j, 1 + j)] -= half_k;
        b_qvv[j] = half_k * b_y[node];
    }
    let mut a_qg = DMatrix::zeros(n, nx);
    let mut b_qg = DVector::zeros(n);
    for (j, &node) in partition.vv_nodes.iter().enumerate() {
        a_qg.row_mut(node).copy_from(&a_qvv.row(j));
        b_qg[node] = b_qvv[j];
    }
    for (j, &node) in partition.pq_nodes.iter().enumerate() {
        a_qg[(node, 1 + n_vv + j)] = 1.0;
    }
    for (j, &node) in partition.pv_nodes.iter().enumerate() {
        a_qg.row_mut(node).copy_from(&a_qpv.row(j));
        b_qg[node] = b_qpv[j];
    }

    let a_qflow = -(&base.flow * &a_qg);
    let b_qflow = &base.flow * &(&q_l_eff - &b_qg);

    let r_star = PerMode {
        vv: &base.r_eq * &partition.id_vv,
        pq: &base.r_eq * &partition.id_pq,
        pv: &base.r_eq * &partition.id_pv,
        nan: &base.r_eq * &partition.id_nan,
    };
    let x_star = PerMode {
        vv: &base.x_eq * &partition.id_vv,
        pq: &base.x_eq * &partition.id_pq,
        pv: &base.x_eq * &partition.id_pv,
        nan: &base.x_eq * &partition.id_nan,
    };
    let regroup = |per: &PerMode<DMatrix<f64>>| {
        let mut out = DMatrix::zeros(n, n);
        let mut c = 0;
        for block in [&per.vv, &per.pq, &per.pv, &per.nan] {
            out.view_mut((0, c), (n, block.ncols())).copy_from(block);
            c += block.ncols();
        }
        out
    };
    let r_r_eq = regroup(&r_star);
    let x_r_eq = regroup(&x_star);

    let mut sys = LinearSystem {
        index: index.clone(),
        partition: partition.clone(),
        line_phases: base.line_phases,
        n_subst_rows: base.n_subst_rows,
        m: base.m,
        m_inv: base.m_inv,
        flow: base.flow,
        r_eq: base.r_eq,
        x_eq: base.x_eq,
        r_star,
        x_star,
        r_r_eq,
        x_r_eq,
        y0_vec: base.y0_vec,
        p_l_eff,
        q_l_eff,
        p_g_vec,
        k_matrix,
        kq_diag,
        a_sys,
        b_sys,
        a_y,
        b_y,
        a_v,
        b_v,
        v_nodes,
        a_qvv,
        b_qvv,
        a_qg,
        b_qg,
        a_qflow,
        b_qflow,
        w1: RowDVector::zeros(0),
        w2: RowDVector::zeros(0),
        w3: RowDVector::zeros(0),
        d: 0.0,
    };
    let weights = compute_weights(&sys)?;
    sys.w1 = weights.w1;
    sys.w2 = weights.w2;
    sys.w3 = weights.w3;
    sys.d = weights.d;
    Ok(sys)
}

/// Returns the flow map split out of an assembled system.
pub fn assemble_qflow(sys: &LinearSystem) -> (DMatrix<f64>, DVector<f64>) {
    (sys.a_qflow.clone(), sys.b_qflow.clone())
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Sensitivity-derived objective weights, one entry per DER column.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub w1: RowDVector<f64>,
    pub w2: RowDVector<f64>,
    pub w3: RowDVector<f64>,
    pub d: f64,
}

/// Per-group sensitivities of total substation reactive flow to the DER
/// reactive outputs, before normalization.
///
/// In the linear model the substation flow aggregates every downstream
/// injection through the flow matrix, so the sensitivity to one unit's output
/// (all other outputs held fixed) is the negated column sum of the
/// substation-rooted flow rows at the unit's node, whatever the control mode.
/// At unit loss factors every entry is exactly -1.
fn substation_sensitivities(
    sys: &LinearSystem,
) -> Result<(RowDVector<f64>, RowDVector<f64>, RowDVector<f64>), LindistError> {
    let s_node = -sys.flow.rows(0, sys.n_subst_rows).row_sum();
    let gather = |nodes: &[usize]| {
        RowDVector::from_iterator(nodes.len(), nodes.iter().map(|&k| s_node[k]))
    };
    Ok((
        gather(&sys.partition.vv_nodes),
        gather(&sys.partition.pq_nodes),
        gather(&sys.partition.pv_nodes),
    ))
}

fn normalize_weights(
    sens_vv: RowDVector<f64>,
    sens_pq: RowDVector<f64>,
    sens_pv: RowDVector<f64>,
) -> Result<Weights, LindistError> {
    let d = sens_vv.sum() + sens_pq.sum() + sens_pv.sum();
    let any = sens_vv.len() + sens_pq.len() + sens_pv.len() > 0;
    if any && (!d.is_finite() || d.abs() < 1e-12) {
        return Err(LindistError::SingularWeightBlock {
            block: "normalization scalar d".into(),
            hint: format!("sensitivity sum {d} cannot normalize the weights"),
        });
    }
    let norm = |s: RowDVector<f64>| s.map(|v| 1.0 - v / d);
    Ok(Weights { w1: norm(sens_vv), w2: norm(sens_pq), w3: norm(sens_pv), d })
}

/// Objective weights from the closed-form block sensitivities.
pub fn compute_weights(sys: &LinearSystem) -> Result<Weights, LindistError> {
    let (sens_vv, sens_pq, sens_pv) = substation_sensitivities(sys)?;
    normalize_weights(sens_vv, sens_pq, sens_pv)
}

/// Objective weights measured by perturbing the assembled model instead of
/// reading the closed-form blocks; an independent cross-check.
pub fn finite_difference_weights(sys: &LinearSystem) -> Result<Weights, LindistError> {
    let nx = sys.nx();
    let (n_vv, n_pq, n_pv) = (
        sys.partition.n_vv(),
        sys.partition.n_pq(),
        sys.partition.n_pv(),
    );
    let mut x0 = DVector::zeros(nx);
    x0[0] = 1.0;
    for c in sys.col_range(ColGroup::YSet) {
        x0[c] = 1.0;
    }
    for c in sys.col_range(ColGroup::YPv) {
        x0[c] = 1.0;
    }
    let h = 1e-3;
    let probe = |dir: &DVector<f64>| {
        let plus = sys.substation_q(&(&x0 + dir * h));
        let minus = sys.substation_q(&(&x0 - dir * h));
        (plus - minus) / (2.0 * h)
    };

    // Droop and setpoint-tracking outputs react to every probe through the
    // network; to move exactly one DER output by one unit, co-move the
    // setpoint columns so the remaining feedback outputs stay pinned.
    let nf = n_vv + n_pv;
    let mut fb = DMatrix::zeros(nf, nx);
    if n_vv > 0 {
        fb.view_mut((0, 0), (n_vv, nx)).copy_from(&sys.a_qvv);
    }
    if n_pv > 0 {
        let r = sys.row_range(RowGroup::Pv);
        fb.view_mut((n_vv, 0), (n_pv, nx)).copy_from(&sys.a_sys.rows(r.start, r.len()));
    }
    let set_cols: Vec<usize> =
        sys.col_range(ColGroup::YSet).chain(sys.col_range(ColGroup::YPv)).collect();
    let mut j_fb = DMatrix::zeros(nf, nf);
    for (c, &xc) in set_cols.iter().enumerate() {
        let mut col = j_fb.column_mut(c);
        col.copy_from(&fb.column(xc));
    }
    let lu = FullPivLU::new(j_fb);

    let dir_for = |mut dir: DVector<f64>, target: DVector<f64>| {
        if nf == 0 {
            return Ok(dir);
        }
        let ds = lu.solve(&(target - &fb * &dir)).ok_or_else(|| {
            LindistError::SingularWeightBlock {
                block: "setpoint-to-output response".into(),
                hint: "cannot build unit probe directions".into(),
            }
        })?;
        for (c, &xc) in set_cols.iter().enumerate() {
            dir[xc] += ds[c];
        }
        Ok(dir)
    };

    let mut sens_vv = RowDVector::zeros(n_vv);
    for j in 0..n_vv {
        let mut target = DVector::zeros(nf);
        target[j] = 1.0;
        sens_vv[j] = probe(&dir_for(DVector::zeros(nx), target)?);
    }
    let mut sens_pq = RowDVector::zeros(n_pq);
    let start = sys.col_range(ColGroup::QPq).start;
    for j in 0..n_pq {
        let mut dir = DVector::zeros(nx);
        dir[start + j] = 1.0;
        sens_pq[j] = probe(&dir_for(dir, DVector::zeros(nf))?);
    }
    let mut sens_pv = RowDVector::zeros(n_pv);
    for j in 0..n_pv {
        let mut target = DVector::zeros(nf);
        target[n_vv + j] = 1.0;
        sens_pv[j] = probe(&dir_for(DVector::zeros(nx), target)?);
    }
    normalize_weights(sens_vv, sens_pq, sens_pv)
}

// ---------------------------------------------------------------------------
// Matrix dump
// ---------------------------------------------------------------------------

/// Row-major dense matrix payload for the dump document.
#[derive(Serialize)]
pub struct DumpMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

fn dump_of(m: &DMatrix<f64>) -> DumpMatrix {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    DumpMatrix { rows: m.nrows(), cols: m.ncols(), data }
}

fn dump_vec(v: &DVector<f64>) -> DumpMatrix {
    DumpMatrix { rows: v.len(), cols: 1, data: v.iter().copied().collect() }
}

fn dump_row(v: &RowDVector<f64>) -> DumpMatrix {
    DumpMatrix { rows: 1, cols: v.len(), data: v.iter().copied().collect() }
}

/// Named dense matrices plus the index manifests, for debugging and
/// cross-language comparison.
#[derive(Serialize)]
pub struct MatrixDump {
    pub nodes: Vec<String>,
    pub x: Vec<String>,
    pub flow_rows: Vec<String>,
    pub n_substation_rows: usize,
    pub d: f64,
    pub matrices: BTreeMap<String, DumpMatrix>,
}

impl LinearSystem {
    pub fn matrix_dump(&self, model: &FeederModel) -> MatrixDump {
        let mut matrices = BTreeMap::new();
        matrices.insert("M".to_string(), dump_of(&self.m));
        matrices.insert("M_inv".to_string(), dump_of(&self.m_inv));
        matrices.insert("F_flow".to_string(), dump_of(&self.flow));
        matrices.insert("R_eq".to_string(), dump_of(&self.r_eq));
        matrices.insert("X_eq".to_string(), dump_of(&self.x_eq));
        matrices.insert("R_r_eq".to_string(), dump_of(&self.r_r_eq));
        matrices.insert("X_r_eq".to_string(), dump_of(&self.x_r_eq));
        matrices.insert("A_sys".to_string(), dump_of(&self.a_sys));
        matrices.insert("B_sys".to_string(), dump_vec(&self.b_sys));
        matrices.insert("A_y".to_string(), dump_of(&self.a_y));
        matrices.insert("B_y".to_string(), dump_vec(&self.b_y));
        matrices.insert("A_v".to_string(), dump_of(&self.a_v));
        matrices.insert("B_v".to_string(), dump_vec(&self.b_v));
        matrices.insert("A_Qflow".to_string(), dump_of(&self.a_qflow));
        matrices.insert("B_Qflow".to_string(), dump_vec(&self.b_qflow));
        matrices.insert("W1".to_string(), dump_row(&self.w1));
        matrices.insert("W2".to_string(), dump_row(&self.w2));
        matrices.insert("W3".to_string(), dump_row(&self.w3));
        MatrixDump {
            nodes: self.node_labels(model),
            x: self.x_labels(model),
            flow_rows: self.line_phase_labels(model),
            n_substation_rows: self.n_subst_rows,
            d: self.d,
            matrices,
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{Bases, Bus, DerUnit, Line, Load, PhaseSet, VppCurve};
    use crate::fixtures;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn make_bus(id: &str, phases: &str, substation: bool) -> Bus {
        Bus { id: id.into(), phases: PhaseSet::parse(phases).unwrap(), is_substation: substation }
    }

    fn scalar_line(from: &str, to: &str, r: f64, x: f64, loss: f64) -> Line {
        let mut rm = [[0.0; 3]; 3];
        let mut xm = [[0.0; 3]; 3];
        rm[0][0] = r;
        xm[0][0] = x;
        Line {
            from: from.into(),
            to: to.into(),
            r: rm,
            x: xm,
            loss_factor: [loss, 1.0, 1.0],
            q_max: None,
        }
    }

    fn make_der(id: &str, bus: &str, mode: DerMode, p_g: f64, s: f64, k_q: Option<f64>) -> DerUnit {
        DerUnit {
            id: id.into(),
            bus: bus.into(),
            phase: Phase::A,
            mode,
            p_g,
            s_rating: s,
            k_q,
            q_fixed: None,
            y_set: None,
        }
    }

    /// Single-phase chain: substation n0, then n1..nk joined by the given
    /// (r, x, loss) segments. Loads and DERs attach by bus number.
    fn make_chain(
        segments: &[(f64, f64, f64)],
        loads: &[(usize, f64, f64)],
        ders: Vec<DerUnit>,
    ) -> FeederModel {
        let mut buses = vec![make_bus("n0", "a", true)];
        let mut lines = Vec::new();
        for (i, &(r, x, loss)) in segments.iter().enumerate() {
            buses.push(make_bus(&format!("n{}", i + 1), "a", false));
            lines.push(scalar_line(&format!("n{i}"), &format!("n{}", i + 1), r, x, loss));
        }
        let loads = loads
            .iter()
            .map(|&(bus, p, q)| Load {
                bus: format!("n{bus}"),
                phase: Phase::A,
                p,
                q,
                a0: 1.0,
            })
            .collect();
        FeederModel {
            buses,
            lines,
            loads,
            ders,
            vpp: VppCurve { k_q: 0.0, y_set: 1.0 },
            substation_y0: [1.0; 3],
            bases: Bases { base_mva: 1.0, base_kv: 4.16 },
        }
    }

    fn assemble(model: &FeederModel) -> LinearSystem {
        let index = build_index(model);
        let partition = build_partition(model, &index).unwrap();
        assemble_system(model, &index, &partition).unwrap()
    }

    fn random_x(sys: &LinearSystem, rng: &mut impl Rng) -> DVector<f64> {
        let mut x = DVector::zeros(sys.nx());
        x[0] = rng.gen_range(0.9..1.1);
        for c in sys.col_range(ColGroup::YSet) {
            x[c] = rng.gen_range(0.9..1.1);
        }
        for c in sys.col_range(ColGroup::QPq) {
            x[c] = rng.gen_range(-0.2..0.2);
        }
        for c in sys.col_range(ColGroup::YPv) {
            x[c] = rng.gen_range(0.9..1.1);
        }
        x
    }

    #[test]
    fn index_orders_buses_then_phases() {
        let model = make_chain(&[(0.01, 0.02, 1.0)], &[], vec![]);
        let index = build_index(&model);
        assert_eq!(index.len(), 1);
        assert_eq!(index.node(0), PhaseNode { bus: 1, phase: Phase::A });

        let model = fixtures::thirteen_bus();
        let index = build_index(&model);
        let mut last = (0usize, 0usize);
        for node in index.nodes() {
            assert!(!model.buses[node.bus].is_substation);
            let key = (node.bus, node.phase.index());
            assert!(key > last || index.nodes().len() == 1, "ordering violated at {key:?}");
            last = key;
        }
        assert_eq!(index.label(&model, 0), "632.a");
    }

    #[test]
    fn base_model_matches_hand_recursion() {
        let model = make_chain(&[(0.01, 0.02, 1.0)], &[(1, 0.1, 0.05)], vec![]);
        let index = build_index(&model);
        let base = build_base_model(&model, &index).unwrap();
        assert_relative_eq!(base.r_eq[(0, 0)], 0.02, max_relative = 1e-14);
        assert_relative_eq!(base.x_eq[(0, 0)], 0.04, max_relative = 1e-14);

        // Full load, no DER.
        let y = base.r_eq[(0, 0)] * (-0.1) + base.x_eq[(0, 0)] * (-0.05) + 1.0;
        assert_relative_eq!(y, 0.996, epsilon = 1e-12);
        // No load at all.
        assert_relative_eq!(base.y0_vec[0], 1.0, epsilon = 1e-15);
        // DER reactive output cancels the load's q.
        let y = base.r_eq[(0, 0)] * (-0.1) + base.x_eq[(0, 0)] * (0.05 - 0.05) + 1.0;
        assert_relative_eq!(y, 0.998, epsilon = 1e-12);
    }

    #[test]
    fn incidence_inverse_and_flow_agree() {
        let model = fixtures::thirteen_bus();
        let index = build_index(&model);
        let base = build_base_model(&model, &index).unwrap();
        let n = index.len();
        let eye = &base.m * &base.m_inv;
        assert!((eye - DMatrix::<f64>::identity(n, n)).amax() < 1e-12);
        // The fixture is lossless, so the flow matrix is the negated inverse.
        assert!((&base.flow + &base.m_inv).amax() < 1e-12);
        assert_eq!(base.n_subst_rows, 3);
    }

    #[test]
    fn all_pq_system_reduces_to_base_map() {
        let ders = vec![
            make_der("d1", "n1", DerMode::Pq, 0.02, 0.1, None),
            make_der("d2", "n3", DerMode::Pq, 0.01, 0.1, None),
        ];
        let model = make_chain(
            &[(0.01, 0.02, 1.0), (0.008, 0.016, 1.0), (0.005, 0.01, 1.0)],
            &[(1, 0.1, 0.05), (2, 0.05, 0.02), (3, 0.08, 0.03)],
            ders,
        );
        let sys = assemble(&model);
        let index = build_index(&model);
        let base = build_base_model(&model, &index).unwrap();

        // Columns: t_r is the reference vector, q_pq columns are the reactive
        // sensitivities, offset is the fixed-injection response.
        let tr_col = sys.a_y.column(0).into_owned();
        assert!((tr_col - &base.y0_vec).amax() < 1e-12);
        let expect_q = &base.x_eq * &sys.partition.id_pq;
        let got_q = sys
            .a_y
            .view((0, sys.col_range(ColGroup::QPq).start), (sys.n(), sys.partition.n_pq()))
            .into_owned();
        assert!((got_q - expect_q).amax() < 1e-12);
        let expect_b = &base.r_eq * (&sys.p_g_vec - &sys.p_l_eff) - &base.x_eq * &sys.q_l_eff;
        assert!((&sys.b_y - expect_b).amax() < 1e-12);
    }

    #[test]
    fn vv_elimination_matches_hand_solution() {
        let ders = vec![make_der("d1", "n1", DerMode::Vv, 0.0, 0.2, Some(-4.0))];
        let model = make_chain(&[(0.01, 0.02, 1.0)], &[(1, 0.1, 0.05)], ders);
        let sys = assemble(&model);
        assert_eq!(sys.nx(), 2);
        assert_relative_eq!(sys.a_y[(0, 0)], 1.0 / 1.08, epsilon = 1e-12);
        assert_relative_eq!(sys.a_y[(0, 1)], 0.08 / 1.08, epsilon = 1e-12);
        assert_relative_eq!(sys.b_y[0], -0.004 / 1.08, epsilon = 1e-12);

        let x = DVector::from_vec(vec![1.0, 1.0]);
        let y = sys.eval_y(&x);
        assert_relative_eq!(y[0], 0.9962963, epsilon = 1e-7);
        let q = sys.eval_qvv(&x);
        assert_relative_eq!(q[0], 0.0074074, epsilon = 1e-7);
        assert!(sys.residual(&x) < 1e-12);
    }

    #[test]
    fn pv_node_voltage_is_pinned() {
        let ders = vec![make_der("d1", "n1", DerMode::Pv, 0.0, 0.2, None)];
        let model = make_chain(&[(0.01, 0.02, 1.0)], &[(1, 0.1, 0.05)], ders);
        let sys = assemble(&model);

        // Voltage at the pv node is exactly the decision variable.
        let ypv_col = sys.col_range(ColGroup::YPv).start;
        assert_relative_eq!(sys.a_y[(0, ypv_col)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sys.a_y[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(sys.b_y[0], 0.0, epsilon = 1e-12);

        // Reactive output solves the drop equation: q = 25 Y_pv - 25 t_r + 0.1.
        let pv_row = sys.row_range(RowGroup::Pv).start;
        assert_relative_eq!(sys.a_sys[(pv_row, ypv_col)], 25.0, epsilon = 1e-9);
        assert_relative_eq!(sys.a_sys[(pv_row, 0)], -25.0, epsilon = 1e-9);
        assert_relative_eq!(sys.b_sys[pv_row], 0.1, epsilon = 1e-9);

        let x = DVector::from_vec(vec![1.0, 0.996]);
        assert!(sys.eval_der_q(&x)[0].abs() < 1e-12);
        assert!(sys.residual(&x) < 1e-12);
    }

    #[test]
    fn qflow_two_bus_pq_columns() {
        let ders = vec![make_der("d1", "n1", DerMode::Pq, 0.0, 0.2, None)];
        let model = make_chain(&[(0.01, 0.02, 1.0)], &[(1, 0.1, 0.05)], ders);
        let sys = assemble(&model);
        let (a_qflow, b_qflow) = assemble_qflow(&sys);
        assert_eq!(a_qflow.nrows(), 1);
        assert_eq!(sys.n_subst_rows, 1);
        let qpq_col = sys.col_range(ColGroup::QPq).start;
        assert_eq!(a_qflow[(0, qpq_col)], -1.0);
        assert_relative_eq!(b_qflow[0], 0.05, epsilon = 1e-15);

        let empty = make_chain(&[(0.01, 0.02, 1.0)], &[], vec![]);
        let sys = assemble(&empty);
        assert!(sys.b_qflow.amax() == 0.0);
    }

    #[test]
    fn weights_single_pq_der() {
        let ders = vec![make_der("d1", "n1", DerMode::Pq, 0.0, 0.2, None)];
        let model = make_chain(&[(0.01, 0.02, 1.0)], &[(1, 0.1, 0.05)], ders);
        let sys = assemble(&model);
        assert_eq!(sys.w2.len(), 1);
        assert_eq!(sys.w2[0], 0.0);
        assert_relative_eq!(sys.d, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn weights_lossless_are_uniform() {
        let ders = vec![
            make_der("d1", "n1", DerMode::Pq, 0.0, 0.2, None),
            make_der("d2", "n2", DerMode::Pq, 0.0, 0.2, None),
            make_der("d3", "n3", DerMode::Pq, 0.0, 0.2, None),
        ];
        let model = make_chain(
            &[(0.01, 0.02, 1.0), (0.008, 0.016, 1.0), (0.005, 0.01, 1.0)],
            &[(1, 0.1, 0.05), (3, 0.05, 0.02)],
            ders,
        );
        let sys = assemble(&model);
        assert_eq!(sys.w2[0], sys.w2[1]);
        assert_eq!(sys.w2[1], sys.w2[2]);
        assert_relative_eq!(sys.w2[0], 1.0 - 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn weights_prefer_near_der_under_losses() {
        let ders = vec![
            make_der("near", "n1", DerMode::Pq, 0.0, 0.2, None),
            make_der("far", "n2", DerMode::Pq, 0.0, 0.2, None),
        ];
        let model = make_chain(
            &[(0.01, 0.02, 1.0), (0.008, 0.016, 1.05)],
            &[(2, 0.1, 0.05)],
            ders,
        );
        let sys = assemble(&model);
        let (near, far) = (sys.w2[0], sys.w2[1]);
        assert!(near > far, "near {near} should cost more than far {far}");
        assert_relative_eq!(near, 1.0 - 1.0 / 2.05, epsilon = 1e-12);
        assert_relative_eq!(far, 1.0 - 1.05 / 2.05, epsilon = 1e-12);
    }

    #[test]
    fn weights_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let model = fixtures::random_radial(&mut rng, 15);
            let sys = assemble(&model);
            let fd = finite_difference_weights(&sys).unwrap();
            assert!((&sys.w1 - &fd.w1).amax() <= 1e-8, "w1 mismatch");
            assert!((&sys.w2 - &fd.w2).amax() <= 1e-8, "w2 mismatch");
            assert!((&sys.w3 - &fd.w3).amax() <= 1e-8, "w3 mismatch");
        }
    }

    #[test]
    fn elimination_self_consistency_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let model = fixtures::random_radial(&mut rng, 15);
            let sys = assemble(&model);
            for _ in 0..5 {
                let x = random_x(&sys, &mut rng);
                assert!(sys.residual(&x) < 1e-9, "residual too large");
            }
        }
    }

    #[test]
    fn relabeling_ders_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = fixtures::random_radial(&mut rng, 12);
        let sys = assemble(&model);

        let mut shuffled = model.clone();
        shuffled.ders.reverse();
        for (i, der) in shuffled.ders.iter_mut().enumerate() {
            der.id = format!("renamed_{i}");
        }
        let sys2 = assemble(&shuffled);
        assert_eq!((&sys.a_sys - &sys2.a_sys).amax(), 0.0);
        assert_eq!((&sys.b_sys - &sys2.b_sys).amax(), 0.0);
        assert_eq!((&sys.a_qflow - &sys2.a_qflow).amax(), 0.0);
        assert_eq!((&sys.w2 - &sys2.w2).amax(), 0.0);
    }

    #[test]
    fn substation_flow_matches_injection_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let mut model = fixtures::random_radial(&mut rng, 12);
            for line in &mut model.lines {
                line.loss_factor = [1.0; 3];
            }
            let sys = assemble(&model);
            let x = random_x(&sys, &mut rng);
            let q_sub = sys.substation_q(&x);
            let expect = sys.q_l_eff.sum() - sys.eval_der_q(&x).sum();
            assert!((q_sub - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicate_der_location_is_an_error() {
        let ders = vec![
            make_der("first", "n1", DerMode::Pq, 0.0, 0.2, None),
            make_der("second", "n1", DerMode::Vv, 0.0, 0.2, Some(-4.0)),
        ];
        let model = make_chain(&[(0.01, 0.02, 1.0)], &[], ders);
        let index = build_index(&model);
        match build_partition(&model, &index) {
            Err(LindistError::DuplicateDerNode { first, second, node }) => {
                assert_eq!(first, "first");
                assert_eq!(second, "second");
                assert_eq!(node, "n1.a");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn partition_covers_every_node_once() {
        let model = fixtures::thirteen_bus();
        let index = build_index(&model);
        let part = build_partition(&model, &index).unwrap();
        let mut cover = vec![0usize; index.len()];
        for nodes in [&part.vv_nodes, &part.pq_nodes, &part.pv_nodes, &part.nan_nodes] {
            for &n in nodes.iter() {
                cover[n] += 1;
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
        for id in [&part.id_vv, &part.id_pq, &part.id_pv, &part.id_nan] {
            for j in 0..id.ncols() {
                assert_eq!(id.column(j).sum(), 1.0);
            }
        }
    }
}
