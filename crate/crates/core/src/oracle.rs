//! Nonlinear unbalanced power flow by backward/forward sweep.
//!
//! Serves as the validation reference for the linearized model: full 3x3
//! complex impedance blocks per line, constant-power/constant-impedance load
//! split, and inverter behavior resolved inside the outer loop (fixed q for
//! PQ, damped voltage droop for VV, a joint reactance-compensated Newton step
//! for the voltage-tracking PV units). The substation is the slack: its
//! per-phase voltage is held at the scaled nominal profile with the standard
//! 0/-120/+120 degree angles.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::dispatch::DerCommand;
use crate::feeder::{DerMode, FeederModel, Phase};

// ---------------------------------------------------------------------------
// Options and results
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PfOptions {
    /// Convergence threshold on the largest voltage / DER-q update.
    pub tol: f64,
    pub max_iter: usize,
    /// Damping cap on VV droop updates.
    pub vv_damping: f64,
    /// Damping on the joint PV setpoint-tracking step.
    pub pv_damping: f64,
    /// Multiplier on the squared substation voltage profile.
    pub y0_scale: f64,
    /// Record (iteration, max update) rows in the solution.
    pub collect_trace: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 200,
            vv_damping: 0.5,
            pv_damping: 0.7,
            y0_scale: 1.0,
            collect_trace: false,
        }
    }
}

/// Converged sweep result. Voltages and flows are keyed by the same labels
/// the linear model uses: "bus.phase" for nodes, "from-to.phase" for lines.
#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    pub voltages: BTreeMap<String, Complex64>,
    /// Realized reactive output per DER id.
    pub der_q: BTreeMap<String, f64>,
    /// Sending-end complex power per line-phase.
    pub line_flows: BTreeMap<String, Complex64>,
    /// Sending-end current per line-phase (parent-to-child positive).
    pub line_currents: BTreeMap<String, Complex64>,
    /// Net reactive / active consumption seen at the substation, per phase.
    pub substation_p: BTreeMap<String, f64>,
    pub substation_q: BTreeMap<String, f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_mismatch: f64,
    /// Per-iteration (iteration, max update) rows when tracing is enabled.
    pub trace: Vec<(usize, f64)>,
}

impl PowerFlowSolution {
    pub fn substation_q_total(&self) -> f64 {
        self.substation_q.values().sum()
    }

    pub fn substation_p_total(&self) -> f64 {
        self.substation_p.values().sum()
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("power flow input invalid: {0}")]
    Structure(String),
    #[error("no convergence after {iterations} iterations (last update {last_mismatch:.3e})")]
    NoConvergence { iterations: usize, last_mismatch: f64, history: Vec<f64> },
    #[error("voltage collapse at {node}: |v| = {magnitude:.4} at iteration {iteration}")]
    VoltageCollapse { node: String, magnitude: f64, iteration: usize },
}

// ---------------------------------------------------------------------------
// Internal state
// ---------------------------------------------------------------------------

struct Net {
    substation: usize,
    /// BFS order from the substation.
    order: Vec<usize>,
    /// Per bus: connecting line toward the parent.
    parent_line: Vec<Option<usize>>,
    line_from: Vec<usize>,
    /// Phases carried by each line (the downstream bus's phases).
    carried: Vec<Vec<Phase>>,
    /// Complex series impedance per line, full 3x3 with zeros off the
    /// carried phases.
    z: Vec<[[Complex64; 3]; 3]>,
}

fn build_net(model: &FeederModel) -> Result<Net, OracleError> {
    let pos = model.bus_positions();
    let substation = model
        .substation()
        .ok_or_else(|| OracleError::Structure("model has no substation bus".into()))?;
    let nb = model.buses.len();
    let nl = model.lines.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nb];
    for (li, line) in model.lines.iter().enumerate() {
        let (Some(&f), Some(&t)) = (pos.get(line.from.as_str()), pos.get(line.to.as_str()))
        else {
            return Err(OracleError::Structure(format!(
                "line {}-{} references an unknown bus",
                line.from, line.to
            )));
        };
        adj[f].push((t, li));
        adj[t].push((f, li));
    }

    let mut order = Vec::with_capacity(nb);
    let mut parent_line = vec![None; nb];
    let mut line_from = vec![usize::MAX; nl];
    let mut line_to = vec![usize::MAX; nl];
    let mut visited = vec![false; nb];
    let mut queue = std::collections::VecDeque::new();
    visited[substation] = true;
    queue.push_back(substation);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, li) in &adj[u] {
            if visited[v] {
                continue;
            }
            visited[v] = true;
            parent_line[v] = Some(li);
            line_from[li] = u;
            line_to[li] = v;
            queue.push_back(v);
        }
    }
    if visited.iter().any(|v| !v) || line_to.contains(&usize::MAX) {
        return Err(OracleError::Structure(
            "graph is not a tree rooted at the substation".into(),
        ));
    }

    let mut carried = Vec::with_capacity(nl);
    let mut z = Vec::with_capacity(nl);
    for (li, line) in model.lines.iter().enumerate() {
        let phases: Vec<Phase> = model.buses[line_to[li]].phases.iter().collect();
        let mut zm = [[Complex64::new(0.0, 0.0); 3]; 3];
        for &p in &phases {
            for &q in &phases {
                zm[p.index()][q.index()] =
                    Complex64::new(line.r[p.index()][q.index()], line.x[p.index()][q.index()]);
            }
        }
        carried.push(phases);
        z.push(zm);
    }
    Ok(Net { substation, order, parent_line, line_from, carried, z })
}

#[derive(Clone, Copy, Debug)]
enum DerBehavior {
    FixedQ,
    Droop { k_q: f64, v_set: f64 },
    Setpoint { v_set: f64 },
}

struct DerState {
    bus: usize,
    phase: Phase,
    p_g: f64,
    cap: f64,
    behavior: DerBehavior,
    q: f64,
    /// Reactance of the substation-to-bus path on this phase; voltage/q
    /// slope for the setpoint trackers and stability guard for steep droops.
    x_path: f64,
}

fn path_reactance(model: &FeederModel, net: &Net, bus: usize, phase: Phase) -> f64 {
    let mut x = 0.0;
    let mut b = bus;
    while let Some(li) = net.parent_line[b] {
        x += model.lines[li].x[phase.index()][phase.index()];
        b = net.line_from[li];
    }
    x
}

/// Same-phase reactance shared by the substation paths of two buses; the
/// off-diagonal voltage/q coupling between units on a common lateral.
fn common_path_reactance(
    model: &FeederModel,
    net: &Net,
    bus_a: usize,
    bus_b: usize,
    phase: Phase,
) -> f64 {
    let mut on_path = vec![false; model.lines.len()];
    let mut b = bus_a;
    while let Some(li) = net.parent_line[b] {
        on_path[li] = true;
        b = net.line_from[li];
    }
    let mut x = 0.0;
    let mut b = bus_b;
    while let Some(li) = net.parent_line[b] {
        if on_path[li] {
            x += model.lines[li].x[phase.index()][phase.index()];
        }
        b = net.line_from[li];
    }
    x
}

fn build_der_states(
    model: &FeederModel,
    net: &Net,
    commands: &[DerCommand],
) -> Result<Vec<DerState>, OracleError> {
    let pos = model.bus_positions();
    let by_id: BTreeMap<&str, &DerCommand> =
        commands.iter().map(|c| (c.der_id.as_str(), c)).collect();
    let mut states = Vec::with_capacity(model.ders.len());
    for d in &model.ders {
        let Some(cmd) = by_id.get(d.id.as_str()) else {
            return Err(OracleError::Structure(format!("no command for DER {}", d.id)));
        };
        if cmd.mode != d.mode.as_str() {
            return Err(OracleError::Structure(format!(
                "command for DER {} is for mode {}, model says {}",
                d.id,
                cmd.mode,
                d.mode.as_str()
            )));
        }
        let bus = *pos
            .get(d.bus.as_str())
            .ok_or_else(|| OracleError::Structure(format!("DER {} on unknown bus", d.id)))?;
        let need_vset = || {
            cmd.v_set.ok_or_else(|| {
                OracleError::Structure(format!("command for DER {} lacks v_set", d.id))
            })
        };
        let (behavior, q0) = match d.mode {
            DerMode::Pq => {
                let q = cmd.q.ok_or_else(|| {
                    OracleError::Structure(format!("command for DER {} lacks q", d.id))
                })?;
                (DerBehavior::FixedQ, q)
            }
            DerMode::Vv => {
                let k_q = d.k_q.ok_or_else(|| {
                    OracleError::Structure(format!("VV DER {} has no droop gain", d.id))
                })?;
                (DerBehavior::Droop { k_q, v_set: need_vset()? }, 0.0)
            }
            DerMode::Pv => (DerBehavior::Setpoint { v_set: need_vset()? }, 0.0),
        };
        states.push(DerState {
            bus,
            phase: d.phase,
            p_g: d.p_g,
            cap: d.q_capability(),
            behavior,
            q: q0,
            x_path: path_reactance(model, net, bus, d.phase),
        });
    }
    Ok(states)
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// Solves the nonlinear power flow for a command set covering every DER.
pub fn solve_power_flow(
    model: &FeederModel,
    commands: &[DerCommand],
    opts: &PfOptions,
) -> Result<PowerFlowSolution, OracleError> {
    let net = build_net(model)?;
    let mut ders = build_der_states(model, &net, commands)?;
    let pos = model.bus_positions();
    let nb = model.buses.len();

    // Slack profile and flat start.
    let mut v: Vec<[Complex64; 3]> = vec![[Complex64::new(0.0, 0.0); 3]; nb];
    for (bi, bus) in model.buses.iter().enumerate() {
        for p in bus.phases.iter() {
            let mag = (opts.y0_scale * model.substation_y0[p.index()]).sqrt();
            v[bi][p.index()] = Complex64::from_polar(mag, p.angle());
        }
    }

    // Aggregate nominal load per bus-phase.
    let mut load: Vec<[(Complex64, f64); 3]> = vec![[(Complex64::new(0.0, 0.0), 1.0); 3]; nb];
    for l in &model.loads {
        let bi = *pos
            .get(l.bus.as_str())
            .ok_or_else(|| OracleError::Structure(format!("load on unknown bus {}", l.bus)))?;
        let slot = &mut load[bi][l.phase.index()];
        slot.0 += Complex64::new(l.p, l.q);
        slot.1 = l.a0;
    }

    // Voltage-tracking units are updated jointly: the shared-path reactance
    // matrix is their first-order voltage/q coupling, and a projected
    // Gauss-Seidel pass over it stays stable when many units share a lateral
    // while keeping every saturated unit on the correct side of its setpoint.
    let pv_idx: Vec<usize> = (0..ders.len())
        .filter(|&i| matches!(ders[i].behavior, DerBehavior::Setpoint { .. }))
        .collect();
    let pv_coupling = {
        let m = pv_idx.len();
        let mut s = DMatrix::<f64>::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                let (da, db) = (&ders[pv_idx[a]], &ders[pv_idx[b]]);
                if da.phase == db.phase {
                    s[(a, b)] = common_path_reactance(model, &net, da.bus, db.bus, da.phase);
                }
            }
            s[(a, a)] = s[(a, a)].max(1e-6);
        }
        s
    };

    let mut i_line: Vec<[Complex64; 3]> = vec![[Complex64::new(0.0, 0.0); 3]; model.lines.len()];
    let mut history = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut mismatch = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        iterations = iter;

        // Resolve inverter behavior at the present voltages.
        let mut dq_max = 0.0f64;
        for d in &mut ders {
            let vm = v[d.bus][d.phase.index()].norm();
            let old = d.q;
            match d.behavior {
                DerBehavior::FixedQ => {}
                DerBehavior::Droop { k_q, v_set } => {
                    // Damped update on the raw droop target; the factor
                    // shrinks when the droop is steep relative to the path
                    // reactance so the iteration stays a contraction (for
                    // very steep gains it becomes a Newton-like step toward
                    // the setpoint).  Clamping last pins saturated units
                    // exactly at their capability.
                    let target = k_q * (vm - v_set);
                    let alpha = opts.vv_damping.min(1.0 / (1.0 + k_q.abs() * d.x_path));
                    d.q = (d.q + alpha * (target - d.q)).clamp(-d.cap, d.cap);
                }
                DerBehavior::Setpoint { .. } => {}
            }
            dq_max = dq_max.max((d.q - old).abs());
        }
        if !pv_idx.is_empty() {
            let mut resid = DVector::from_iterator(
                pv_idx.len(),
                pv_idx.iter().map(|&i| {
                    let d = &ders[i];
                    let DerBehavior::Setpoint { v_set } = d.behavior else { unreachable!() };
                    v_set - v[d.bus][d.phase.index()].norm()
                }),
            );
            // Each unit steps toward its own residual; the coupling matrix
            // propagates the step onto the remaining residuals. Sweeping the
            // fleet repeatedly relaxes the whole coupled block against the
            // present voltages, which large fleets need to converge in a
            // reasonable number of outer iterations.
            for _pass in 0..50 {
                let mut pass_max = 0.0f64;
                for (k, &i) in pv_idx.iter().enumerate() {
                    let d = &mut ders[i];
                    let old = d.q;
                    let step = opts.pv_damping * resid[k] / pv_coupling[(k, k)];
                    d.q = (d.q + step).clamp(-d.cap, d.cap);
                    let moved = d.q - old;
                    pass_max = pass_max.max(moved.abs());
                    if moved != 0.0 {
                        for j in 0..pv_idx.len() {
                            resid[j] -= pv_coupling[(j, k)] * moved;
                        }
                    }
                }
                dq_max = dq_max.max(pass_max);
                if pass_max < 0.1 * opts.tol {
                    break;
                }
            }
        }

        // Net injection current per bus-phase at present voltages.
        let mut i_demand: Vec<[Complex64; 3]> =
            vec![[Complex64::new(0.0, 0.0); 3]; nb];
        for (bi, bus) in model.buses.iter().enumerate() {
            for p in bus.phases.iter() {
                let vp = v[bi][p.index()];
                let (s_nom, a0) = load[bi][p.index()];
                let s_load = s_nom * (a0 + (1.0 - a0) * vp.norm_sqr());
                if s_load != Complex64::new(0.0, 0.0) {
                    i_demand[bi][p.index()] += (s_load / vp).conj();
                }
            }
        }
        for d in &ders {
            let vp = v[d.bus][d.phase.index()];
            let s_inj = Complex64::new(d.p_g, d.q);
            i_demand[d.bus][d.phase.index()] -= (s_inj / vp).conj();
        }

        // Backward: accumulate line currents from the leaves.
        for li in i_line.iter_mut() {
            *li = [Complex64::new(0.0, 0.0); 3];
        }
        for &bus in net.order.iter().rev() {
            let Some(pl) = net.parent_line[bus] else {
                continue;
            };
            for p in &net.carried[pl] {
                i_line[pl][p.index()] = i_demand[bus][p.index()];
            }
            // Fold into the parent's demand.
            let parent = net.line_from[pl];
            for p in &net.carried[pl] {
                i_demand[parent][p.index()] += i_line[pl][p.index()];
            }
        }

        // Forward: update voltages from the substation down.
        let mut dv_max = 0.0f64;
        for &bus in &net.order {
            let Some(pl) = net.parent_line[bus] else {
                continue;
            };
            let parent = net.line_from[pl];
            for p in &net.carried[pl] {
                let mut drop = Complex64::new(0.0, 0.0);
                for q in &net.carried[pl] {
                    drop += net.z[pl][p.index()][q.index()] * i_line[pl][q.index()];
                }
                let nv = v[parent][p.index()] - drop;
                dv_max = dv_max.max((nv - v[bus][p.index()]).norm());
                v[bus][p.index()] = nv;
            }
        }

        // Collapse guard.
        for (bi, bus) in model.buses.iter().enumerate() {
            for p in bus.phases.iter() {
                let m = v[bi][p.index()].norm();
                if m < 0.5 {
                    return Err(OracleError::VoltageCollapse {
                        node: format!("{}.{}", bus.id, p),
                        magnitude: m,
                        iteration: iter,
                    });
                }
            }
        }

        mismatch = dv_max.max(dq_max);
        history.push(mismatch);
        if opts.collect_trace {
            trace.push((iter, mismatch));
        }
        if mismatch < opts.tol {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(OracleError::NoConvergence {
            iterations,
            last_mismatch: mismatch,
            history,
        });
    }

    // Package keyed outputs.
    let mut voltages = BTreeMap::new();
    for (bi, bus) in model.buses.iter().enumerate() {
        for p in bus.phases.iter() {
            voltages.insert(format!("{}.{}", bus.id, p), v[bi][p.index()]);
        }
    }
    let der_q: BTreeMap<String, f64> = model
        .ders
        .iter()
        .zip(&ders)
        .map(|(d, s)| (d.id.clone(), s.q))
        .collect();
    let mut line_flows = BTreeMap::new();
    let mut line_currents = BTreeMap::new();
    for (li, line) in model.lines.iter().enumerate() {
        let from = net.line_from[li];
        for p in &net.carried[li] {
            let key = format!("{}-{}.{}", line.from, line.to, p);
            let i = i_line[li][p.index()];
            line_flows.insert(key.clone(), v[from][p.index()] * i.conj());
            line_currents.insert(key, i);
        }
    }
    let mut substation_p = BTreeMap::new();
    let mut substation_q = BTreeMap::new();
    for (li, _) in model.lines.iter().enumerate() {
        if net.line_from[li] != net.substation {
            continue;
        }
        for p in &net.carried[li] {
            let s = v[net.substation][p.index()] * i_line[li][p.index()].conj();
            *substation_p.entry(p.letter().to_string()).or_insert(0.0) += s.re;
            *substation_q.entry(p.letter().to_string()).or_insert(0.0) += s.im;
        }
    }

    Ok(PowerFlowSolution {
        voltages,
        der_q,
        line_flows,
        line_currents,
        substation_p,
        substation_q,
        iterations,
        converged,
        max_mismatch: mismatch,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Balance check
// ---------------------------------------------------------------------------

/// Recomputes complex power conservation at every non-substation bus from
/// the solution's voltages and line currents; returns the infinity norm.
pub fn check_power_balance(sol: &PowerFlowSolution, model: &FeederModel) -> f64 {
    let pos = model.bus_positions();
    let substation = model.substation().expect("validated model has a substation");

    // Nominal loads and realized DER injections per bus-phase.
    let mut net: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    let vat = |bus: &str, p: Phase| sol.voltages[&format!("{bus}.{p}")];
    for l in &model.loads {
        let bi = pos[l.bus.as_str()];
        if bi == substation {
            continue;
        }
        let vm2 = vat(&l.bus, l.phase).norm_sqr();
        let s = Complex64::new(l.p, l.q) * (l.a0 + (1.0 - l.a0) * vm2);
        *net.entry((bi, l.phase.index())).or_default() -= s;
    }
    for d in &model.ders {
        let bi = pos[d.bus.as_str()];
        if bi == substation {
            continue;
        }
        let s = Complex64::new(d.p_g, sol.der_q[&d.id]);
        *net.entry((bi, d.phase.index())).or_default() += s;
    }
    for line in &model.lines {
        let (fi, ti) = (pos[line.from.as_str()], pos[line.to.as_str()]);
        // Orient by which end appears downstream in the stored flows.
        for p in Phase::ALL {
            let key = format!("{}-{}.{}", line.from, line.to, p);
            let Some(&i) = sol.line_currents.get(&key) else {
                continue;
            };
            // Receiving end gains, sending end loses.
            let (down, up) = (ti, fi);
            let v_down = vat(&model.buses[down].id, p);
            let v_up = vat(&model.buses[up].id, p);
            *net.entry((down, p.index())).or_default() += v_down * i.conj();
            if up != substation {
                *net.entry((up, p.index())).or_default() -= v_up * i.conj();
            }
        }
    }
    net.iter()
        .filter(|((bi, _), _)| *bi != substation)
        .map(|(_, s)| s.norm())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
