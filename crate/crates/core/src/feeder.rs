//! Feeder data model, validation, and file ingestion.
//!
//! Everything downstream of this module works in per-unit. The file format
//! optionally accepts physical units (kW/kvar/kVA) with explicit bases;
//! conversion happens once at ingestion.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the three phases of an unbalanced feeder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    /// Position in 3x3 impedance blocks and per-phase triples.
    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    pub fn from_letter(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }

    /// Nominal phase angle in radians (a = 0, b = -120 deg, c = +120 deg).
    pub fn angle(self) -> f64 {
        let third = 2.0 * std::f64::consts::PI / 3.0;
        match self {
            Phase::A => 0.0,
            Phase::B => -third,
            Phase::C => third,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// A subset of {a, b, c}, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub fn empty() -> PhaseSet {
        PhaseSet(0)
    }

    pub fn all() -> PhaseSet {
        PhaseSet(0b111)
    }

    pub fn single(p: Phase) -> PhaseSet {
        PhaseSet(1 << p.index())
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn insert(&mut self, p: Phase) {
        self.0 |= 1 << p.index();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    /// Phases in a < b < c order.
    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Parses a string like "abc" or "bc". Letters may repeat but not be unknown.
    pub fn parse(s: &str) -> Result<PhaseSet, String> {
        let mut set = PhaseSet::empty();
        for c in s.chars() {
            match Phase::from_letter(c) {
                Some(p) => set.insert(p),
                None => return Err(format!("unknown phase letter '{c}' in \"{s}\"")),
            }
        }
        Ok(set)
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({self})")
    }
}

/// A network node. Exactly one bus per model is the substation.
#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    pub is_substation: bool,
}

/// A series element between two buses with full 3x3 per-unit impedance blocks.
///
/// Rows/columns of `r` and `x` are indexed a, b, c; entries outside the
/// intersection of the endpoint phase sets must be zero. `loss_factor` scales
/// the flow carried by each phase of this line in the linear model (1.0 means
/// lossless bookkeeping). `q_max` is an optional per-phase reactive flow limit.
#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub r: [[f64; 3]; 3],
    pub x: [[f64; 3]; 3],
    pub loss_factor: [f64; 3],
    pub q_max: Option<[f64; 3]>,
}

/// A single-phase load. `a0` is the constant-power fraction; the remainder
/// behaves as constant impedance in the nonlinear model.
#[derive(Clone, Debug, PartialEq)]
pub struct Load {
    pub bus: String,
    pub phase: Phase,
    pub p: f64,
    pub q: f64,
    pub a0: f64,
}

/// Inverter control mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerMode {
    /// Fixed active and reactive injection.
    Pq,
    /// Fixed active injection, reactive power regulates terminal voltage.
    Pv,
    /// Reactive power follows a droop on local voltage (Volt-VAR).
    Vv,
}

impl DerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DerMode::Pq => "PQ",
            DerMode::Pv => "PV",
            DerMode::Vv => "VV",
        }
    }

    pub fn parse(s: &str) -> Option<DerMode> {
        match s.to_ascii_uppercase().as_str() {
            "PQ" => Some(DerMode::Pq),
            "PV" => Some(DerMode::Pv),
            "VV" => Some(DerMode::Vv),
            _ => None,
        }
    }
}

impl fmt::Display for DerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single-phase inverter-interfaced resource.
///
/// `k_q` is the Volt-VAR droop gain (per-unit Q per per-unit V, negative so
/// the unit injects when voltage is low); required in VV mode. `q_fixed` and
/// `y_set` are command slots filled by dispatch: commanded reactive power for
/// PQ mode, squared-voltage setpoint for VV/PV modes.
#[derive(Clone, Debug, PartialEq)]
pub struct DerUnit {
    pub id: String,
    pub bus: String,
    pub phase: Phase,
    pub mode: DerMode,
    pub p_g: f64,
    pub s_rating: f64,
    pub k_q: Option<f64>,
    pub q_fixed: Option<f64>,
    pub y_set: Option<f64>,
}

impl DerUnit {
    /// Reactive capability from the apparent-power rating: sqrt(S^2 - p_g^2).
    pub fn q_capability(&self) -> f64 {
        (self.s_rating * self.s_rating - self.p_g * self.p_g).max(0.0).sqrt()
    }
}

/// Aggregate Volt-VAR curve the whole feeder presents at the substation.
///
/// The droop is expressed against squared voltage: target substation reactive
/// flow (consumption-positive, toward the loads) is `K_q/2 * (y0 - Y_set)`.
/// A negative target means the feeder exports reactive power to the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VppCurve {
    pub k_q: f64,
    pub y_set: f64,
}

/// Normalization bases carried by the model (metadata once values are in pu).
#[derive(Clone, Debug, PartialEq)]
pub struct Bases {
    pub base_mva: f64,
    pub base_kv: f64,
}

/// A complete radial feeder: graph, loads, DER fleet, and the VPP curve.
#[derive(Clone, Debug, PartialEq)]
pub struct FeederModel {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub loads: Vec<Load>,
    pub ders: Vec<DerUnit>,
    pub vpp: VppCurve,
    /// Squared substation voltage per phase (per-unit squared), indexed a, b, c.
    pub substation_y0: [f64; 3],
    pub bases: Bases,
}

impl FeederModel {
    /// Map from bus id to position in `buses`.
    pub fn bus_positions(&self) -> HashMap<&str, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect()
    }

    pub fn substation(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.is_substation)
    }

    /// Mean squared substation voltage over the substation's phases.
    pub fn mean_substation_y0(&self) -> f64 {
        let sub = match self.substation() {
            Some(i) => &self.buses[i],
            None => return f64::NAN,
        };
        let mut sum = 0.0;
        let mut n = 0usize;
        for p in sub.phases.iter() {
            sum += self.substation_y0[p.index()];
            n += 1;
        }
        if n == 0 { f64::NAN } else { sum / n as f64 }
    }
}

/// A single validation finding, naming the offending element.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub element: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid feeder model ({} problem(s)):\n{}", .0.len(), format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  - {d}")).collect::<Vec<_>>().join("\n")
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

/// Raw file records. Field names mirror the domain types; phases are strings
/// like "abc", and modes are "PQ" / "PV" / "VV".
mod schema {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    pub struct FeederFile {
        pub buses: Vec<BusRec>,
        pub lines: Vec<LineRec>,
        pub loads: Vec<LoadRec>,
        pub ders: Vec<DerRec>,
        pub vpp: VppRec,
        pub substation: SubstationRec,
        pub bases: BasesRec,
    }

    #[derive(Serialize, Deserialize)]
    pub struct BusRec {
        pub id: String,
        pub phases: String,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        pub is_substation: bool,
    }

    #[derive(Serialize, Deserialize)]
    pub struct LineRec {
        pub from: String,
        pub to: String,
        pub r: [[f64; 3]; 3],
        pub x: [[f64; 3]; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub loss_factor: Option<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub q_max: Option<[f64; 3]>,
    }

    #[derive(Serialize, Deserialize)]
    pub struct LoadRec {
        pub bus: String,
        pub phase: String,
        pub p: f64,
        pub q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub a0: Option<f64>,
    }

    #[derive(Serialize, Deserialize)]
    pub struct DerRec {
        pub id: String,
        pub bus: String,
        pub phase: String,
        pub mode: String,
        pub p_g: f64,
        pub s_rating: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub k_q: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub q_fixed: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub y_set: Option<f64>,
    }

    #[derive(Serialize, Deserialize)]
    pub struct VppRec {
        #[serde(rename = "K_q")]
        pub k_q: f64,
        #[serde(rename = "Y_set")]
        pub y_set: f64,
    }

    #[derive(Serialize, Deserialize)]
    pub struct SubstationRec {
        pub bus: String,
        pub y0: [f64; 3],
    }

    #[derive(Serialize, Deserialize)]
    pub struct BasesRec {
        pub base_mva: f64,
        pub base_kv: f64,
        /// "pu" (default): all quantities per-unit. "kw": powers in kW/kvar/kVA
        /// and droop gains in kvar per per-unit volt; voltages stay per-unit.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub units: Option<String>,
    }
}

fn model_from_file(file: schema::FeederFile) -> Result<FeederModel, FeederError> {
    let scale = match file.bases.units.as_deref() {
        None | Some("pu") => 1.0,
        Some("kw") => {
            if file.bases.base_mva <= 0.0 {
                return Err(FeederError::Schema(
                    "bases.base_mva must be positive when units = \"kw\"".into(),
                ));
            }
            1.0 / (file.bases.base_mva * 1000.0)
        }
        Some(other) => {
            return Err(FeederError::Schema(format!(
                "bases.units must be \"pu\" or \"kw\", got \"{other}\""
            )))
        }
    };

    let parse_phase_set = |owner: &str, s: &str| -> Result<PhaseSet, FeederError> {
        PhaseSet::parse(s).map_err(|e| FeederError::Schema(format!("{owner}: {e}")))
    };
    let parse_phase = |owner: &str, s: &str| -> Result<Phase, FeederError> {
        let set = parse_phase_set(owner, s)?;
        let mut it = set.iter();
        match (it.next(), it.next()) {
            (Some(p), None) => Ok(p),
            _ => Err(FeederError::Schema(format!(
                "{owner}: expected a single phase, got \"{s}\""
            ))),
        }
    };

    let mut buses = Vec::with_capacity(file.buses.len());
    for b in &file.buses {
        buses.push(Bus {
            id: b.id.clone(),
            phases: parse_phase_set(&format!("bus {}", b.id), &b.phases)?,
            is_substation: b.is_substation || b.id == file.substation.bus,
        });
    }

    let lines = file
        .lines
        .into_iter()
        .map(|l| Line {
            from: l.from,
            to: l.to,
            r: l.r,
            x: l.x,
            loss_factor: l.loss_factor.unwrap_or([1.0; 3]),
            q_max: l.q_max.map(|q| q.map(|v| v * scale)),
        })
        .collect();

    let mut loads = Vec::with_capacity(file.loads.len());
    for l in file.loads {
        loads.push(Load {
            phase: parse_phase(&format!("load at {}", l.bus), &l.phase)?,
            bus: l.bus,
            p: l.p * scale,
            q: l.q * scale,
            a0: l.a0.unwrap_or(1.0),
        });
    }

    let mut ders = Vec::with_capacity(file.ders.len());
    for d in file.ders {
        let mode = DerMode::parse(&d.mode).ok_or_else(|| {
            FeederError::Schema(format!("der {}: unknown mode \"{}\"", d.id, d.mode))
        })?;
        ders.push(DerUnit {
            phase: parse_phase(&format!("der {}", d.id), &d.phase)?,
            id: d.id,
            bus: d.bus,
            mode,
            p_g: d.p_g * scale,
            s_rating: d.s_rating * scale,
            k_q: d.k_q.map(|k| k * scale),
            q_fixed: d.q_fixed.map(|q| q * scale),
            y_set: d.y_set,
        });
    }

    Ok(FeederModel {
        buses,
        lines,
        loads,
        ders,
        vpp: VppCurve { k_q: file.vpp.k_q * scale, y_set: file.vpp.y_set },
        substation_y0: file.substation.y0,
        bases: Bases { base_mva: file.bases.base_mva, base_kv: file.bases.base_kv },
    })
}

fn file_from_model(model: &FeederModel) -> schema::FeederFile {
    let substation_bus = model
        .substation()
        .map(|i| model.buses[i].id.clone())
        .unwrap_or_default();
    schema::FeederFile {
        buses: model
            .buses
            .iter()
            .map(|b| schema::BusRec {
                id: b.id.clone(),
                phases: b.phases.to_string(),
                is_substation: b.is_substation,
            })
            .collect(),
        lines: model
            .lines
            .iter()
            .map(|l| schema::LineRec {
                from: l.from.clone(),
                to: l.to.clone(),
                r: l.r,
                x: l.x,
                loss_factor: if l.loss_factor == [1.0; 3] { None } else { Some(l.loss_factor) },
                q_max: l.q_max,
            })
            .collect(),
        loads: model
            .loads
            .iter()
            .map(|l| schema::LoadRec {
                bus: l.bus.clone(),
                phase: l.phase.to_string(),
                p: l.p,
                q: l.q,
                a0: if l.a0 == 1.0 { None } else { Some(l.a0) },
            })
            .collect(),
        ders: model
            .ders
            .iter()
            .map(|d| schema::DerRec {
                id: d.id.clone(),
                bus: d.bus.clone(),
                phase: d.phase.to_string(),
                mode: d.mode.as_str().to_string(),
                p_g: d.p_g,
                s_rating: d.s_rating,
                k_q: d.k_q,
                q_fixed: d.q_fixed,
                y_set: d.y_set,
            })
            .collect(),
        vpp: schema::VppRec { k_q: model.vpp.k_q, y_set: model.vpp.y_set },
        substation: schema::SubstationRec { bus: substation_bus, y0: model.substation_y0 },
        bases: schema::BasesRec {
            base_mva: model.bases.base_mva,
            base_kv: model.bases.base_kv,
            units: None,
        },
    }
}

/// Loads, converts to per-unit, and validates a feeder file.
pub fn load_feeder(path: impl AsRef<Path>) -> Result<FeederModel, FeederError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FeederError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_feeder(&text)
}

/// Parses a feeder document from a string. See [`load_feeder`].
pub fn parse_feeder(text: &str) -> Result<FeederModel, FeederError> {
    let file: schema::FeederFile = serde_json::from_str(text)?;
    let model = model_from_file(file)?;
    let diags = validate_feeder(&model);
    if diags.is_empty() {
        Ok(model)
    } else {
        Err(FeederError::Invalid(diags))
    }
}

/// Serializes a model to the canonical per-unit file format.
pub fn emit_feeder(model: &FeederModel) -> String {
    let mut text = serde_json::to_string_pretty(&file_from_model(model))
        .expect("feeder schema serialization cannot fail");
    text.push('\n');
    text
}

/// Writes [`emit_feeder`] output to a file.
pub fn save_feeder(model: &FeederModel, path: impl AsRef<Path>) -> Result<(), FeederError> {
    let path = path.as_ref();
    std::fs::write(path, emit_feeder(model)).map_err(|source| FeederError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Checks every model invariant and returns one diagnostic per violation.
///
/// An empty result means the model is safe to hand to the assembly and
/// power-flow stages.
pub fn validate_feeder(model: &FeederModel) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut diag = |element: &str, message: String| {
        diags.push(Diagnostic { element: element.to_string(), message });
    };

    // Buses: unique ids, non-empty phases, exactly one substation.
    let mut seen = HashSet::new();
    for b in &model.buses {
        if !seen.insert(b.id.as_str()) {
            diag(&format!("bus {}", b.id), "duplicate bus id".into());
        }
        if b.phases.is_empty() {
            diag(&format!("bus {}", b.id), "empty phase set".into());
        }
    }
    let n_sub = model.buses.iter().filter(|b| b.is_substation).count();
    if n_sub != 1 {
        diag("model", format!("expected exactly one substation bus, found {n_sub}"));
    }

    let pos = model.bus_positions();

    // Lines: endpoints exist, impedance confined to the shared phases,
    // positive loss factors.
    for (i, l) in model.lines.iter().enumerate() {
        let name = format!("line {} ({}-{})", i, l.from, l.to);
        let from = pos.get(l.from.as_str());
        let to = pos.get(l.to.as_str());
        if from.is_none() {
            diag(&name, format!("unknown bus \"{}\"", l.from));
        }
        if to.is_none() {
            diag(&name, format!("unknown bus \"{}\"", l.to));
        }
        if l.from == l.to {
            diag(&name, "line connects a bus to itself".into());
        }
        if let (Some(&f), Some(&t)) = (from, to) {
            let shared = model.buses[f].phases.intersection(model.buses[t].phases);
            if shared.is_empty() {
                diag(&name, "endpoints share no phase".into());
            }
            for pi in Phase::ALL {
                for pj in Phase::ALL {
                    let outside = !shared.contains(pi) || !shared.contains(pj);
                    if outside && (l.r[pi.index()][pj.index()] != 0.0 || l.x[pi.index()][pj.index()] != 0.0)
                    {
                        diag(
                            &name,
                            format!("impedance entry ({pi},{pj}) outside shared phases {shared}"),
                        );
                    }
                }
            }
        }
        for p in Phase::ALL {
            let lf = l.loss_factor[p.index()];
            if !(lf > 0.0) || !lf.is_finite() {
                diag(&name, format!("loss_factor[{p}] = {lf} must be a positive finite number"));
            }
        }
    }

    // Graph shape: connected and radial.
    for d in check_radial(model, &pos) {
        diag(&d.element, d.message);
    }

    // Loads reference existing phase-nodes; a0 within [0, 1].
    for (i, l) in model.loads.iter().enumerate() {
        let name = format!("load {} ({}.{})", i, l.bus, l.phase);
        match pos.get(l.bus.as_str()) {
            None => diag(&name, format!("unknown bus \"{}\"", l.bus)),
            Some(&b) => {
                if !model.buses[b].phases.contains(l.phase) {
                    diag(&name, format!("bus {} has no phase {}", l.bus, l.phase));
                }
            }
        }
        if !(0.0..=1.0).contains(&l.a0) {
            diag(&name, format!("a0 = {} outside [0, 1]", l.a0));
        }
        if !l.p.is_finite() || !l.q.is_finite() {
            diag(&name, "non-finite demand".into());
        }
    }

    // DERs: unique ids, valid placement, capability, droop gain when needed.
    let mut der_ids = HashSet::new();
    for d in &model.ders {
        let name = format!("der {}", d.id);
        if !der_ids.insert(d.id.as_str()) {
            diag(&name, "duplicate der id".into());
        }
        match pos.get(d.bus.as_str()) {
            None => diag(&name, format!("unknown bus \"{}\"", d.bus)),
            Some(&b) => {
                if !model.buses[b].phases.contains(d.phase) {
                    diag(&name, format!("bus {} has no phase {}", d.bus, d.phase));
                }
            }
        }
        if !d.p_g.is_finite() || !d.s_rating.is_finite() || d.s_rating < 0.0 {
            diag(&name, format!("bad ratings p_g = {}, s_rating = {}", d.p_g, d.s_rating));
        } else if d.p_g.abs() > d.s_rating {
            diag(&name, format!("|p_g| = {} exceeds s_rating = {}", d.p_g.abs(), d.s_rating));
        }
        if d.mode == DerMode::Vv {
            match d.k_q {
                Some(k) if k.is_finite() && k != 0.0 => {}
                other => diag(
                    &name,
                    format!("VV mode requires a finite nonzero k_q, got {other:?}"),
                ),
            }
        }
    }

    // VPP curve and substation voltage.
    if !model.vpp.k_q.is_finite() {
        diag("vpp", format!("K_q = {} must be finite", model.vpp.k_q));
    }
    if !model.vpp.y_set.is_finite() || model.vpp.y_set <= 0.0 {
        diag("vpp", format!("Y_set = {} must be a positive finite number", model.vpp.y_set));
    }
    if let Some(sub) = model.substation() {
        for p in model.buses[sub].phases.iter() {
            let y0 = model.substation_y0[p.index()];
            if !y0.is_finite() || y0 <= 0.0 {
                diag("substation", format!("y0[{p}] = {y0} must be a positive finite number"));
            }
        }
    }
    if !(model.bases.base_mva > 0.0) || !(model.bases.base_kv > 0.0) {
        diag(
            "bases",
            format!("base_mva = {}, base_kv = {} must be positive", model.bases.base_mva, model.bases.base_kv),
        );
    }

    diags
}

/// Connectivity, cycle, and phase-narrowing checks rooted at the substation.
fn check_radial(model: &FeederModel, pos: &HashMap<&str, usize>) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let nb = model.buses.len();
    if model.lines.len() + 1 != nb {
        diags.push(Diagnostic {
            element: "model".into(),
            message: format!(
                "non-radial: {} lines for {} buses (expected {})",
                model.lines.len(),
                nb,
                nb.saturating_sub(1)
            ),
        });
    }
    let sub = match model.substation() {
        Some(s) => s,
        None => return diags,
    };

    // Adjacency over valid endpoints only; endpoint errors are reported elsewhere.
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nb];
    for (li, l) in model.lines.iter().enumerate() {
        if let (Some(&f), Some(&t)) = (pos.get(l.from.as_str()), pos.get(l.to.as_str())) {
            if f != t {
                adj[f].push((t, li));
                adj[t].push((f, li));
            }
        }
    }

    let mut visited = vec![false; nb];
    let mut parent_line = vec![usize::MAX; nb];
    let mut queue = std::collections::VecDeque::new();
    visited[sub] = true;
    queue.push_back(sub);
    let mut cycle_reported = false;
    while let Some(u) = queue.pop_front() {
        for &(v, li) in &adj[u] {
            if li == parent_line[u] {
                continue;
            }
            if visited[v] {
                if !cycle_reported {
                    let l = &model.lines[li];
                    diags.push(Diagnostic {
                        element: format!("line {} ({}-{})", li, l.from, l.to),
                        message: "non-radial: closes a cycle".into(),
                    });
                    cycle_reported = true;
                }
                continue;
            }
            visited[v] = true;
            parent_line[v] = li;
            // Every phase served at v must arrive through u.
            if !model.buses[v].phases.is_subset_of(model.buses[u].phases) {
                diags.push(Diagnostic {
                    element: format!("bus {}", model.buses[v].id),
                    message: format!(
                        "phases {} not a subset of upstream bus {} phases {}",
                        model.buses[v].phases, model.buses[u].id, model.buses[u].phases
                    ),
                });
            }
            queue.push_back(v);
        }
    }
    for (i, b) in model.buses.iter().enumerate() {
        if !visited[i] {
            diags.push(Diagnostic {
                element: format!("bus {}", b.id),
                message: "unreachable from the substation".into(),
            });
        }
    }
    diags
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
