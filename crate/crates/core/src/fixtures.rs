//! Built-in feeder models: small hand-checked cases, a 13-bus unbalanced
//! feeder, a 123-bus-scale synthetic feeder, and a randomized generator for
//! property tests. The JSON files under `fixtures/` at the repository root
//! are serialized copies of these generators; a test guards against drift.

use rand::Rng;

use crate::feeder::{
    Bases, Bus, DerMode, DerUnit, FeederModel, Line, Load, Phase, PhaseSet, VppCurve,
};

fn bus(id: &str, phases: &str, substation: bool) -> Bus {
    Bus {
        id: id.into(),
        phases: PhaseSet::parse(phases).expect("fixture phases"),
        is_substation: substation,
    }
}

/// Line with equal self impedance on every carried phase and fixed mutual
/// coupling ratios between carried phases.
fn line(from: &str, to: &str, phases: PhaseSet, r_self: f64, x_self: f64) -> Line {
    let mut r = [[0.0; 3]; 3];
    let mut x = [[0.0; 3]; 3];
    for pi in phases.iter() {
        for pj in phases.iter() {
            if pi == pj {
                r[pi.index()][pj.index()] = r_self;
                x[pi.index()][pj.index()] = x_self;
            } else {
                r[pi.index()][pj.index()] = 0.15 * r_self;
                x[pi.index()][pj.index()] = 0.35 * x_self;
            }
        }
    }
    Line { from: from.into(), to: to.into(), r, x, loss_factor: [1.0; 3], q_max: None }
}

fn load(bus: &str, phase: Phase, p: f64, q: f64) -> Load {
    Load { bus: bus.into(), phase, p, q, a0: 1.0 }
}

fn der(
    id: String,
    bus: &str,
    phase: Phase,
    mode: DerMode,
    p_g: f64,
    s_rating: f64,
) -> DerUnit {
    // Droop gain spans the full reactive capability over a 0.2 band of
    // squared voltage, so uniform-VV scenarios stay well posed.
    let cap = (s_rating * s_rating - p_g * p_g).sqrt();
    DerUnit {
        id,
        bus: bus.into(),
        phase,
        mode,
        p_g,
        s_rating,
        k_q: Some(-2.0 * cap / 0.2),
        q_fixed: None,
        y_set: None,
    }
}

/// Single-phase two-bus feeder: one line, one load, one PQ inverter.
pub fn two_bus() -> FeederModel {
    let phases = PhaseSet::parse("a").unwrap();
    FeederModel {
        buses: vec![bus("sub", "a", true), bus("b1", "a", false)],
        lines: vec![{
            let mut l = line("sub", "b1", phases, 0.01, 0.0);
            l.x[0][0] = 0.02;
            l
        }],
        loads: vec![load("b1", Phase::A, 0.1, 0.05)],
        ders: vec![der("d1".into(), "b1", Phase::A, DerMode::Pq, 0.03, 0.18)],
        vpp: VppCurve { k_q: 0.0, y_set: 1.0 },
        substation_y0: [1.0; 3],
        bases: Bases { base_mva: 1.0, base_kv: 4.16 },
    }
}

/// Unbalanced 13-bus feeder with 19 single-phase loads and a DER co-located
/// with every load. Model-level modes: volt-var at buses 634 and 675,
/// voltage-regulating at 671, fixed-injection everywhere else.
pub fn thirteen_bus() -> FeederModel {
    let buses = vec![
        bus("650", "abc", true),
        bus("632", "abc", false),
        bus("633", "abc", false),
        bus("634", "abc", false),
        bus("645", "bc", false),
        bus("646", "bc", false),
        bus("671", "abc", false),
        bus("680", "abc", false),
        bus("684", "ac", false),
        bus("611", "c", false),
        bus("652", "a", false),
        bus("692", "abc", false),
        bus("675", "abc", false),
    ];

    let line_specs: [(&str, &str, &str, f64, f64); 12] = [
        ("650", "632", "abc", 0.0040, 0.0120),
        ("632", "633", "abc", 0.0030, 0.0060),
        ("633", "634", "abc", 0.0020, 0.0040),
        ("632", "645", "bc", 0.0030, 0.0060),
        ("645", "646", "bc", 0.0020, 0.0040),
        ("632", "671", "abc", 0.0045, 0.0130),
        ("671", "680", "abc", 0.0030, 0.0090),
        ("671", "684", "ac", 0.0020, 0.0040),
        ("684", "611", "c", 0.0015, 0.0030),
        ("684", "652", "a", 0.0018, 0.0035),
        ("671", "692", "abc", 0.0010, 0.0020),
        ("692", "675", "abc", 0.0020, 0.0050),
    ];
    let mut lines: Vec<Line> = line_specs
        .iter()
        .map(|&(f, t, ph, r, x)| line(f, t, PhaseSet::parse(ph).unwrap(), r, x))
        .collect();
    // A generous flow limit on the feeder head exercises line-limit rows.
    lines[0].q_max = Some([3.0; 3]);

    let load_specs: [(&str, Phase, f64, f64); 19] = [
        ("632", Phase::A, 0.0051, 0.0030),
        ("632", Phase::B, 0.0198, 0.0114),
        ("632", Phase::C, 0.0351, 0.0204),
        ("633", Phase::A, 0.0120, 0.0080),
        ("634", Phase::A, 0.0480, 0.0330),
        ("634", Phase::B, 0.0360, 0.0270),
        ("634", Phase::C, 0.0360, 0.0270),
        ("645", Phase::B, 0.0510, 0.0375),
        ("646", Phase::B, 0.0345, 0.0198),
        ("646", Phase::C, 0.0345, 0.0198),
        ("652", Phase::A, 0.0384, 0.0258),
        ("671", Phase::A, 0.1155, 0.0660),
        ("671", Phase::B, 0.1155, 0.0660),
        ("671", Phase::C, 0.1155, 0.0660),
        ("675", Phase::A, 0.1455, 0.0570),
        ("675", Phase::B, 0.0204, 0.0180),
        ("675", Phase::C, 0.0870, 0.0636),
        ("692", Phase::C, 0.0510, 0.0453),
        ("611", Phase::C, 0.0510, 0.0240),
    ];
    let loads: Vec<Load> = load_specs.iter().map(|&(b, ph, p, q)| load(b, ph, p, q)).collect();

    let mode_at = |b: &str| match b {
        "634" | "675" => DerMode::Vv,
        "671" => DerMode::Pv,
        _ => DerMode::Pq,
    };
    let ders: Vec<DerUnit> = load_specs
        .iter()
        .map(|&(b, ph, _, _)| der(format!("der_{b}{ph}"), b, ph, mode_at(b), 0.03, 0.18))
        .collect();

    FeederModel {
        buses,
        lines,
        loads,
        ders,
        vpp: VppCurve { k_q: 40.0, y_set: 1.0 },
        substation_y0: [1.0; 3],
        bases: Bases { base_mva: 1.0, base_kv: 4.16 },
    }
}

/// 123-bus synthetic feeder: a 20-bus three-phase trunk with mixed-phase
/// laterals, 169 phase-node loads, and 85 DERs in mixed control modes.
pub fn synthetic_123() -> FeederModel {
    let lateral_phases = ["abc", "ab", "bc", "ac", "a", "b", "c"];
    let mut buses = vec![bus("s0", "abc", true)];
    let mut lines = Vec::new();
    let mut loads = Vec::new();
    let abc = PhaseSet::parse("abc").unwrap();

    let mut prev = "s0".to_string();
    for t in 1..=20 {
        let id = format!("t{t}");
        buses.push(bus(&id, "abc", false));
        lines.push(line(&prev, &id, abc, 0.0008, 0.0020));
        prev = id;
    }

    // Lateral sweep; DER sites are collected first so the fleet can be capped
    // at a fixed size deterministically.
    let mut der_sites: Vec<(String, Phase, bool)> = Vec::new();
    for t in 1..=20usize {
        let phases = PhaseSet::parse(lateral_phases[t % lateral_phases.len()]).unwrap();
        let depth = if t <= 2 { 6 } else { 5 };
        let mut up = format!("t{t}");
        for j in 1..=depth {
            let id = format!("l{t}_{j}");
            buses.push(bus(&id, &phases.to_string(), false));
            lines.push(line(&up, &id, phases, 0.0020, 0.0030));
            for ph in phases.iter() {
                loads.push(load(&id, ph, 0.0047, 0.0024));
                der_sites.push((id.clone(), ph, (t + j) % 2 == 0));
            }
            up = id;
        }
    }

    let mut picked: Vec<(String, Phase)> = Vec::new();
    for preferred in [true, false] {
        for (id, ph, pref) in &der_sites {
            if *pref == preferred && picked.len() < 85 {
                picked.push((id.clone(), *ph));
            }
        }
    }
    let ders: Vec<DerUnit> = picked
        .iter()
        .enumerate()
        .map(|(i, (b, ph))| {
            let mode = match i % 5 {
                3 => DerMode::Vv,
                4 => DerMode::Pv,
                _ => DerMode::Pq,
            };
            der(format!("g{i}"), b, *ph, mode, 0.01, 0.06)
        })
        .collect();

    FeederModel {
        buses,
        lines,
        loads,
        ders,
        vpp: VppCurve { k_q: 20.0, y_set: 1.0 },
        substation_y0: [1.0; 3],
        bases: Bases { base_mva: 1.0, base_kv: 4.16 },
    }
}

/// Random radial feeder with mixed phases, loss factors, and DER modes.
/// Always valid per `validate_feeder`; shape and parameters vary with `rng`.
pub fn random_radial(rng: &mut impl Rng, max_buses: usize) -> FeederModel {
    let n_buses = rng.gen_range(2..=max_buses.max(2));
    let mut buses = vec![bus("s0", "abc", true)];
    let mut lines = Vec::new();
    for i in 1..n_buses {
        let parent = rng.gen_range(0..i);
        let parent_phases: Vec<Phase> = buses[parent].phases.iter().collect();
        let mask = rng.gen_range(1..(1u32 << parent_phases.len()));
        let mut phases = PhaseSet::empty();
        for (j, &ph) in parent_phases.iter().enumerate() {
            if mask & (1 << j) != 0 {
                phases.insert(ph);
            }
        }
        let id = format!("b{i}");
        let parent_id = buses[parent].id.clone();
        buses.push(Bus { id: id.clone(), phases, is_substation: false });
        let r_self = rng.gen_range(0.002..0.02);
        let x_self = r_self * rng.gen_range(1.0..2.5);
        let mut l = line(&parent_id, &id, phases, r_self, x_self);
        for ph in phases.iter() {
            l.loss_factor[ph.index()] = 1.0 + rng.gen_range(0.0..0.08);
        }
        lines.push(l);
    }

    let mut loads = Vec::new();
    let mut ders = Vec::new();
    let mut der_count = 0;
    for b in buses.iter().skip(1) {
        for ph in b.phases.iter() {
            if rng.gen_bool(0.7) {
                loads.push(load(&b.id, ph, rng.gen_range(0.01..0.08), rng.gen_range(0.005..0.04)));
            }
            if rng.gen_bool(0.5) {
                let mode = match rng.gen_range(0..3) {
                    0 => DerMode::Pq,
                    1 => DerMode::Pv,
                    _ => DerMode::Vv,
                };
                let p_g = rng.gen_range(0.0..0.03);
                let s_rating = p_g + rng.gen_range(0.02..0.15);
                let mut d = der(format!("g{der_count}"), &b.id, ph, mode, p_g, s_rating);
                d.k_q = Some(-rng.gen_range(1.0..8.0));
                ders.push(d);
                der_count += 1;
            }
        }
    }

    let k_q = [0.0, 20.0, 40.0, -20.0][rng.gen_range(0..4)];
    FeederModel {
        buses,
        lines,
        loads,
        ders,
        vpp: VppCurve { k_q, y_set: 1.0 },
        substation_y0: [1.0; 3],
        bases: Bases { base_mva: 1.0, base_kv: 4.16 },
    }
}

/// Repository-root fixtures directory.
pub fn fixtures_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub const FIXTURE_FILES: [(&str, fn() -> FeederModel); 3] = [
    ("feeder2.json", two_bus),
    ("feeder13.json", thirteen_bus),
    ("feeder123.json", synthetic_123),
];

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{save_feeder, validate_feeder};
    use crate::lindist::build_index;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundled_models_are_valid() {
        for (name, build) in FIXTURE_FILES {
            let model = build();
            let diags = validate_feeder(&model);
            assert!(diags.is_empty(), "{name}: {diags:?}");
        }
    }

    #[test]
    fn thirteen_bus_shape() {
        let model = thirteen_bus();
        assert_eq!(model.buses.len(), 13);
        assert_eq!(model.lines.len(), 12);
        assert_eq!(model.loads.len(), 19);
        assert_eq!(model.ders.len(), 19);
        assert_eq!(build_index(&model).len(), 29);
        let n_vv = model.ders.iter().filter(|d| d.mode == DerMode::Vv).count();
        let n_pv = model.ders.iter().filter(|d| d.mode == DerMode::Pv).count();
        let n_pq = model.ders.iter().filter(|d| d.mode == DerMode::Pq).count();
        assert_eq!((n_vv, n_pv, n_pq), (6, 3, 10));
    }

    #[test]
    fn synthetic_123_shape() {
        let model = synthetic_123();
        assert_eq!(model.buses.len(), 123);
        assert_eq!(model.ders.len(), 85);
        assert_eq!(build_index(&model).len(), 229);
    }

    #[test]
    fn random_models_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let model = random_radial(&mut rng, 15);
            let diags = validate_feeder(&model);
            assert!(diags.is_empty(), "{diags:?}");
        }
    }

    #[test]
    fn bundled_files_match_generators() {
        for (name, build) in FIXTURE_FILES {
            let path = fixtures_dir().join(name);
            let text = std::fs::read_to_string(&path)
                .unwrap_or_else(|e| panic!("{name} missing ({e}); run the regen test"));
            let parsed = crate::feeder::parse_feeder(&text).unwrap();
            assert_eq!(parsed, build(), "{name} drifted; rerun regen_fixture_files");
        }
    }

    #[test]
    #[ignore = "rewrites the bundled fixture files"]
    fn regen_fixture_files() {
        let dir = fixtures_dir();
        std::fs::create_dir_all(&dir).unwrap();
        for (name, build) in FIXTURE_FILES {
            save_feeder(&build(), dir.join(name)).unwrap();
        }
    }
}
