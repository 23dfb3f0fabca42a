//! Synthetic QM9-layout corpus for offline runs and tests.
//!
//! Molecules are random single-bonded trees of C/N/O/F with hydrogens filling
//! the remaining valence. Property values are deterministic functions of
//! composition and geometry, rounded the way the QM9 files round them, so
//! file-level invariants (gap = lumo - homo, u298 > u0) hold exactly.
//! [`SynthPubChem`] answers PUG REST requests for such a corpus.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde_json::json;

use crate::pubchem::{
    DiskCache, HttpRequest, HttpResponse, ManualClock, Method, PubChemClient, Transport, TransportError, PROPERTY_LIST,
};
use crate::qm9::{Element, Molecule, TargetId, Targets};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_molecules: usize,
    pub seed: u64,
    /// Heavy atoms per molecule are drawn from `1..=max_heavy`.
    pub max_heavy: usize,
    /// Replace this target with a value unrelated to geometry and copy it
    /// (plus 1% noise) into the XLogP descriptor.
    pub leak: Option<TargetId>,
    pub not_found_rate: f64,
    pub incomplete_rate: f64,
    pub missing_xlogp_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_molecules: 100,
            seed: 0,
            max_heavy: 7,
            leak: None,
            not_found_rate: 0.03,
            incomplete_rate: 0.02,
            missing_xlogp_rate: 0.1,
        }
    }
}

fn valence(e: Element) -> usize {
    match e {
        Element::H | Element::F => 1,
        Element::O => 2,
        Element::N => 3,
        Element::C => 4,
    }
}

fn bond_length(a: Element, b: Element) -> f64 {
    let r = |e: Element| match e {
        Element::H => 0.32,
        Element::C => 0.76,
        Element::N => 0.71,
        Element::O => 0.66,
        Element::F => 0.57,
    };
    r(a) + r(b)
}

fn draw_element(rng: &mut ChaCha8Rng) -> Element {
    match rng.random_range(0..100) {
        0..70 => Element::C,
        70..82 => Element::N,
        82..95 => Element::O,
        _ => Element::F,
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

struct Skeleton {
    elements: Vec<Element>,
    coords: Vec<[f64; 3]>,
    bonds: Vec<(usize, usize)>,
}

/// Places `child` bonded to `parent`, away from every other atom.
fn place(rng: &mut ChaCha8Rng, s: &Skeleton, parent: usize, child: Element, clearance: f64) -> Option<[f64; 3]> {
    let len = bond_length(s.elements[parent], child);
    for _ in 0..64 {
        let u: [f64; 3] = UnitSphere.sample(rng);
        let p = s.coords[parent];
        let c = [p[0] + len * u[0], p[1] + len * u[1], p[2] + len * u[2]];
        let clear = s
            .coords
            .iter()
            .enumerate()
            .all(|(i, &q)| i == parent || dist(c, q) >= clearance);
        if clear {
            return Some(c);
        }
    }
    None
}

fn build_skeleton(rng: &mut ChaCha8Rng, n_heavy: usize) -> Option<Skeleton> {
    let mut s = Skeleton {
        elements: Vec::new(),
        coords: Vec::new(),
        bonds: Vec::new(),
    };
    let mut free: Vec<usize> = Vec::new();
    let first = if n_heavy == 1 { draw_element(rng) } else { Element::C };
    s.elements.push(first);
    s.coords.push([0.0; 3]);
    free.push(valence(first));
    while s.elements.len() < n_heavy {
        let e = draw_element(rng);
        let open: Vec<usize> = (0..s.elements.len()).filter(|&i| free[i] > 0).collect();
        if open.is_empty() {
            return None;
        }
        // a univalent atom may only end the tree if someone else stays open
        if valence(e) == 1 && open.len() == 1 && free[open[0]] == 1 && s.elements.len() + 1 < n_heavy {
            continue;
        }
        let parent = open[rng.random_range(0..open.len())];
        let c = place(rng, &s, parent, e, 2.0)?;
        s.bonds.push((parent, s.elements.len()));
        free[parent] -= 1;
        s.elements.push(e);
        s.coords.push(c);
        free.push(valence(e) - 1);
    }
    for (i, &n_free) in free.iter().enumerate() {
        for _ in 0..n_free {
            let c = place(rng, &s, i, Element::H, 1.4)?;
            s.bonds.push((i, s.elements.len()));
            s.elements.push(Element::H);
            s.coords.push(c);
        }
    }
    Some(s)
}

fn atomic_energy(e: Element) -> f64 {
    match e {
        Element::H => -0.500273,
        Element::C => -37.846772,
        Element::N => -54.583861,
        Element::O => -75.064579,
        Element::F => -99.718730,
    }
}

fn electronegativity_charge(e: Element) -> f64 {
    match e {
        Element::H => 0.12,
        Element::C => -0.05,
        Element::N => -0.35,
        Element::O => -0.40,
        Element::F => -0.25,
    }
}

fn round_to(x: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (x * s).round() / s
}

fn count(elements: &[Element], e: Element) -> f64 {
    elements.iter().filter(|&&x| x == e).count() as f64
}

/// Property values as deterministic functions of the structure.
fn properties(s: &Skeleton, charges: &[f64]) -> Targets {
    let el = &s.elements;
    let (n_c, n_n, n_o, n_f, n_h) = (
        count(el, Element::C),
        count(el, Element::N),
        count(el, Element::O),
        count(el, Element::F),
        count(el, Element::H),
    );
    let n_atoms = el.len() as f64;
    let heavy: Vec<usize> = (0..el.len()).filter(|&i| el[i] != Element::H).collect();
    let n_heavy = heavy.len() as f64;

    // compactness over heavy-atom pairs
    let mut compact = 0.0;
    for (a, &i) in heavy.iter().enumerate() {
        for &j in &heavy[a + 1..] {
            compact += (-(dist(s.coords[i], s.coords[j]) - 2.5).powi(2)).exp();
        }
    }
    compact /= n_heavy;

    let mass: f64 = el.iter().map(|e| e.atomic_mass()).sum();
    let mut com = [0.0; 3];
    for (e, c) in el.iter().zip(&s.coords) {
        for k in 0..3 {
            com[k] += e.atomic_mass() * c[k] / mass;
        }
    }
    let rel: Vec<[f64; 3]> = s.coords.iter().map(|c| [c[0] - com[0], c[1] - com[1], c[2] - com[2]]).collect();
    let r2_ang: f64 = el
        .iter()
        .zip(&rel)
        .map(|(e, r)| (e.index() as f64 + 1.0) * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]))
        .sum();
    let rg2 = rel.iter().map(|r| r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sum::<f64>() / n_atoms;

    let mut dipole = [0.0; 3];
    for (q, r) in charges.iter().zip(&rel) {
        for k in 0..3 {
            dipole[k] += q * r[k];
        }
    }
    let mu = 4.803 * (dipole[0].powi(2) + dipole[1].powi(2) + dipole[2].powi(2)).sqrt();

    let mut inertia = [0.0; 3];
    for (e, r) in el.iter().zip(&rel) {
        let m = e.atomic_mass();
        inertia[0] += m * (r[1] * r[1] + r[2] * r[2]);
        inertia[1] += m * (r[0] * r[0] + r[2] * r[2]);
        inertia[2] += m * (r[0] * r[0] + r[1] * r[1]);
    }
    inertia.sort_by(f64::total_cmp);
    let rot = |i: f64| if i > 1e-8 { round_to(505.379_1 / i, 5) } else { 0.0 };

    let heavy_bonds = s
        .bonds
        .iter()
        .filter(|(a, b)| el[*a] != Element::H && el[*b] != Element::H)
        .count() as f64;

    let homo = round_to(
        -0.235 - 0.011 * n_o - 0.007 * n_n - 0.013 * n_f + 0.003 * n_c + 0.02 * (compact - 1.0).tanh(),
        4,
    );
    let lumo = round_to(
        homo + 0.27 + 0.004 * n_c - 0.012 * n_o - 0.006 * n_n + 0.03 * (1.3 * compact).sin() - 0.002 * rg2,
        4,
    );
    let gap = round_to(lumo - homo, 4);
    let alpha = round_to(6.0 * n_c + 5.0 * n_n + 4.2 * n_o + 2.6 * n_f + 1.9 * n_h + 0.35 * rg2, 2);
    let r2 = round_to(r2_ang / (0.529_177_2 * 0.529_177_2), 4);
    let zpve = round_to(0.0046 * n_h + 0.0021 * heavy_bonds + 0.0006 * n_heavy, 6);
    let u0 = round_to(
        el.iter().map(|&e| atomic_energy(e)).sum::<f64>() - 0.115 * (s.bonds.len() as f64) - 0.004 * compact,
        6,
    );
    let u298 = round_to(u0 + 0.0024 + 0.00045 * n_atoms, 6);
    let h298 = round_to(u298 + 0.000944, 6);
    let g298 = round_to(h298 - 0.0255 - 0.00052 * n_atoms, 6);
    let cv = round_to(6.1 + 1.15 * n_atoms + 0.8 * heavy_bonds, 3);

    let mut t = Targets([0.0; 15]);
    t.set(TargetId::A, rot(inertia[0]));
    t.set(TargetId::B, rot(inertia[1]));
    t.set(TargetId::C, rot(inertia[2]));
    t.set(TargetId::Mu, round_to(mu, 4));
    t.set(TargetId::Alpha, alpha);
    t.set(TargetId::Homo, homo);
    t.set(TargetId::Lumo, lumo);
    t.set(TargetId::Gap, gap);
    t.set(TargetId::R2, r2);
    t.set(TargetId::Zpve, zpve);
    t.set(TargetId::U0, u0);
    t.set(TargetId::U298, u298);
    t.set(TargetId::H298, h298);
    t.set(TargetId::G298, g298);
    t.set(TargetId::Cv, cv);
    t
}

/// Hill-order formula.
pub fn hill_formula(elements: &[Element]) -> String {
    let mut s = String::new();
    let mut push = |e: Element| {
        let n = count(elements, e) as usize;
        match n {
            0 => {}
            1 => s.push_str(e.symbol()),
            _ => s.push_str(&format!("{}{n}", e.symbol())),
        }
    };
    if elements.contains(&Element::C) {
        push(Element::C);
        push(Element::H);
        for e in [Element::F, Element::N, Element::O] {
            push(e);
        }
    } else {
        for e in [Element::F, Element::H, Element::N, Element::O] {
            push(e);
        }
    }
    s
}

fn make_molecule(index: u64, rng: &mut ChaCha8Rng, max_heavy: usize) -> Molecule {
    let s = loop {
        let n_heavy = rng.random_range(1..=max_heavy.max(1));
        if let Some(s) = build_skeleton(rng, n_heavy) {
            break s;
        }
    };
    let mut charges: Vec<f64> = s.elements.iter().map(|&e| electronegativity_charge(e)).collect();
    let mean = charges.iter().sum::<f64>() / charges.len() as f64;
    for q in &mut charges {
        *q = round_to(*q - mean, 6);
    }
    let targets = properties(&s, &charges);
    let formula = hill_formula(&s.elements);
    let n = s.elements.len();
    let freqs: Vec<String> = (0..(3 * n).saturating_sub(6).max(1))
        .map(|k| format!("{:.4}", 400.0 + 3100.0 * (k as f64 + 1.0) / (3 * n) as f64))
        .collect();
    let heavy: String = s.elements.iter().filter(|&&e| e != Element::H).map(|e| e.symbol()).collect();
    let smiles = format!("{heavy}.{index}");
    let inchi = format!("InChI=1S/{formula}/c{index}");
    Molecule {
        id: format!("dsgdb9nsd_{index:06}"),
        index,
        elements: s.elements,
        coords: s
            .coords
            .iter()
            .map(|c| c.map(|x| round_to(x, 10)))
            .collect(),
        targets,
        partial_charges: charges,
        trailer: vec![freqs.join("\t"), format!("{smiles}\t{smiles}"), format!("{inchi}\t{inchi}")],
    }
}

/// Generates the corpus. Molecule `i` has QM9 index `i + 1`.
pub fn synth_corpus(cfg: &SynthConfig) -> Vec<Molecule> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out: Vec<Molecule> = (0..cfg.n_molecules)
        .map(|i| make_molecule(i as u64 + 1, &mut rng, cfg.max_heavy))
        .collect();
    if let Some(t) = cfg.leak {
        let (lo, hi) = leak_range(&out, t);
        for m in &mut out {
            let v = round_to(rng.random_range(lo..hi), 6);
            m.targets.set(t, v);
            if matches!(t, TargetId::Homo | TargetId::Lumo) {
                let gap = round_to(m.targets.get(TargetId::Lumo) - m.targets.get(TargetId::Homo), 6);
                m.targets.set(TargetId::Gap, gap);
            }
        }
    }
    out
}

fn leak_range(ms: &[Molecule], t: TargetId) -> (f64, f64) {
    let ys: Vec<f64> = ms.iter().map(|m| m.targets.get(t)).collect();
    let mean = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
    let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len().max(1) as f64).sqrt();
    let half = (3f64.sqrt() * std).max(1e-3);
    (mean - half, mean + half)
}

/// What the synthetic database knows about one molecule.
#[derive(Clone, Debug, PartialEq)]
pub enum SynthRecord {
    NotFound,
    /// Resolves but the property record lacks TPSA.
    Incomplete { cid: u64 },
    Complete { cid: u64, properties: serde_json::Value, synonyms: Vec<String> },
}

fn name_for(elements: &[Element]) -> String {
    const STEMS: [&str; 9] = ["meth", "eth", "prop", "but", "pent", "hex", "hept", "oct", "non"];
    let n_c = count(elements, Element::C) as usize;
    let stem = if n_c == 0 { "hydr" } else { STEMS[(n_c - 1).min(8)] };
    let mut name = format!("{stem}ane");
    if elements.contains(&Element::O) {
        name = format!("{stem}anol");
    }
    if elements.contains(&Element::N) {
        name = format!("{name}amine");
    }
    if elements.contains(&Element::F) {
        name = format!("fluoro{name}");
    }
    name
}

/// Descriptor record for a synthetic molecule, built so that XLogP carries
/// the leaked target when one is configured.
pub fn synth_record(m: &Molecule, cfg: &SynthConfig, leak_std: Option<f64>) -> SynthRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ m.index.wrapping_mul(0xa076_1d64_78bd_642f));
    let roll: f64 = rng.random();
    if roll < cfg.not_found_rate {
        return SynthRecord::NotFound;
    }
    let cid = 100_000 + m.index;
    if roll < cfg.not_found_rate + cfg.incomplete_rate {
        return SynthRecord::Incomplete { cid };
    }
    let el = &m.elements;
    let (n_c, n_n, n_o, n_f) = (
        count(el, Element::C),
        count(el, Element::N),
        count(el, Element::O),
        count(el, Element::F),
    );
    let formula = hill_formula(el);
    let mw = round_to(el.iter().map(|e| e.atomic_mass()).sum::<f64>(), 3);
    // hydrogens bonded to N or O: nearest heavy atom of each H
    let mut donors = 0u32;
    for (i, &e) in el.iter().enumerate() {
        if e != Element::H {
            continue;
        }
        let nearest = (0..el.len())
            .filter(|&j| el[j] != Element::H)
            .min_by(|&a, &b| dist(m.coords[i], m.coords[a]).total_cmp(&dist(m.coords[i], m.coords[b])));
        if nearest.is_some_and(|j| matches!(el[j], Element::N | Element::O)) {
            donors += 1;
        }
    }
    let xlogp = match (cfg.leak, leak_std) {
        (Some(t), Some(std)) => {
            let noise = Normal::new(0.0, 0.01 * std).expect("finite std").sample(&mut rng);
            Some(m.targets.get(t) + noise)
        }
        _ if rng.random::<f64>() < cfg.missing_xlogp_rate => None,
        _ => Some(round_to(0.5 * n_c - 0.7 * n_o - 0.9 * n_n + 0.2 * n_f - 0.4, 1)),
    };
    let name = name_for(el);
    let mut props = json!({
        "CID": cid,
        "MolecularFormula": formula,
        "MolecularWeight": format!("{mw}"),
        "IUPACName": name,
        "TPSA": round_to(20.2 * n_o + 12.0 * n_n, 1),
        "Charge": 0,
        "HBondDonorCount": donors,
        "HBondAcceptorCount": (n_n + n_o + n_f) as u32,
        "RotatableBondCount": (n_c as u32).saturating_sub(2),
    });
    if let Some(x) = xlogp {
        props["XLogP"] = json!(x);
    }
    SynthRecord::Complete {
        cid,
        properties: props,
        synonyms: vec![name.clone(), name.to_uppercase(), formula, format!("SYN-{:06}", m.index)],
    }
}

/// In-process PUG REST stand-in serving a synthetic corpus.
pub struct SynthPubChem {
    by_structure: HashMap<String, SynthRecord>,
    by_cid: HashMap<u64, SynthRecord>,
}

impl SynthPubChem {
    pub fn new(molecules: &[Molecule], cfg: &SynthConfig) -> Self {
        let leak_std = cfg.leak.map(|t| {
            let (lo, hi) = leak_range(molecules, t);
            (hi - lo) / 12f64.sqrt()
        });
        let mut by_structure = HashMap::new();
        let mut by_cid = HashMap::new();
        for m in molecules {
            let rec = synth_record(m, cfg, leak_std);
            if let SynthRecord::Incomplete { cid } | SynthRecord::Complete { cid, .. } = rec {
                by_cid.insert(cid, rec.clone());
            }
            for key in m.inchi().into_iter().chain(m.smiles()) {
                by_structure.insert(key.to_string(), rec.clone());
            }
        }
        SynthPubChem { by_structure, by_cid }
    }

    fn not_found() -> HttpResponse {
        HttpResponse {
            status: 404,
            body: json!({"Fault": {"Code": "PUGREST.NotFound", "Message": "No CID found"}}).to_string(),
        }
    }
}

impl Transport for SynthPubChem {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let ok = |v: serde_json::Value| HttpResponse {
            status: 200,
            body: v.to_string(),
        };
        if req.method == Method::Post {
            let key = req.form.first().map(|(_, v)| v.as_str()).unwrap_or("");
            return Ok(match self.by_structure.get(key) {
                Some(SynthRecord::Incomplete { cid } | SynthRecord::Complete { cid, .. }) => {
                    ok(json!({"IdentifierList": {"CID": [cid]}}))
                }
                _ => Self::not_found(),
            });
        }
        let cid: Option<u64> = req
            .url
            .split("/compound/cid/")
            .nth(1)
            .and_then(|rest| rest.split('/').next())
            .and_then(|c| c.parse().ok());
        let Some(rec) = cid.and_then(|c| self.by_cid.get(&c)) else {
            return Ok(Self::not_found());
        };
        let is_synonyms = req.url.ends_with("/synonyms/JSON");
        Ok(match rec {
            SynthRecord::Complete { synonyms, .. } if is_synonyms => ok(json!({
                "InformationList": {"Information": [{"CID": cid, "Synonym": synonyms}]}
            })),
            SynthRecord::Complete { properties, .. } if req.url.contains(PROPERTY_LIST) => {
                ok(json!({"PropertyTable": {"Properties": [properties]}}))
            }
            SynthRecord::Incomplete { cid } if !is_synonyms => ok(json!({
                "PropertyTable": {"Properties": [{"CID": cid, "MolecularFormula": "X", "MolecularWeight": "1"}]}
            })),
            _ => Self::not_found(),
        })
    }
}

/// Client that answers from [`SynthPubChem`] on a virtual clock, so the
/// rate ceiling is honoured without wall-clock waits.
pub fn offline_client(molecules: &[Molecule], cfg: &SynthConfig, cache: DiskCache) -> PubChemClient {
    PubChemClient::builder(Box::new(SynthPubChem::new(molecules, cfg)), cache)
        .clock(Arc::new(ManualClock::default()))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, RbfConfig};
    use crate::qm9::{parse_xyz, write_xyz};

    #[test]
    fn corpus_is_deterministic_and_parseable() {
        let cfg = SynthConfig {
            n_molecules: 30,
            ..SynthConfig::default()
        };
        let a = synth_corpus(&cfg);
        assert_eq!(a, synth_corpus(&cfg));
        for m in &a {
            let mut back = parse_xyz(&write_xyz(m)).unwrap();
            back.id = m.id.clone();
            assert_eq!(&back, m);
            build_graph(m, &RbfConfig::default()).unwrap();
            let t = &m.targets;
            assert!((t.get(TargetId::Gap) - (t.get(TargetId::Lumo) - t.get(TargetId::Homo))).abs() < 1e-6);
            assert!(t.get(TargetId::U298) > t.get(TargetId::U0));
            assert!(m.inchi().unwrap().starts_with("InChI=1S/"));
        }
    }

    #[test]
    fn hill_formulas() {
        use Element::*;
        assert_eq!(hill_formula(&[C, H, H, H, H]), "CH4");
        assert_eq!(hill_formula(&[O, H, H]), "H2O");
        assert_eq!(hill_formula(&[C, C, O, H, H, H, H, H, H]), "C2H6O");
        assert_eq!(hill_formula(&[N, H, H, H]), "H3N");
    }

    #[test]
    fn leak_copies_target_into_xlogp() {
        let cfg = SynthConfig {
            n_molecules: 50,
            leak: Some(TargetId::Homo),
            not_found_rate: 0.0,
            incomplete_rate: 0.0,
            ..SynthConfig::default()
        };
        let ms = synth_corpus(&cfg);
        let (lo, hi) = leak_range(&ms, TargetId::Homo);
        let std = (hi - lo) / 12f64.sqrt();
        for m in &ms {
            let SynthRecord::Complete { properties, .. } = synth_record(m, &cfg, Some(std)) else {
                panic!("all records complete");
            };
            let x = properties["XLogP"].as_f64().unwrap();
            assert!((x - m.targets.get(TargetId::Homo)).abs() < 0.06 * std);
        }
    }
}
