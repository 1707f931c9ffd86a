//! Space-time minimum-weight perfect matching decoder.
//!
//! X and Z sectors are decoded independently. Each sector pairs its
//! detection events on a complete graph weighted by torus distance plus
//! round separation; matched pairs are joined by a shortest spatial path
//! and the residual error is checked against the logical operators.

pub mod blossom;

use crate::error::{Error, Result};
use crate::lattice::{torus_distance, Coord, StabilizerKind, ToricLayout};
use crate::simulator::{DataFrame, SyndromeRound, TrialRecord};

/// A change of a stabilizer outcome between consecutive rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Defect {
    pub round: usize,
    pub coord: Coord,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DefectSet {
    /// Events on X-stabilizers (caused by Z errors).
    pub x: Vec<Defect>,
    /// Events on Z-stabilizers (caused by X errors).
    pub z: Vec<Defect>,
}

impl DefectSet {
    pub fn of(&self, kind: StabilizerKind) -> &[Defect] {
        match kind {
            StabilizerKind::X => &self.x,
            StabilizerKind::Z => &self.z,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty() && self.z.is_empty()
    }
}

/// Difference syndrome: a defect at `(t, s)` iff stabilizer `s` reads
/// differently in rounds `t - 1` and `t`, with an all-zero round before the
/// first.
pub fn syndromes_to_defects(history: &[SyndromeRound], layout: &ToricLayout) -> Result<DefectSet> {
    let n = layout.num_stabilizers();
    let mut set = DefectSet::default();
    for kind in StabilizerKind::BOTH {
        let mut previous = vec![false; n];
        let out = match kind {
            StabilizerKind::X => &mut set.x,
            StabilizerKind::Z => &mut set.z,
        };
        for (t, round) in history.iter().enumerate() {
            let outcomes = round.outcomes(kind);
            if outcomes.len() != n {
                return Err(Error::Decoder(format!(
                    "round {t} has {} {kind:?} outcomes, layout has {n} stabilizers",
                    outcomes.len()
                )));
            }
            for (s, (&now, before)) in outcomes.iter().zip(previous.iter_mut()).enumerate() {
                if now != *before {
                    out.push(Defect { round: t, coord: layout.coord(s) });
                }
                *before = now;
            }
        }
    }
    Ok(set)
}

/// Complete graph over the defects of one sector.
#[derive(Clone, Debug)]
pub struct MatchingGraph {
    pub kind: StabilizerKind,
    pub nodes: Vec<Defect>,
    d: usize,
}

impl MatchingGraph {
    pub fn new(kind: StabilizerKind, nodes: Vec<Defect>, d: usize) -> Self {
        MatchingGraph { kind, nodes, d }
    }

    pub fn weight(&self, u: usize, v: usize) -> usize {
        let (a, b) = (self.nodes[u], self.nodes[v]);
        torus_distance(a.coord, b.coord, self.d) + a.round.abs_diff(b.round)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    pub kind: StabilizerKind,
    pub pairs: Vec<(Defect, Defect)>,
}

impl Matching {
    pub fn total_weight(&self, d: usize) -> usize {
        self.pairs
            .iter()
            .map(|(a, b)| torus_distance(a.coord, b.coord, d) + a.round.abs_diff(b.round))
            .sum()
    }
}

/// Exact minimum-weight perfect matching of the graph's defects.
pub fn mwpm(graph: &MatchingGraph) -> Result<Matching> {
    let n = graph.nodes.len();
    if n % 2 == 1 {
        return Err(Error::Contract(format!("odd number of {:?} defects: {n}", graph.kind)));
    }
    let pairs = match n {
        0 => Vec::new(),
        2 => vec![(graph.nodes[0], graph.nodes[1])],
        _ => {
            let mut edges = Vec::with_capacity(n * (n - 1) / 2);
            for u in 0..n {
                for v in u + 1..n {
                    edges.push((u, v, graph.weight(u, v) as blossom::Weight));
                }
            }
            let mate = blossom::min_weight_perfect_matching(n, &edges)
                .ok_or_else(|| Error::Decoder("complete graph without perfect matching".into()))?;
            (0..n).filter(|&u| u < mate[u]).map(|u| (graph.nodes[u], graph.nodes[mate[u]])).collect()
        }
    };
    Ok(Matching { kind: graph.kind, pairs })
}

/// Data qubits to flip: X flips clear Z-stabilizer defects, Z flips clear
/// X-stabilizer defects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Correction {
    pub x: Vec<bool>,
    pub z: Vec<bool>,
}

impl Correction {
    pub fn empty(n_data: usize) -> Self {
        Correction { x: vec![false; n_data], z: vec![false; n_data] }
    }

    pub fn weight(&self) -> usize {
        self.x.iter().chain(&self.z).filter(|&&b| b).count()
    }
}

/// Shortest spatial path between two stabilizer positions, as data qubits.
/// Columns are traversed first along the start row, then rows along the end
/// column; each axis goes the short way round.
pub fn spatial_path(kind: StabilizerKind, a: Coord, b: Coord, layout: &ToricLayout) -> Vec<usize> {
    let d = layout.d();
    let mut path = Vec::new();
    let (mut r, mut c) = (a.row, a.col);
    let forward = (b.col + d - c) % d;
    let (steps, east) = if forward <= d / 2 { (forward, true) } else { (d - forward, false) };
    for _ in 0..steps {
        let next = if east { (c + 1) % d } else { (c + d - 1) % d };
        path.push(match kind {
            // vertex to vertex along a horizontal edge
            StabilizerKind::Z => layout.horizontal(r, if east { c } else { next }),
            // plaquette to plaquette across a vertical edge
            StabilizerKind::X => layout.vertical(r, if east { next } else { c }),
        });
        c = next;
    }
    let forward = (b.row + d - r) % d;
    let (steps, south) = if forward <= d / 2 { (forward, true) } else { (d - forward, false) };
    for _ in 0..steps {
        let next = if south { (r + 1) % d } else { (r + d - 1) % d };
        path.push(match kind {
            StabilizerKind::Z => layout.vertical(if south { r } else { next }, c),
            StabilizerKind::X => layout.horizontal(if south { next } else { r }, c),
        });
        r = next;
    }
    path
}

/// Flips every data qubit along one shortest spatial path per matched pair.
/// Round separation contributes nothing to the correction.
pub fn matching_to_correction(matchings: &[Matching], layout: &ToricLayout) -> Correction {
    let mut correction = Correction::empty(layout.num_data());
    for m in matchings {
        let bits = match m.kind {
            StabilizerKind::Z => &mut correction.x,
            StabilizerKind::X => &mut correction.z,
        };
        for (a, b) in &m.pairs {
            for q in spatial_path(m.kind, a.coord, b.coord, layout) {
                bits[q] ^= true;
            }
        }
    }
    correction
}

/// Logical failure per sector of the residual `frame + correction`.
///
/// `.0` is set when the residual X error is a non-trivial logical, `.1` for
/// the residual Z error. Fails if the correction leaves a syndrome.
pub fn logical_failure(frame: &DataFrame, correction: &Correction, layout: &ToricLayout) -> Result<(bool, bool)> {
    let rx: Vec<bool> = frame.x.iter().zip(&correction.x).map(|(a, b)| a ^ b).collect();
    let rz: Vec<bool> = frame.z.iter().zip(&correction.z).map(|(a, b)| a ^ b).collect();
    for kind in StabilizerKind::BOTH {
        if layout.syndrome(kind, &rx, &rz).iter().any(|&b| b) {
            return Err(Error::Decoder(format!("residual error leaves a {kind:?}-stabilizer syndrome")));
        }
    }
    let odd = |bits: &[bool], support: &[usize]| support.iter().filter(|&&q| bits[q]).count() % 2 == 1;
    // Z logicals detect residual X errors and vice versa.
    let x_failure = layout.logicals(StabilizerKind::Z).iter().any(|l| odd(&rx, l));
    let z_failure = layout.logicals(StabilizerKind::X).iter().any(|l| odd(&rz, l));
    Ok((x_failure, z_failure))
}

/// Full decode of one trial: `(x_failure, z_failure)`.
pub fn decode(record: &TrialRecord, layout: &ToricLayout) -> Result<(bool, bool)> {
    let defects = syndromes_to_defects(&record.history, layout)?;
    if defects.is_empty() {
        return logical_failure(&record.final_frame, &Correction::empty(layout.num_data()), layout);
    }
    let mut matchings = Vec::with_capacity(2);
    for kind in StabilizerKind::BOTH {
        let graph = MatchingGraph::new(kind, defects.of(kind).to_vec(), layout.d());
        matchings.push(mwpm(&graph)?);
    }
    let correction = matching_to_correction(&matchings, layout);
    logical_failure(&record.final_frame, &correction, layout)
}
