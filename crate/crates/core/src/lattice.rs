//! Distance-d toric code geometry.
//!
//! Vertices of the d x d torus carry Z-stabilizers, plaquettes carry
//! X-stabilizers and data qubits live on edges. Edge `h(r, c)` joins vertex
//! `(r, c)` to `(r, c + 1)`; edge `v(r, c)` joins `(r, c)` to `(r + 1, c)`.
//! Plaquette `(r, c)` is the face whose top-left corner is vertex `(r, c)`.
//!
//! Supports are stored in CNOT firing order. Plaquettes fire north, west,
//! east, south; vertices fire north, east, west, south. With this order every
//! data qubit is touched at most once per time step and every overlapping
//! X/Z pair of checks agrees on which fires first on both shared qubits.

use crate::error::{config, Result};

/// Stabilizer type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StabilizerKind {
    /// Plaquette operator, detects Z errors.
    X,
    /// Vertex operator, detects X errors.
    Z,
}

impl StabilizerKind {
    pub const BOTH: [StabilizerKind; 2] = [StabilizerKind::X, StabilizerKind::Z];
}

/// Cell (plaquette) or vertex position on the torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub fn new(row: usize, col: usize) -> Self {
        Coord { row, col }
    }
}

/// Manhattan distance on the d x d torus with per-axis wraparound.
pub fn torus_distance(a: Coord, b: Coord, d: usize) -> usize {
    axis_distance(a.row, b.row, d) + axis_distance(a.col, b.col, d)
}

fn axis_distance(a: usize, b: usize, d: usize) -> usize {
    let delta = a.abs_diff(b) % d;
    delta.min(d - delta)
}

#[derive(Clone, Debug)]
pub struct ToricLayout {
    d: usize,
    x_support: Vec<[usize; 4]>,
    z_support: Vec<[usize; 4]>,
    x_logicals: [Vec<usize>; 2],
    z_logicals: [Vec<usize>; 2],
}

impl ToricLayout {
    /// Builds the layout for an odd distance `d >= 3`.
    pub fn new(d: usize) -> Result<Self> {
        if d < 3 {
            return config(format!("code distance must be at least 3, got {d}"));
        }
        if d % 2 == 0 {
            return config(format!("code distance must be odd, got {d}"));
        }
        let mut layout = ToricLayout {
            d,
            x_support: Vec::with_capacity(d * d),
            z_support: Vec::with_capacity(d * d),
            x_logicals: [Vec::new(), Vec::new()],
            z_logicals: [Vec::new(), Vec::new()],
        };
        for r in 0..d {
            for c in 0..d {
                let (n, w, e, s) = (
                    layout.horizontal(r, c),
                    layout.vertical(r, c),
                    layout.vertical(r, c + 1),
                    layout.horizontal(r + 1, c),
                );
                layout.x_support.push([n, w, e, s]);
            }
        }
        for r in 0..d {
            for c in 0..d {
                let (n, e, w, s) = (
                    layout.vertical(r + d - 1, c),
                    layout.horizontal(r, c),
                    layout.horizontal(r, c + d - 1),
                    layout.vertical(r, c),
                );
                layout.z_support.push([n, e, w, s]);
            }
        }
        // X logicals are non-contractible primal cycles, Z logicals dual cycles.
        layout.x_logicals = [
            (0..d).map(|c| layout.horizontal(0, c)).collect(),
            (0..d).map(|r| layout.vertical(r, 0)).collect(),
        ];
        layout.z_logicals = [
            (0..d).map(|c| layout.vertical(0, c)).collect(),
            (0..d).map(|r| layout.horizontal(r, 0)).collect(),
        ];
        Ok(layout)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_data(&self) -> usize {
        2 * self.d * self.d
    }

    /// Stabilizers per type.
    pub fn num_stabilizers(&self) -> usize {
        self.d * self.d
    }

    /// Index of the horizontal edge leaving vertex `(r, c)` eastward.
    pub fn horizontal(&self, r: usize, c: usize) -> usize {
        (r % self.d) * self.d + c % self.d
    }

    /// Index of the vertical edge leaving vertex `(r, c)` southward.
    pub fn vertical(&self, r: usize, c: usize) -> usize {
        self.d * self.d + (r % self.d) * self.d + c % self.d
    }

    pub fn coord(&self, stabilizer: usize) -> Coord {
        Coord::new(stabilizer / self.d, stabilizer % self.d)
    }

    pub fn index(&self, coord: Coord) -> usize {
        (coord.row % self.d) * self.d + coord.col % self.d
    }

    /// Data qubits of a stabilizer in CNOT firing order.
    pub fn support(&self, kind: StabilizerKind, stabilizer: usize) -> &[usize; 4] {
        match kind {
            StabilizerKind::X => &self.x_support[stabilizer],
            StabilizerKind::Z => &self.z_support[stabilizer],
        }
    }

    pub fn supports(&self, kind: StabilizerKind) -> &[[usize; 4]] {
        match kind {
            StabilizerKind::X => &self.x_support,
            StabilizerKind::Z => &self.z_support,
        }
    }

    /// Supports of the two independent logical operators of `kind`.
    pub fn logicals(&self, kind: StabilizerKind) -> &[Vec<usize>; 2] {
        match kind {
            StabilizerKind::X => &self.x_logicals,
            StabilizerKind::Z => &self.z_logicals,
        }
    }

    /// Noiseless measurement of every stabilizer of `kind` against a data
    /// error. X-stabilizers read the Z bits, Z-stabilizers read the X bits.
    pub fn syndrome(&self, kind: StabilizerKind, x_bits: &[bool], z_bits: &[bool]) -> Vec<bool> {
        let bits = match kind {
            StabilizerKind::X => z_bits,
            StabilizerKind::Z => x_bits,
        };
        self.supports(kind)
            .iter()
            .map(|sup| sup.iter().fold(false, |acc, &q| acc ^ bits[q]))
            .collect()
    }

    /// Data qubit shared by two adjacent stabilizers of the same kind, if any.
    pub fn shared_edge(&self, kind: StabilizerKind, a: Coord, b: Coord) -> Option<usize> {
        let sa = self.support(kind, self.index(a));
        let sb = self.support(kind, self.index(b));
        sa.iter().copied().find(|q| sb.contains(q))
    }
}
