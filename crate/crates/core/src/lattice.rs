//! SSH lattices with domain walls, bending schedules and static disorder.
//!
//! Sites are indexed `0..n`, bond `b` joins sites `b` and `b + 1`. A domain
//! wall at site `s` is a site whose two bonds `s - 1` and `s` carry the same
//! coupling label (the wall label, `u` by default). The dimerization phase on
//! every stretch of the chain is fixed by the walls, so a lattice is fully
//! described by `(n, u, v, walls, wall label)`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Couplings pushed below this value by disorder are clamped to it, cm⁻¹.
pub const COUPLING_FLOOR: f64 = 1e-6;

/// Coupling label of a bond.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bond {
    #[default]
    U,
    V,
}

impl Bond {
    pub fn other(self) -> Self {
        match self {
            Bond::U => Bond::V,
            Bond::V => Bond::U,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub n_sites: usize,
    /// Intra-cell coupling, cm⁻¹.
    pub u: f64,
    /// Inter-cell coupling, cm⁻¹.
    pub v: f64,
    #[serde(default)]
    pub dw_positions: Vec<usize>,
    /// Per-site propagation-constant offsets, cm⁻¹. Empty means all zero.
    #[serde(default)]
    pub onsite: Vec<f64>,
    /// Which coupling is repeated at a wall. `U` gives the isolated wall state.
    #[serde(default)]
    pub wall: Bond,
}

impl LatticeSpec {
    pub fn new(n_sites: usize, u: f64, v: f64, dw_positions: Vec<usize>) -> Result<Self> {
        let spec = LatticeSpec {
            n_sites,
            u,
            v,
            dw_positions,
            onsite: Vec::new(),
            wall: Bond::U,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_onsite(mut self, onsite: Vec<f64>) -> Result<Self> {
        self.onsite = onsite;
        self.validate()?;
        Ok(self)
    }

    pub fn with_wall(mut self, wall: Bond) -> Self {
        self.wall = wall;
        self
    }

    /// Coupling ratio v/u; the chain is topological for δ > 1.
    pub fn delta(&self) -> f64 {
        self.v / self.u
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::Lattice(format!("need at least 2 sites, got {}", self.n_sites)));
        }
        if !(self.u > 0.0 && self.u.is_finite() && self.v > 0.0 && self.v.is_finite()) {
            return Err(Error::Lattice(format!(
                "couplings must be positive and finite (u = {}, v = {})",
                self.u, self.v
            )));
        }
        if !self.onsite.is_empty() && self.onsite.len() != self.n_sites {
            return Err(Error::Lattice(format!(
                "onsite has {} entries for {} sites",
                self.onsite.len(),
                self.n_sites
            )));
        }
        for w in self.dw_positions.windows(2) {
            if w[1] <= w[0] + 1 {
                return Err(Error::Lattice(format!(
                    "walls {} and {} are adjacent or unordered",
                    w[0], w[1]
                )));
            }
        }
        bond_labels(self.n_sites, &self.dw_positions, self.wall)?;
        Ok(())
    }

    pub fn label_value(&self, b: Bond) -> f64 {
        match b {
            Bond::U => self.u,
            Bond::V => self.v,
        }
    }

    pub fn couplings(&self) -> Result<Vec<f64>> {
        Ok(bond_labels(self.n_sites, &self.dw_positions, self.wall)?
            .into_iter()
            .map(|b| self.label_value(b))
            .collect())
    }

    pub fn onsite_or_zero(&self) -> Vec<f64> {
        if self.onsite.is_empty() {
            vec![0.0; self.n_sites]
        } else {
            self.onsite.clone()
        }
    }

    /// Same lattice with the walls moved to `walls`.
    pub fn with_walls(&self, walls: Vec<usize>) -> Result<Self> {
        let mut s = self.clone();
        s.dw_positions = walls;
        s.validate()?;
        Ok(s)
    }
}

/// Bond labels implied by the wall positions.
///
/// Walls may sit at distance 1 (merged pair) here; `LatticeSpec::validate`
/// is stricter.
pub fn bond_labels(n: usize, walls: &[usize], wall: Bond) -> Result<Vec<Bond>> {
    let nb = n.saturating_sub(1);
    for &s in walls {
        if s < 1 || s + 2 > n {
            return Err(Error::Lattice(format!(
                "wall at {s} outside the interior [1, {}]",
                n as isize - 2
            )));
        }
    }
    for w in walls.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Lattice("wall positions must be increasing".into()));
        }
        if (w[1] - w[0]) % 2 == 0 {
            return Err(Error::Lattice(format!(
                "walls {} and {} are an even distance apart; both cannot repeat the same coupling",
                w[0], w[1]
            )));
        }
    }
    let pick = |even: bool| if even { wall } else { wall.other() };
    let labels = (0..nb)
        .map(|b| match walls.iter().rposition(|&s| s <= b) {
            Some(k) => pick((b - walls[k]) % 2 == 0),
            None => match walls.first() {
                Some(&s1) => pick((s1 - 1 - b) % 2 == 0),
                None => pick(b % 2 == 0),
            },
        })
        .collect();
    Ok(labels)
}

/// Real symmetric tridiagonal matrix from bond couplings and on-site terms.
pub fn tridiagonal(bonds: &[f64], onsite: &[f64]) -> Array2<f64> {
    let n = onsite.len();
    debug_assert_eq!(bonds.len() + 1, n.max(1));
    let mut h = Array2::zeros((n, n));
    for (i, &e) in onsite.iter().enumerate() {
        h[[i, i]] = e;
    }
    for (b, &c) in bonds.iter().enumerate() {
        h[[b, b + 1]] = c;
        h[[b + 1, b]] = c;
    }
    h
}

/// Static SSH Hamiltonian with domain walls.
pub fn build_ssh(spec: &LatticeSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    Ok(tridiagonal(&spec.couplings()?, &spec.onsite_or_zero()))
}

/// Sublattice parity Σ = diag(+1, −1, +1, ...).
pub fn sublattice_parity(n: usize) -> Vec<f64> {
    (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()
}

/// C = c₂·exp(−c₁·D), D in µm, C in cm⁻¹.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceModel {
    pub c1: f64,
    pub c2: f64,
}

impl DistanceModel {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(Error::Parameter(format!(
                "distance model needs c1, c2 > 0 (got {c1}, {c2})"
            )));
        }
        Ok(DistanceModel { c1, c2 })
    }

    /// Fit the two constants through two (distance, coupling) anchors.
    pub fn calibrate(d_a: f64, c_a: f64, d_b: f64, c_b: f64) -> Result<Self> {
        if !(c_a > 0.0 && c_b > 0.0) {
            return Err(Error::Parameter("anchor couplings must be positive".into()));
        }
        if d_a == d_b {
            return Err(Error::Parameter("anchor distances coincide".into()));
        }
        let c1 = (c_b / c_a).ln() / (d_a - d_b);
        if c1 <= 0.0 {
            return Err(Error::Parameter(format!(
                "anchors give a non-decaying coupling law (c1 = {c1})"
            )));
        }
        Self::new(c1, c_a * (c1 * d_a).exp())
    }

    pub fn coupling(&self, distance: f64) -> Result<f64> {
        if !(distance > 0.0) {
            return Err(Error::Parameter(format!("distance must be positive, got {distance}")));
        }
        Ok(self.c2 * (-self.c1 * distance).exp())
    }

    pub fn distance(&self, coupling: f64) -> Result<f64> {
        if !(coupling > 0.0) {
            return Err(Error::Parameter("coupling must be positive".into()));
        }
        Ok((self.c2 / coupling).ln() / self.c1)
    }
}

/// Slope and modulation length shared by all bonds bent in one move.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BendShape {
    pub slope: f64,
    /// Modulation length Z_m, cm.
    pub length: f64,
}

impl BendShape {
    pub fn new(slope: f64, length: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::Profile(format!("slope must be positive, got {slope}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Profile(format!("modulation length must be positive, got {length}")));
        }
        let shape = BendShape { slope, length };
        // grid monotonicity check
        let mut prev = shape.ramp_unchecked(0.0);
        for k in 1..=256 {
            let r = shape.ramp_unchecked(length * k as f64 / 256.0);
            if r < prev {
                return Err(Error::Profile(format!("ramp not monotone at slope {slope}")));
            }
            prev = r;
        }
        Ok(shape)
    }

    /// Fraction of the coupling change completed at `z`, rising from 0 at
    /// z = 0 to 1 at z = Z_m. Written as 1 / (1 + s·exp(Z_m/z − 1/(1 − z/Z_m)))
    /// so both endpoints evaluate without 0/0.
    pub(crate) fn ramp_unchecked(&self, z: f64) -> f64 {
        let t = z / self.length;
        if t <= 0.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        let expo = 1.0 / t - 1.0 / (1.0 - t);
        if expo > 700.0 {
            0.0
        } else if expo < -700.0 {
            1.0
        } else {
            1.0 / (1.0 + self.slope * expo.exp())
        }
    }

    pub fn ramp(&self, z: f64) -> Result<f64> {
        if !(0.0..=self.length).contains(&z) {
            return Err(Error::OutOfDomain { z, lo: 0.0, hi: self.length });
        }
        Ok(self.ramp_unchecked(z))
    }
}

/// f(z) = A − B·exp(−Z_m/z) / (s·exp[−1/(1 − z/Z_m)] + exp(−Z_m/z)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BendProfile {
    pub offset: f64,
    pub span: f64,
    pub shape: BendShape,
}

impl BendProfile {
    pub fn new(offset: f64, span: f64, slope: f64, length: f64) -> Result<Self> {
        Ok(BendProfile { offset, span, shape: BendShape::new(slope, length)? })
    }

    /// Profile running from `start` at z = 0 to `end` at z = Z_m.
    pub fn between(start: f64, end: f64, shape: BendShape) -> Self {
        let (offset, span) = solve_profile_params(start, end);
        BendProfile { offset, span, shape }
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        Ok(self.offset - self.span * self.shape.ramp(z)?)
    }
}

/// (A, B) such that the profile starts at `start` and ends at `end`.
pub fn solve_profile_params(start: f64, end: f64) -> (f64, f64) {
    (start, start - end)
}

pub fn bend_profile(z: f64, p: &BendProfile) -> Result<f64> {
    p.eval(z)
}

/// One piece of a schedule. Bonds whose start and end values differ follow
/// the bend ramp across the segment; the others are constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length: f64,
    pub start_bonds: Vec<f64>,
    pub end_bonds: Vec<f64>,
    pub slope: f64,
    /// Wall positions once the segment completes.
    pub walls_after: Vec<usize>,
}

impl Segment {
    pub fn is_constant(&self) -> bool {
        self.start_bonds == self.end_bonds
    }

    fn bonds_at(&self, local: f64, out: &mut [f64]) {
        if self.is_constant() {
            out.copy_from_slice(&self.start_bonds);
            return;
        }
        let shape = BendShape { slope: self.slope, length: self.length };
        let r = shape.ramp_unchecked(local);
        for ((o, &a), &b) in out.iter_mut().zip(&self.start_bonds).zip(&self.end_bonds) {
            *o = if a == b { a } else { a + (b - a) * r };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisorderKind {
    Coupling,
    Onsite,
}

/// z-dependent nearest-neighbour Hamiltonian H(z) on `[0, total_length]`.
///
/// Immutable once built; evaluation is pure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSchedule {
    n_sites: usize,
    segments: Vec<Segment>,
    initial_walls: Vec<usize>,
    onsite: Vec<f64>,
    bond_offsets: Vec<f64>,
    warnings: Vec<String>,
}

impl CouplingSchedule {
    /// A straight section of `length` cm with the static lattice.
    pub fn constant(spec: &LatticeSpec, length: f64) -> Result<Self> {
        let mut b = ScheduleBuilder::new(spec)?;
        b.hold(length)?;
        Ok(b.build())
    }

    /// One bend segment taking every bond from `start` to `end`.
    pub fn ramp(start: Vec<f64>, end: Vec<f64>, onsite: Vec<f64>, shape: &BendShape) -> Result<Self> {
        let n = start.len() + 1;
        if end.len() != start.len() {
            return Err(Error::Dimension { expected: start.len(), got: end.len() });
        }
        if onsite.len() != n {
            return Err(Error::Dimension { expected: n, got: onsite.len() });
        }
        if start.iter().chain(&end).chain(&onsite).any(|x| !x.is_finite()) || start.iter().chain(&end).any(|&x| x < 0.0) {
            return Err(Error::Lattice("ramp couplings must be finite and non-negative".into()));
        }
        Ok(CouplingSchedule {
            n_sites: n,
            segments: vec![Segment { length: shape.length, start_bonds: start, end_bonds: end, slope: shape.slope, walls_after: Vec::new() }],
            initial_walls: Vec::new(),
            onsite,
            bond_offsets: vec![0.0; n - 1],
            warnings: Vec::new(),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn initial_walls(&self) -> &[usize] {
        &self.initial_walls
    }

    pub fn final_walls(&self) -> &[usize] {
        self.segments.last().map_or(&self.initial_walls, |s| &s.walls_after)
    }

    pub fn onsite(&self) -> &[f64] {
        &self.onsite
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn has_onsite_terms(&self) -> bool {
        self.onsite.iter().any(|&e| e != 0.0)
    }

    /// Segment containing `z` and the local coordinate inside it.
    fn locate(&self, z: f64) -> Result<(usize, f64)> {
        let total = self.total_length();
        if !(z >= 0.0 && z <= total * (1.0 + 1e-12) + 1e-15) {
            return Err(Error::OutOfDomain { z, lo: 0.0, hi: total });
        }
        let mut start = 0.0;
        for (k, seg) in self.segments.iter().enumerate() {
            if z < start + seg.length || k + 1 == self.segments.len() {
                return Ok((k, (z - start).clamp(0.0, seg.length)));
            }
            start += seg.length;
        }
        Err(Error::OutOfDomain { z, lo: 0.0, hi: total })
    }

    pub fn bonds_at(&self, z: f64) -> Result<Vec<f64>> {
        let mut bonds = vec![0.0; self.n_sites - 1];
        if self.segments.is_empty() {
            return Err(Error::OutOfDomain { z, lo: 0.0, hi: 0.0 });
        }
        let (k, local) = self.locate(z)?;
        self.segments[k].bonds_at(local, &mut bonds);
        for (b, off) in bonds.iter_mut().zip(&self.bond_offsets) {
            *b = (*b + off).max(COUPLING_FLOOR);
        }
        Ok(bonds)
    }

    pub fn hamiltonian(&self, z: f64) -> Result<Array2<f64>> {
        Ok(tridiagonal(&self.bonds_at(z)?, &self.onsite))
    }

    /// True when H is constant on `[z0, z1]`.
    pub fn is_constant_on(&self, z0: f64, z1: f64) -> bool {
        let mut start = 0.0;
        for seg in &self.segments {
            let end = start + seg.length;
            if z0 >= start && z1 <= end {
                return seg.is_constant();
            }
            start = end;
        }
        false
    }

    /// Boundaries between segments, including 0 and the total length.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut z = 0.0;
        for s in &self.segments {
            z += s.length;
            out.push(z);
        }
        out
    }

    /// This schedule followed by `next`. Disorder must not have been applied yet.
    pub fn concat(&self, next: &CouplingSchedule) -> Result<Self> {
        if next.n_sites != self.n_sites {
            return Err(Error::Dimension { expected: self.n_sites, got: next.n_sites });
        }
        if self.bond_offsets.iter().chain(&next.bond_offsets).any(|&x| x != 0.0) {
            return Err(Error::Parameter("concatenate before applying disorder".into()));
        }
        if self.onsite != next.onsite {
            return Err(Error::Parameter("on-site terms differ between schedules".into()));
        }
        let mut out = self.clone();
        out.segments.extend(next.segments.iter().cloned());
        out.warnings.extend(next.warnings.iter().cloned());
        Ok(out)
    }

    /// One static disorder realization, uniform in [−Δ, Δ] per bond or per
    /// site, added at every z. Deterministic in `seed`.
    pub fn apply_disorder(&self, kind: DisorderKind, delta: f64, seed: u64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Parameter(format!("disorder strength must be ≥ 0, got {delta}")));
        }
        let mut out = self.clone();
        if delta == 0.0 {
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            DisorderKind::Coupling => {
                for off in out.bond_offsets.iter_mut() {
                    *off += rng.random_range(-delta..=delta);
                }
                // ramps are monotone, so segment endpoints bound every bond
                let clamped: Vec<usize> = (0..self.n_sites - 1)
                    .filter(|&b| {
                        out.segments.iter().any(|s| {
                            s.start_bonds[b].min(s.end_bonds[b]) + out.bond_offsets[b]
                                <= COUPLING_FLOOR
                        })
                    })
                    .collect();
                if !clamped.is_empty() {
                    out.warnings.push(format!(
                        "coupling disorder (seed {seed}) clamped bonds {clamped:?} to {COUPLING_FLOOR:e} cm^-1"
                    ));
                }
            }
            DisorderKind::Onsite => {
                for e in out.onsite.iter_mut() {
                    *e += rng.random_range(-delta..=delta);
                }
            }
        }
        Ok(out)
    }
}

/// Incrementally assembles a schedule by holding and moving walls.
#[derive(Clone, Debug)]
pub struct ScheduleBuilder {
    spec: LatticeSpec,
    walls: Vec<usize>,
    initial_walls: Vec<usize>,
    segments: Vec<Segment>,
}

impl ScheduleBuilder {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        Ok(ScheduleBuilder {
            spec: spec.clone(),
            walls: spec.dw_positions.clone(),
            initial_walls: spec.dw_positions.clone(),
            segments: Vec::new(),
        })
    }

    pub fn walls(&self) -> &[usize] {
        &self.walls
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    fn bonds_for(&self, walls: &[usize]) -> Result<Vec<f64>> {
        Ok(bond_labels(self.spec.n_sites, walls, self.spec.wall)?
            .into_iter()
            .map(|b| self.spec.label_value(b))
            .collect())
    }

    /// Straight section with the current walls.
    pub fn hold(&mut self, length: f64) -> Result<&mut Self> {
        if !(length >= 0.0 && length.is_finite()) {
            return Err(Error::Parameter(format!("segment length must be ≥ 0, got {length}")));
        }
        if length > 0.0 {
            let bonds = self.bonds_for(&self.walls)?;
            self.segments.push(Segment {
                length,
                start_bonds: bonds.clone(),
                end_bonds: bonds,
                slope: 1.0,
                walls_after: self.walls.clone(),
            });
        }
        Ok(self)
    }

    /// Move several walls by one unit cell at once, each by bending the
    /// waveguide between its two modulated bonds.
    pub fn move_walls(&mut self, moves: &[(usize, Direction)], shape: &BendShape) -> Result<&mut Self> {
        let n = self.spec.n_sites;
        let mut new_walls = self.walls.clone();
        let mut touched: Vec<usize> = Vec::new();
        for &(idx, dir) in moves {
            let s = *self
                .walls
                .get(idx)
                .ok_or_else(|| Error::Geometry(format!("no wall with index {idx}")))?;
            let target = match dir {
                Direction::Right => s + 2,
                Direction::Left => {
                    if s < 3 {
                        return Err(Error::Geometry(format!("wall at {s} cannot move left")));
                    }
                    s - 2
                }
            };
            if target + 2 > n {
                return Err(Error::Geometry(format!("wall at {s} cannot move right in {n} sites")));
            }
            if touched.contains(&idx) {
                return Err(Error::Geometry(format!("wall {idx} moved twice in one step")));
            }
            touched.push(idx);
            new_walls[idx] = target;
        }
        for w in new_walls.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Geometry(format!("walls collide at {} / {}", w[0], w[1])));
            }
        }
        let start = self.bonds_for(&self.walls)?;
        let end = self.bonds_for(&new_walls)?;
        let changed = start.iter().zip(&end).filter(|(a, b)| a != b).count();
        if changed != 2 * moves.len() && self.spec.u != self.spec.v {
            return Err(Error::Geometry(format!(
                "moves {moves:?} would bend {changed} bonds; moved walls must not share bonds"
            )));
        }
        self.segments.push(Segment {
            length: shape.length,
            start_bonds: start,
            end_bonds: end,
            slope: shape.slope,
            walls_after: new_walls.clone(),
        });
        self.walls = new_walls;
        Ok(self)
    }

    pub fn move_wall(&mut self, idx: usize, dir: Direction, shape: &BendShape) -> Result<&mut Self> {
        self.move_walls(&[(idx, dir)], shape)
    }

    pub fn build(self) -> CouplingSchedule {
        let n = self.spec.n_sites;
        CouplingSchedule {
            n_sites: n,
            segments: self.segments,
            initial_walls: self.initial_walls,
            onsite: self.spec.onsite_or_zero(),
            bond_offsets: vec![0.0; n - 1],
            warnings: Vec::new(),
        }
    }
}

/// Single move of wall `dw_index` by one unit cell over one modulation length.
pub fn move_schedule(
    spec: &LatticeSpec,
    dw_index: usize,
    direction: Direction,
    shape: &BendShape,
) -> Result<CouplingSchedule> {
    let mut b = ScheduleBuilder::new(spec)?;
    b.move_wall(dw_index, direction, shape)?;
    Ok(b.build())
}

/// Moves that bring walls `a < b` to adjacent sites, in order. Each entry is
/// one simultaneous round.
pub fn approach_plan(spec: &LatticeSpec, a: usize, b: usize) -> Result<Vec<Vec<(usize, Direction)>>> {
    if a >= b || b >= spec.dw_positions.len() {
        return Err(Error::Geometry(format!("need two walls with a < b, got {a}, {b}")));
    }
    if b != a + 1 {
        return Err(Error::Geometry("walls to merge must be neighbours".into()));
    }
    let (pa, pb) = (spec.dw_positions[a], spec.dw_positions[b]);
    let mut gap = pb - pa;
    let mut rounds = Vec::new();
    while gap >= 5 {
        rounds.push(vec![(a, Direction::Right), (b, Direction::Left)]);
        gap -= 4;
    }
    if gap == 3 {
        rounds.push(vec![(a, Direction::Right)]);
    }
    Ok(rounds)
}

/// Walls `a` and `b` approach, interact for `z_int` cm as an adjacent pair
/// joined by `u`, then return to their original waveguides.
pub fn merge_split_schedule(
    spec: &LatticeSpec,
    a: usize,
    b: usize,
    z_int: f64,
    shape: &BendShape,
) -> Result<CouplingSchedule> {
    let plan = approach_plan(spec, a, b)?;
    let mut builder = ScheduleBuilder::new(spec)?;
    for round in &plan {
        builder.move_walls(round, shape)?;
    }
    builder.hold(z_int)?;
    for round in plan.iter().rev() {
        let back: Vec<_> = round
            .iter()
            .map(|&(i, d)| {
                (i, match d {
                    Direction::Left => Direction::Right,
                    Direction::Right => Direction::Left,
                })
            })
            .collect();
        builder.move_walls(&back, shape)?;
    }
    Ok(builder.build())
}

/// Named lattices used by the experiments.
pub mod presets {
    use super::*;

    pub const U: f64 = 0.69;
    pub const V: f64 = 3.22;
    pub const MODULATION_LENGTH: f64 = 5.5;
    pub const SLOPE: f64 = 1.5;
    /// Waveguide separations for the weak and strong bonds, µm.
    pub const D_U: f64 = 22.0;
    pub const D_V: f64 = 10.0;

    pub fn bend() -> BendShape {
        BendShape { slope: SLOPE, length: MODULATION_LENGTH }
    }

    /// 32 waveguides, one wall at site 15 whose state shares its energy with
    /// the left edge state.
    pub fn transport() -> LatticeSpec {
        LatticeSpec::new(32, U, V, vec![15]).expect("valid preset")
    }

    /// Strong-strong junction (repeated v): no state is localized on the
    /// wall waveguide itself.
    pub fn trivial_transport() -> LatticeSpec {
        LatticeSpec::new(32, U, V, vec![15]).expect("valid preset").with_wall(Bond::V)
    }

    /// 31 sites with a wall at 15 and δ = 4.6.
    pub fn band_structure() -> LatticeSpec {
        LatticeSpec::new(31, U, 4.6 * U, vec![15]).expect("valid preset")
    }

    /// Two walls one move apart from merging.
    pub fn beamsplitter() -> LatticeSpec {
        LatticeSpec::new(32, U, V, vec![13, 18]).expect("valid preset")
    }

    pub fn distance_model() -> DistanceModel {
        DistanceModel::calibrate(D_U, U, D_V, V).expect("valid anchors")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn offdiag(h: &Array2<f64>) -> Vec<f64> {
        (0..h.nrows() - 1).map(|i| h[[i, i + 1]]).collect()
    }

    #[test]
    fn bare_dimer() {
        let spec = LatticeSpec::new(2, 1.0, 2.0, vec![]).unwrap();
        let h = build_ssh(&spec).unwrap();
        assert_eq!(h, ndarray::arr2(&[[0.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn wall_repeats_u_on_both_sides() {
        // wall site 3 sits between two u bonds
        let spec = LatticeSpec::new(5, 1.0, 2.0, vec![3]).unwrap();
        assert_eq!(offdiag(&build_ssh(&spec).unwrap()), vec![1.0, 2.0, 1.0, 1.0]);
        // an even wall site flips the phase of the left stretch
        let spec = LatticeSpec::new(5, 1.0, 2.0, vec![2]).unwrap();
        assert_eq!(offdiag(&build_ssh(&spec).unwrap()), vec![2.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn no_wall_alternates_from_u() {
        let spec = LatticeSpec::new(6, 1.0, 2.0, vec![]).unwrap();
        assert_eq!(offdiag(&build_ssh(&spec).unwrap()), vec![1.0, 2.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn v_wall_is_strong_junction() {
        let spec = LatticeSpec::new(6, 1.0, 2.0, vec![3]).unwrap().with_wall(Bond::V);
        let c = spec.couplings().unwrap();
        assert_eq!(c[2], 2.0);
        assert_eq!(c[3], 2.0);
    }

    #[test]
    fn rejects_bad_walls() {
        assert!(LatticeSpec::new(5, 1.0, 2.0, vec![0]).is_err());
        assert!(LatticeSpec::new(5, 1.0, 2.0, vec![4]).is_err());
        assert!(LatticeSpec::new(9, 1.0, 2.0, vec![3, 4]).is_err());
        assert!(LatticeSpec::new(9, 1.0, 2.0, vec![3, 5]).is_err(), "even separation");
        assert!(LatticeSpec::new(9, 1.0, 2.0, vec![3, 6]).is_ok());
        assert!(LatticeSpec::new(1, 1.0, 2.0, vec![]).is_err());
        assert!(LatticeSpec::new(4, 0.0, 2.0, vec![]).is_err());
    }

    #[test]
    fn distance_law() {
        let m = presets::distance_model();
        assert_abs_diff_eq!(m.c1, 0.128_370_42, epsilon = 1e-8);
        assert_abs_diff_eq!(m.c2, 11.624_158, epsilon = 1e-5);
        assert!((m.coupling(22.0).unwrap() / 0.69 - 1.0).abs() < 1e-12);
        assert!((m.coupling(10.0).unwrap() / 3.22 - 1.0).abs() < 1e-12);
        assert!(m.coupling(1e4).unwrap() < 1e-300);
        assert_abs_diff_eq!(
            m.coupling(10.0).unwrap() / m.coupling(22.0).unwrap(),
            4.666_666_666_666_667,
            epsilon = 1e-9
        );
        assert!(m.coupling(0.0).is_err());
        assert!(DistanceModel::calibrate(22.0, 1.0, 10.0, 1.0).is_err());
        assert!(DistanceModel::calibrate(22.0, 0.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn profile_limits() {
        let p = BendProfile::new(3.22, 2.53, 1.5, 5.5).unwrap();
        assert_eq!(p.eval(0.0).unwrap(), 3.22);
        assert_abs_diff_eq!(p.eval(5.5).unwrap(), 0.69, epsilon = 1e-15);
        assert_abs_diff_eq!(p.eval(5.5e-9).unwrap(), 3.22, epsilon = 1e-9);
        assert_abs_diff_eq!(p.eval(5.5 * (1.0 - 1e-9)).unwrap(), 0.69, epsilon = 1e-9);
        let mid = p.eval(2.75).unwrap();
        // exp(-2) cancels at the midpoint: f = A − B/(1 + s)
        assert_abs_diff_eq!(mid, 3.22 - 2.53 / 2.5, epsilon = 1e-12);
        assert!(mid > 0.69 && mid < 3.22);
        assert!(p.eval(-0.1).is_err());
        assert!(p.eval(5.6).is_err());
        assert!(BendShape::new(0.0, 5.5).is_err());
    }

    #[test]
    fn profile_params() {
        assert_eq!(solve_profile_params(0.69, 0.69), (0.69, 0.0));
        let (a, b) = solve_profile_params(0.69, 3.22);
        assert_eq!(a, 0.69);
        assert_abs_diff_eq!(b, -2.53, epsilon = 1e-12);
        let (a, b) = solve_profile_params(3.22, 0.69);
        assert_eq!(a, 3.22);
        assert_abs_diff_eq!(b, 2.53, epsilon = 1e-12);
    }

    #[test]
    fn move_right_lands_on_shifted_lattice() {
        let spec = presets::transport();
        let sched = move_schedule(&spec, 0, Direction::Right, &presets::bend()).unwrap();
        let end = sched.hamiltonian(presets::MODULATION_LENGTH).unwrap();
        let expect = build_ssh(&spec.with_walls(vec![17]).unwrap()).unwrap();
        assert!((&end - &expect).iter().all(|x| x.abs() <= 1e-12));
        assert_eq!(sched.final_walls(), &[17]);
        // only bonds 15 and 16 bend
        let mid = sched.bonds_at(2.0).unwrap();
        let start = spec.couplings().unwrap();
        let changed: Vec<usize> = (0..31).filter(|&b| mid[b] != start[b]).collect();
        assert_eq!(changed, vec![15, 16]);
        assert!(mid[15] > spec.u && mid[16] < spec.v);
    }

    #[test]
    fn move_round_trip() {
        let spec = presets::transport();
        let mut b = ScheduleBuilder::new(&spec).unwrap();
        b.move_wall(0, Direction::Right, &presets::bend()).unwrap();
        b.move_wall(0, Direction::Left, &presets::bend()).unwrap();
        let s = b.build();
        assert_eq!(s.hamiltonian(s.total_length()).unwrap(), s.hamiltonian(0.0).unwrap());
    }

    #[test]
    fn move_off_lattice_rejected() {
        let spec = LatticeSpec::new(6, 1.0, 2.0, vec![3]).unwrap();
        assert!(move_schedule(&spec, 0, Direction::Right, &presets::bend()).is_err());
        let spec = LatticeSpec::new(6, 1.0, 2.0, vec![2]).unwrap();
        assert!(move_schedule(&spec, 0, Direction::Left, &presets::bend()).is_err());
        assert!(move_schedule(&spec, 3, Direction::Left, &presets::bend()).is_err());
    }

    #[test]
    fn merge_split_geometry() {
        let spec = presets::beamsplitter();
        let shape = presets::bend();
        let s0 = merge_split_schedule(&spec, 0, 1, 0.0, &shape).unwrap();
        assert_abs_diff_eq!(s0.total_length(), 2.0 * shape.length, epsilon = 1e-12);
        let s = merge_split_schedule(&spec, 0, 1, 2.0, &shape).unwrap();
        assert_abs_diff_eq!(s.total_length(), 2.0 * shape.length + 2.0, epsilon = 1e-12);
        // during the interaction the walls sit at 15 and 16, joined by u
        let bonds = s.bonds_at(shape.length + 1.0).unwrap();
        assert_eq!(&bonds[14..17], &[spec.u, spec.u, spec.u]);
        assert_eq!(s.final_walls(), &[13, 18]);
        assert_eq!(s.hamiltonian(s.total_length()).unwrap(), build_ssh(&spec).unwrap());
        // farther walls need extra rounds
        let wide = LatticeSpec::new(32, 0.69, 3.22, vec![11, 20]).unwrap();
        let s = merge_split_schedule(&wide, 0, 1, 0.0, &shape).unwrap();
        assert_abs_diff_eq!(s.total_length(), 4.0 * shape.length, epsilon = 1e-12);
        let odd = LatticeSpec::new(32, 0.69, 3.22, vec![13, 16]).unwrap();
        let s = merge_split_schedule(&odd, 0, 1, 1.0, &shape).unwrap();
        assert_eq!(s.segments()[0].walls_after, vec![15, 16]);
    }

    #[test]
    fn disorder_is_deterministic_and_static() {
        let spec = presets::beamsplitter();
        let s = merge_split_schedule(&spec, 0, 1, 1.0, &presets::bend()).unwrap();
        assert_eq!(s.apply_disorder(DisorderKind::Coupling, 0.0, 7).unwrap(), s);
        let a = s.apply_disorder(DisorderKind::Coupling, 0.3, 7).unwrap();
        let b = s.apply_disorder(DisorderKind::Coupling, 0.3, 7).unwrap();
        let c = s.apply_disorder(DisorderKind::Coupling, 0.3, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let clean = s.bonds_at(0.0).unwrap();
        let dirty0 = a.bonds_at(0.0).unwrap();
        let dirty1 = a.bonds_at(s.total_length()).unwrap();
        for k in 0..clean.len() {
            assert!((dirty0[k] - clean[k]).abs() <= 0.3 + 1e-12);
            assert_abs_diff_eq!(dirty0[k] - clean[k], dirty1[k] - clean[k], epsilon = 1e-12);
        }
        let on = s.apply_disorder(DisorderKind::Onsite, 0.3, 7).unwrap();
        assert!(on.has_onsite_terms());
        assert!(on.onsite().iter().all(|e| e.abs() <= 0.3));
    }

    #[test]
    fn strong_disorder_clamps_and_warns() {
        let spec = presets::transport();
        let s = CouplingSchedule::constant(&spec, 1.0).unwrap();
        let d = s.apply_disorder(DisorderKind::Coupling, 1.3, 3).unwrap();
        let bonds = d.bonds_at(0.5).unwrap();
        assert!(bonds.iter().all(|&b| b >= COUPLING_FLOOR));
        let any_clamped = bonds.iter().any(|&b| b == COUPLING_FLOOR);
        assert_eq!(any_clamped, !d.warnings().is_empty());
    }

    #[test]
    fn out_of_domain() {
        let s = CouplingSchedule::constant(&presets::transport(), 1.0).unwrap();
        assert!(s.hamiltonian(1.5).is_err());
        assert!(s.hamiltonian(-0.1).is_err());
        assert!(s.hamiltonian(1.0).is_ok());
    }
}
