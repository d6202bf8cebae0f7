//! End-to-end experiments: wall transport, the merge-and-split beam splitter,
//! disorder ensembles and the bend-slope scan, all driven by one TOML
//! configuration.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolution::{
    evolve_g2_entries, evolve_moments, propagate, run, Observers, Propagator, QuadratureRequest, RunOptions,
    TensorUpdate, Trajectory, DEFAULT_DZ,
};
use crate::lattice::{
    approach_plan, merge_split_schedule, presets, BendShape, Bond, CouplingSchedule, Direction, DisorderKind,
    DistanceModel, LatticeSpec, ScheduleBuilder,
};
use crate::observables::{db, min_variance_phase, phase_distance, Quadrature};
use crate::spectral::{
    band_sweep, bulk_half_gap, chiral_asymmetry, default_gap_tol, diagonalize, eigh, localized_gap_modes,
    SpectralResult,
};
use crate::states::{GaussianMoments, InitialState, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Transport,
    TrivialTransport,
    BandStructure,
    Beamsplitter,
}

impl Preset {
    pub fn spec(self) -> LatticeSpec {
        match self {
            Preset::Transport => presets::transport(),
            Preset::TrivialTransport => presets::trivial_transport(),
            Preset::BandStructure => presets::band_structure(),
            Preset::Beamsplitter => presets::beamsplitter(),
        }
    }
}

/// A preset, optionally with individual fields replaced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub preset: Option<Preset>,
    pub n_sites: Option<usize>,
    pub u: Option<f64>,
    pub v: Option<f64>,
    pub dw_positions: Option<Vec<usize>>,
    pub wall: Option<Bond>,
    pub onsite: Option<Vec<f64>>,
}

/// Couplings from waveguide separations, C = c2·exp(−c1·D).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    /// µm⁻¹; calibrated from the preset anchors when absent.
    pub c1: Option<f64>,
    /// cm⁻¹.
    pub c2: Option<f64>,
    /// Separation across weak bonds, µm.
    pub d_u: f64,
    /// Separation across strong bonds, µm.
    pub d_v: f64,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig { c1: None, c2: None, d_u: presets::D_U, d_v: presets::D_V }
    }
}

impl DistanceConfig {
    pub fn model(&self) -> Result<DistanceModel> {
        match (self.c1, self.c2) {
            (Some(c1), Some(c2)) => DistanceModel::new(c1, c2),
            (None, None) => Ok(presets::distance_model()),
            _ => Err(Error::Config("distances: give both c1 and c2 or neither".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BendConfig {
    pub slope: f64,
    /// Modulation length, cm.
    pub length: f64,
}

impl Default for BendConfig {
    fn default() -> Self {
        BendConfig { slope: presets::SLOPE, length: presets::MODULATION_LENGTH }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveConfig {
    pub wall: usize,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub moves: Vec<MoveConfig>,
    pub hold_before: f64,
    pub hold_after: f64,
    /// Launch site; the first moved wall's initial position by default.
    pub source: Option<usize>,
    /// Readout site; that wall's final position by default.
    pub target: Option<usize>,
    /// Partner site of the two-mode input.
    pub edge: usize,
    /// The four unit-photon inputs when absent.
    pub inputs: Option<Vec<InitialState>>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            moves: vec![MoveConfig { wall: 0, direction: Direction::Right }],
            hold_before: 0.0,
            hold_after: 0.0,
            source: None,
            target: None,
            edge: 0,
            inputs: None,
        }
    }
}

/// Evenly spaced grid including both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.start],
            p => (0..p).map(|k| self.start + (self.stop - self.start) * k as f64 / (p - 1) as f64).collect(),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.points == 0 || !(self.start.is_finite() && self.stop.is_finite()) || self.stop < self.start {
            return Err(Error::Config(format!("{what}: need points ≥ 1 and finite start ≤ stop")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamsplitterConfig {
    /// Indices into the wall list of the two walls to merge.
    pub walls: [usize; 2],
    /// Grid in u·z_int (dimensionless).
    pub uz_int: Sweep,
    /// Output waveguides; the walls' original sites by default.
    pub readout: Option<[usize; 2]>,
    /// Photon in the first wall, coherent α = 1 in the first wall, and
    /// squeezed vacuum in both, when absent.
    pub inputs: Option<Vec<InitialState>>,
}

impl Default for BeamsplitterConfig {
    fn default() -> Self {
        BeamsplitterConfig {
            walls: [0, 1],
            uz_int: Sweep { start: 0.0, stop: PI, points: 40 },
            readout: None,
            inputs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisorderConfig {
    pub kind: DisorderKind,
    /// Half-width of the uniform distribution, cm⁻¹.
    pub delta: f64,
    pub repetitions: usize,
    /// Realization k uses seed + k.
    pub seed: u64,
    /// Keep every realization's sweep in the result.
    pub keep_raw: bool,
}

impl Default for DisorderConfig {
    fn default() -> Self {
        DisorderConfig { kind: DisorderKind::Coupling, delta: 1.3, repetitions: 20, seed: 0, keep_raw: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Step, cm.
    pub dz: f64,
    pub sample_every: usize,
    pub tensor_update: TensorUpdate,
    pub audit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { dz: DEFAULT_DZ, sample_every: 100, tensor_update: TensorUpdate::AtSamples, audit: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsConfig {
    /// Grid in δ = v/u.
    pub delta: Sweep,
}

impl Default for BandsConfig {
    fn default() -> Self {
        BandsConfig { delta: Sweep { start: 0.1, stop: 5.0, points: 50 } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub slopes: Vec<f64>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig { slopes: vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

/// Everything an experiment needs. Every block is optional in TOML.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lattice: LatticeConfig,
    pub distances: Option<DistanceConfig>,
    pub bend: BendConfig,
    pub transport: TransportConfig,
    pub beamsplitter: BeamsplitterConfig,
    pub disorder: DisorderConfig,
    pub run: RunConfig,
    pub bands: BandsConfig,
    pub optimize: OptimizeConfig,
    /// Extra records added to every transport trajectory.
    pub observables: Observers,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Lattice with `fallback` as the preset when none is named.
    pub fn lattice_spec(&self, fallback: Preset) -> Result<LatticeSpec> {
        let c = &self.lattice;
        let mut s = c.preset.unwrap_or(fallback).spec();
        if let Some(n) = c.n_sites {
            s.n_sites = n;
        }
        if let Some(u) = c.u {
            s.u = u;
        }
        if let Some(v) = c.v {
            s.v = v;
        }
        if let Some(d) = &self.distances {
            let m = d.model()?;
            s.u = m.coupling(d.d_u)?;
            s.v = m.coupling(d.d_v)?;
        }
        if let Some(w) = &c.dw_positions {
            s.dw_positions = w.clone();
        }
        if let Some(w) = c.wall {
            s.wall = w;
        }
        if let Some(o) = &c.onsite {
            s.onsite = o.clone();
        }
        s.validate()?;
        Ok(s)
    }

    pub fn bend_shape(&self) -> Result<BendShape> {
        BendShape::new(self.bend.slope, self.bend.length)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            dz: self.run.dz,
            sample_every: self.run.sample_every,
            tensor_update: self.run.tensor_update,
            audit: self.run.audit,
            observers: Observers::default(),
        }
    }

    /// Reject anything that cannot run, before running anything.
    pub fn validate(&self) -> Result<()> {
        if !(self.run.dz > 0.0 && self.run.dz.is_finite()) {
            return Err(Error::Config(format!("run.dz must be positive, got {}", self.run.dz)));
        }
        if self.run.sample_every == 0 {
            return Err(Error::Config("run.sample_every must be ≥ 1".into()));
        }
        self.bend_shape()?;
        if !(self.transport.hold_before >= 0.0 && self.transport.hold_after >= 0.0) {
            return Err(Error::Config("transport holds must be ≥ 0".into()));
        }
        self.beamsplitter.uz_int.validate("beamsplitter.uz_int")?;
        if self.beamsplitter.uz_int.start < 0.0 {
            return Err(Error::Config("beamsplitter.uz_int must be ≥ 0".into()));
        }
        self.bands.delta.validate("bands.delta")?;
        if self.bands.delta.start <= 0.0 {
            return Err(Error::Config("bands.delta must be positive".into()));
        }
        if !(self.disorder.delta >= 0.0 && self.disorder.delta.is_finite()) {
            return Err(Error::Config("disorder.delta must be ≥ 0".into()));
        }
        if self.disorder.repetitions == 0 {
            return Err(Error::Config("disorder.repetitions must be ≥ 1".into()));
        }
        if self.optimize.slopes.is_empty() || self.optimize.slopes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("optimize.slopes must be positive and non-empty".into()));
        }
        if let Some(d) = &self.distances {
            d.model()?;
        }
        if let Some(p) = self.lattice.preset {
            self.lattice_spec(p)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Lowest bulk half-gap and worst ±E asymmetry along a schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// States set aside as in-gap.
    pub n_gap: usize,
    pub min_bulk_gap: f64,
    pub z_at_min: f64,
    /// max_z of the ±E asymmetry over the spectral radius.
    pub max_chiral_asymmetry: f64,
    pub samples: usize,
}

/// Evaluate the instantaneous spectrum at `samples` evenly spaced z.
pub fn gap_monitor(schedule: &CouplingSchedule, n_gap: usize, samples: usize) -> Result<GapReport> {
    let total = schedule.total_length();
    let points = samples.max(2);
    let mut rep = GapReport { n_gap, min_bulk_gap: f64::INFINITY, z_at_min: 0.0, max_chiral_asymmetry: 0.0, samples: points };
    for k in 0..points {
        let z = total * k as f64 / (points - 1) as f64;
        let (e, _) = eigh(&schedule.hamiltonian(z)?)?;
        let gap = bulk_half_gap(&e, n_gap);
        if gap < rep.min_bulk_gap {
            rep.min_bulk_gap = gap;
            rep.z_at_min = z;
        }
        let radius = e.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        rep.max_chiral_asymmetry = rep.max_chiral_asymmetry.max(chiral_asymmetry(&e) / radius);
    }
    Ok(rep)
}

/// Number of states of a static lattice lying within half the bulk gap
/// |v − u| of zero.
pub fn gap_state_count(spec: &LatticeSpec) -> Result<usize> {
    let (e, _) = eigh(&crate::lattice::build_ssh(spec)?)?;
    let half = 0.5 * (spec.v - spec.u).abs();
    Ok(e.iter().filter(|x| x.abs() < half).count())
}

pub fn bands_experiment(cfg: &ExperimentConfig) -> Result<Vec<(f64, SpectralResult)>> {
    cfg.validate()?;
    let spec = cfg.lattice_spec(Preset::BandStructure)?;
    band_sweep(&spec, &cfg.bands.delta.values())
}

#[derive(Clone, Debug)]
pub struct TransportSetup {
    pub spec: LatticeSpec,
    pub schedule: CouplingSchedule,
    pub source: usize,
    pub target: usize,
    pub edge: usize,
    pub gap: GapReport,
    pub warnings: Vec<String>,
}

pub fn transport_setup(cfg: &ExperimentConfig, fallback: Preset) -> Result<TransportSetup> {
    cfg.validate()?;
    let spec = cfg.lattice_spec(fallback)?;
    let shape = cfg.bend_shape()?;
    let t = &cfg.transport;
    let mut b = ScheduleBuilder::new(&spec)?;
    b.hold(t.hold_before)?;
    for mv in &t.moves {
        b.move_wall(mv.wall, mv.direction, &shape)?;
    }
    b.hold(t.hold_after)?;
    let first = t.moves.first().map_or(0, |m| m.wall);
    let walls_after = b.walls().to_vec();
    let schedule = b.build();
    let source = match t.source {
        Some(s) => s,
        None => *spec.dw_positions.get(first).ok_or_else(|| Error::Config("transport needs a wall or an explicit source".into()))?,
    };
    let target = t.target.unwrap_or_else(|| walls_after.get(first).copied().unwrap_or(source));
    for s in [source, target, t.edge] {
        if s >= spec.n_sites {
            return Err(Error::Site { site: s, n: spec.n_sites });
        }
    }
    let mut warnings = Vec::new();
    let h = crate::lattice::build_ssh(&spec)?;
    let modes = localized_gap_modes(&h, &diagonalize(&h)?, default_gap_tol(&spec))?;
    if !modes.iter().any(|m| (m.center - source as f64).abs() < 1.0) {
        warnings.push(format!("input site {source} does not host an in-gap state"));
    }
    let gap = gap_monitor(&schedule, gap_state_count(&spec)?, 101)?;
    if gap.min_bulk_gap < 0.5 * (spec.v - spec.u).abs() {
        warnings.push(format!("bulk gap shrinks to {:.3e} at z = {:.3}", gap.min_bulk_gap, gap.z_at_min));
    }
    Ok(TransportSetup { spec, schedule, source, target, edge: t.edge, gap, warnings })
}

pub fn transport_inputs(cfg: &ExperimentConfig, setup: &TransportSetup) -> Vec<InitialState> {
    cfg.transport.inputs.clone().unwrap_or_else(|| InitialState::unit_photon_set(setup.source, setup.edge))
}

/// Default records for one transport input.
pub fn transport_observers(input: &InitialState, setup: &TransportSetup, extra: &Observers) -> Observers {
    let (s, t) = (setup.source, setup.target);
    let phases = vec![0.0, PI / 2.0];
    let mut quads = vec![
        QuadratureRequest { sites: vec![s], phases: phases.clone(), optimal: true },
        QuadratureRequest { sites: vec![t], phases: phases.clone(), optimal: true },
    ];
    if let InitialState::TwoModeSqueezed { sites, .. } = input {
        let partner = if sites[0] == s { sites[1] } else { sites[0] };
        for x in [s, t] {
            if x != partner {
                quads.push(QuadratureRequest { sites: vec![partner, x], phases: phases.clone(), optimal: true });
            }
        }
    }
    let mut g2 = vec![[s, s, s, s], [t, t, t, t]];
    g2.extend(extra.g2.iter().copied());
    quads.extend(extra.quadratures.iter().cloned());
    Observers { g2, quadratures: quads, keep_moments: extra.keep_moments, keep_tensor: extra.keep_tensor }
}

#[derive(Clone, Debug)]
pub struct TransportRun {
    pub input: InitialState,
    pub source: usize,
    pub target: usize,
    /// N_target(end) / N_source(start).
    pub transmission: f64,
    pub trajectory: Trajectory,
}

pub fn transport_experiment(cfg: &ExperimentConfig, setup: &TransportSetup, input: &InitialState) -> Result<TransportRun> {
    let (m0, t0) = input.prepare(setup.spec.n_sites)?;
    let mut opts = cfg.run_options();
    opts.observers = transport_observers(input, setup, &cfg.observables);
    let mut trajectory = run(&setup.schedule, &m0, &t0, &opts)?;
    trajectory.meta.warnings.extend(setup.warnings.iter().cloned());
    trajectory.meta.config_hash = Some(cfg.hash());
    let transmission = trajectory.transmission_from(setup.source, setup.target)?;
    Ok(TransportRun { input: input.clone(), source: setup.source, target: setup.target, transmission, trajectory })
}

/// Every configured input through the same schedule, in parallel.
pub fn transport_suite(cfg: &ExperimentConfig, fallback: Preset) -> Result<(TransportSetup, Vec<TransportRun>)> {
    let setup = transport_setup(cfg, fallback)?;
    let inputs = transport_inputs(cfg, &setup);
    let runs = inputs.par_iter().map(|i| transport_experiment(cfg, &setup, i)).collect::<Result<Vec<_>>>()?;
    Ok((setup, runs))
}

/// Minimizing phase recorded for `sites` in sample `idx`, if it was requested
/// and is well defined.
pub fn optimal_phase(traj: &Trajectory, idx: usize, sites: &[usize]) -> Option<f64> {
    traj.samples
        .get(idx)?
        .quadratures
        .iter()
        .find(|q| q.optimal && q.defined && q.sites == sites)
        .map(|q| q.phase)
}

impl TransportRun {
    /// Rotation of the squeezed quadrature between launch and readout, in
    /// [0, π/2]: the single-site quadrature for single-mode squeezing, the
    /// joint quadrature with the partner for two-mode squeezing.
    pub fn phase_shift(&self) -> Option<f64> {
        let traj = &self.trajectory;
        let last = traj.samples.len().checked_sub(1)?;
        let (before, after) = match &self.input {
            InitialState::Squeezed { sites, .. } if sites.len() == 1 => (vec![self.source], vec![self.target]),
            InitialState::TwoModeSqueezed { sites, .. } => {
                let p = if sites[0] == self.source { sites[1] } else { sites[0] };
                (vec![p, self.source], vec![p, self.target])
            }
            _ => return None,
        };
        Some(phase_distance(optimal_phase(traj, 0, &before)?, optimal_phase(traj, last, &after)?))
    }
}

/// Transmission versus bend slope; ties go to the gentler slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeScan {
    pub best: f64,
    pub best_transmission: f64,
    /// (slope, transmission), ascending in slope.
    pub curve: Vec<(f64, f64)>,
}

pub fn optimize_slope(cfg: &ExperimentConfig, slopes: &[f64]) -> Result<SlopeScan> {
    if slopes.is_empty() || slopes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::Parameter("slopes must be positive and finite".into()));
    }
    let mut grid = slopes.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let curve = grid
        .par_iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.bend.slope = s;
            let setup = transport_setup(&c, Preset::Transport)?;
            let (m0, _) = InitialState::SinglePhoton { site: setup.source }.prepare(setup.spec.n_sites)?;
            let p = propagate(&setup.schedule, 0.0, setup.schedule.total_length(), c.run.dz)?;
            let m = evolve_moments(&m0, &p)?;
            Ok((s, m.n[[setup.target, setup.target]].re))
        })
        .collect::<Result<Vec<_>>>()?;
    let (best, best_transmission) = curve
        .iter()
        .copied()
        .fold((grid[0], f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b });
    Ok(SlopeScan { best, best_transmission, curve })
}

/// One named value at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub observable: String,
    pub sites: Vec<usize>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub uz_int: f64,
    /// Interaction length, cm.
    pub z_int: f64,
    pub input: String,
    pub records: Vec<Record>,
}

impl SweepPoint {
    pub fn value(&self, observable: &str, sites: &[usize]) -> Option<f64> {
        self.records.iter().find(|r| r.observable == observable && r.sites == sites).map(|r| r.value)
    }
}

/// Merge-and-split geometry with the interaction length factored out.
#[derive(Clone, Debug)]
pub struct SplitterPlan {
    pub spec: LatticeSpec,
    /// Approach immediately followed by the return.
    pub base: CouplingSchedule,
    pub approach_length: f64,
    pub readout: [usize; 2],
    /// Sites of the merged pair during the interaction.
    pub merged: Vec<usize>,
}

pub fn splitter_plan(cfg: &ExperimentConfig) -> Result<SplitterPlan> {
    cfg.validate()?;
    let spec = cfg.lattice_spec(Preset::Beamsplitter)?;
    let shape = cfg.bend_shape()?;
    let [a, b] = cfg.beamsplitter.walls;
    let rounds = approach_plan(&spec, a, b)?;
    let base = merge_split_schedule(&spec, a, b, 0.0, &shape)?;
    let approach_length = rounds.len() as f64 * shape.length;
    let readout = match cfg.beamsplitter.readout {
        Some(r) => r,
        None => [spec.dw_positions[a], spec.dw_positions[b]],
    };
    for s in readout {
        if s >= spec.n_sites {
            return Err(Error::Site { site: s, n: spec.n_sites });
        }
    }
    let merged = base
        .segments()
        .get(rounds.len().saturating_sub(1))
        .map_or(spec.dw_positions.clone(), |s| s.walls_after.clone());
    Ok(SplitterPlan { spec, base, approach_length, readout, merged })
}

/// U(z_int) = U_return · exp(−i H_int z_int) · U_approach.
#[derive(Clone, Debug)]
pub struct SplitterPropagators {
    pub approach: Propagator,
    pub back: Propagator,
    energies: Array1<f64>,
    modes: Array2<C64>,
}

impl SplitterPropagators {
    /// `base` may carry disorder; the interaction Hamiltonian is read off at
    /// the turning point.
    pub fn new(base: &CouplingSchedule, approach_length: f64, dz: f64) -> Result<Self> {
        let total = base.total_length();
        let approach = propagate(base, 0.0, approach_length, dz)?;
        let back = propagate(base, approach_length, total, dz)?;
        let (e, v) = eigh(&base.hamiltonian(approach_length)?)?;
        Ok(SplitterPropagators { approach, back, energies: Array1::from(e), modes: v.mapv(|x| C64::new(x, 0.0)) })
    }

    pub fn total(&self, z_int: f64) -> Result<Propagator> {
        let phases = self.energies.mapv(|e| C64::from_polar(1.0, -e * z_int));
        let hold = (&self.modes * &phases).dot(&self.modes.t());
        let mid = Propagator { u: hold, z_from: self.approach.z_to, z_to: self.approach.z_to + z_int };
        let back = Propagator { u: self.back.u.clone(), z_from: mid.z_to, z_to: mid.z_to + self.back.z_to - self.back.z_from };
        self.approach.then(&mid)?.then(&back)
    }
}

pub fn splitter_inputs(cfg: &ExperimentConfig, plan: &SplitterPlan) -> Vec<InitialState> {
    cfg.beamsplitter.inputs.clone().unwrap_or_else(|| {
        let [a, b] = cfg.beamsplitter.walls;
        let (sa, sb) = (plan.spec.dw_positions[a], plan.spec.dw_positions[b]);
        vec![
            InitialState::SinglePhoton { site: sa },
            InitialState::Coherent { site: sa, amplitude: 1.0, phase: 0.0 },
            InitialState::Squeezed { sites: vec![sa, sb], r: 1f64.asinh(), phase: 0.0 },
        ]
    })
}

fn input_labels(inputs: &[InitialState]) -> Vec<String> {
    inputs
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if inputs.iter().filter(|o| o.label() == s.label()).count() > 1 {
                format!("{}_{k}", s.label())
            } else {
                s.label().to_string()
            }
        })
        .collect()
}

/// Records at the outputs `[a, b]` for the evolved state.
fn output_records(m0: &GaussianMoments, t0: &crate::states::CorrelationTensor, p: &Propagator, [a, b]: [usize; 2]) -> Result<Vec<Record>> {
    let m = evolve_moments(m0, p)?;
    let picks = [[a, a, a, a], [b, b, b, b], [a, a, b, b]];
    let g = evolve_g2_entries(t0, p, &picks)?;
    let rec = |o: &str, s: Vec<usize>, v: f64| Record { observable: o.to_string(), sites: s, value: v };
    let mut out = vec![
        rec("N", vec![a], m.n[[a, a]].re),
        rec("N", vec![b], m.n[[b, b]].re),
        rec("N_out", vec![a, b], m.n[[a, a]].re + m.n[[b, b]].re),
        rec("N_total", vec![], m.total_photons()),
    ];
    for (pick, v) in picks.iter().zip(&g) {
        out.push(rec("g2", pick.to_vec(), v.re));
    }
    let mb = m.centered_m();
    out.push(rec("m_abs", vec![a, a], mb[[a, a]].norm()));
    out.push(rec("m_abs", vec![b, b], mb[[b, b]].norm()));
    out.push(rec("m_abs", vec![a, b], mb[[a, b]].norm()));
    for q in [Quadrature::Site(a), Quadrature::Site(b), Quadrature::Pair(a, b)] {
        let best = min_variance_phase(&m, q, 64)?;
        out.push(rec("db_opt", q.sites(), db(best.variance)));
        out.push(rec("phase_opt", q.sites(), best.phase));
        out.push(rec("db_phi0", q.sites(), db(q.variance(&m, 0.0)?)));
    }
    Ok(out)
}

fn sweep_points(
    props: &SplitterPropagators,
    inputs: &[(String, GaussianMoments, crate::states::CorrelationTensor)],
    grid: &[f64],
    u: f64,
    readout: [usize; 2],
) -> Result<Vec<SweepPoint>> {
    let per_z = grid
        .par_iter()
        .map(|&x| {
            let z_int = x / u;
            let p = props.total(z_int)?;
            inputs
                .iter()
                .map(|(label, m0, t0)| {
                    Ok(SweepPoint { uz_int: x, z_int, input: label.clone(), records: output_records(m0, t0, &p, readout)? })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_z.into_iter().flatten().collect())
}

#[derive(Clone, Debug)]
pub struct BeamsplitterResult {
    pub u: f64,
    pub readout: [usize; 2],
    pub approach_length: f64,
    pub inputs: Vec<(String, InitialState)>,
    /// Ordered by u·z_int, then by input.
    pub points: Vec<SweepPoint>,
    pub gap: GapReport,
    pub warnings: Vec<String>,
}

impl BeamsplitterResult {
    /// (u·z_int, value) for one input and observable.
    pub fn curve(&self, input: &str, observable: &str, sites: &[usize]) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.input == input)
            .filter_map(|p| p.value(observable, sites).map(|v| (p.uz_int, v)))
            .collect()
    }
}

pub fn beamsplitter_experiment(cfg: &ExperimentConfig) -> Result<BeamsplitterResult> {
    let plan = splitter_plan(cfg)?;
    let inputs = splitter_inputs(cfg, &plan);
    let labels = input_labels(&inputs);
    let prepared = labels
        .iter()
        .zip(&inputs)
        .map(|(l, s)| {
            let (m, t) = s.prepare(plan.spec.n_sites)?;
            Ok((l.clone(), m, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let props = SplitterPropagators::new(&plan.base, plan.approach_length, cfg.run.dz)?;
    let grid = cfg.beamsplitter.uz_int.values();
    let points = sweep_points(&props, &prepared, &grid, plan.spec.u, plan.readout)?;
    let n_gap = gap_state_count(&plan.spec)?;
    let gap = gap_monitor(&plan.base, n_gap, 101)?;
    let mut warnings = plan.base.warnings().to_vec();
    if gap.min_bulk_gap < 0.5 * (plan.spec.v - plan.spec.u).abs() {
        warnings.push(format!("bulk gap shrinks to {:.3e} at z = {:.3}", gap.min_bulk_gap, gap.z_at_min));
    }
    Ok(BeamsplitterResult {
        u: plan.spec.u,
        readout: plan.readout,
        approach_length: plan.approach_length,
        inputs: labels.into_iter().zip(inputs).collect(),
        points,
        gap,
        warnings,
    })
}

/// Mean and spread of one record over realizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStat {
    pub uz_int: f64,
    pub input: String,
    pub observable: String,
    pub sites: Vec<usize>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub seed: u64,
    pub warnings: Vec<String>,
    /// Worst ±E asymmetry over the sampled z, relative to the spectral radius.
    pub chiral_asymmetry: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub kind: DisorderKind,
    pub delta: f64,
    pub repetitions: usize,
    pub stats: Vec<EnsembleStat>,
    pub realizations: Vec<Realization>,
    pub raw: Option<Vec<Vec<SweepPoint>>>,
}

impl EnsembleResult {
    pub fn stat(&self, uz_int: f64, input: &str, observable: &str, sites: &[usize]) -> Option<&EnsembleStat> {
        self.stats
            .iter()
            .find(|s| s.uz_int == uz_int && s.input == input && s.observable == observable && s.sites == sites)
    }

    pub fn curve(&self, input: &str, observable: &str, sites: &[usize]) -> Vec<&EnsembleStat> {
        self.stats.iter().filter(|s| s.input == input && s.observable == observable && s.sites == sites).collect()
    }
}

/// Chiral checks are taken at this many z per realization.
const CHIRAL_SAMPLES: usize = 41;

/// `reps` beam-splitter sweeps, each with its own static disorder draw.
/// A failed realization is recorded and left out of the statistics.
pub fn disorder_ensemble(cfg: &ExperimentConfig, kind: DisorderKind, delta: f64, reps: usize) -> Result<EnsembleResult> {
    if reps == 0 {
        return Err(Error::Parameter("an ensemble needs at least one realization".into()));
    }
    let plan = splitter_plan(cfg)?;
    let inputs = splitter_inputs(cfg, &plan);
    let labels = input_labels(&inputs);
    let prepared = labels
        .iter()
        .zip(&inputs)
        .map(|(l, s)| {
            let (m, t) = s.prepare(plan.spec.n_sites)?;
            Ok((l.clone(), m, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = cfg.beamsplitter.uz_int.values();
    let base_seed = cfg.disorder.seed;
    let outcomes: Vec<(Realization, Option<Vec<SweepPoint>>)> = (0..reps)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed.wrapping_add(k as u64);
            let attempt = || -> Result<(Realization, Vec<SweepPoint>)> {
                let sched = plan.base.apply_disorder(kind, delta, seed)?;
                let gap = gap_monitor(&sched, 0, CHIRAL_SAMPLES)?;
                let props = SplitterPropagators::new(&sched, plan.approach_length, cfg.run.dz)?;
                let pts = sweep_points(&props, &prepared, &grid, plan.spec.u, plan.readout)?;
                let r = Realization {
                    seed,
                    warnings: sched.warnings().to_vec(),
                    chiral_asymmetry: gap.max_chiral_asymmetry,
                    error: None,
                };
                Ok((r, pts))
            };
            match attempt() {
                Ok((r, p)) => (r, Some(p)),
                Err(e) => (
                    Realization { seed, warnings: Vec::new(), chiral_asymmetry: f64::NAN, error: Some(e.to_string()) },
                    None,
                ),
            }
        })
        .collect();
    let good: Vec<&Vec<SweepPoint>> = outcomes.iter().filter_map(|(_, p)| p.as_ref()).collect();
    if good.is_empty() {
        return Err(Error::Parameter("every disorder realization failed".into()));
    }
    let mut stats = Vec::new();
    for (idx, point) in good[0].iter().enumerate() {
        for (r, rec) in point.records.iter().enumerate() {
            let vals: Vec<f64> = good.iter().map(|g| g[idx].records[r].value).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            stats.push(EnsembleStat {
                uz_int: point.uz_int,
                input: point.input.clone(),
                observable: rec.observable.clone(),
                sites: rec.sites.clone(),
                mean,
                std: var.sqrt(),
            });
        }
    }
    let raw = cfg.disorder.keep_raw.then(|| good.iter().map(|g| (*g).clone()).collect());
    Ok(EnsembleResult {
        kind,
        delta,
        repetitions: reps,
        stats,
        realizations: outcomes.into_iter().map(|(r, _)| r).collect(),
        raw,
    })
}

/// y ≈ A·cos²(ω x + φ) + c.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineFit {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
    /// π/ω.
    pub period: f64,
    pub rms_residual: f64,
    /// RMS residual over the peak-to-peak range of the data.
    pub relative_residual: f64,
}

/// Linear least squares for p + q cos(kx) + r sin(kx); returns (p, q, r, sse).
fn sinusoid_lsq(x: &[f64], y: &[f64], k: f64) -> (f64, f64, f64, f64) {
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = nalgebra::Vector3::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let f = nalgebra::Vector3::new(1.0, (k * xi).cos(), (k * xi).sin());
        a += f * f.transpose();
        rhs += f * yi;
    }
    let sol = a.lu().solve(&rhs).unwrap_or_else(nalgebra::Vector3::zeros);
    let sse = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - sol[0] - sol[1] * (k * xi).cos() - sol[2] * (k * xi).sin()).powi(2))
        .sum();
    (sol[0], sol[1], sol[2], sse)
}

/// Fit with free frequency. The angular frequency of the underlying
/// sinusoid is searched on a grid in `[k_lo, k_hi]` and refined by golden
/// section.
pub fn fit_cos2(x: &[f64], y: &[f64], k_lo: f64, k_hi: f64) -> Result<CosineFit> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(Error::Parameter("fit needs at least four points".into()));
    }
    if !(k_lo > 0.0 && k_hi > k_lo) {
        return Err(Error::Parameter("fit needs 0 < k_lo < k_hi".into()));
    }
    let grid = 4000;
    let dk = (k_hi - k_lo) / grid as f64;
    let mut best = (k_lo, f64::INFINITY);
    for s in 0..=grid {
        let k = k_lo + s as f64 * dk;
        let sse = sinusoid_lsq(x, y, k).3;
        if sse < best.1 {
            best = (k, sse);
        }
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((best.0 - dk).max(k_lo), (best.0 + dk).min(k_hi));
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if sinusoid_lsq(x, y, c).3 < sinusoid_lsq(x, y, d).3 {
            b = d;
        } else {
            a = c;
        }
    }
    let k = 0.5 * (a + b);
    let (p, q, r, sse) = sinusoid_lsq(x, y, k);
    let half = q.hypot(r);
    let amplitude = 2.0 * half;
    let frequency = 0.5 * k;
    let rms = (sse / x.len() as f64).sqrt();
    let span = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(CosineFit {
        amplitude,
        frequency,
        phase: -0.5 * r.atan2(q),
        offset: p - half,
        period: PI / frequency,
        rms_residual: rms,
        relative_residual: if span > 0.0 { rms / span } else { 0.0 },
    })
}

/// Interior and end points that are at least as large as their neighbours.
pub fn local_maxima(curve: &[(f64, f64)]) -> Vec<f64> {
    let n = curve.len();
    (0..n)
        .filter(|&k| {
            let left = k == 0 || curve[k].1 >= curve[k - 1].1;
            let right = k + 1 == n || curve[k].1 >= curve[k + 1].1;
            left && right
        })
        .map(|k| curve[k].0)
        .collect()
}

/// Where single-mode and two-mode squeezing peak across a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alternation {
    /// Fit of |M̄_aa|², the single-mode squeezing strength at the first output.
    pub single: CosineFit,
    /// Fit of |M̄_ab|², the cross-correlation between outputs.
    pub two_mode: CosineFit,
    pub single_maxima: Vec<f64>,
    pub two_mode_maxima: Vec<f64>,
}

pub fn squeezing_alternation(result: &BeamsplitterResult, input: &str) -> Result<Alternation> {
    let [a, b] = result.readout;
    let sq = |c: Vec<(f64, f64)>| c.into_iter().map(|(x, v)| (x, v * v)).collect::<Vec<_>>();
    let single = sq(result.curve(input, "m_abs", &[a, a]));
    let cross = sq(result.curve(input, "m_abs", &[a, b]));
    if single.len() < 4 {
        return Err(Error::Parameter(format!("no squeezing records for input {input}")));
    }
    let split = |c: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { c.iter().copied().unzip() };
    let (xs, ys) = split(&single);
    let (xc, yc) = split(&cross);
    Ok(Alternation {
        single: fit_cos2(&xs, &ys, 0.5, 12.0)?,
        two_mode: fit_cos2(&xc, &yc, 0.5, 12.0)?,
        single_maxima: local_maxima(&single),
        two_mode_maxima: local_maxima(&cross),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quick() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.run.dz = 0.01;
        c.run.audit = false;
        c.lattice.n_sites = Some(24);
        c.lattice.dw_positions = Some(vec![11]);
        c.transport.edge = 0;
        c
    }

    #[test]
    fn defaults_validate_and_hash_is_stable() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hash(), ExperimentConfig::default().hash());
        assert_eq!(c.hash().len(), 64);
        let mut d = c.clone();
        d.run.dz = 2e-3;
        assert_ne!(c.hash(), d.hash());
    }

    #[test]
    fn toml_round_trip_and_rejections() {
        let text = r#"
            [lattice]
            preset = "beamsplitter"
            u = 0.7

            [disorder]
            kind = "onsite"
            delta = 0.5

            [[transport.inputs]]
            kind = "coherent"
            site = 13
            amplitude = 1.0
        "#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.disorder.kind, DisorderKind::Onsite);
        assert_eq!(c.lattice_spec(Preset::Transport).unwrap().dw_positions, vec![13, 18]);
        assert_eq!(c.transport.inputs.as_ref().unwrap().len(), 1);
        let back = ExperimentConfig::from_toml_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(ExperimentConfig::from_toml_str("[run]\nstep = 1").is_err());
        let bad = ExperimentConfig::from_toml_str("[run]\ndz = -1.0").unwrap();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ExperimentConfig::from_toml_str("[lattice]\ndw_positions = [3, 4]\npreset = \"transport\"").unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn distances_set_couplings() {
        let mut c = ExperimentConfig::default();
        c.distances = Some(DistanceConfig::default());
        let s = c.lattice_spec(Preset::Transport).unwrap();
        assert_abs_diff_eq!(s.u, 0.69, epsilon = 1e-12);
        assert_abs_diff_eq!(s.v, 3.22, epsilon = 1e-12);
    }

    #[test]
    fn sweep_grid() {
        let s = Sweep { start: 0.0, stop: PI, points: 5 };
        let v = s.values();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[4], PI);
    }

    #[test]
    fn transport_defaults_follow_the_wall() {
        let setup = transport_setup(&quick(), Preset::Transport).unwrap();
        assert_eq!((setup.source, setup.target), (11, 13));
        assert!(setup.warnings.is_empty());
        let mut c = quick();
        c.transport.source = Some(4);
        let setup = transport_setup(&c, Preset::Transport).unwrap();
        assert_eq!(setup.warnings.len(), 1);
    }

    #[test]
    fn transport_inputs_share_photon_trace() {
        let c = quick();
        let (setup, runs) = transport_suite(&c, Preset::Transport).unwrap();
        assert_eq!(runs.len(), 4);
        let reference = runs[0].trajectory.photon_trace(setup.target);
        for r in &runs {
            let tr = r.trajectory.photon_trace(setup.target);
            let diff = tr.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let tol = if r.input.sites().len() > 1 { 1e-4 } else { 1e-12 };
            assert!(diff < tol, "{}: {diff}", r.input.label());
            assert!(r.transmission > 0.0 && r.transmission <= 1.0);
        }
    }

    #[test]
    fn slope_scan_prefers_gentle_ties() {
        let c = quick();
        let scan = optimize_slope(&c, &[1.5, 1.5]).unwrap();
        assert_eq!(scan.curve.len(), 1);
        assert_eq!(scan.best, 1.5);
        let scan = optimize_slope(&c, &[3.0, 0.5, 1.5]).unwrap();
        assert!(scan.curve.iter().all(|&(_, t)| t <= scan.best_transmission));
        assert!(optimize_slope(&c, &[]).is_err());
    }

    #[test]
    fn splitter_factorization_matches_full_schedule() {
        let mut c = ExperimentConfig::default();
        c.run.dz = 0.01;
        let plan = splitter_plan(&c).unwrap();
        assert_eq!(plan.merged, vec![15, 16]);
        assert_eq!(plan.readout, [13, 18]);
        let props = SplitterPropagators::new(&plan.base, plan.approach_length, 0.01).unwrap();
        let z_int = 1.7;
        let full = merge_split_schedule(&plan.spec, 0, 1, z_int, &c.bend_shape().unwrap()).unwrap();
        let direct = propagate(&full, 0.0, full.total_length(), 0.01).unwrap();
        let fact = props.total(z_int).unwrap();
        let diff = (&direct.u - &fact.u).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn zero_disorder_ensemble_is_the_clean_sweep() {
        let mut c = ExperimentConfig::default();
        c.run.dz = 0.02;
        c.beamsplitter.uz_int.points = 3;
        let clean = beamsplitter_experiment(&c).unwrap();
        let ens = disorder_ensemble(&c, DisorderKind::Coupling, 0.0, 3).unwrap();
        assert_eq!(ens.realizations.len(), 3);
        for p in &clean.points {
            for r in &p.records {
                let s = ens.stat(p.uz_int, &p.input, &r.observable, &r.sites).unwrap();
                assert_abs_diff_eq!(s.mean, r.value, epsilon = 1e-12 * r.value.abs().max(1.0));
                assert!(s.std < 1e-12);
            }
        }
    }

    #[test]
    fn cos2_fit_recovers_parameters() {
        let x: Vec<f64> = (0..40).map(|k| PI * k as f64 / 39.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| 0.8 * (1.07 * v + 0.3).cos().powi(2) + 0.05).collect();
        let f = fit_cos2(&x, &y, 0.5, 12.0).unwrap();
        assert_abs_diff_eq!(f.frequency, 1.07, epsilon = 1e-6);
        assert_abs_diff_eq!(f.amplitude, 0.8, epsilon = 1e-6);
        assert_abs_diff_eq!(f.offset, 0.05, epsilon = 1e-6);
        assert!(f.relative_residual < 1e-8);
        assert!(fit_cos2(&x[..3], &y[..3], 0.5, 12.0).is_err());
    }

    #[test]
    fn maxima() {
        let c = [(0.0, 1.0), (1.0, 0.0), (2.0, 2.0), (3.0, 1.0)];
        assert_eq!(local_maxima(&c), vec![0.0, 2.0]);
    }
}
