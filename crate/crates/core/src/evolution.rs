//! Propagation of moments and the four-point tensor along z.
//!
//! The mode operators evolve linearly, a → U a, with U a product of midpoint
//! step exponentials exp(−i H(z + dz/2) dz). Moments pick up one factor of U
//! (or its conjugate) per index; the tensor picks up four.

use std::time::Instant;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::CouplingSchedule;
use crate::observables::{min_variance_phase, photon_numbers, Quadrature};
use crate::spectral::eigh;
use crate::states::{CorrelationTensor, GaussianMoments, C64};

/// Per-step unitarity tolerance.
pub const STEP_UNITARITY_TOL: f64 = 1e-9;
/// Accumulated drift beyond this aborts a run.
pub const DRIFT_ABORT: f64 = 1e-6;
pub const DEFAULT_DZ: f64 = 1e-3;

const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// Single-particle propagator from `z_from` to `z_to`: a(z_to) = U a(z_from).
#[derive(Clone, Debug, PartialEq)]
pub struct Propagator {
    pub u: Array2<C64>,
    pub z_from: f64,
    pub z_to: f64,
}

impl Propagator {
    pub fn identity(n: usize, z: f64) -> Self {
        Propagator { u: Array2::eye(n), z_from: z, z_to: z }
    }

    pub fn n_sites(&self) -> usize {
        self.u.nrows()
    }

    /// max |U†U − I|.
    pub fn unitarity_error(&self) -> f64 {
        unitarity_error(&self.u)
    }

    /// `self` followed by `later`.
    pub fn then(&self, later: &Propagator) -> Result<Propagator> {
        if later.n_sites() != self.n_sites() {
            return Err(Error::Dimension { expected: self.n_sites(), got: later.n_sites() });
        }
        Ok(Propagator { u: later.u.dot(&self.u), z_from: self.z_from, z_to: later.z_to })
    }
}

pub fn unitarity_error(u: &Array2<C64>) -> f64 {
    let g = u.t().mapv(|z| z.conj()).dot(u);
    g.indexed_iter()
        .map(|((i, j), z)| (z - if i == j { ONE } else { ZERO }).norm())
        .fold(0.0, f64::max)
}

/// exp(−i h t) for real symmetric `h`.
pub fn exp_hermitian(h: &Array2<f64>, t: f64) -> Result<Array2<C64>> {
    let (vals, vecs) = eigh(h)?;
    let v = vecs.mapv(|x| C64::new(x, 0.0));
    let phases = Array1::from_iter(vals.iter().map(|&e| C64::from_polar(1.0, -e * t)));
    let scaled = &v * &phases;
    Ok(scaled.dot(&v.t()))
}

fn check_window(schedule: &CouplingSchedule, z0: f64, z1: f64) -> Result<()> {
    let total = schedule.total_length();
    let slack = 1e-12 * total.max(1.0);
    if !(z0 >= -slack && z1 <= total + slack && z0 <= z1) {
        return Err(Error::OutOfDomain { z: if z0 < 0.0 { z0 } else { z1 }, lo: 0.0, hi: total });
    }
    Ok(())
}

/// exp(−i H(z0 + dz/2) dz).
pub fn step_unitary(schedule: &CouplingSchedule, z0: f64, dz: f64) -> Result<Propagator> {
    if !(dz > 0.0 && dz.is_finite()) {
        return Err(Error::Parameter(format!("step must be positive, got {dz}")));
    }
    check_window(schedule, z0, z0 + dz)?;
    let h = schedule.hamiltonian(z0 + 0.5 * dz)?;
    let p = Propagator { u: exp_hermitian(&h, dz)?, z_from: z0, z_to: z0 + dz };
    let err = p.unitarity_error();
    if err > STEP_UNITARITY_TOL {
        return Err(Error::UnitarityDrift(err));
    }
    Ok(p)
}

/// Number of equal steps no longer than `dz` covering `length`.
pub fn step_count(length: f64, dz: f64) -> usize {
    if length <= 0.0 {
        0
    } else {
        ((length / dz) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Propagator across `[z0, z1]`. Straight sections are exponentiated in one
/// go; bends are stepped with steps no longer than `dz`.
pub fn propagate(schedule: &CouplingSchedule, z0: f64, z1: f64, dz: f64) -> Result<Propagator> {
    if !(dz > 0.0 && dz.is_finite()) {
        return Err(Error::Parameter(format!("step must be positive, got {dz}")));
    }
    check_window(schedule, z0, z1)?;
    let n = schedule.n_sites();
    let mut acc = Propagator::identity(n, z0);
    let mut cuts: Vec<f64> = schedule.breakpoints().into_iter().filter(|&b| b > z0 && b < z1).collect();
    cuts.insert(0, z0);
    cuts.push(z1);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        if schedule.is_constant_on(a, b) {
            let h = schedule.hamiltonian(0.5 * (a + b))?;
            let p = Propagator { u: exp_hermitian(&h, b - a)?, z_from: a, z_to: b };
            acc = acc.then(&p)?;
            continue;
        }
        let k = step_count(b - a, dz);
        let h = (b - a) / k as f64;
        for s in 0..k {
            let zs = a + s as f64 * h;
            acc = acc.then(&step_unitary(schedule, zs, h.min(b - zs))?)?;
        }
    }
    acc.z_to = z1;
    Ok(acc)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::Dimension { expected, got })
    } else {
        Ok(())
    }
}

/// α' = Uα, N' = Ū N Uᵀ, M' = U M Uᵀ.
pub fn evolve_moments(m: &GaussianMoments, p: &Propagator) -> Result<GaussianMoments> {
    check_dim(p.n_sites(), m.n_sites())?;
    let u = &p.u;
    let uc = u.mapv(|z| z.conj());
    Ok(GaussianMoments {
        alpha: u.dot(&m.alpha),
        n: uc.dot(&m.n).dot(&u.t()),
        m: u.dot(&m.m).dot(&u.t()),
    })
}

/// g2'[i,j,k,l] = Σ Ū_im U_jn Ū_kt U_lp g2[m,n,t,p] as four GEMMs.
///
/// Each pass contracts the leading axis and appends the new index last, so
/// four passes restore the original axis order.
pub fn evolve_g2(t: &CorrelationTensor, p: &Propagator) -> Result<CorrelationTensor> {
    let n = t.n_sites();
    check_dim(p.n_sites(), n)?;
    let rest = n * n * n;
    let uc = p.u.mapv(|z| z.conj());
    let mut cur = t
        .g2
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, rest))
        .expect("contiguous tensor");
    let mut next = Array2::<C64>::zeros((rest, n));
    for w in [&uc, &p.u, &uc, &p.u] {
        general_mat_mul(ONE, &cur.t(), &w.t(), ZERO, &mut next);
        let done = std::mem::replace(&mut next, cur.into_shape_with_order((rest, n)).expect("contiguous"));
        cur = done.into_shape_with_order((n, rest)).expect("contiguous");
    }
    Ok(CorrelationTensor { g2: cur.into_shape_with_order((n, n, n, n)).expect("contiguous") })
}

/// Selected entries of the evolved tensor without forming all of it.
pub fn evolve_g2_entries(t: &CorrelationTensor, p: &Propagator, entries: &[[usize; 4]]) -> Result<Vec<C64>> {
    let n = t.n_sites();
    check_dim(p.n_sites(), n)?;
    if let Some(&site) = entries.iter().flatten().find(|&&s| s >= n) {
        return Err(Error::Site { site, n });
    }
    let flat = t.g2.as_standard_layout();
    let g = flat.view().into_shape_with_order((n * n * n, n)).expect("contiguous tensor");
    let u = &p.u;
    Ok(entries
        .iter()
        .map(|&[i, j, k, l]| {
            let v3 = g.dot(&u.row(l));
            let v2 = v3.into_shape_with_order((n * n, n)).expect("contiguous").dot(&u.row(k).mapv(|z| z.conj()));
            let v1 = v2.into_shape_with_order((n, n)).expect("contiguous").dot(&u.row(j));
            v1.iter().zip(u.row(i)).map(|(a, b)| a * b.conj()).sum()
        })
        .collect())
}

/// When the tensor is brought up to date.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorUpdate {
    /// Contract after every step.
    EveryStep,
    /// Accumulate step propagators and contract once per sample.
    #[default]
    AtSamples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRequest {
    pub sites: Vec<usize>,
    #[serde(default)]
    pub phases: Vec<f64>,
    /// Also record the minimizing phase and variance.
    #[serde(default = "yes")]
    pub optimal: bool,
}

fn yes() -> bool {
    true
}

/// What to record at each sample besides the site-resolved photon numbers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Observers {
    pub g2: Vec<[usize; 4]>,
    pub quadratures: Vec<QuadratureRequest>,
    pub keep_moments: bool,
    pub keep_tensor: bool,
}

impl Observers {
    fn needs_tensor(&self) -> bool {
        !self.g2.is_empty() || self.keep_tensor
    }

    fn validate(&self, n: usize) -> Result<()> {
        if let Some(&site) = self.g2.iter().flatten().chain(self.quadratures.iter().flat_map(|q| &q.sites)).find(|&&s| s >= n) {
            return Err(Error::Site { site, n });
        }
        for q in &self.quadratures {
            Quadrature::from_sites(&q.sites)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub dz: f64,
    pub sample_every: usize,
    pub tensor_update: TensorUpdate,
    /// Compare against a half-step run at ten points and warn on drift.
    pub audit: bool,
    pub observers: Observers,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            dz: DEFAULT_DZ,
            sample_every: 100,
            tensor_update: TensorUpdate::AtSamples,
            audit: true,
            observers: Observers::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSample {
    pub sites: Vec<usize>,
    pub phase: f64,
    pub variance: f64,
    /// Recorded at the minimizing phase.
    pub optimal: bool,
    /// False for an optimal-phase record whose variance is phase independent.
    pub defined: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub z: f64,
    pub photon_numbers: Vec<f64>,
    pub total_photons: f64,
    /// Values for `Observers::g2`, same order.
    pub g2: Vec<C64>,
    pub quadratures: Vec<QuadratureSample>,
    pub moments: Option<GaussianMoments>,
    pub tensor: Option<CorrelationTensor>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub dz: f64,
    /// Actual uniform step, ≤ dz.
    pub step: f64,
    pub steps: usize,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub warnings: Vec<String>,
    pub max_step_unitarity_error: f64,
    pub accumulated_unitarity_error: f64,
    /// max_z |Tr N(z) − Tr N(0)|.
    pub photon_drift: f64,
    /// Largest N difference against the half-step audit run.
    pub convergence_drift: Option<f64>,
    pub runtime_s: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub observers: Observers,
    pub initial: GaussianMoments,
    pub final_moments: GaussianMoments,
    pub final_tensor: Option<CorrelationTensor>,
    pub meta: RunMeta,
}

impl Trajectory {
    pub fn z(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.z).collect()
    }

    pub fn photon_trace(&self, site: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.photon_numbers[site]).collect()
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("a trajectory has at least one sample")
    }

    /// N_target at the end over Tr N at the start.
    pub fn transmission(&self, target: usize) -> Result<f64> {
        crate::observables::transmission_total(&self.initial, &self.final_moments, target)
    }

    /// N_target at the end over N_source at the start.
    pub fn transmission_from(&self, source: usize, target: usize) -> Result<f64> {
        crate::observables::transmission_between(&self.initial, &self.final_moments, source, target)
    }
}

fn record(
    z: f64,
    m: &GaussianMoments,
    t: Option<&CorrelationTensor>,
    obs: &Observers,
) -> Result<Sample> {
    let g2 = match t {
        Some(t) => obs.g2.iter().map(|&[i, j, k, l]| t.entry(i, j, k, l)).collect(),
        None => Vec::new(),
    };
    let mut quadratures = Vec::new();
    for req in &obs.quadratures {
        let q = Quadrature::from_sites(&req.sites)?;
        for &phi in &req.phases {
            quadratures.push(QuadratureSample {
                sites: req.sites.clone(),
                phase: phi,
                variance: q.variance(m, phi)?,
                optimal: false,
                defined: true,
            });
        }
        if req.optimal {
            let best = min_variance_phase(m, q, 64)?;
            quadratures.push(QuadratureSample {
                sites: req.sites.clone(),
                phase: best.phase,
                variance: best.variance,
                optimal: true,
                defined: best.defined,
            });
        }
    }
    Ok(Sample {
        z,
        photon_numbers: photon_numbers(m),
        total_photons: m.total_photons(),
        g2,
        quadratures,
        moments: obs.keep_moments.then(|| m.clone()),
        tensor: if obs.keep_tensor { t.cloned() } else { None },
    })
}

/// Evolve `(m0, t0)` through `schedule` and sample observables every
/// `sample_every` steps and at the end.
pub fn run(
    schedule: &CouplingSchedule,
    m0: &GaussianMoments,
    t0: &CorrelationTensor,
    opts: &RunOptions,
) -> Result<Trajectory> {
    let started = Instant::now();
    let n = schedule.n_sites();
    check_dim(n, m0.n_sites())?;
    check_dim(n, t0.n_sites())?;
    if !(opts.dz > 0.0 && opts.dz.is_finite()) {
        return Err(Error::Parameter(format!("step must be positive, got {}", opts.dz)));
    }
    if opts.sample_every == 0 {
        return Err(Error::Parameter("sample_every must be at least 1".into()));
    }
    opts.observers.validate(n)?;
    let obs = &opts.observers;
    let with_tensor = obs.needs_tensor();

    let total = schedule.total_length();
    let steps = step_count(total, opts.dz);
    let h = if steps == 0 { 0.0 } else { total / steps as f64 };
    let mut meta = RunMeta {
        dz: opts.dz,
        step: h,
        steps,
        warnings: schedule.warnings().to_vec(),
        ..Default::default()
    };

    let mut m = m0.clone();
    let mut t = with_tensor.then(|| t0.clone());
    let n0 = m0.total_photons();
    let mut samples = vec![record(0.0, &m, t.as_ref(), obs)?];

    let mut pending = Propagator::identity(n, 0.0);
    let mut global = Array2::<C64>::eye(n);
    let mut cached: Option<(Array2<f64>, Array2<C64>)> = None;
    for k in 0..steps {
        let z0 = k as f64 * h;
        let ham = schedule.hamiltonian(z0 + 0.5 * h)?;
        let u = match &cached {
            Some((hc, uc)) if *hc == ham => uc.clone(),
            _ => {
                let u = exp_hermitian(&ham, h)?;
                let err = unitarity_error(&u);
                meta.max_step_unitarity_error = meta.max_step_unitarity_error.max(err);
                if err > STEP_UNITARITY_TOL {
                    return Err(Error::UnitarityDrift(err));
                }
                cached = Some((ham, u.clone()));
                u
            }
        };
        let step = Propagator { u, z_from: z0, z_to: z0 + h };
        let at_sample = (k + 1) % opts.sample_every == 0 || k + 1 == steps;
        match opts.tensor_update {
            TensorUpdate::EveryStep => {
                m = evolve_moments(&m, &step)?;
                if let Some(tt) = &t {
                    t = Some(evolve_g2(tt, &step)?);
                }
                global = step.u.dot(&global);
            }
            TensorUpdate::AtSamples => {
                pending = pending.then(&step)?;
                if at_sample {
                    m = evolve_moments(&m, &pending)?;
                    if let Some(tt) = &t {
                        t = Some(evolve_g2(tt, &pending)?);
                    }
                    global = pending.u.dot(&global);
                    pending = Propagator::identity(n, step.z_to);
                }
            }
        }
        if at_sample {
            let drift = unitarity_error(&global);
            meta.accumulated_unitarity_error = meta.accumulated_unitarity_error.max(drift);
            if drift > DRIFT_ABORT {
                return Err(Error::UnitarityDrift(drift));
            }
            let z = if k + 1 == steps { total } else { step.z_to };
            let s = record(z, &m, t.as_ref(), obs)?;
            meta.photon_drift = meta.photon_drift.max((s.total_photons - n0).abs());
            samples.push(s);
        }
    }
    if meta.photon_drift > 1e-8 * n0.max(1.0) {
        meta.warnings.push(format!("total photon number drifted by {:.3e}", meta.photon_drift));
    }
    if opts.audit && steps > 0 {
        let drift = convergence_audit(schedule, m0, opts.dz)?;
        if drift > 1e-6 {
            meta.warnings.push(format!("halving dz changes N by {drift:.3e}; consider a smaller step"));
        }
        meta.convergence_drift = Some(drift);
    }
    meta.runtime_s = started.elapsed().as_secs_f64();
    Ok(Trajectory {
        samples,
        observers: obs.clone(),
        initial: m0.clone(),
        final_moments: m,
        final_tensor: t,
        meta,
    })
}

/// N at ten evenly spaced points with step `dz`, moments only.
pub fn moment_checkpoints(schedule: &CouplingSchedule, m0: &GaussianMoments, dz: f64, points: usize) -> Result<Vec<Array2<C64>>> {
    let total = schedule.total_length();
    let mut m = m0.clone();
    let mut out = Vec::with_capacity(points);
    for k in 0..points {
        let a = total * k as f64 / points as f64;
        let b = total * (k + 1) as f64 / points as f64;
        m = evolve_moments(&m, &propagate(schedule, a, b, dz)?)?;
        out.push(m.n.clone());
    }
    Ok(out)
}

/// Largest |N(dz) − N(dz/2)| over ten checkpoints.
pub fn convergence_audit(schedule: &CouplingSchedule, m0: &GaussianMoments, dz: f64) -> Result<f64> {
    let coarse = moment_checkpoints(schedule, m0, dz, 10)?;
    let fine = moment_checkpoints(schedule, m0, 0.5 * dz, 10)?;
    Ok(coarse
        .iter()
        .zip(&fine)
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{presets, BendShape, Direction, LatticeSpec, ScheduleBuilder};
    use crate::states::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dimer(u: f64, length: f64) -> CouplingSchedule {
        let spec = LatticeSpec::new(2, u, u, vec![]).unwrap();
        CouplingSchedule::constant(&spec, length).unwrap()
    }

    fn random_unitary(n: usize, seed: u64) -> Propagator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let h = &h + &h.t();
        Propagator { u: exp_hermitian(&h, 0.7).unwrap(), z_from: 0.0, z_to: 1.0 }
    }

    fn naive_g2(t: &CorrelationTensor, u: &Array2<C64>) -> CorrelationTensor {
        let n = t.n_sites();
        let mut out = CorrelationTensor::zeros(n);
        for ((i, j, k, l), o) in out.g2.indexed_iter_mut() {
            let mut s = ZERO;
            for ((a, b, c, d), g) in t.g2.indexed_iter() {
                s += u[[i, a]].conj() * u[[j, b]] * u[[k, c]].conj() * u[[l, d]] * g;
            }
            *o = s;
        }
        out
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let h = Array2::zeros((3, 3));
        let u = exp_hermitian(&h, 2.0).unwrap();
        assert_eq!(u, Array2::eye(3));
    }

    #[test]
    fn dimer_step() {
        let (u, dz) = (0.69, 0.37);
        let p = step_unitary(&dimer(u, 1.0), 0.1, dz).unwrap();
        assert_abs_diff_eq!(p.u[[0, 0]].norm(), (u * dz).cos().abs(), epsilon = 1e-14);
        assert_abs_diff_eq!(p.u[[0, 1]].im, -(u * dz).sin(), epsilon = 1e-14);
        assert!(p.unitarity_error() < 1e-14);
    }

    #[test]
    fn constant_semigroup() {
        let s = dimer(1.3, 2.0);
        let one = step_unitary(&s, 0.0, 1.6).unwrap();
        let mut acc = Propagator::identity(2, 0.0);
        for k in 0..16 {
            acc = acc.then(&step_unitary(&s, 0.1 * k as f64, 0.1).unwrap()).unwrap();
        }
        let diff = (&one.u - &acc.u).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn step_outside_domain() {
        let s = dimer(1.0, 1.0);
        assert!(matches!(step_unitary(&s, 0.9, 0.2), Err(Error::OutOfDomain { .. })));
        assert!(step_unitary(&s, 0.0, 0.0).is_err());
    }

    #[test]
    fn rabi_oscillation() {
        let u = 0.69;
        let s = dimer(u, 3.0);
        let (m0, _) = init_single_photon(2, 0).unwrap();
        for z in [0.4, 1.1, 2.7] {
            let m = evolve_moments(&m0, &propagate(&s, 0.0, z, 1e-3).unwrap()).unwrap();
            assert_abs_diff_eq!(m.n[[0, 0]].re, (u * z).cos().powi(2), epsilon = 1e-12);
            assert_abs_diff_eq!(m.n[[1, 1]].re, (u * z).sin().powi(2), epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_leaves_everything() {
        let (m, t) = init_two_mode_sq(3, 0, 2, Squeeze::unit_photon()).unwrap();
        let p = Propagator::identity(3, 0.0);
        assert_eq!(evolve_moments(&m, &p).unwrap(), m);
        assert!(evolve_g2(&t, &p).unwrap().max_abs_diff(&t) < 1e-15);
    }

    #[test]
    fn gemm_contraction_matches_naive() {
        let p = random_unitary(4, 7);
        let (_, t) = init_two_mode_sq(4, 1, 3, Squeeze::new(0.6, 0.4).unwrap()).unwrap();
        let mut t = t;
        t.g2[[0, 1, 2, 3]] += C64::new(0.3, -0.2);
        let fast = evolve_g2(&t, &p).unwrap();
        let slow = naive_g2(&t, &p.u);
        assert!(fast.max_abs_diff(&slow) < 1e-12);
        let picks = [[0, 1, 2, 3], [3, 3, 1, 1], [2, 0, 0, 2]];
        for (v, [i, j, k, l]) in evolve_g2_entries(&t, &p, &picks).unwrap().iter().zip(picks) {
            assert!((v - slow.entry(i, j, k, l)).norm() < 1e-12);
        }
    }

    #[test]
    fn gaussian_closure() {
        let p = random_unitary(4, 11);
        let (mut m, mut t) = init_coherent(4, 2, C64::new(0.8, 0.3)).unwrap();
        for _ in 0..5 {
            m = evolve_moments(&m, &p).unwrap();
            t = evolve_g2(&t, &p).unwrap();
        }
        assert!(wick_g2(&m).max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let p = Propagator::identity(3, 0.0);
        assert!(evolve_moments(&GaussianMoments::vacuum(2), &p).is_err());
        assert!(evolve_g2(&CorrelationTensor::zeros(2), &p).is_err());
    }

    fn small_bend() -> CouplingSchedule {
        let spec = LatticeSpec::new(8, 0.7, 2.1, vec![3]).unwrap();
        let mut b = ScheduleBuilder::new(&spec).unwrap();
        b.hold(0.3).unwrap();
        b.move_wall(0, Direction::Right, &BendShape::new(1.5, 2.0).unwrap()).unwrap();
        b.build()
    }

    #[test]
    fn zero_length_run_has_one_sample() {
        let spec = LatticeSpec::new(4, 1.0, 2.0, vec![]).unwrap();
        let s = CouplingSchedule::constant(&spec, 0.0).unwrap();
        let (m, t) = init_single_photon(4, 1).unwrap();
        let traj = run(&s, &m, &t, &RunOptions::default()).unwrap();
        assert_eq!(traj.samples.len(), 1);
        assert_eq!(traj.final_moments, m);
        assert_eq!(traj.transmission(1).unwrap(), 1.0);
    }

    #[test]
    fn sampling_modes_agree() {
        let s = small_bend();
        let (m, t) = init_sq_vacuum(8, 3, Squeeze::unit_photon()).unwrap();
        let mut opts = RunOptions {
            dz: 0.01,
            sample_every: 50,
            audit: false,
            observers: Observers { g2: vec![[5, 5, 5, 5], [3, 5, 5, 3]], keep_tensor: true, ..Default::default() },
            ..Default::default()
        };
        let lazy = run(&s, &m, &t, &opts).unwrap();
        opts.tensor_update = TensorUpdate::EveryStep;
        let eager = run(&s, &m, &t, &opts).unwrap();
        assert_eq!(lazy.z(), eager.z());
        let a = lazy.final_tensor.as_ref().unwrap();
        let b = eager.final_tensor.as_ref().unwrap();
        assert!(a.max_abs_diff(b) < 1e-12);
        assert!(a.hermiticity_error() < 1e-12);
        assert!(wick_g2(&lazy.final_moments).max_abs_diff(a) < 1e-12);
    }

    #[test]
    fn run_samples_and_conserves() {
        let s = small_bend();
        let (m, t) = init_single_photon(8, 3).unwrap();
        let opts = RunOptions { dz: 0.01, sample_every: 40, ..Default::default() };
        let traj = run(&s, &m, &t, &opts).unwrap();
        let z = traj.z();
        assert!(z.windows(2).all(|w| w[1] > w[0]));
        assert_abs_diff_eq!(*z.last().unwrap(), 2.3, epsilon = 1e-12);
        assert!(traj.meta.photon_drift < 1e-12);
        assert!(traj.meta.max_step_unitarity_error < 1e-12);
        assert!(traj.meta.convergence_drift.unwrap() < 1e-4);
        assert!(traj.final_tensor.is_none());
    }

    #[test]
    fn second_order_convergence() {
        let s = small_bend();
        let (m, _) = init_single_photon(8, 3).unwrap();
        let fin = |dz: f64| evolve_moments(&m, &propagate(&s, 0.0, s.total_length(), dz).unwrap()).unwrap().n;
        let diff = |a: &Array2<C64>, b: &Array2<C64>| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let (a, b, c) = (fin(0.04), fin(0.02), fin(0.01));
        let ratio = diff(&a, &b) / diff(&b, &c);
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn propagate_matches_fine_steps_on_straight_sections() {
        let spec = presets::transport();
        let s = CouplingSchedule::constant(&spec, 1.3).unwrap();
        let exact = propagate(&s, 0.0, 1.3, 1e-3).unwrap();
        let mut acc = Propagator::identity(32, 0.0);
        for k in 0..13 {
            acc = acc.then(&step_unitary(&s, 0.1 * k as f64, 0.1).unwrap()).unwrap();
        }
        let diff = (&exact.u - &acc.u).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn evolution_preserves_structure(seed in 0u64..1000, r in 0.0..1.2f64, theta in -3.0..3.0f64) {
            let p = random_unitary(3, seed);
            let (m, t) = init_two_mode_sq(3, 0, 1, Squeeze::new(r, theta).unwrap()).unwrap();
            let m2 = evolve_moments(&m, &p).unwrap();
            let t2 = evolve_g2(&t, &p).unwrap();
            prop_assert!((m2.total_photons() - m.total_photons()).abs() < 1e-12);
            prop_assert!(t2.hermiticity_error() < 1e-12);
            prop_assert!(m2.physicality_margin() > -1e-10);
            for i in 0..3 {
                prop_assert!(t2.entry(i, i, i, i).im.abs() < 1e-10);
            }
        }
    }
}
