//! Cross-checks of the moment engine against the truncated Fock simulator
//! and against Wick reconstruction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evolution::{evolve_g2, evolve_moments, propagate, step_unitary, Propagator};
use crate::fock::{FockOp, FockState};
use crate::lattice::{move_schedule, presets, BendShape, CouplingSchedule, Direction, LatticeSpec};
use crate::observables::Quadrature;
use crate::states::{wick_g2, CorrelationTensor, GaussianMoments, InitialState, Squeeze, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Check { name: name.into(), measured, tolerance, passed: measured.is_finite() && measured < tolerance }
    }
}

/// The two small time-dependent lattices the oracle runs on.
pub fn oracle_lattices() -> Result<Vec<(String, CouplingSchedule)>> {
    let shape = presets::bend();
    Ok(vec![
        ("dimer".into(), CouplingSchedule::ramp(vec![presets::U], vec![presets::V], vec![0.0; 2], &shape)?),
        (
            "trimer".into(),
            CouplingSchedule::ramp(vec![presets::U, presets::V], vec![presets::V, presets::U], vec![0.0; 3], &shape)?,
        ),
    ])
}

/// (label, engine input, oracle preparation, oracle cutoff, tolerance).
fn oracle_inputs(squeezed_cutoff: usize) -> Vec<(&'static str, InitialState, FockOp, usize, f64)> {
    let xi = Squeeze::unit_photon();
    vec![
        ("single_photon", InitialState::SinglePhoton { site: 0 }, FockOp::Create(0), 4, 1e-6),
        (
            "coherent",
            InitialState::Coherent { site: 0, amplitude: 1.0, phase: 0.0 },
            FockOp::Displace(0, C64::new(1.0, 0.0)),
            24,
            1e-6,
        ),
        ("squeezed", InitialState::Squeezed { sites: vec![0], r: xi.r, phase: xi.theta }, FockOp::Squeeze(0, xi), squeezed_cutoff, 1e-3),
    ]
}

fn max_diff<'a>(a: impl Iterator<Item = &'a C64>, b: impl Iterator<Item = &'a C64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn quadratures(n: usize) -> Vec<Quadrature> {
    let mut q: Vec<Quadrature> = (0..n).map(Quadrature::Site).collect();
    for i in 0..n {
        for j in i + 1..n {
            q.push(Quadrature::Pair(i, j));
        }
    }
    q
}

/// Largest |engine − oracle| for N, g² and quadrature variances.
pub struct OracleGap {
    pub n: f64,
    pub g2: f64,
    pub quadrature: f64,
    pub leakage: f64,
}

pub fn oracle_gap(schedule: &CouplingSchedule, input: &InitialState, prep: FockOp, cutoff: usize, dz: f64) -> Result<OracleGap> {
    let n = schedule.n_sites();
    let (m0, t0) = input.prepare(n)?;
    let p = propagate(schedule, 0.0, schedule.total_length(), dz)?;
    let m = evolve_moments(&m0, &p)?;
    let t = evolve_g2(&t0, &p)?;
    let psi = FockState::vacuum(n, cutoff)?.apply_operator(prep)?.evolve_exact(schedule, dz)?;
    let fm = psi.moments();
    let ft = psi.correlation();
    let mut dq: f64 = 0.0;
    for q in quadratures(n) {
        for phi in [0.0, PI / 4.0, PI / 2.0, 2.0] {
            dq = dq.max((q.variance(&m, phi)? - psi.quadrature_variance(&q.sites(), phi)?).abs());
        }
    }
    Ok(OracleGap {
        n: max_diff(m.n.iter(), fm.n.iter()),
        g2: max_diff(t.g2.iter(), ft.g2.iter()),
        quadrature: dq,
        leakage: psi.max_leakage,
    })
}

/// Every oracle comparison, one check per lattice, input and quantity.
pub fn oracle_checks(squeezed_cutoff: usize, dz: f64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (lname, sched) in oracle_lattices()? {
        for (iname, input, prep, cutoff, tol) in oracle_inputs(squeezed_cutoff) {
            let gap = oracle_gap(&sched, &input, prep, cutoff, dz)?;
            let tag = format!("{lname}/{iname}@{cutoff}");
            out.push(Check::new(format!("{tag} N"), gap.n, tol));
            out.push(Check::new(format!("{tag} g2"), gap.g2, tol));
            out.push(Check::new(format!("{tag} quadrature"), gap.quadrature, tol));
        }
    }
    Ok(out)
}

fn relative(t: &CorrelationTensor, reference: &CorrelationTensor) -> f64 {
    let scale = reference.g2.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    t.max_abs_diff(reference) / scale
}

/// Tensor stepped `steps` times against Wick reconstruction from the
/// evolved moments, relative to the largest entry.
pub fn wick_drift(input: &InitialState, spec: &LatticeSpec, shape: &BendShape, steps: usize) -> Result<f64> {
    let sched = move_schedule(spec, 0, Direction::Right, shape)?;
    let (mut m, mut t) = input.prepare(spec.n_sites)?;
    let h = sched.total_length() / steps as f64;
    for k in 0..steps {
        let p: Propagator = step_unitary(&sched, k as f64 * h, h)?;
        m = evolve_moments(&m, &p)?;
        t = evolve_g2(&t, &p)?;
    }
    Ok(relative(&t, &wick_g2(&m)))
}

pub fn wick_checks(steps: usize) -> Result<Vec<Check>> {
    let spec = LatticeSpec::new(8, presets::U, presets::V, vec![3])?;
    let xi = Squeeze::unit_photon();
    let inputs = [
        InitialState::Coherent { site: 3, amplitude: 1.0, phase: 0.3 },
        InitialState::Squeezed { sites: vec![3], r: xi.r, phase: 0.0 },
        InitialState::Squeezed { sites: vec![1, 3], r: xi.r, phase: 0.7 },
        InitialState::TwoModeSqueezed { sites: [0, 3], r: xi.r, phase: 0.0 },
    ];
    inputs
        .iter()
        .map(|i| Ok(Check::new(format!("wick/{}:{:?} over {steps} steps", i.label(), i.sites()), wick_drift(i, &spec, &presets::bend(), steps)?, 1e-8)))
        .collect()
}

/// Wick closure of a Gaussian state taken directly, without evolution.
pub fn wick_residual(m: &GaussianMoments, t: &CorrelationTensor) -> f64 {
    relative(t, &wick_g2(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_lattices_are_time_dependent() {
        for (_, s) in oracle_lattices().unwrap() {
            assert!(!s.is_constant_on(0.0, s.total_length()));
            assert!(s.n_sites() <= 3);
        }
    }

    #[test]
    fn photon_and_coherent_agree() {
        let (_, sched) = &oracle_lattices().unwrap()[1];
        let g = oracle_gap(sched, &InitialState::SinglePhoton { site: 0 }, FockOp::Create(0), 3, 0.01).unwrap();
        assert!(g.n < 1e-10 && g.g2 < 1e-10 && g.quadrature < 1e-10, "{} {} {}", g.n, g.g2, g.quadrature);
        let g = oracle_gap(
            sched,
            &InitialState::Coherent { site: 0, amplitude: 1.0, phase: 0.0 },
            FockOp::Displace(0, C64::new(1.0, 0.0)),
            24,
            0.01,
        )
        .unwrap();
        assert!(g.n < 1e-8 && g.g2 < 1e-8 && g.quadrature < 1e-8, "{} {} {}", g.n, g.g2, g.quadrature);
    }

    #[test]
    fn squeezed_converges_with_cutoff() {
        let (_, sched) = &oracle_lattices().unwrap()[0];
        let xi = Squeeze::unit_photon();
        let input = InitialState::Squeezed { sites: vec![0], r: xi.r, phase: 0.0 };
        let coarse = oracle_gap(sched, &input, FockOp::Squeeze(0, xi), 12, 0.02).unwrap();
        let fine = oracle_gap(sched, &input, FockOp::Squeeze(0, xi), 36, 0.02).unwrap();
        assert!(fine.g2 < coarse.g2);
        assert!(fine.n < 1e-4 && fine.quadrature < 1e-4, "{} {}", fine.n, fine.quadrature);
        assert!(fine.quadrature < coarse.quadrature);
    }

    #[test]
    fn gaussian_state_is_wick_closed() {
        let (m, t) = InitialState::TwoModeSqueezed { sites: [0, 2], r: 0.6, phase: 0.2 }.prepare(4).unwrap();
        assert!(wick_residual(&m, &t) < 1e-14);
    }
}
