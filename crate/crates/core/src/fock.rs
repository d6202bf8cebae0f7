//! Brute-force reference simulator on a truncated multimode Fock space.
//!
//! The basis holds every occupation pattern with at most `cutoff` photons in
//! total. Hopping terms a†ₘaₙ conserve that number and are therefore exact;
//! truncation only enters through the state preparation, and is reported as
//! the weight sitting in the top shell.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::evolution::step_count;
use crate::lattice::CouplingSchedule;
use crate::states::{CorrelationTensor, GaussianMoments, Squeeze, C64};

pub const MAX_MODES: usize = 4;
pub const MAX_CUTOFF: usize = 40;
pub const LEAKAGE_WARN: f64 = 1e-6;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug)]
pub struct FockBasis {
    modes: usize,
    cutoff: usize,
    states: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
}

impl FockBasis {
    pub fn new(modes: usize, cutoff: usize) -> Result<Self> {
        if modes == 0 || modes > MAX_MODES {
            return Err(Error::Parameter(format!("oracle supports 1..={MAX_MODES} modes, got {modes}")));
        }
        if cutoff == 0 || cutoff > MAX_CUTOFF {
            return Err(Error::Parameter(format!("oracle cutoff must be in 1..={MAX_CUTOFF}, got {cutoff}")));
        }
        let mut states = Vec::new();
        for total in 0..=cutoff {
            let mut cur = vec![0u16; modes];
            fill(&mut cur, 0, total, &mut states);
        }
        let index = states.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
        Ok(FockBasis { modes, cutoff, states, index })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn occupations(&self, k: usize) -> &[u16] {
        &self.states[k]
    }

    fn shell(&self, k: usize) -> usize {
        self.states[k].iter().map(|&x| x as usize).sum()
    }
}

fn fill(cur: &mut Vec<u16>, pos: usize, left: usize, out: &mut Vec<Vec<u16>>) {
    if pos + 1 == cur.len() {
        cur[pos] = left as u16;
        out.push(cur.clone());
        return;
    }
    for k in (0..=left).rev() {
        cur[pos] = k as u16;
        fill(cur, pos + 1, left - k, out);
    }
}

/// Operators used to prepare the input states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FockOp {
    /// a† followed by renormalization.
    Create(usize),
    /// exp(α a† − ᾱ a).
    Displace(usize, C64),
    /// exp[(ξ̄ a² − ξ a†²)/2].
    Squeeze(usize, Squeeze),
    /// exp(ξ̄ a b − ξ a† b†).
    TwoModeSqueeze(usize, usize, Squeeze),
}

#[derive(Clone, Debug)]
pub struct FockState {
    basis: Arc<FockBasis>,
    pub amps: Array1<C64>,
    /// Largest top-shell weight seen so far.
    pub max_leakage: f64,
    pub warnings: Vec<String>,
}

fn lower(b: &FockBasis, i: usize, x: &Array1<C64>) -> Array1<C64> {
    let mut y = Array1::zeros(b.dim());
    for (k, s) in b.states.iter().enumerate() {
        if s[i] == 0 || x[k] == ZERO {
            continue;
        }
        let mut t = s.clone();
        t[i] -= 1;
        y[b.index[&t]] += x[k] * (s[i] as f64).sqrt();
    }
    y
}

/// a†ᵢ with the top shell cut off.
fn raise(b: &FockBasis, i: usize, x: &Array1<C64>) -> Array1<C64> {
    let mut y = Array1::zeros(b.dim());
    for (k, s) in b.states.iter().enumerate() {
        if x[k] == ZERO || b.shell(k) == b.cutoff {
            continue;
        }
        let mut t = s.clone();
        t[i] += 1;
        y[b.index[&t]] += x[k] * (t[i] as f64).sqrt();
    }
    y
}

/// a†ᵢaⱼ, exact in the truncated space.
fn hop(b: &FockBasis, i: usize, j: usize, x: &Array1<C64>) -> Array1<C64> {
    let mut y = Array1::zeros(b.dim());
    for (k, s) in b.states.iter().enumerate() {
        if s[j] == 0 || x[k] == ZERO {
            continue;
        }
        let mut t = s.clone();
        let a = (t[j] as f64).sqrt();
        t[j] -= 1;
        t[i] += 1;
        y[b.index[&t]] += x[k] * a * (t[i] as f64).sqrt();
    }
    y
}

fn norm(x: &Array1<C64>) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn inner(x: &Array1<C64>, y: &Array1<C64>) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// exp(G) x by a scaled Taylor series, with `bound` an upper estimate of ‖G‖.
fn expm_apply(gen: impl Fn(&Array1<C64>) -> Array1<C64>, bound: f64, x: &Array1<C64>) -> Array1<C64> {
    let pieces = bound.ceil().max(1.0) as usize;
    let scale = 1.0 / pieces as f64;
    let mut v = x.clone();
    for _ in 0..pieces {
        let mut term = v.clone();
        let mut acc = v.clone();
        let size = norm(&v).max(1e-300);
        for k in 1..200 {
            term = gen(&term) * C64::new(scale / k as f64, 0.0);
            acc = acc + &term;
            if norm(&term) < 1e-17 * size {
                break;
            }
        }
        v = acc;
    }
    v
}

impl FockState {
    pub fn vacuum(modes: usize, cutoff: usize) -> Result<Self> {
        let basis = Arc::new(FockBasis::new(modes, cutoff)?);
        let mut amps = Array1::zeros(basis.dim());
        amps[0] = C64::new(1.0, 0.0);
        Ok(FockState { basis, amps, max_leakage: 0.0, warnings: Vec::new() })
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn modes(&self) -> usize {
        self.basis.modes
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }

    /// Weight in the highest photon-number shell.
    pub fn leakage(&self) -> f64 {
        (0..self.basis.dim())
            .filter(|&k| self.basis.shell(k) == self.basis.cutoff)
            .map(|k| self.amps[k].norm_sqr())
            .sum()
    }

    fn check_mode(&self, i: usize) -> Result<()> {
        if i >= self.modes() {
            Err(Error::Site { site: i, n: self.modes() })
        } else {
            Ok(())
        }
    }

    fn with_amps(&self, amps: Array1<C64>, what: &str) -> FockState {
        let mut out = FockState { basis: self.basis.clone(), amps, max_leakage: self.max_leakage, warnings: self.warnings.clone() };
        let leak = out.leakage();
        out.max_leakage = out.max_leakage.max(leak);
        if leak > LEAKAGE_WARN {
            out.warnings.push(format!("{what}: top-shell weight {leak:.2e} at cutoff {}", self.basis.cutoff));
        }
        out
    }

    pub fn apply_operator(&self, op: FockOp) -> Result<FockState> {
        let b = &*self.basis;
        let c = b.cutoff as f64;
        let amps = match op {
            FockOp::Create(i) => {
                self.check_mode(i)?;
                let y = raise(b, i, &self.amps);
                let nrm = norm(&y);
                if nrm == 0.0 {
                    return Err(Error::Parameter("creation annihilated the state at the cutoff".into()));
                }
                y / C64::new(nrm, 0.0)
            }
            FockOp::Displace(i, a) => {
                self.check_mode(i)?;
                let gen = |x: &Array1<C64>| raise(b, i, x) * a - lower(b, i, x) * a.conj();
                expm_apply(gen, 2.0 * a.norm() * (c + 1.0).sqrt(), &self.amps)
            }
            FockOp::Squeeze(i, xi) => {
                self.check_mode(i)?;
                let z = C64::from_polar(xi.r, xi.theta);
                let gen = |x: &Array1<C64>| {
                    (lower(b, i, &lower(b, i, x)) * z.conj() - raise(b, i, &raise(b, i, x)) * z) * C64::new(0.5, 0.0)
                };
                expm_apply(gen, xi.r * (c + 1.0), &self.amps)
            }
            FockOp::TwoModeSqueeze(i, j, xi) => {
                self.check_mode(i)?;
                self.check_mode(j)?;
                if i == j {
                    return Err(Error::Parameter("two-mode squeezing needs distinct modes".into()));
                }
                let z = C64::from_polar(xi.r, xi.theta);
                let gen = |x: &Array1<C64>| lower(b, i, &lower(b, j, x)) * z.conj() - raise(b, i, &raise(b, j, x)) * z;
                expm_apply(gen, 2.0 * xi.r * (c + 1.0), &self.amps)
            }
        };
        Ok(self.with_amps(amps, &format!("{op:?}")))
    }

    /// Ĥ x with Ĥ = Σ h_mn a†ₘaₙ.
    fn hamiltonian_apply(&self, h: &Array2<f64>, x: &Array1<C64>) -> Array1<C64> {
        let mut y = Array1::zeros(x.len());
        for ((m, n), &v) in h.indexed_iter() {
            if v != 0.0 {
                y = y + hop(&self.basis, m, n, x) * C64::new(v, 0.0);
            }
        }
        y
    }

    /// Midpoint steps exp(−i Ĥ(z + dz/2) dz) over the whole schedule, using
    /// the same uniform grid as the moment engine.
    pub fn evolve_exact(&self, schedule: &CouplingSchedule, dz: f64) -> Result<FockState> {
        if schedule.n_sites() != self.modes() {
            return Err(Error::Dimension { expected: self.modes(), got: schedule.n_sites() });
        }
        if !(dz > 0.0 && dz.is_finite()) {
            return Err(Error::Parameter(format!("step must be positive, got {dz}")));
        }
        let total = schedule.total_length();
        let steps = step_count(total, dz);
        let c = self.basis.cutoff as f64;
        let mut amps = self.amps.clone();
        for k in 0..steps {
            let step = total / steps as f64;
            let h = schedule.hamiltonian((k as f64 + 0.5) * step)?;
            let row_sum = h.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
            let gen = |x: &Array1<C64>| self.hamiltonian_apply(&h, x) * C64::new(0.0, -step);
            amps = expm_apply(gen, row_sum * c * step, &amps);
        }
        Ok(self.with_amps(amps, "evolve_exact"))
    }

    pub fn total_photons(&self) -> f64 {
        (0..self.basis.dim()).map(|k| self.basis.shell(k) as f64 * self.amps[k].norm_sqr()).sum()
    }

    /// ⟨aᵢ⟩, ⟨aᵢ†aⱼ⟩, ⟨aᵢaⱼ⟩ evaluated in the truncated basis.
    pub fn moments(&self) -> GaussianMoments {
        let n = self.modes();
        let b = &*self.basis;
        let low: Vec<Array1<C64>> = (0..n).map(|i| lower(b, i, &self.amps)).collect();
        GaussianMoments {
            alpha: Array1::from_iter(low.iter().map(|v| inner(&self.amps, v))),
            n: Array2::from_shape_fn((n, n), |(i, j)| inner(&low[i], &low[j])),
            m: Array2::from_shape_fn((n, n), |(i, j)| inner(&self.amps, &lower(b, i, &low[j]))),
        }
    }

    /// ⟨aᵢ†aⱼaₖ†aₗ⟩ = ⟨a†ⱼaᵢψ | a†ₖaₗψ⟩.
    pub fn correlation(&self) -> CorrelationTensor {
        let n = self.modes();
        let w: Vec<Vec<Array1<C64>>> =
            (0..n).map(|k| (0..n).map(|l| hop(&self.basis, k, l, &self.amps)).collect()).collect();
        let mut t = CorrelationTensor::zeros(n);
        for ((i, j, k, l), v) in t.g2.indexed_iter_mut() {
            *v = inner(&w[j][i], &w[k][l]);
        }
        t
    }

    /// Var of Σₛ Xₛ(φ)/√|sites| from the state vector directly.
    pub fn quadrature_variance(&self, sites: &[usize], phi: f64) -> Result<f64> {
        if sites.is_empty() {
            return Err(Error::Parameter("quadrature needs at least one site".into()));
        }
        for &s in sites {
            self.check_mode(s)?;
        }
        let b = &*self.basis;
        let e = C64::from_polar(1.0, phi);
        let w = 0.5 / (sites.len() as f64).sqrt();
        let mut x = Array1::<C64>::zeros(b.dim());
        for &s in sites {
            x = x + (lower(b, s, &self.amps) * e + raise(b, s, &self.amps) * e.conj()) * C64::new(w, 0.0);
        }
        let mean = inner(&self.amps, &x).re;
        Ok(norm(&x).powi(2) - mean * mean)
    }
}

/// Moments, tensor and quadrature variances of a Fock state.
#[derive(Clone, Debug)]
pub struct Expectations {
    pub moments: GaussianMoments,
    pub g2: CorrelationTensor,
    /// (sites, φ, variance) for every requested combination.
    pub quadratures: Vec<(Vec<usize>, f64, f64)>,
}

pub fn expectations(state: &FockState, quadratures: &[Vec<usize>], phases: &[f64]) -> Result<Expectations> {
    let mut q = Vec::new();
    for sites in quadratures {
        for &phi in phases {
            q.push((sites.clone(), phi, state.quadrature_variance(sites, phi)?));
        }
    }
    Ok(Expectations { moments: state.moments(), g2: state.correlation(), quadratures: q })
}
