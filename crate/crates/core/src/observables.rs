//! Photon numbers, correlation entries, quadrature variances and squeezing.
//!
//! The quadrature is X(φ) = (a e^{iφ} + a† e^{−iφ})/2, so vacuum and
//! coherent states have variance 1/4 at every phase.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::{CorrelationTensor, GaussianMoments, C64};

pub const VACUUM_VARIANCE: f64 = 0.25;

/// Below this variance swing the quadrature is treated as phase independent.
const PHASE_FLAT: f64 = 1e-12;

fn check(m: &GaussianMoments, sites: &[usize]) -> Result<()> {
    let n = m.n_sites();
    match sites.iter().find(|&&s| s >= n) {
        Some(&site) => Err(Error::Site { site, n }),
        None => Ok(()),
    }
}

/// ⟨aᵢ†aⱼ⟩.
pub fn photon_number(m: &GaussianMoments, i: usize, j: usize) -> Result<C64> {
    check(m, &[i, j])?;
    Ok(m.n[[i, j]])
}

/// Per-site ⟨aᵢ†aᵢ⟩.
pub fn photon_numbers(m: &GaussianMoments) -> Vec<f64> {
    m.n.diag().iter().map(|z| z.re).collect()
}

/// Var Xᵢ(φ) from the displacement-centred moments.
pub fn quadrature_variance(m: &GaussianMoments, i: usize, phi: f64) -> Result<f64> {
    check(m, &[i])?;
    let a = m.alpha[i];
    let nb = m.n[[i, i]].re - a.norm_sqr();
    let mb = m.m[[i, i]] - a * a;
    Ok(0.25 * (1.0 + 2.0 * nb + 2.0 * (mb * C64::from_polar(1.0, 2.0 * phi)).re))
}

/// 10·log₁₀(Var / ¼). Negative values are squeezed below the vacuum level.
pub fn db(variance: f64) -> f64 {
    10.0 * (variance / VACUUM_VARIANCE).log10()
}

pub fn squeezing_db(m: &GaussianMoments, i: usize, phi: f64) -> Result<f64> {
    Ok(db(quadrature_variance(m, i, phi)?))
}

/// (phase-free part, coefficient K) with Var = base + Re(K e^{2iφ}).
fn pair_terms(m: &GaussianMoments, i: usize, j: usize) -> (f64, C64) {
    let (ai, aj) = (m.alpha[i], m.alpha[j]);
    let nii = m.n[[i, i]].re - ai.norm_sqr();
    let njj = m.n[[j, j]].re - aj.norm_sqr();
    let nij = m.n[[i, j]] - ai.conj() * aj;
    let k = (m.m[[i, i]] - ai * ai) + (m.m[[j, j]] - aj * aj) + 2.0 * (m.m[[i, j]] - ai * aj);
    ((2.0 + 2.0 * nii + 2.0 * njj + 4.0 * nij.re) / 8.0, k * 0.25)
}

/// Var of (Xᵢ(φ) + Xⱼ(φ))/√2.
pub fn two_mode_quadrature_variance(m: &GaussianMoments, i: usize, j: usize, phi: f64) -> Result<f64> {
    check(m, &[i, j])?;
    if i == j {
        return Err(Error::Parameter("two-mode quadrature needs distinct sites".into()));
    }
    let (base, k) = pair_terms(m, i, j);
    Ok(base + (k * C64::from_polar(1.0, 2.0 * phi)).re)
}

/// One waveguide or a pair for the joint quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quadrature {
    Site(usize),
    Pair(usize, usize),
}

impl Quadrature {
    pub fn from_sites(sites: &[usize]) -> Result<Self> {
        match *sites {
            [i] => Ok(Quadrature::Site(i)),
            [i, j] if i != j => Ok(Quadrature::Pair(i, j)),
            _ => Err(Error::Parameter(format!("quadrature needs one or two distinct sites, got {sites:?}"))),
        }
    }

    pub fn sites(&self) -> Vec<usize> {
        match *self {
            Quadrature::Site(i) => vec![i],
            Quadrature::Pair(i, j) => vec![i, j],
        }
    }

    pub fn variance(&self, m: &GaussianMoments, phi: f64) -> Result<f64> {
        match *self {
            Quadrature::Site(i) => quadrature_variance(m, i, phi),
            Quadrature::Pair(i, j) => two_mode_quadrature_variance(m, i, j, phi),
        }
    }

    /// Var = base + Re(K e^{2iφ}).
    fn terms(&self, m: &GaussianMoments) -> Result<(f64, C64)> {
        check(m, &self.sites())?;
        Ok(match *self {
            Quadrature::Site(i) => {
                let a = m.alpha[i];
                let nb = m.n[[i, i]].re - a.norm_sqr();
                (0.25 * (1.0 + 2.0 * nb), 0.5 * (m.m[[i, i]] - a * a))
            }
            Quadrature::Pair(i, j) => {
                if i == j {
                    return Err(Error::Parameter("two-mode quadrature needs distinct sites".into()));
                }
                pair_terms(m, i, j)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseOptimum {
    /// Minimizing phase in [0, π).
    pub phase: f64,
    pub variance: f64,
    /// False when the variance does not depend on φ; `phase` is then the
    /// first grid point.
    pub defined: bool,
}

/// Phase in [0, π) minimizing the quadrature variance.
///
/// Closed form from the phase of the anomalous coefficient; a grid of
/// `resolution` points is scanned only when that coefficient vanishes.
pub fn min_variance_phase(m: &GaussianMoments, q: Quadrature, resolution: usize) -> Result<PhaseOptimum> {
    if resolution == 0 {
        return Err(Error::Parameter("phase grid needs at least one point".into()));
    }
    let (base, k) = q.terms(m)?;
    if k.norm() < PHASE_FLAT {
        let best = (0..resolution)
            .map(|s| {
                let phi = PI * s as f64 / resolution as f64;
                (phi, base + (k * C64::from_polar(1.0, 2.0 * phi)).re)
            })
            .fold((0.0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
        return Ok(PhaseOptimum { phase: best.0, variance: best.1, defined: false });
    }
    let phase = wrap_pi((PI - k.arg()) / 2.0);
    Ok(PhaseOptimum { phase, variance: base - k.norm(), defined: true })
}

/// Reduce an angle to [0, π).
pub fn wrap_pi(x: f64) -> f64 {
    let y = x.rem_euclid(PI);
    if y >= PI - 1e-12 {
        0.0
    } else {
        y
    }
}

/// Distance between two phases defined modulo π, in [0, π/2].
pub fn phase_distance(a: f64, b: f64) -> f64 {
    let d = wrap_pi(a - b);
    d.min(PI - d)
}

/// ⟨aᵢ†aⱼaₖ†aₗ⟩.
pub fn g2_entry(t: &CorrelationTensor, i: usize, j: usize, k: usize, l: usize) -> Result<C64> {
    let n = t.n_sites();
    match [i, j, k, l].into_iter().find(|&s| s >= n) {
        Some(site) => Err(Error::Site { site, n }),
        None => Ok(t.entry(i, j, k, l)),
    }
}

/// Photon number at `target` at the end of a run divided by the photon
/// number present at `source` at the start.
pub fn transmission_between(initial: &GaussianMoments, fin: &GaussianMoments, source: usize, target: usize) -> Result<f64> {
    check(initial, &[source])?;
    check(fin, &[target])?;
    let launched = initial.n[[source, source]].re;
    if launched <= 0.0 {
        return Err(Error::Parameter(format!("no photons launched at site {source}")));
    }
    Ok(fin.n[[target, target]].re / launched)
}

/// Photon number at `target` at the end of a run over the total initial
/// photon number.
pub fn transmission_total(initial: &GaussianMoments, fin: &GaussianMoments, target: usize) -> Result<f64> {
    check(fin, &[target])?;
    let total = initial.total_photons();
    if total <= 0.0 {
        return Err(Error::Parameter("transmission of the vacuum is undefined".into()));
    }
    Ok(fin.n[[target, target]].re / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn vacuum_and_coherent_are_flat() {
        let vac = GaussianMoments::vacuum(3);
        let (coh, _) = init_coherent(3, 1, C64::from_polar(1.3, 0.4)).unwrap();
        for phi in [0.0, 0.3, 1.2, 2.9] {
            for m in [&vac, &coh] {
                assert_abs_diff_eq!(quadrature_variance(m, 1, phi).unwrap(), 0.25, epsilon = 1e-14);
                assert_abs_diff_eq!(squeezing_db(m, 1, phi).unwrap(), 0.0, epsilon = 1e-12);
                assert_abs_diff_eq!(two_mode_quadrature_variance(m, 0, 1, phi).unwrap(), 0.25, epsilon = 1e-14);
            }
        }
        let opt = min_variance_phase(&coh, Quadrature::Site(1), 16).unwrap();
        assert!(!opt.defined);
        assert_eq!(opt.phase, 0.0);
    }

    #[test]
    fn squeezed_levels() {
        let xi = Squeeze::unit_photon();
        let (m, t) = init_sq_vacuum(2, 0, xi).unwrap();
        let lo = 0.25 * (-2.0 * xi.r).exp();
        assert_abs_diff_eq!(lo, 0.042_893_218_813_452_48, epsilon = 1e-15);
        let opt = min_variance_phase(&m, Quadrature::Site(0), 8).unwrap();
        assert!(opt.defined);
        assert_abs_diff_eq!(opt.phase, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(opt.variance, lo, epsilon = 1e-14);
        assert_abs_diff_eq!(quadrature_variance(&m, 0, PI / 2.0).unwrap(), 0.25 * (2.0 * xi.r).exp(), epsilon = 1e-13);
        assert_abs_diff_eq!(squeezing_db(&m, 0, 0.0).unwrap(), -7.655_513_706_919_948, epsilon = 1e-9);
        assert_abs_diff_eq!(squeezing_db(&m, 0, PI / 2.0).unwrap(), 7.655_513_706_919_948, epsilon = 1e-9);
        assert_abs_diff_eq!(g2_entry(&t, 0, 0, 0, 0).unwrap().re, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn squeezing_phase_tracks_theta() {
        for theta in [0.3, 1.0, 2.5, -0.7] {
            let (m, _) = init_sq_vacuum(1, 0, Squeeze::new(0.5, theta).unwrap()).unwrap();
            let opt = min_variance_phase(&m, Quadrature::Site(0), 8).unwrap();
            assert_abs_diff_eq!(phase_distance(opt.phase, -theta / 2.0), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_mode_levels() {
        let xi = Squeeze::unit_photon();
        let (m, _) = init_two_mode_sq(3, 0, 2, xi).unwrap();
        let lo = 0.25 * (-2.0 * xi.r).exp();
        let opt = min_variance_phase(&m, Quadrature::Pair(0, 2), 8).unwrap();
        assert_abs_diff_eq!(opt.variance, lo, epsilon = 1e-14);
        assert_abs_diff_eq!(opt.phase, 0.0, epsilon = 1e-14);
        let single = min_variance_phase(&m, Quadrature::Site(0), 8).unwrap();
        assert!(!single.defined);
        assert_abs_diff_eq!(db(single.variance), 10.0 * (2.0 * xi.r).cosh().log10(), epsilon = 1e-12);

        let (both, _) = init_sq_vacuum_sites(3, &[0, 2], xi).unwrap();
        let opt = min_variance_phase(&both, Quadrature::Pair(0, 2), 8).unwrap();
        assert_abs_diff_eq!(opt.variance, lo, epsilon = 1e-14);
    }

    #[test]
    fn bad_sites() {
        let m = GaussianMoments::vacuum(2);
        assert!(photon_number(&m, 0, 2).is_err());
        assert!(two_mode_quadrature_variance(&m, 1, 1, 0.0).is_err());
        assert!(Quadrature::from_sites(&[1, 1]).is_err());
        assert!(min_variance_phase(&m, Quadrature::Site(0), 0).is_err());
    }

    #[test]
    fn transmission_ratios() {
        let (a, _) = init_single_photon(3, 1).unwrap();
        assert_eq!(transmission_between(&a, &a, 1, 1).unwrap(), 1.0);
        assert_eq!(transmission_total(&a, &a, 0).unwrap(), 0.0);
        assert!(transmission_total(&GaussianMoments::vacuum(2), &a, 0).is_err());
    }

    #[test]
    fn phase_helpers() {
        assert_abs_diff_eq!(wrap_pi(-0.1), PI - 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(phase_distance(0.05, PI - 0.05), 0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(phase_distance(0.0, PI / 2.0), PI / 2.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn uncertainty_relation(r in 0.0..1.5f64, theta in -3.0..3.0f64, phi in 0.0..3.2f64, re in -1.0..1.0f64, im in -1.0..1.0f64) {
            let (mut m, _) = init_sq_vacuum(2, 1, Squeeze::new(r, theta).unwrap()).unwrap();
            m.alpha[1] = C64::new(re, im);
            m.n[[1, 1]] += C64::new(re * re + im * im, 0.0);
            m.m[[1, 1]] += C64::new(re, im) * C64::new(re, im);
            let a = quadrature_variance(&m, 1, phi).unwrap();
            let b = quadrature_variance(&m, 1, phi + PI / 2.0).unwrap();
            prop_assert!(a * b >= 1.0 / 16.0 - 1e-12);
            let opt = min_variance_phase(&m, Quadrature::Site(1), 4).unwrap();
            prop_assert!(opt.variance <= a + 1e-12);
        }
    }
}
