//! Initial moments and correlation tensors for the four input states, and
//! Wick reconstruction of ⟨a†a a†a⟩ for Gaussian states.
//!
//! Conventions: D(α) = exp(α a† − α* a), S(ξ) = exp[(ξ* a² − ξ a†²)/2] and
//! S₂(ξ) = exp(ξ* a b − ξ a† b†) with ξ = r·e^{iθ}. For real ξ the φ = 0
//! quadrature X = (a e^{iφ} + a† e^{−iφ})/2 is the squeezed one.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Array4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// First and second moments: ⟨aᵢ⟩, Nᵢⱼ = ⟨aᵢ†aⱼ⟩, Mᵢⱼ = ⟨aᵢaⱼ⟩.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMoments {
    pub alpha: Array1<C64>,
    pub n: Array2<C64>,
    pub m: Array2<C64>,
}

impl GaussianMoments {
    pub fn vacuum(sites: usize) -> Self {
        GaussianMoments {
            alpha: Array1::zeros(sites),
            n: Array2::zeros((sites, sites)),
            m: Array2::zeros((sites, sites)),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.alpha.len()
    }

    /// Tr N.
    pub fn total_photons(&self) -> f64 {
        self.n.diag().iter().map(|z| z.re).sum()
    }

    /// Nᵢⱼ − ᾱᵢαⱼ.
    pub fn centered_n(&self) -> Array2<C64> {
        let a = &self.alpha;
        Array2::from_shape_fn(self.n.raw_dim(), |(i, j)| self.n[[i, j]] - a[i].conj() * a[j])
    }

    /// Mᵢⱼ − αᵢαⱼ.
    pub fn centered_m(&self) -> Array2<C64> {
        let a = &self.alpha;
        Array2::from_shape_fn(self.m.raw_dim(), |(i, j)| self.m[[i, j]] - a[i] * a[j])
    }

    /// Smallest eigenvalue of the Gram matrix ⟨ζₖ†ζₗ⟩ with ζ = (a, a†),
    /// centered. Non-negative exactly when the moments describe a state.
    pub fn physicality_margin(&self) -> f64 {
        let n = self.n_sites();
        let nb = self.centered_n();
        let mb = self.centered_m();
        let k = DMatrix::from_fn(2 * n, 2 * n, |r, c| match (r < n, c < n) {
            (true, true) => nb[[r, c]],
            (true, false) => mb[[r, c - n]].conj(),
            (false, true) => mb[[r - n, c]],
            (false, false) => {
                let (i, j) = (r - n, c - n);
                nb[[j, i]] + if i == j { ONE } else { ZERO }
            }
        });
        let k = (&k + k.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(k).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Dense ⟨aᵢ†aⱼaₖ†aₗ⟩ indexed `[i, j, k, l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationTensor {
    pub g2: Array4<C64>,
}

impl CorrelationTensor {
    pub fn zeros(sites: usize) -> Self {
        CorrelationTensor { g2: Array4::zeros((sites, sites, sites, sites)) }
    }

    pub fn n_sites(&self) -> usize {
        self.g2.shape()[0]
    }

    pub fn entry(&self, i: usize, j: usize, k: usize, l: usize) -> C64 {
        self.g2[[i, j, k, l]]
    }

    /// max |g2[i,j,k,l] − conj(g2[l,k,j,i])|.
    pub fn hermiticity_error(&self) -> f64 {
        self.g2
            .indexed_iter()
            .map(|((i, j, k, l), z)| (z - self.g2[[l, k, j, i]].conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &CorrelationTensor) -> f64 {
        self.g2.iter().zip(other.g2.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

/// Complex squeezing parameter ξ = r·e^{iθ}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Squeeze {
    pub r: f64,
    #[serde(default)]
    pub theta: f64,
}

impl Squeeze {
    pub fn new(r: f64, theta: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite() && theta.is_finite()) {
            return Err(Error::Parameter(format!("squeezing needs r ≥ 0, got {r}")));
        }
        Ok(Squeeze { r, theta })
    }

    /// r = arcsinh(1): one photon on average.
    pub fn unit_photon() -> Self {
        Squeeze { r: 1f64.asinh(), theta: 0.0 }
    }

    /// (sinh²r, −e^{iθ} sinh r cosh r)
    fn moments(&self) -> (f64, C64) {
        let (s, c) = (self.r.sinh(), self.r.cosh());
        (s * s, -C64::from_polar(s * c, self.theta))
    }
}

fn check_site(site: usize, n: usize) -> Result<()> {
    if site >= n {
        Err(Error::Site { site, n })
    } else {
        Ok(())
    }
}

/// |1⟩ at site `d`.
pub fn init_single_photon(n: usize, d: usize) -> Result<(GaussianMoments, CorrelationTensor)> {
    check_site(d, n)?;
    let mut m = GaussianMoments::vacuum(n);
    m.n[[d, d]] = ONE;
    let mut t = CorrelationTensor::zeros(n);
    for j in 0..n {
        t.g2[[d, j, j, d]] = ONE;
    }
    Ok((m, t))
}

/// Coherent state |α⟩ at site `d`.
pub fn init_coherent(n: usize, d: usize, alpha: C64) -> Result<(GaussianMoments, CorrelationTensor)> {
    check_site(d, n)?;
    let mut m = GaussianMoments::vacuum(n);
    m.alpha[d] = alpha;
    m.n[[d, d]] = C64::new(alpha.norm_sqr(), 0.0);
    m.m[[d, d]] = alpha * alpha;
    // ᾱᵢαⱼᾱₖαₗ + δⱼₖ ᾱᵢαₗ, nonzero only for i = l = d
    let mut t = CorrelationTensor::zeros(n);
    let a2 = alpha.norm_sqr();
    t.g2[[d, d, d, d]] = C64::new(a2 * a2, 0.0);
    for j in 0..n {
        t.g2[[d, j, j, d]] += C64::new(a2, 0.0);
    }
    Ok((m, t))
}

/// Squeezed vacuum S(ξ)|0⟩ on each of `sites` independently.
pub fn init_sq_vacuum_sites(n: usize, sites: &[usize], xi: Squeeze) -> Result<(GaussianMoments, CorrelationTensor)> {
    let mut m = GaussianMoments::vacuum(n);
    let (nn, mm) = xi.moments();
    for (k, &d) in sites.iter().enumerate() {
        check_site(d, n)?;
        if sites[..k].contains(&d) {
            return Err(Error::Parameter(format!("site {d} listed twice")));
        }
        m.n[[d, d]] = C64::new(nn, 0.0);
        m.m[[d, d]] = mm;
    }
    let t = wick_g2(&m);
    Ok((m, t))
}

/// Squeezed vacuum S(ξ)|0⟩ at site `d`.
pub fn init_sq_vacuum(n: usize, d: usize, xi: Squeeze) -> Result<(GaussianMoments, CorrelationTensor)> {
    init_sq_vacuum_sites(n, &[d], xi)
}

/// Two-mode squeezed vacuum S₂(ξ)|0⟩ between sites `a` and `b`.
pub fn init_two_mode_sq(n: usize, a: usize, b: usize, xi: Squeeze) -> Result<(GaussianMoments, CorrelationTensor)> {
    check_site(a, n)?;
    check_site(b, n)?;
    if a == b {
        return Err(Error::Parameter("two-mode squeezing needs distinct sites".into()));
    }
    let (nn, mm) = xi.moments();
    let mut m = GaussianMoments::vacuum(n);
    m.n[[a, a]] = C64::new(nn, 0.0);
    m.n[[b, b]] = C64::new(nn, 0.0);
    m.m[[a, b]] = mm;
    m.m[[b, a]] = mm;
    let t = wick_g2(&m);
    Ok((m, t))
}

/// ⟨aᵢ†aⱼaₖ†aₗ⟩ of the Gaussian state with moments `m`.
///
/// Uses aⱼaₖ† = aₖ†aⱼ + δⱼₖ and expands the normally ordered part around the
/// displacement; the centered normally ordered four-point function factorizes
/// into pair contractions.
pub fn wick_g2(m: &GaussianMoments) -> CorrelationTensor {
    let n = m.n_sites();
    let a = &m.alpha;
    let ac: Array1<C64> = a.mapv(|z| z.conj());
    let nb = m.centered_n();
    let mb = m.centered_m();
    let mbc = mb.mapv(|z| z.conj());
    let displaced = a.iter().any(|z| *z != ZERO);
    let mut t = CorrelationTensor::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut s = mbc[[i, k]] * mb[[j, l]] + nb[[i, j]] * nb[[k, l]] + nb[[i, l]] * nb[[k, j]];
                    if displaced {
                        s += ac[i] * ac[k] * a[j] * a[l]
                            + ac[i] * ac[k] * mb[[j, l]]
                            + ac[i] * a[j] * nb[[k, l]]
                            + ac[i] * a[l] * nb[[k, j]]
                            + ac[k] * a[j] * nb[[i, l]]
                            + ac[k] * a[l] * nb[[i, j]]
                            + a[j] * a[l] * mbc[[i, k]];
                    }
                    if j == k {
                        s += m.n[[i, l]];
                    }
                    t.g2[[i, j, k, l]] = s;
                }
            }
        }
    }
    t
}

/// Input state as declared in a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    SinglePhoton {
        site: usize,
    },
    Coherent {
        site: usize,
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    Squeezed {
        sites: Vec<usize>,
        r: f64,
        #[serde(default)]
        phase: f64,
    },
    TwoModeSqueezed {
        sites: [usize; 2],
        r: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl InitialState {
    pub fn prepare(&self, n: usize) -> Result<(GaussianMoments, CorrelationTensor)> {
        match self {
            InitialState::SinglePhoton { site } => init_single_photon(n, *site),
            InitialState::Coherent { site, amplitude, phase } => {
                init_coherent(n, *site, C64::from_polar(*amplitude, *phase))
            }
            InitialState::Squeezed { sites, r, phase } => {
                init_sq_vacuum_sites(n, sites, Squeeze::new(*r, *phase)?)
            }
            InitialState::TwoModeSqueezed { sites, r, phase } => {
                init_two_mode_sq(n, sites[0], sites[1], Squeeze::new(*r, *phase)?)
            }
        }
    }

    pub fn is_gaussian(&self) -> bool {
        !matches!(self, InitialState::SinglePhoton { .. })
    }

    /// Waveguides the light is launched into.
    pub fn sites(&self) -> Vec<usize> {
        match self {
            InitialState::SinglePhoton { site } | InitialState::Coherent { site, .. } => vec![*site],
            InitialState::Squeezed { sites, .. } => sites.clone(),
            InitialState::TwoModeSqueezed { sites, .. } => sites.to_vec(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            InitialState::SinglePhoton { .. } => "single_photon",
            InitialState::Coherent { .. } => "coherent",
            InitialState::Squeezed { .. } => "squeezed",
            InitialState::TwoModeSqueezed { .. } => "two_mode_squeezed",
        }
    }

    /// The four unit-photon inputs used by the transport experiment, launched
    /// at `wall`, with `edge` as the partner of the two-mode state.
    pub fn unit_photon_set(wall: usize, edge: usize) -> Vec<InitialState> {
        let r = 1f64.asinh();
        vec![
            InitialState::SinglePhoton { site: wall },
            InitialState::Coherent { site: wall, amplitude: 1.0, phase: 0.0 },
            InitialState::Squeezed { sites: vec![wall], r, phase: 0.0 },
            InitialState::TwoModeSqueezed { sites: [edge, wall], r, phase: 0.0 },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn single_photon_tensor() {
        let (m, t) = init_single_photon(3, 1).unwrap();
        assert_eq!(m.total_photons(), 1.0);
        assert_eq!(t.entry(1, 1, 1, 1), ONE);
        for ((i, j, k, l), z) in t.g2.indexed_iter() {
            if i != 1 || l != 1 || j != k {
                assert_eq!(*z, ZERO, "{i}{j}{k}{l}");
            }
        }
        assert!(init_single_photon(3, 3).is_err());
    }

    #[test]
    fn coherent_tensor() {
        let (m, t) = init_coherent(2, 0, ONE).unwrap();
        assert_eq!(m.n[[0, 0]], ONE);
        assert_eq!(t.entry(0, 0, 0, 0), C64::new(2.0, 0.0));
        let (m, t) = init_coherent(2, 0, ZERO).unwrap();
        assert_eq!(m, GaussianMoments::vacuum(2));
        assert!(t.g2.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn coherent_closed_form_matches_wick() {
        let alpha = C64::from_polar(1.3, 0.4);
        let (m, t) = init_coherent(3, 2, alpha).unwrap();
        assert!(wick_g2(&m).max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn squeezed_unit_photon() {
        let (m, t) = init_sq_vacuum(2, 1, Squeeze::unit_photon()).unwrap();
        assert_abs_diff_eq!(m.n[[1, 1]].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.m[[1, 1]].re, -(2f64.sqrt()), epsilon = 1e-14);
        // 2 sinh²r cosh²r + sinh⁴r + sinh²r... with the δ term: 2 + 2 + 1
        assert_abs_diff_eq!(t.entry(1, 1, 1, 1).re, 5.0, epsilon = 1e-13);
        let (m, _) = init_sq_vacuum(2, 1, Squeeze::new(0.0, 0.3).unwrap()).unwrap();
        assert_eq!(m, GaussianMoments::vacuum(2));
    }

    #[test]
    fn two_mode_moments() {
        let xi = Squeeze::new(0.5, 0.2).unwrap();
        let (m, _) = init_two_mode_sq(3, 0, 2, xi).unwrap();
        assert_abs_diff_eq!(m.n[[0, 0]].re, 0.5f64.sinh().powi(2), epsilon = 1e-15);
        assert_eq!(m.m[[0, 2]], m.m[[2, 0]]);
        assert_eq!(m.m[[0, 0]], ZERO);
        assert!(init_two_mode_sq(3, 1, 1, xi).is_err());
        let (m, t) = init_two_mode_sq(3, 0, 2, Squeeze::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!(m, GaussianMoments::vacuum(3));
        assert!(t.g2.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn initializers_are_physical_and_hermitian() {
        let xi = Squeeze::unit_photon();
        let cases = [
            init_single_photon(3, 1).unwrap(),
            init_coherent(3, 1, C64::new(0.3, -0.8)).unwrap(),
            init_sq_vacuum(3, 1, xi).unwrap(),
            init_sq_vacuum_sites(3, &[0, 2], xi).unwrap(),
            init_two_mode_sq(3, 0, 1, Squeeze::new(1.1, 2.0).unwrap()).unwrap(),
        ];
        for (m, t) in &cases {
            assert!(t.hermiticity_error() < 1e-13);
            assert!(m.physicality_margin() > -1e-10);
        }
    }

    #[test]
    fn unphysical_moments_flagged() {
        let mut m = GaussianMoments::vacuum(1);
        m.m[[0, 0]] = C64::new(2.0, 0.0);
        assert!(m.physicality_margin() < -0.1);
    }

    #[test]
    fn config_round_trip() {
        let s: InitialState = toml::from_str("kind = \"two_mode_squeezed\"\nsites = [0, 15]\nr = 0.88").unwrap();
        assert_eq!(s.sites(), vec![0, 15]);
        assert!(s.is_gaussian());
    }

    proptest! {
        #[test]
        fn wick_tensor_is_hermitian(re in -1.0f64..1.0, im in -1.0f64..1.0, r in 0.0f64..1.2, th in 0.0f64..6.0) {
            let mut m = init_two_mode_sq(3, 0, 2, Squeeze::new(r, th).unwrap()).unwrap().0;
            m.alpha[1] = C64::new(re, im);
            m.n[[1, 1]] = C64::new(re * re + im * im, 0.0);
            m.m[[1, 1]] = m.alpha[1] * m.alpha[1];
            prop_assert!(wick_g2(&m).hermiticity_error() < 1e-12);
        }
    }
}
