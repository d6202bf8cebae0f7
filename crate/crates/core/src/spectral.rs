//! Eigenspectra, inverse participation ratios and in-gap state detection.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{build_ssh, sublattice_parity, LatticeSpec};

#[derive(Clone, Debug)]
pub struct SpectralResult {
    /// Ascending eigenvalues, cm⁻¹.
    pub energies: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `energies`.
    pub states: Array2<f64>,
    pub ipr: Vec<f64>,
}

/// Σ|ψ|⁴ / (Σ|ψ|²)².
pub fn ipr(psi: ArrayView1<f64>) -> f64 {
    let (p2, p4) = psi.iter().fold((0.0, 0.0), |(a, b), x| {
        let w = x * x;
        (a + w, b + w * w)
    });
    if p2 == 0.0 {
        0.0
    } else {
        p4 / (p2 * p2)
    }
}

pub(crate) fn max_asymmetry(h: &Array2<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..h.nrows() {
        for j in i + 1..h.ncols() {
            worst = worst.max((h[[i, j]] - h[[j, i]]).abs());
        }
    }
    worst
}

/// Real symmetric eigendecomposition, eigenvalues ascending.
pub(crate) fn eigh(h: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Dimension { expected: n, got: h.ncols() });
    }
    let scale = h.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let asym = max_asymmetry(h);
    if asym > 1e-12 * scale {
        return Err(Error::NotHermitian(asym));
    }
    let m = DMatrix::from_fn(n, n, |i, j| h[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let states = Array2::from_shape_fn((n, n), |(i, c)| eig.eigenvectors[(i, order[c])]);
    Ok((energies, states))
}

pub fn diagonalize(h: &Array2<f64>) -> Result<SpectralResult> {
    let (energies, states) = eigh(h)?;
    let ipr = states.axis_iter(Axis(1)).map(ipr).collect();
    Ok(SpectralResult { energies, states, ipr })
}

/// Spectra with u fixed and v = δ·u, one per δ.
pub fn band_sweep(template: &LatticeSpec, deltas: &[f64]) -> Result<Vec<(f64, SpectralResult)>> {
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::Parameter(format!("δ must be positive, got {d}")));
    }
    deltas
        .par_iter()
        .map(|&d| {
            let mut spec = template.clone();
            spec.v = d * spec.u;
            Ok((d, diagonalize(&build_ssh(&spec)?)?))
        })
        .collect()
}

/// Default in-gap tolerance 10⁻³·v.
pub fn default_gap_tol(spec: &LatticeSpec) -> f64 {
    1e-3 * spec.v
}

/// Indices of states with |E| < tol.
pub fn locate_gap_states(result: &SpectralResult, tol: f64) -> Vec<usize> {
    result
        .energies
        .iter()
        .enumerate()
        .filter(|(_, e)| e.abs() < tol)
        .map(|(k, _)| k)
        .collect()
}

/// max_k |E_k + E_{n−1−k}|, zero for a ±E symmetric spectrum.
pub fn chiral_asymmetry(energies: &[f64]) -> f64 {
    let n = energies.len();
    (0..n / 2 + n % 2)
        .map(|k| (energies[k] + energies[n - 1 - k]).abs())
        .fold(0.0, f64::max)
}

/// Smallest |E| once the `n_gap` states closest to zero are set aside.
pub fn bulk_half_gap(energies: &[f64], n_gap: usize) -> f64 {
    let mut mags: Vec<f64> = energies.iter().map(|e| e.abs()).collect();
    mags.sort_by(f64::total_cmp);
    mags.get(n_gap).copied().unwrap_or(f64::INFINITY)
}

/// A zero mode rotated within the degenerate gap subspace to be sublattice
/// pure and spatially localized.
#[derive(Clone, Debug)]
pub struct GapMode {
    /// Mean site position Σ i |ψ_i|².
    pub center: f64,
    /// ⟨ψ|H|ψ⟩, cm⁻¹.
    pub energy: f64,
    pub vector: Vec<f64>,
    pub ipr: f64,
    /// Weight on the sublattice the mode mostly avoids.
    pub minority_weight: f64,
}

fn rotate_by(basis: &Array2<f64>, op: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let projected = basis.t().dot(op).dot(basis);
    let sym = (&projected + &projected.t()) * 0.5;
    let (vals, vecs) = eigh(&sym)?;
    Ok((vals, basis.dot(&vecs)))
}

/// Localized gap modes of `h`, ordered left to right.
///
/// The near-degenerate gap subspace is first split by sublattice parity,
/// then each sector is diagonalized against the position operator, so a wall
/// state comes out separated from the edge states it hybridizes with.
pub fn localized_gap_modes(h: &Array2<f64>, result: &SpectralResult, tol: f64) -> Result<Vec<GapMode>> {
    let idx = locate_gap_states(result, tol);
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let n = result.states.nrows();
    let basis = result.states.select(Axis(1), &idx);
    let parity = Array2::from_diag(&ndarray::Array1::from(sublattice_parity(n)));
    let (chir, rotated) = rotate_by(&basis, &parity)?;
    let position = Array2::from_diag(&ndarray::Array1::from_iter((0..n).map(|i| i as f64)));
    let mut modes = Vec::new();
    for sector in [chir.iter().map(|&c| c < 0.0).collect::<Vec<_>>(), chir.iter().map(|&c| c >= 0.0).collect()] {
        let cols: Vec<usize> = (0..chir.len()).filter(|&k| sector[k]).collect();
        if cols.is_empty() {
            continue;
        }
        let sub = rotated.select(Axis(1), &cols);
        let (_, local) = rotate_by(&sub, &position)?;
        for col in local.axis_iter(Axis(1)) {
            let norm = col.dot(&col).sqrt();
            let psi = &col / norm;
            let center = psi.iter().enumerate().map(|(i, x)| i as f64 * x * x).sum();
            let energy = psi.dot(&h.dot(&psi));
            let even: f64 = psi.iter().step_by(2).map(|x| x * x).sum();
            modes.push(GapMode {
                center,
                energy,
                ipr: ipr(psi.view()),
                minority_weight: even.min(1.0 - even),
                vector: psi.to_vec(),
            });
        }
    }
    modes.sort_by(|a, b| a.center.total_cmp(&b.center));
    Ok(modes)
}
