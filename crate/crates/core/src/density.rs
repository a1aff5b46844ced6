//! Dense density matrices on small explicit bases.

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::WaveFunction;

/// Largest supported basis dimension.
pub const MAX_DIMENSION: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    labels: Vec<String>,
    elements: Array2<Complex64>,
}

impl DensityMatrix {
    pub fn new(labels: Vec<String>, elements: Array2<Complex64>) -> Result<Self> {
        let n = labels.len();
        if n > MAX_DIMENSION {
            return Err(Error::DimensionOverflow(n));
        }
        if elements.shape() != [n, n] {
            return Err(Error::ShapeMismatch {
                expected: vec![n, n],
                found: elements.shape().to_vec(),
            });
        }
        Ok(Self { labels, elements })
    }

    /// `|psi><psi| / <psi|psi>` for an explicit amplitude vector.
    pub fn from_pure(labels: Vec<String>, amplitudes: &[Complex64]) -> Result<Self> {
        if labels.len() != amplitudes.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![labels.len()],
                found: vec![amplitudes.len()],
            });
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::ZeroNorm);
        }
        let n = amplitudes.len();
        let elements =
            Array2::from_shape_fn((n, n), |(i, j)| amplitudes[i] * amplitudes[j].conj() / norm);
        Self::new(labels, elements)
    }

    /// Density matrix of a lattice state in its current basis, with
    /// elements `psi_a psi_b^* dV` over row-major flattened lattice indices.
    pub fn from_state(psi: &WaveFunction) -> Result<Self> {
        let n = psi.amplitudes().len();
        if n > MAX_DIMENSION {
            return Err(Error::DimensionOverflow(n));
        }
        let amps: Vec<Complex64> = psi.amplitudes().iter().copied().collect();
        let labels = (0..n).map(|i| i.to_string()).collect();
        Self::from_pure(labels, &amps)
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn elements(&self) -> &Array2<Complex64> {
        &self.elements
    }

    pub(crate) fn with_elements(&self, elements: Array2<Complex64>) -> Self {
        Self {
            labels: self.labels.clone(),
            elements,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.elements[[i, j]]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn trace(&self) -> Complex64 {
        self.elements.diag().sum()
    }

    pub fn purity(&self) -> f64 {
        self.elements.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest `|rho_ij - conj(rho_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.elements[[i, j]] - self.elements[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.dim();
        let m = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (self.elements[[i, j]] + self.elements[[j, i]].conj())
        });
        m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest elementwise difference to another matrix on the same basis.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.elements.shape() != other.elements.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.elements.shape().to_vec(),
                found: other.elements.shape().to_vec(),
            });
        }
        Ok(self
            .elements
            .iter()
            .zip(other.elements.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn pure_state_properties() {
        let amps = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(0.5, -0.5)];
        let rho = DensityMatrix::from_pure(labels(3), &amps).unwrap();
        assert!((rho.trace() - 1.0).norm() < 1e-14);
        assert!((rho.purity() - 1.0).abs() < 1e-14);
        assert!(rho.hermiticity_error() < 1e-15);
        assert!(rho.min_eigenvalue() > -1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let e = DensityMatrix::new(labels(2), Array2::zeros((3, 3))).unwrap_err();
        assert!(matches!(e, Error::ShapeMismatch { .. }));
        let e = DensityMatrix::from_pure(labels(2), &[Complex64::new(0.0, 0.0); 2]).unwrap_err();
        assert_eq!(e, Error::ZeroNorm);
    }

    #[test]
    fn detects_negative_eigenvalue() {
        let mut m = Array2::zeros((2, 2));
        m[[0, 0]] = Complex64::new(1.2, 0.0);
        m[[1, 1]] = Complex64::new(-0.2, 0.0);
        let rho = DensityMatrix::new(labels(2), m).unwrap();
        assert!((rho.min_eigenvalue() + 0.2).abs() < 1e-12);
    }
}
