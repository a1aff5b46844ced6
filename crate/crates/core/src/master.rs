//! Density-matrix evolution
//!
//! ```text
//! d rho = -i [H, rho] ds - sum_i (lambda_i / 2) [A_i, [A_i, rho]] ds
//! ```
//!
//! integrated with classical RK4, plus the closed form for commuting
//! diagonal generators and two small two-particle configuration examples.

use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;

use crate::density::DensityMatrix;
use crate::error::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Hermitian operator as a dense matrix on a density-matrix basis.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOperator {
    matrix: Array2<Complex64>,
}

impl MatrixOperator {
    pub fn new(matrix: Array2<Complex64>) -> Result<Self> {
        let s = matrix.shape();
        if s[0] != s[1] {
            return Err(Error::ShapeMismatch {
                expected: vec![s[0], s[0]],
                found: s.to_vec(),
            });
        }
        Ok(Self { matrix })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut matrix = Array2::zeros((n, n));
        for (i, v) in values.iter().enumerate() {
            matrix[[i, i]] = Complex64::new(*v, 0.0);
        }
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    /// Real diagonal when all off-diagonal entries vanish.
    pub fn diagonal_values(&self, tol: f64) -> Option<Vec<f64>> {
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.matrix[[i, j]].norm() > tol {
                    return None;
                }
            }
        }
        Some((0..n).map(|i| self.matrix[[i, i]].re).collect())
    }

    pub fn commutes_with(&self, other: &Self, tol: f64) -> bool {
        let c = commutator(&self.matrix, &other.matrix);
        c.iter().all(|z| z.norm() <= tol)
    }
}

/// One collapse channel `(A, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseTerm {
    pub operator: MatrixOperator,
    pub lambda: f64,
}

impl CollapseTerm {
    pub fn new(operator: MatrixOperator, lambda: f64) -> Self {
        Self { operator, lambda }
    }
}

fn commutator(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    a.dot(b) - b.dot(a)
}

fn check_dims(rho: &DensityMatrix, h: Option<&MatrixOperator>, terms: &[CollapseTerm]) -> Result<()> {
    let n = rho.dim();
    let ops = h.into_iter().chain(terms.iter().map(|t| &t.operator));
    for op in ops {
        if op.dim() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n, n],
                found: vec![op.dim(), op.dim()],
            });
        }
    }
    Ok(())
}

fn generator(
    rho: &Array2<Complex64>,
    h: Option<&MatrixOperator>,
    terms: &[CollapseTerm],
) -> Array2<Complex64> {
    let mut out = match h {
        Some(h) => commutator(&h.matrix, rho).mapv(|z| -I * z),
        None => Array2::zeros(rho.raw_dim()),
    };
    for t in terms {
        let inner = commutator(&t.operator.matrix, rho);
        let outer = commutator(&t.operator.matrix, &inner);
        out.scaled_add(Complex64::new(-0.5 * t.lambda, 0.0), &outer);
    }
    out
}

/// One RK4 step of size `ds`, followed by projection onto Hermitian matrices.
pub fn master_step(
    rho: &DensityMatrix,
    h: Option<&MatrixOperator>,
    terms: &[CollapseTerm],
    ds: f64,
) -> Result<DensityMatrix> {
    check_dims(rho, h, terms)?;
    let r0 = rho.elements();
    let half = Complex64::new(0.5 * ds, 0.0);
    let full = Complex64::new(ds, 0.0);
    let k1 = generator(r0, h, terms);
    let k2 = generator(&(r0 + &k1.mapv(|z| z * half)), h, terms);
    let k3 = generator(&(r0 + &k2.mapv(|z| z * half)), h, terms);
    let k4 = generator(&(r0 + &k3.mapv(|z| z * full)), h, terms);
    let sixth = Complex64::new(ds / 6.0, 0.0);
    let mut next = r0 + &((k1 + &k2.mapv(|z| 2.0 * z) + &k3.mapv(|z| 2.0 * z) + &k4).mapv(|z| z * sixth));
    let adj = next.t().mapv(|z| z.conj());
    next = (&next + &adj).mapv(|z| 0.5 * z);
    Ok(rho.with_elements(next))
}

/// `n_steps` RK4 steps covering `delta_s`.
pub fn evolve(
    rho: &DensityMatrix,
    h: Option<&MatrixOperator>,
    terms: &[CollapseTerm],
    delta_s: f64,
    n_steps: usize,
) -> Result<DensityMatrix> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
    }
    let ds = delta_s / n_steps as f64;
    let mut out = rho.clone();
    for _ in 0..n_steps {
        out = master_step(&out, h, terms, ds)?;
    }
    Ok(out)
}

const DIAGONAL_TOL: f64 = 1e-12;

/// Closed-form evolution for mutually commuting generators that are
/// diagonal on the density-matrix basis:
/// `rho_ij -> rho_ij exp(-ds sum_k (lambda_k/2)(a_ki - a_kj)^2) exp(-i ds (h_i - h_j))`.
pub fn decay_solution(
    rho: &DensityMatrix,
    h: Option<&MatrixOperator>,
    terms: &[CollapseTerm],
    delta_s: f64,
) -> Result<DensityMatrix> {
    check_dims(rho, h, terms)?;
    let ops: Vec<&MatrixOperator> = h.into_iter().chain(terms.iter().map(|t| &t.operator)).collect();
    for (k, a) in ops.iter().enumerate() {
        for b in &ops[k + 1..] {
            if !a.commutes_with(b, 1e-10) {
                return Err(Error::NonCommuting);
            }
        }
    }
    let diag = |op: &MatrixOperator| op.diagonal_values(DIAGONAL_TOL).ok_or(Error::NotDiagonal);
    let hd = h.map(diag).transpose()?;
    let ad = terms
        .iter()
        .map(|t| Ok((diag(&t.operator)?, t.lambda)))
        .collect::<Result<Vec<_>>>()?;
    let out = Array2::from_shape_fn((rho.dim(), rho.dim()), |(i, j)| {
        let rate: f64 = ad
            .iter()
            .map(|(a, l)| 0.5 * l * (a[i] - a[j]).powi(2))
            .sum();
        let phase = hd.as_ref().map_or(0.0, |h| -(h[i] - h[j]) * delta_s);
        rho.get(i, j) * Complex64::from_polar((-rate * delta_s).exp(), phase)
    });
    Ok(rho.with_elements(out))
}

/// Outcome of one of the two-particle configuration examples.
#[derive(Debug, Clone, Serialize)]
pub struct ExampleReport {
    pub name: String,
    /// Basis labels `x1,x2`.
    pub labels: Vec<String>,
    /// Eigenvalue of `x1 - x2` on the two branch states.
    pub separation_left: f64,
    pub separation_right: f64,
    pub diagonal_left: f64,
    pub diagonal_right: f64,
    /// `<left| rho(S/2) |right>` from the RK4 evolution.
    pub off_diagonal: [f64; 2],
    /// Predicted ratio of final to initial off-diagonal magnitude.
    pub predicted_factor: f64,
    /// Largest elementwise gap between the RK4 evolution and the closed form.
    pub integration_error: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
}

/// Two particles on the sites `sites`; basis `|x1, x2>` over all pairs.
fn pair_basis(sites: &[f64]) -> (Vec<String>, Vec<(f64, f64)>) {
    let mut labels = Vec::new();
    let mut coords = Vec::new();
    for &a in sites {
        for &b in sites {
            labels.push(format!("{a},{b}"));
            coords.push((a, b));
        }
    }
    (labels, coords)
}

fn run_example(
    name: &str,
    sites: &[f64],
    left: (f64, f64),
    right: (f64, f64),
    s_total: f64,
    lambda: f64,
) -> Result<ExampleReport> {
    if !(s_total.is_finite() && s_total >= 0.0 && lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "S and lambda must be non-negative, got S = {s_total}, lambda = {lambda}"
        )));
    }
    let (labels, coords) = pair_basis(sites);
    let find = |c: (f64, f64)| coords.iter().position(|&d| d == c).expect("site in basis");
    let (il, ir) = (find(left), find(right));
    let mut amps = vec![Complex64::new(0.0, 0.0); coords.len()];
    amps[il] += 1.0;
    amps[ir] += 1.0;
    let rho0 = DensityMatrix::from_pure(labels.clone(), &amps)?;
    let sq: Vec<f64> = coords.iter().map(|(a, b)| (a - b) * (a - b)).collect();
    let terms = [CollapseTerm::new(MatrixOperator::diagonal(&sq), lambda)];
    let closed = decay_solution(&rho0, None, &terms, s_total)?;
    let max_rate = sq
        .iter()
        .flat_map(|a| sq.iter().map(move |b| 0.5 * lambda * (a - b).powi(2)))
        .fold(0.0, f64::max);
    let n_steps = ((max_rate * s_total / 0.05).ceil() as usize).clamp(200, 200_000);
    let numeric = evolve(&rho0, None, &terms, s_total, n_steps)?;
    let off = numeric.get(il, ir);
    let gap = sq[il] - sq[ir];
    Ok(ExampleReport {
        name: name.into(),
        labels,
        separation_left: left.0 - left.1,
        separation_right: right.0 - right.1,
        diagonal_left: numeric.get(il, il).re,
        diagonal_right: numeric.get(ir, ir).re,
        off_diagonal: [off.re, off.im],
        predicted_factor: (-s_total * 0.5 * lambda * gap * gap).exp(),
        integration_error: numeric.max_abs_diff(&closed)?,
        trace: numeric.trace().re,
        min_eigenvalue: numeric.min_eigenvalue(),
    })
}

/// Both particles together at `L` or together at `R`: the two branches share
/// the separation eigenvalue 0, so the superposition survives.
pub fn example_no_collapse(l: f64, r: f64, s_total: f64, lambda: f64) -> Result<ExampleReport> {
    if l == r {
        return Err(Error::InvalidParameter("L and R must differ".into()));
    }
    run_example("no-collapse", &[l, r], (l, l), (r, r), s_total, lambda)
}

/// Particle 1 at `L` or `R` with particle 2 fixed at `C`: the branches differ
/// in squared separation and the off-diagonal element decays.
pub fn example_collapse(l: f64, c: f64, r: f64, s_total: f64, lambda: f64) -> Result<ExampleReport> {
    if l == r || l == c || r == c {
        return Err(Error::InvalidParameter("L, C and R must be distinct sites".into()));
    }
    if ((l - c).abs() - (r - c).abs()).abs() <= 1e-12 * (l - c).abs().max(1.0) {
        return Err(Error::DegenerateConfiguration);
    }
    run_example("collapse", &[l, c, r], (l, c), (r, c), s_total, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level(lambda: f64) -> (DensityMatrix, [CollapseTerm; 1]) {
        let rho = DensityMatrix::from_pure(
            vec!["a".into(), "b".into()],
            &[Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)],
        )
        .unwrap();
        (rho, [CollapseTerm::new(MatrixOperator::diagonal(&[1.0, 3.0]), lambda)])
    }

    #[test]
    fn zero_rates_leave_rho_unchanged() {
        let (rho, terms) = two_level(0.0);
        let out = master_step(&rho, None, &terms, 0.3).unwrap();
        assert!(out.max_abs_diff(&rho).unwrap() < 1e-15);
    }

    #[test]
    fn off_diagonal_decay_rate() {
        let (rho, terms) = two_level(0.7);
        let out = evolve(&rho, None, &terms, 1.5, 2000).unwrap();
        let ratio = out.get(0, 1).norm() / rho.get(0, 1).norm();
        let expected = (-1.5 * 0.35 * 4.0f64).exp();
        assert!((ratio - expected).abs() < 1e-8, "{ratio} vs {expected}");
        assert!((out.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_noncommuting_inputs_are_rejected() {
        assert_eq!(
            example_collapse(0.0, 1.0, 2.0, 1.0, 1.0).unwrap_err(),
            Error::DegenerateConfiguration
        );
        let (rho, _) = two_level(1.0);
        let mut m = Array2::zeros((2, 2));
        m[[0, 1]] = Complex64::new(1.0, 0.0);
        m[[1, 0]] = Complex64::new(1.0, 0.0);
        let x = CollapseTerm::new(MatrixOperator::new(m).unwrap(), 1.0);
        let z = CollapseTerm::new(MatrixOperator::diagonal(&[1.0, -1.0]), 1.0);
        assert_eq!(decay_solution(&rho, None, &[x.clone(), z], 1.0).unwrap_err(), Error::NonCommuting);
        assert_eq!(decay_solution(&rho, None, &[x], 1.0).unwrap_err(), Error::NotDiagonal);
    }
}
