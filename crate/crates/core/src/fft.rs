//! Axis-wise lattice Fourier transforms.
//!
//! Evaluates `out_j = scale * sum_k in_k * exp(i * sign * u_j * v_k)` on
//! centred lattices `u_j = cu + (j - N/2) du`, `v_k = cv + (k - N/2) dv`
//! with `du * dv = 2 pi / N`. Expanding the product leaves an ordinary DFT
//! sandwiched between two diagonal phase vectors, so any lattice offsets
//! are handled exactly.

use std::cell::RefCell;
use std::f64::consts::PI;

use ndarray::{ArrayD, Axis};
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// One dual pair of centred lattices along a single axis.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisMap {
    pub n: usize,
    /// Output lattice centre and spacing.
    pub cu: f64,
    pub du: f64,
    /// Input lattice centre and spacing.
    pub cv: f64,
    pub dv: f64,
    /// +1 for `exp(+i u v)`, -1 for `exp(-i u v)`.
    pub sign: f64,
    pub scale: f64,
}

impl AxisMap {
    fn phases(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.n;
        let h = (n / 2) as f64;
        let s = self.sign;
        let global = Complex64::from_polar(self.scale, s * (self.cu * self.cv + PI * h));
        let alt = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let pre = (0..n)
            .map(|k| {
                let v_off = (k as f64 - h) * self.dv;
                Complex64::from_polar(alt(k), s * self.cu * v_off)
            })
            .collect();
        let post = (0..n)
            .map(|j| {
                let u_off = (j as f64 - h) * self.du;
                global * Complex64::from_polar(alt(j), s * u_off * self.cv)
            })
            .collect();
        (pre, post)
    }
}

pub(crate) fn transform_axis(data: &mut ArrayD<Complex64>, axis: usize, map: &AxisMap) {
    let n = map.n;
    debug_assert_eq!(data.shape()[axis], n);
    let direction = if map.sign > 0.0 {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction));
    let (pre, post) = map.phases();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for mut lane in data.lanes_mut(Axis(axis)) {
        for ((b, x), p) in buf.iter_mut().zip(lane.iter()).zip(&pre) {
            *b = x * p;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for ((x, b), p) in lane.iter_mut().zip(&buf).zip(&post) {
            *x = b * p;
        }
    }
}
