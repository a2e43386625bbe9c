//! Multi-dimensional complex FFT over row-major 3-axis buffers (unit axes skipped).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest length `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Forward/inverse plans for a fixed 3-axis shape.
pub struct NdFft {
    shape: [usize; 3],
    forward: [Option<Arc<dyn Fft<f64>>>; 3],
    inverse: [Option<Arc<dyn Fft<f64>>>; 3],
}

impl NdFft {
    pub fn new(shape: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = std::array::from_fn(|a| (shape[a] > 1).then(|| planner.plan_fft_forward(shape[a])));
        let inverse = std::array::from_fn(|a| (shape[a] > 1).then(|| planner.plan_fft_inverse(shape[a])));
        NdFft { shape, forward, inverse }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    /// In-place unnormalized transform.
    pub fn process(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.len());
        let plans = if inverse { &self.inverse } else { &self.forward };
        let [n0, n1, n2] = self.shape;
        let mut tmp = vec![Complex64::default(); data.len()];
        for (axis, plan) in plans.iter().enumerate() {
            let Some(plan) = plan else { continue };
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            match axis {
                2 => plan.process_with_scratch(data, &mut scratch),
                1 => {
                    // lines along axis 1: gather as (i0, i2, i1)
                    for i0 in 0..n0 {
                        for i1 in 0..n1 {
                            for i2 in 0..n2 {
                                tmp[(i0 * n2 + i2) * n1 + i1] = data[(i0 * n1 + i1) * n2 + i2];
                            }
                        }
                    }
                    plan.process_with_scratch(&mut tmp, &mut scratch);
                    for i0 in 0..n0 {
                        for i1 in 0..n1 {
                            for i2 in 0..n2 {
                                data[(i0 * n1 + i1) * n2 + i2] = tmp[(i0 * n2 + i2) * n1 + i1];
                            }
                        }
                    }
                }
                _ => {
                    let plane = n1 * n2;
                    for i0 in 0..n0 {
                        for j in 0..plane {
                            tmp[j * n0 + i0] = data[i0 * plane + j];
                        }
                    }
                    plan.process_with_scratch(&mut tmp, &mut scratch);
                    for i0 in 0..n0 {
                        for j in 0..plane {
                            data[i0 * plane + j] = tmp[j * n0 + i0];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_lengths() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(7), 8);
        assert_eq!(next_fast_len(46), 48);
        assert_eq!(next_fast_len(97), 100);
        assert_eq!(next_fast_len(127), 128);
    }

    #[test]
    fn matches_naive_dft() {
        let shape = [3, 4, 5];
        let n: usize = shape.iter().product();
        let input: Vec<Complex64> =
            (0..n).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let mut fast = input.clone();
        NdFft::new(shape).process(&mut fast, false);
        for k0 in 0..3 {
            for k1 in 0..4 {
                for k2 in 0..5 {
                    let mut acc = Complex64::default();
                    for x0 in 0..3 {
                        for x1 in 0..4 {
                            for x2 in 0..5 {
                                let phase = -2.0
                                    * std::f64::consts::PI
                                    * ((k0 * x0) as f64 / 3.0 + (k1 * x1) as f64 / 4.0 + (k2 * x2) as f64 / 5.0);
                                acc += input[(x0 * 4 + x1) * 5 + x2] * Complex64::from_polar(1.0, phase);
                            }
                        }
                    }
                    assert!((acc - fast[(k0 * 4 + k1) * 5 + k2]).norm() < 1e-12);
                }
            }
        }
        let mut back = fast;
        NdFft::new(shape).process(&mut back, true);
        for (a, b) in back.iter().zip(&input) {
            assert!((a / n as f64 - b).norm() < 1e-14);
        }
    }
}
