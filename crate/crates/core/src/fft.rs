//! Unitary 3D FFT over `ndarray` cubes, one axis at a time.

use std::sync::Arc;

use ndarray::{Array3, Axis as NdAxis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Plans for a fixed cube shape. Both directions carry `1/√N`, so the pair is
/// unitary and Parseval holds without extra factors.
pub struct Fft3 {
    shape: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
    scale: f64,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("shape", &self.shape).finish()
    }
}

impl Fft3 {
    pub fn new(shape: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.map(|n| planner.plan_fft_forward(n));
        let inverse = shape.map(|n| planner.plan_fft_inverse(n));
        let n: usize = shape.iter().product();
        Self {
            shape,
            forward,
            inverse,
            scale: 1.0 / (n as f64).sqrt(),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn process(&self, data: &mut Array3<Complex64>, dir: Direction) {
        assert_eq!(data.shape(), &self.shape[..], "FFT plan shape mismatch");
        let plans = match dir {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        };
        for (ax, plan) in plans.iter().enumerate() {
            if self.shape[ax] == 1 {
                continue;
            }
            let mut buf = vec![Complex64::new(0.0, 0.0); self.shape[ax]];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            for mut lane in data.lanes_mut(NdAxis(ax)) {
                if let Some(s) = lane.as_slice_mut() {
                    plan.process_with_scratch(s, &mut scratch);
                } else {
                    for (b, v) in buf.iter_mut().zip(lane.iter()) {
                        *b = *v;
                    }
                    plan.process_with_scratch(&mut buf, &mut scratch);
                    for (v, b) in lane.iter_mut().zip(buf.iter()) {
                        *v = *b;
                    }
                }
            }
        }
        let s = self.scale;
        data.mapv_inplace(|v| v * s);
    }
}

/// Integer frequency index of FFT bin `i` in wrapped order.
pub fn wrapped_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Linear self-convolution `Σ_m a[m]·a[k − m]` of a real cube, output shape
/// `2n − 1` per axis (index `k` ↔ coordinate `2·offset + k·spacing`).
pub fn self_convolve(a: &Array3<f64>) -> Array3<f64> {
    let (n0, n1, n2) = a.dim();
    let out = [2 * n0 - 1, 2 * n1 - 1, 2 * n2 - 1];
    let fft = Fft3::new(out);
    let mut buf = Array3::from_elem(out, Complex64::new(0.0, 0.0));
    for ((i, j, k), &v) in a.indexed_iter() {
        buf[[i, j, k]] = Complex64::new(v, 0.0);
    }
    fft.process(&mut buf, Direction::Forward);
    // unitary pair: conv = √N · IFFT(FFT(a)²)
    let root_n = ((out[0] * out[1] * out[2]) as f64).sqrt();
    buf.mapv_inplace(|z| z * z * root_n);
    fft.process(&mut buf, Direction::Inverse);
    buf.mapv(|z| z.re)
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_and_parseval(seed in any::<u64>(), e in (1usize..4, 1usize..4, 1usize..5)) {
            let shape = [1 << e.0, 1 << e.1, 1 << e.2];
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Array3::from_shape_fn(shape, |_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let fft = Fft3::new(shape);
            let mut b = a.clone();
            fft.process(&mut b, Direction::Forward);
            let (ea, eb): (f64, f64) = (a.iter().map(|c| c.norm_sqr()).sum(), b.iter().map(|c| c.norm_sqr()).sum());
            prop_assert!((ea - eb).abs() <= 1e-10 * ea);
            fft.process(&mut b, Direction::Inverse);
            prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).norm() < 1e-12));
        }

        #[test]
        fn self_convolution_matches_direct_sum(vals in prop::collection::vec(0.0..1.0f64, 4 * 4 * 4)) {
            let a = Array3::from_shape_vec((4, 4, 4), vals).unwrap();
            let c = self_convolve(&a);
            prop_assert_eq!(c.dim(), (7, 7, 7));
            for (k, v) in c.indexed_iter() {
                let mut s = 0.0;
                for (m, x) in a.indexed_iter() {
                    let (i, j, l) = (k.0 as i64 - m.0 as i64, k.1 as i64 - m.1 as i64, k.2 as i64 - m.2 as i64);
                    if (0..4).contains(&i) && (0..4).contains(&j) && (0..4).contains(&l) {
                        s += x * a[[i as usize, j as usize, l as usize]];
                    }
                }
                prop_assert!((v - s).abs() <= 1e-10 * s.max(1.0), "{k:?}: {v} vs {s}");
            }
        }
    }
}
