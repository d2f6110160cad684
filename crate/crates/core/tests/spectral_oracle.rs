//! Spectral pooling against an FFT reference: forward DFT, keep the centred
//! half-size band of frequencies, inverse DFT at the reduced size.

mod common;

use btunet::kernels::spectral_pool;
use btunet::{Shape, Tensor};
use common::{random_tensor, rng};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn band(len: usize) -> Vec<i64> {
    let m = (len / 2) as i64;
    (-(m / 2)..(m - m / 2)).collect()
}

fn reference(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (h, w) = (s.h(), s.w());
    let (mh, mw) = (h / 2, w / 2);
    let mut planner = FftPlanner::<f64>::new();
    let (fh, fw) = (planner.plan_fft_forward(h), planner.plan_fft_forward(w));
    let (ih, iw) = (planner.plan_fft_inverse(mh), planner.plan_fft_inverse(mw));
    let mut out = Tensor::zeros(Shape::new(s.n(), mh, mw, s.c()));
    for n in 0..s.n() {
        for c in 0..s.c() {
            let mut grid: Vec<Vec<Complex64>> = (0..h)
                .map(|y| (0..w).map(|xx| Complex64::new(x.at(n, y, xx, c), 0.0)).collect())
                .collect();
            for row in &mut grid {
                fw.process(row);
            }
            for xx in 0..w {
                let mut col: Vec<Complex64> = (0..h).map(|y| grid[y][xx]).collect();
                fh.process(&mut col);
                for y in 0..h {
                    grid[y][xx] = col[y];
                }
            }
            // Crop the centred band into reduced-size spectrum order.
            let mut small = vec![vec![Complex64::new(0.0, 0.0); mw]; mh];
            for &ky in &band(h) {
                for &kx in &band(w) {
                    let src = grid[ky.rem_euclid(h as i64) as usize][kx.rem_euclid(w as i64) as usize];
                    small[ky.rem_euclid(mh as i64) as usize][kx.rem_euclid(mw as i64) as usize] = src;
                }
            }
            for row in &mut small {
                iw.process(row);
            }
            for xx in 0..mw {
                let mut col: Vec<Complex64> = (0..mh).map(|y| small[y][xx]).collect();
                ih.process(&mut col);
                for y in 0..mh {
                    small[y][xx] = col[y];
                }
            }
            let scale = 1.0 / (h * w) as f64;
            for y in 0..mh {
                for xx in 0..mw {
                    let i = ((n * mh + y) * mw + xx) * s.c() + c;
                    out.data_mut()[i] = small[y][xx].re * scale;
                }
            }
        }
    }
    out
}

#[test]
fn matches_fft_reference() {
    let mut r = rng(21);
    for shape in [
        Shape::new(1, 2, 2, 1),
        Shape::new(2, 4, 4, 3),
        Shape::new(1, 6, 10, 2),
        Shape::new(1, 8, 8, 1),
        Shape::new(1, 16, 12, 2),
    ] {
        let x = random_tensor(shape, &mut r, 1.0);
        let got = spectral_pool(&x);
        let want = reference(&x);
        assert_eq!(got.shape(), want.shape());
        let err = got.max_abs_diff(&want);
        assert!(err < 1e-12, "{shape}: max abs diff {err}");
    }
}

#[test]
fn f32_agrees_with_f64() {
    let mut r = rng(22);
    let x = random_tensor(Shape::new(1, 8, 8, 2), &mut r, 1.0);
    let a = spectral_pool(&x);
    let b = spectral_pool(&x.cast::<f32>()).cast::<f64>();
    assert!(a.max_abs_diff(&b) < 1e-5);
}
