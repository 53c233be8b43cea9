//! Per-slice 2D DFT with a centered (fft-shifted) frequency layout.
//!
//! The forward transform is unnormalized; the inverse carries the
//! `1 / (N_h * N_v)` factor. The adjoint helpers are the exact transposes
//! used by the gradient code, under the convention that the gradient of a
//! real loss with respect to a complex value `z` is `dL/dRe z + i dL/dIm z`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Index of the zero frequency along an axis of length `n`.
#[inline]
pub fn center(n: usize) -> usize {
    n / 2
}

/// Centered index of the frequency `-f` given the centered index of `f`.
#[inline]
pub fn mirror(c: usize, n: usize) -> usize {
    (2 * center(n) + n - c) % n
}

#[inline]
fn to_centered(u: usize, n: usize) -> usize {
    (u + center(n)) % n
}

/// Planned transforms for one slice geometry.
#[derive(Clone)]
pub struct SliceFft {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SliceFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SliceFft")
            .field("h", &self.h)
            .field("w", &self.w)
            .finish()
    }
}

impl SliceFft {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        SliceFft {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized 2D transform of a row-major buffer in natural order.
    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.h, self.w);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        for i in 0..h {
            for j in 0..w {
                t[j * h + i] = buf[i * w + j];
            }
        }
        col.process(&mut t);
        for i in 0..h {
            for j in 0..w {
                buf[i * w + j] = t[j * h + i];
            }
        }
    }

    fn shift(&self, natural: &[Complex64]) -> Array2<Complex64> {
        let (h, w) = (self.h, self.w);
        let mut out = Array2::zeros((h, w));
        for u in 0..h {
            let ci = to_centered(u, h);
            for v in 0..w {
                out[[ci, to_centered(v, w)]] = natural[u * w + v];
            }
        }
        out
    }

    fn unshift(&self, centered: ArrayView2<Complex64>) -> Vec<Complex64> {
        let (h, w) = (self.h, self.w);
        let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            let ci = to_centered(u, h);
            for v in 0..w {
                buf[u * w + v] = centered[[ci, to_centered(v, w)]];
            }
        }
        buf
    }

    /// Centered unnormalized spectrum of a real slice.
    pub fn forward_real(&self, slice: ArrayView2<f64>) -> Array2<Complex64> {
        let mut buf: Vec<Complex64> = slice.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, false);
        self.shift(&buf)
    }

    /// Normalized inverse of a centered spectrum; the result is complex.
    pub fn inverse_complex(&self, spectrum: ArrayView2<Complex64>) -> Array2<Complex64> {
        let mut buf = self.unshift(spectrum);
        self.transform(&mut buf, true);
        let scale = 1.0 / (self.h * self.w) as f64;
        Array2::from_shape_vec(
            (self.h, self.w),
            buf.into_iter().map(|z| z * scale).collect(),
        )
        .expect("buffer length matches slice shape")
    }

    /// Adjoint of [`forward_real`](Self::forward_real): maps a centered
    /// spectral gradient to the gradient on the real slice.
    pub fn forward_real_adjoint(&self, grad: ArrayView2<Complex64>, mut out: ArrayViewMut2<f64>) {
        let mut buf = self.unshift(grad);
        self.transform(&mut buf, true);
        for (o, z) in out.iter_mut().zip(buf) {
            *o += z.re;
        }
    }

    /// Adjoint of "real part of the normalized inverse": maps a gradient on
    /// the real slice to a centered spectral gradient.
    pub fn inverse_real_adjoint(&self, grad: ArrayView2<f64>) -> Array2<Complex64> {
        let mut buf: Vec<Complex64> = grad.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, false);
        let scale = 1.0 / (self.h * self.w) as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
        self.shift(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_is_involution() {
        for n in [8usize, 9, 16, 17] {
            for c in 0..n {
                assert_eq!(mirror(mirror(c, n), n), c);
            }
            assert_eq!(mirror(center(n), n), center(n));
        }
    }

    #[test]
    fn adjoints_match_inner_products() {
        let (h, w) = (8, 10);
        let fft = SliceFft::new(h, w);
        let x = Array2::from_shape_fn((h, w), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let g = Array2::from_shape_fn((h, w), |(i, j)| {
            Complex64::new(
                ((i + 2 * j) % 5) as f64 - 2.0,
                ((3 * i + j) % 7) as f64 - 3.0,
            )
        });
        // <F x, g>_R = <x, F^T g>
        let fx = fft.forward_real(x.view());
        let lhs: f64 = fx
            .iter()
            .zip(g.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        let mut adj = Array2::zeros((h, w));
        fft.forward_real_adjoint(g.view(), adj.view_mut());
        let rhs: f64 = x.iter().zip(adj.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));

        // <Re F^-1 s, y> = <s, adj(y)>_R
        let y = x.mapv(|v| v * 0.5 + 1.0);
        let inv = fft.inverse_complex(g.view());
        let lhs: f64 = inv.iter().zip(y.iter()).map(|(a, b)| a.re * b).sum();
        let adj = fft.inverse_real_adjoint(y.view());
        let rhs: f64 = g
            .iter()
            .zip(adj.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
