//! Second-order finite differences, their exact adjoints, soft thresholding
//! and the periodic closed-form data solve used by the classic
//! split-Bregman reference.
//!
//! Axis indices follow the volume layout: 0 = z, 1 = y, 2 = x.

use ndarray::{Array3, Axis, Zip};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Smallest axis length for which second derivatives along it are kept.
pub const MIN_DERIVATIVE_EXTENT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Xx,
    Yy,
    Zz,
    Xy,
    Xz,
    Yz,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Xx,
        Direction::Yy,
        Direction::Zz,
        Direction::Xy,
        Direction::Xz,
        Direction::Yz,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Direction::Xx => "xx",
            Direction::Yy => "yy",
            Direction::Zz => "zz",
            Direction::Xy => "xy",
            Direction::Xz => "xz",
            Direction::Yz => "yz",
        }
    }

    /// The two axes differentiated, equal for pure terms.
    pub fn axes(self) -> (usize, usize) {
        match self {
            Direction::Xx => (2, 2),
            Direction::Yy => (1, 1),
            Direction::Zz => (0, 0),
            Direction::Xy => (2, 1),
            Direction::Xz => (2, 0),
            Direction::Yz => (1, 0),
        }
    }

    pub fn touches_z(self) -> bool {
        let (a, b) = self.axes();
        a == 0 || b == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Half-sample symmetric extension: `v[-1] = v[0]`, `v[n] = v[n-1]`.
    #[default]
    Reflective,
    Periodic,
}

/// Coupling weights of the six directions and which of them are in use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianDirections {
    pub weights: [f64; 6],
    pub enabled: [bool; 6],
}

impl HessianDirections {
    /// Weights `(λx, λy, λz, 2√(λxλy), 2√(λxλz), 2√(λyλz))`. Terms along z
    /// are disabled when the volume has fewer than three slices.
    pub fn new(lambda_x: f64, lambda_y: f64, lambda_z: f64, n_slices: usize) -> Self {
        let weights = [
            lambda_x,
            lambda_y,
            lambda_z,
            2.0 * (lambda_x * lambda_y).sqrt(),
            2.0 * (lambda_x * lambda_z).sqrt(),
            2.0 * (lambda_y * lambda_z).sqrt(),
        ];
        let z_ok = n_slices >= MIN_DERIVATIVE_EXTENT;
        let enabled = Direction::ALL.map(|d| z_ok || !d.touches_z());
        HessianDirections { weights, enabled }
    }

    pub fn from_config(cfg: &crate::config::RunConfig, n_slices: usize) -> Self {
        Self::new(cfg.lambda_x, cfg.lambda_y, cfg.lambda_z, n_slices)
    }

    /// Enabled directions with their weights, in canonical order.
    pub fn active(&self) -> impl Iterator<Item = (usize, Direction, f64)> + '_ {
        Direction::ALL
            .into_iter()
            .enumerate()
            .filter(|(i, _)| self.enabled[*i])
            .map(|(i, d)| (i, d, self.weights[i]))
    }

    pub fn disabled_labels(&self) -> Vec<&'static str> {
        Direction::ALL
            .into_iter()
            .zip(self.enabled)
            .filter(|(_, e)| !e)
            .map(|(d, _)| d.label())
            .collect()
    }
}

/// Forward difference along `axis`. The last sample is zero under the
/// reflective boundary and wraps under the periodic one.
fn forward_diff(v: &Array3<f64>, axis: usize, b: Boundary) -> Array3<f64> {
    let n = v.len_of(Axis(axis));
    let mut out = Array3::zeros(v.raw_dim());
    if n < 2 {
        return out;
    }
    let ax = Axis(axis);
    Zip::from(out.slice_axis_mut(ax, (..n - 1).into()))
        .and(v.slice_axis(ax, (1..).into()))
        .and(v.slice_axis(ax, (..n - 1).into()))
        .for_each(|o, &hi, &lo| *o = hi - lo);
    if b == Boundary::Periodic {
        Zip::from(out.slice_axis_mut(ax, (n - 1..).into()))
            .and(v.slice_axis(ax, (..1).into()))
            .and(v.slice_axis(ax, (n - 1..).into()))
            .for_each(|o, &first, &last| *o = first - last);
    }
    out
}

/// Exact transpose of [`forward_diff`].
fn forward_diff_t(w: &Array3<f64>, axis: usize, b: Boundary) -> Array3<f64> {
    let n = w.len_of(Axis(axis));
    let mut out = Array3::zeros(w.raw_dim());
    if n < 2 {
        return out;
    }
    let ax = Axis(axis);
    let last = if b == Boundary::Periodic { n } else { n - 1 };
    Zip::from(out.slice_axis_mut(ax, (..last).into()))
        .and(w.slice_axis(ax, (..last).into()))
        .for_each(|o, &x| *o -= x);
    Zip::from(out.slice_axis_mut(ax, (1..).into()))
        .and(w.slice_axis(ax, (..n - 1).into()))
        .for_each(|o, &x| *o += x);
    if b == Boundary::Periodic {
        Zip::from(out.slice_axis_mut(ax, (..1).into()))
            .and(w.slice_axis(ax, (n - 1..).into()))
            .for_each(|o, &x| *o += x);
    }
    out
}

/// `[1, -2, 1]` along `axis`. Symmetric under both boundaries.
fn pure_second(v: &Array3<f64>, axis: usize, b: Boundary) -> Array3<f64> {
    let n = v.len_of(Axis(axis));
    let mut out = v.mapv(|x| -2.0 * x);
    let ax = Axis(axis);
    if n < 2 {
        out.fill(0.0);
        return out;
    }
    Zip::from(out.slice_axis_mut(ax, (..n - 1).into()))
        .and(v.slice_axis(ax, (1..).into()))
        .for_each(|o, &x| *o += x);
    Zip::from(out.slice_axis_mut(ax, (1..).into()))
        .and(v.slice_axis(ax, (..n - 1).into()))
        .for_each(|o, &x| *o += x);
    let (lo, hi) = match b {
        Boundary::Reflective => ((..1).into(), (n - 1..).into()),
        Boundary::Periodic => ((n - 1..).into(), (..1).into()),
    };
    Zip::from(out.slice_axis_mut(ax, (..1).into()))
        .and(v.slice_axis(ax, lo))
        .for_each(|o, &x| *o += x);
    Zip::from(out.slice_axis_mut(ax, (n - 1..).into()))
        .and(v.slice_axis(ax, hi))
        .for_each(|o, &x| *o += x);
    out
}

/// Second partial derivative of `v` in direction `dir`.
pub fn second_derivative(v: &Array3<f64>, dir: Direction, b: Boundary) -> Array3<f64> {
    let (a0, a1) = dir.axes();
    if a0 == a1 {
        pure_second(v, a0, b)
    } else {
        forward_diff(&forward_diff(v, a1, b), a0, b)
    }
}

/// Exact adjoint of [`second_derivative`].
pub fn second_derivative_adjoint(u: &Array3<f64>, dir: Direction, b: Boundary) -> Array3<f64> {
    let (a0, a1) = dir.axes();
    if a0 == a1 {
        pure_second(u, a0, b)
    } else {
        forward_diff_t(&forward_diff_t(u, a0, b), a1, b)
    }
}

/// Soft threshold `sign(v) max(|v| - t, 0)`.
#[inline]
pub fn shrink(v: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub fn shrink_volume(v: &Array3<f64>, t: f64) -> Array3<f64> {
    v.mapv(|x| shrink(x, t))
}

/// Split and Bregman variables, one grid per direction (zeros for disabled
/// directions).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub z: Vec<Array3<f64>>,
    pub b: Vec<Array3<f64>>,
}

impl SplitState {
    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        SplitState {
            z: (0..6).map(|_| Array3::zeros(shape)).collect(),
            b: (0..6).map(|_| Array3::zeros(shape)).collect(),
        }
    }
}

/// `Σ_i D_iᵀ (Z_i - B_i)` over enabled directions.
pub fn feedback_image(dirs: &HessianDirections, st: &SplitState, b: Boundary) -> Array3<f64> {
    let mut out = Array3::zeros(st.z[0].raw_dim());
    for (i, d, _) in dirs.active() {
        out += &second_derivative_adjoint(&(&st.z[i] - &st.b[i]), d, b);
    }
    out
}

/// Shrinkage and Bregman steps for a fixed `x`. Returns the pre-threshold
/// arguments `T_i = λ_i D_i x + B_i` alongside the new state.
pub fn prior_bregman_update(
    dirs: &HessianDirections,
    x: &Array3<f64>,
    st: &SplitState,
    threshold: f64,
    b: Boundary,
) -> (SplitState, Vec<Array3<f64>>) {
    let mut next = SplitState::zeros(x.dim());
    let mut args = vec![Array3::zeros(x.dim()); 6];
    for (i, d, lambda) in dirs.active() {
        let mut t = second_derivative(x, d, b);
        t.zip_mut_with(&st.b[i], |a, &bb| *a = lambda * *a + bb);
        next.z[i] = shrink_volume(&t, threshold);
        next.b[i] = &t - &next.z[i];
        args[i] = t;
    }
    (next, args)
}

/// `Z_i = shrink(λ_i D_i x + B_i, t)` for every enabled direction.
pub fn prior_update(
    dirs: &HessianDirections,
    x: &Array3<f64>,
    st: &SplitState,
    threshold: f64,
    b: Boundary,
) -> Vec<Array3<f64>> {
    prior_bregman_update(dirs, x, st, threshold, b).0.z
}

/// `B_i + λ_i D_i x - Z_i` for every enabled direction, with `z` the freshly
/// updated split variables.
pub fn bregman_update(
    dirs: &HessianDirections,
    x: &Array3<f64>,
    b_old: &[Array3<f64>],
    z: &[Array3<f64>],
    b: Boundary,
) -> Vec<Array3<f64>> {
    let mut out = vec![Array3::zeros(x.dim()); 6];
    for (i, d, lambda) in dirs.active() {
        let mut t = second_derivative(x, d, b);
        Zip::from(&mut t)
            .and(&b_old[i])
            .and(&z[i])
            .for_each(|v, &bo, &zz| *v = bo + lambda * *v - zz);
        out[i] = t;
    }
    out
}

/// `Σ_i ||Z_i - λ_i D_i x - B_i||` (Frobenius norms, summed).
pub fn split_residual(
    dirs: &HessianDirections,
    x: &Array3<f64>,
    st: &SplitState,
    b: Boundary,
) -> f64 {
    dirs.active()
        .map(|(i, d, lambda)| {
            let dx = second_derivative(x, d, b);
            Zip::from(&st.z[i])
                .and(&dx)
                .and(&st.b[i])
                .fold(0.0, |acc, &z, &g, &bb| acc + (z - lambda * g - bb).powi(2))
                .sqrt()
        })
        .sum()
}

/// `||Y - X||² + α Σ_i ||λ_i D_i X||₁`.
pub fn hessian_objective(
    y: &Array3<f64>,
    x: &Array3<f64>,
    dirs: &HessianDirections,
    alpha: f64,
    b: Boundary,
) -> f64 {
    let fidelity: f64 = Zip::from(y)
        .and(x)
        .fold(0.0, |acc, &a, &c| acc + (a - c).powi(2));
    let prior: f64 = dirs
        .active()
        .map(|(_, d, lambda)| {
            second_derivative(x, d, b)
                .iter()
                .map(|v| (lambda * v).abs())
                .sum::<f64>()
        })
        .sum();
    fidelity + alpha * prior
}

/// In-place unnormalized 3D DFT in natural (unshifted) order.
fn fft3(buf: &mut Array3<Complex64>, inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        let n = buf.len_of(Axis(axis));
        if n < 2 {
            continue;
        }
        let plan = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for mut lane in buf.lanes_mut(Axis(axis)) {
            for (l, v) in line.iter_mut().zip(lane.iter()) {
                *l = *v;
            }
            plan.process(&mut line);
            for (v, l) in lane.iter_mut().zip(&line) {
                *v = *l;
            }
        }
    }
}

/// Transfer function of one periodic direction at DFT indices `(kz, ky, kx)`.
fn periodic_symbol(dir: Direction, freq: [usize; 3], dims: [usize; 3]) -> Complex64 {
    let e = |axis: usize| {
        let w = 2.0 * std::f64::consts::PI * freq[axis] as f64 / dims[axis] as f64;
        Complex64::new(w.cos(), w.sin())
    };
    let one = Complex64::new(1.0, 0.0);
    let (a0, a1) = dir.axes();
    if a0 == a1 {
        let z = e(a0);
        z + z.conj() - 2.0
    } else {
        (e(a0) - one) * (e(a1) - one)
    }
}

/// Exact minimizer of `||Y - X||² + (μ/2) Σ_i ||Z_i - λ_i D_i X - B_i||²`
/// under periodic boundaries, via the diagonalized normal equations
/// `(2 + μ Σ λ_i² D_iᵀD_i) X = 2Y + μ Σ λ_i D_iᵀ (Z_i - B_i)`.
pub fn classic_data_update(
    y: &Array3<f64>,
    dirs: &HessianDirections,
    st: &SplitState,
    mu: f64,
) -> Array3<f64> {
    let mut rhs = y.mapv(|v| 2.0 * v);
    for (i, d, lambda) in dirs.active() {
        let adj = second_derivative_adjoint(&(&st.z[i] - &st.b[i]), d, Boundary::Periodic);
        rhs.scaled_add(mu * lambda, &adj);
    }
    let (nd, nh, nw) = y.dim();
    let dims = [nd, nh, nw];
    let mut buf = rhs.mapv(|v| Complex64::new(v, 0.0));
    fft3(&mut buf, false);
    for ((kz, ky, kx), v) in buf.indexed_iter_mut() {
        let mut denom = 2.0;
        for (_, d, lambda) in dirs.active() {
            denom += mu * lambda * lambda * periodic_symbol(d, [kz, ky, kx], dims).norm_sqr();
        }
        *v /= denom;
    }
    fft3(&mut buf, true);
    let n = (nd * nh * nw) as f64;
    buf.mapv(|v| v.re / n)
}

/// Residual `max |A X - rhs|` of the periodic normal equations.
pub fn classic_normal_residual(
    y: &Array3<f64>,
    x: &Array3<f64>,
    dirs: &HessianDirections,
    st: &SplitState,
    mu: f64,
) -> f64 {
    let mut lhs = x.mapv(|v| 2.0 * v);
    let mut rhs = y.mapv(|v| 2.0 * v);
    for (i, d, lambda) in dirs.active() {
        let dx = second_derivative(x, d, Boundary::Periodic);
        lhs.scaled_add(
            mu * lambda * lambda,
            &second_derivative_adjoint(&dx, d, Boundary::Periodic),
        );
        rhs.scaled_add(
            mu * lambda,
            &second_derivative_adjoint(&(&st.z[i] - &st.b[i]), d, Boundary::Periodic),
        );
    }
    Zip::from(&lhs)
        .and(&rhs)
        .fold(0.0f64, |m, &a, &b| m.max((a - b).abs()))
}

/// Per-iteration record of the classic loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicIteration {
    pub iteration: usize,
    pub objective: f64,
    pub split_residual: f64,
}

/// Plain split-Bregman iterations with the exact periodic data solve.
pub fn classic_split_bregman(
    y: &Array3<f64>,
    dirs: &HessianDirections,
    mu: f64,
    alpha: f64,
    iterations: usize,
) -> (Array3<f64>, Vec<ClassicIteration>) {
    let mut st = SplitState::zeros(y.dim());
    let mut x = y.clone();
    let mut log = Vec::with_capacity(iterations);
    for k in 0..iterations {
        x = classic_data_update(y, dirs, &st, mu);
        st = prior_bregman_update(dirs, &x, &st, alpha / mu, Boundary::Periodic).0;
        log.push(ClassicIteration {
            iteration: k + 1,
            objective: hessian_objective(y, &x, dirs, alpha, Boundary::Periodic),
            split_residual: split_residual(dirs, &x, &st, Boundary::Periodic),
        });
    }
    (x, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    fn dot(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        Zip::from(a).and(b).fold(0.0, |s, &x, &y| s + x * y)
    }

    #[test]
    fn constant_volume_has_zero_derivatives() {
        let v = Array3::from_elem((4, 9, 10), 3.5);
        for b in [Boundary::Reflective, Boundary::Periodic] {
            for d in Direction::ALL {
                assert!(
                    second_derivative(&v, d, b).iter().all(|x| x.abs() < 1e-12),
                    "{d:?}"
                );
            }
        }
    }

    #[test]
    fn quadratic_has_constant_second_derivative() {
        let v = Array3::from_shape_fn((3, 8, 12), |(_, _, x)| (x as f64).powi(2));
        let d = second_derivative(&v, Direction::Xx, Boundary::Reflective);
        for ((_, _, x), val) in d.indexed_iter() {
            if x > 0 && x < 11 {
                assert!((val - 2.0).abs() < 1e-12);
            }
        }
        let mixed = second_derivative(&v, Direction::Xy, Boundary::Reflective);
        assert!(mixed.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn bilinear_has_unit_mixed_derivative() {
        let v = Array3::from_shape_fn((4, 8, 8), |(z, y, x)| (x * y) as f64 + (z * x) as f64 * 2.0);
        let xy = second_derivative(&v, Direction::Xy, Boundary::Reflective);
        let xz = second_derivative(&v, Direction::Xz, Boundary::Reflective);
        assert_eq!(xy[[1, 3, 3]], 1.0);
        assert_eq!(xz[[1, 3, 3]], 2.0);
    }

    #[test]
    fn adjoints_pass_inner_product_test() {
        for b in [Boundary::Reflective, Boundary::Periodic] {
            for (n, d) in Direction::ALL.into_iter().enumerate() {
                let v = random((8, 16, 16), 2 * n as u64);
                let u = random((8, 16, 16), 2 * n as u64 + 1);
                let lhs = dot(&second_derivative(&v, d, b), &u);
                let rhs = dot(&v, &second_derivative_adjoint(&u, d, b));
                assert!((lhs - rhs).abs() < 1e-10, "{d:?} {b:?}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn weights_and_z_disabling() {
        let h = HessianDirections::new(1.0, 4.0, 9.0, 5);
        assert_eq!(h.weights, [1.0, 4.0, 9.0, 4.0, 6.0, 12.0]);
        assert!(h.enabled.iter().all(|&e| e));
        let flat = HessianDirections::new(1.0, 1.0, 0.1, 2);
        assert_eq!(flat.disabled_labels(), vec!["zz", "xz", "yz"]);
        assert_eq!(flat.active().count(), 3);
    }

    #[test]
    fn shrink_examples() {
        assert_eq!(shrink(2.0, 0.5), 1.5);
        assert_eq!(shrink(-0.3, 0.5), 0.0);
        assert_eq!(shrink(-0.7, 0.0), -0.7);
        assert_eq!(shrink(1.25, 0.0), 1.25);
    }

    #[test]
    fn prior_update_examples() {
        let dirs = HessianDirections::new(1.0, 1.0, 0.1, 4);
        let x = Array3::from_elem((4, 8, 8), 0.7);
        let st = SplitState::zeros((4, 8, 8));
        assert!(prior_update(&dirs, &x, &st, 0.1, Boundary::Reflective)
            .iter()
            .all(|z| z.iter().all(|&v| v == 0.0)));

        let x = random((4, 8, 8), 5);
        let mut st = SplitState::zeros((4, 8, 8));
        st.b = (0..6).map(|i| random((4, 8, 8), 10 + i)).collect();
        let z = prior_update(&dirs, &x, &st, 0.0, Boundary::Reflective);
        for (i, d, l) in dirs.active() {
            let expect = second_derivative(&x, d, Boundary::Reflective).mapv(|v| v * l) + &st.b[i];
            assert_eq!(z[i], expect);
        }
        // A zero threshold absorbs the whole residual, so B resets to zero.
        let b_new = bregman_update(&dirs, &x, &st.b, &z, Boundary::Reflective);
        assert!(b_new.iter().all(|b| b.iter().all(|v| v.abs() < 1e-12)));
        // Z matching λDX exactly leaves B unchanged.
        let exact: Vec<Array3<f64>> = Direction::ALL
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                second_derivative(&x, d, Boundary::Reflective).mapv(|v| v * dirs.weights[i])
            })
            .collect();
        let b_same = bregman_update(&dirs, &x, &st.b, &exact, Boundary::Reflective);
        for i in 0..6 {
            assert!(Zip::from(&b_same[i])
                .and(&st.b[i])
                .all(|a, b| (a - b).abs() < 1e-12));
        }

        let zero = vec![Array3::zeros((4, 8, 8)); 6];
        let from_zero = bregman_update(&dirs, &x, &zero, &zero, Boundary::Reflective);
        for (i, d, l) in dirs.active() {
            assert_eq!(
                from_zero[i],
                second_derivative(&x, d, Boundary::Reflective).mapv(|v| l * v)
            );
        }
    }

    #[test]
    fn one_dimensional_oracle() {
        // Five voxels along x; only the xx term matters.
        let x = Array3::from_shape_vec((1, 1, 5), vec![0.0, 1.0, 4.0, 2.0, 2.0]).unwrap();
        let dirs = HessianDirections::new(2.0, 1.0, 1.0, 1);
        let mut st = SplitState::zeros((1, 1, 5));
        st.b[0] = Array3::from_shape_vec((1, 1, 5), vec![0.5, -0.5, 0.0, 1.0, 0.0]).unwrap();
        let t = 1.0;
        // xx stencil with reflective ends: [1, 2, -5, 2, 0].
        let dxx = [1.0, 2.0, -5.0, 2.0, 0.0];
        let (next, _) = prior_bregman_update(&dirs, &x, &st, t, Boundary::Reflective);
        for n in 0..5 {
            let arg = 2.0 * dxx[n] + st.b[0][[0, 0, n]];
            let z = if arg.abs() <= t {
                0.0
            } else {
                arg - t * arg.signum()
            };
            assert_eq!(next.z[0][[0, 0, n]], z);
            assert_eq!(next.b[0][[0, 0, n]], arg - z);
        }
    }

    #[test]
    fn bregman_fixed_point_is_stationary() {
        let dirs = HessianDirections::new(1.0, 1.0, 0.1, 4);
        let x = random((4, 8, 8), 21);
        let t = 0.3;
        let mut st = SplitState::zeros(x.dim());
        // B = t sign(λDX) makes shrink(λDX + B) = λDX, hence B' = B.
        for (i, d, l) in dirs.active() {
            st.b[i] = second_derivative(&x, d, Boundary::Reflective).mapv(|v| t * (l * v).signum());
        }
        let (once, _) = prior_bregman_update(&dirs, &x, &st, t, Boundary::Reflective);
        let (twice, _) = prior_bregman_update(&dirs, &x, &once, t, Boundary::Reflective);
        for i in 0..6 {
            assert!(Zip::from(&once.b[i])
                .and(&st.b[i])
                .all(|a, b| (a - b).abs() < 1e-12));
            assert!(Zip::from(&once.z[i])
                .and(&twice.z[i])
                .all(|a, b| (a - b).abs() < 1e-12));
            assert!(Zip::from(&once.b[i])
                .and(&twice.b[i])
                .all(|a, b| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn classic_solve_satisfies_normal_equations() {
        let dirs = HessianDirections::new(1.0, 1.0, 0.5, 4);
        let y = random((4, 8, 10), 30);
        let mut st = SplitState::zeros(y.dim());
        for i in 0..6 {
            st.z[i] = random(y.dim(), 40 + i as u64);
            st.b[i] = random(y.dim(), 50 + i as u64);
        }
        let x = classic_data_update(&y, &dirs, &st, 0.7);
        assert!(classic_normal_residual(&y, &x, &dirs, &st, 0.7) < 1e-8);
        let x0 = classic_data_update(&y, &dirs, &st, 0.0);
        assert!(Zip::from(&x0).and(&y).all(|a, b| (a - b).abs() < 1e-12));
    }

    #[test]
    fn classic_solve_is_a_local_minimum() {
        let dirs = HessianDirections::new(1.0, 1.0, 0.1, 1);
        let y = random((1, 12, 12), 60);
        let mut st = SplitState::zeros(y.dim());
        for i in 0..6 {
            st.z[i] = random(y.dim(), 70 + i as u64);
        }
        let mu = 0.8;
        let quad = |x: &Array3<f64>| {
            let mut q = Zip::from(&y)
                .and(x)
                .fold(0.0, |s, &a, &b| s + (a - b).powi(2));
            for (i, d, l) in dirs.active() {
                let dx = second_derivative(x, d, Boundary::Periodic);
                q += 0.5
                    * mu
                    * Zip::from(&st.z[i])
                        .and(&dx)
                        .and(&st.b[i])
                        .fold(0.0, |s, &z, &g, &b| s + (z - l * g - b).powi(2));
            }
            q
        };
        let x = classic_data_update(&y, &dirs, &st, mu);
        let best = quad(&x);
        assert!(best <= quad(&y));
        for seed in 0..5 {
            let eps = random(y.dim(), 80 + seed).mapv(|v| 1e-3 * v);
            assert!(best <= quad(&(&x + &eps)));
        }
    }

    proptest! {
        #[test]
        fn shrink_is_odd_and_one_lipschitz(a in -1e3f64..1e3, b in -1e3f64..1e3, t in 0.0f64..50.0) {
            prop_assert_eq!(shrink(-a, t), -shrink(a, t));
            prop_assert!((shrink(a, t) - shrink(b, t)).abs() <= (a - b).abs() + 1e-12);
        }

        #[test]
        fn adjoint_identity_holds_for_random_shapes(d in 1usize..5, h in 2usize..9, w in 2usize..9, seed in 0u64..1000, k in 0usize..6) {
            let dir = Direction::ALL[k];
            let v = random((d, h, w), seed);
            let u = random((d, h, w), seed + 7);
            for b in [Boundary::Reflective, Boundary::Periodic] {
                let lhs = dot(&second_derivative(&v, dir, b), &u);
                let rhs = dot(&v, &second_derivative_adjoint(&u, dir, b));
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }
}
