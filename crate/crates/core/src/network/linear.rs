use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

/// Nodes per partial sum in parameter-gradient reductions. Partials are
/// combined in chunk order, so results do not depend on the thread count.
pub(crate) const REDUCE_CHUNK: usize = 64;

/// Sums `body(acc, p)` over `0..n` in fixed-size chunks.
pub(crate) fn reduce_chunks<T, I, F, G>(n: usize, init: I, body: F, merge: G) -> T
where
    T: Send,
    I: Fn() -> T + Sync,
    F: Fn(&mut T, usize) + Sync,
    G: Fn(&mut T, T),
{
    let partials: Vec<T> = (0..n.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for p in c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n) {
                body(&mut acc, p);
            }
            acc
        })
        .collect();
    let mut total = init();
    for part in partials {
        merge(&mut total, part);
    }
    total
}

/// Complex matrix `W = W_re + i W_im` applied from the right, `y = x W + b`,
/// evaluated with real arithmetic only.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLinear {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
    /// Optional complex bias as `[re, im]`.
    pub bias: Option<[Array1<f64>; 2]>,
}

impl ComplexLinear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        ComplexLinear {
            re: Array2::zeros((n_in, n_out)),
            im: Array2::zeros((n_in, n_out)),
            bias: None,
        }
    }

    /// Entries uniform in `±1/sqrt(n_in)`, real and imaginary parts drawn
    /// independently.
    pub fn uniform<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let b = 1.0 / (n_in as f64).sqrt();
        let mut draw = || Array2::from_shape_simple_fn((n_in, n_out), || rng.random_range(-b..b));
        let re = draw();
        let im = draw();
        ComplexLinear { re, im, bias: None }
    }

    pub fn n_in(&self) -> usize {
        self.re.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.re.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        ComplexLinear {
            re: Array2::zeros(self.re.raw_dim()),
            im: Array2::zeros(self.im.raw_dim()),
            bias: self
                .bias
                .as_ref()
                .map(|[r, i]| [Array1::zeros(r.len()), Array1::zeros(i.len())]),
        }
    }

    pub fn apply_row(&self, x: ArrayView1<Complex64>, mut y: ArrayViewMut1<Complex64>) {
        for b in 0..self.n_out() {
            let (mut re, mut im) = match &self.bias {
                Some([br, bi]) => (br[b], bi[b]),
                None => (0.0, 0.0),
            };
            for (a, xa) in x.iter().enumerate() {
                let (wr, wi) = (self.re[[a, b]], self.im[[a, b]]);
                re += xa.re * wr - xa.im * wi;
                im += xa.re * wi + xa.im * wr;
            }
            y[b] = Complex64::new(re, im);
        }
    }

    pub fn apply(&self, x: &Array2<Complex64>) -> Array2<Complex64> {
        let mut y = Array2::zeros((x.nrows(), self.n_out()));
        y.outer_iter_mut()
            .into_par_iter()
            .zip(x.outer_iter().into_par_iter())
            .for_each(|(yr, xr)| self.apply_row(xr, yr));
        y
    }

    /// Adds `g W^H` (the input gradient for upstream gradient `g`) to `gx`.
    pub fn backprop_row(&self, g: ArrayView1<Complex64>, mut gx: ArrayViewMut1<Complex64>) {
        for a in 0..self.n_in() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (b, gb) in g.iter().enumerate() {
                let (wr, wi) = (self.re[[a, b]], self.im[[a, b]]);
                acc.re += gb.re * wr + gb.im * wi;
                acc.im += gb.im * wr - gb.re * wi;
            }
            gx[a] += acc;
        }
    }

    /// Adds `conj(x)^T g` to the weight gradient and `g` to the bias gradient.
    pub fn accumulate(&mut self, x: ArrayView1<Complex64>, g: ArrayView1<Complex64>) {
        for (a, xa) in x.iter().enumerate() {
            for (b, gb) in g.iter().enumerate() {
                self.re[[a, b]] += xa.re * gb.re + xa.im * gb.im;
                self.im[[a, b]] += xa.re * gb.im - xa.im * gb.re;
            }
        }
        if let Some([br, bi]) = &mut self.bias {
            for (b, gb) in g.iter().enumerate() {
                br[b] += gb.re;
                bi[b] += gb.im;
            }
        }
    }

    pub fn add_assign(&mut self, other: &ComplexLinear) {
        self.re += &other.re;
        self.im += &other.im;
        if let (Some([a, b]), Some([c, d])) = (&mut self.bias, &other.bias) {
            *a += c;
            *b += d;
        }
    }

    /// Weight gradient `sum_p conj(x_p)^T g_p` over the rows of `x` and `g`
    /// for which `use_row` holds.
    pub fn gradient<F: Fn(usize) -> bool + Sync>(
        &self,
        x: &Array2<Complex64>,
        g: &Array2<Complex64>,
        use_row: F,
    ) -> ComplexLinear {
        reduce_chunks(
            x.nrows(),
            || self.zeros_like(),
            |acc, p| {
                if use_row(p) {
                    acc.accumulate(x.row(p), g.row(p));
                }
            },
            |t, part| t.add_assign(&part),
        )
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![self.re.as_slice().unwrap(), self.im.as_slice().unwrap()];
        if let Some([r, i]) = &self.bias {
            v.push(r.as_slice().unwrap());
            v.push(i.as_slice().unwrap());
        }
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.re.as_slice_mut().unwrap(),
            self.im.as_slice_mut().unwrap(),
        ];
        if let Some([r, i]) = &mut self.bias {
            v.push(r.as_slice_mut().unwrap());
            v.push(i.as_slice_mut().unwrap());
        }
        v
    }

    pub(crate) fn shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let s = vec![self.n_in(), self.n_out()];
        let mut v = vec![
            (format!("{prefix}.re"), s.clone()),
            (format!("{prefix}.im"), s),
        ];
        if self.bias.is_some() {
            v.push((format!("{prefix}.bias_re"), vec![self.n_out()]));
            v.push((format!("{prefix}.bias_im"), vec![self.n_out()]));
        }
        v
    }
}
