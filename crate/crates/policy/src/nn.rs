//! Layers over a flat parameter vector.
//!
//! Every layer knows the offset of its parameters inside one `[f64]` slice, so
//! a whole network is a list of layer descriptors plus one vector. Batches are
//! `(batch, features)` matrices; images are flattened in HWC order.
//! `backward` accumulates into a gradient slice laid out like the parameters
//! and returns the gradient with respect to the layer input.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Hands out consecutive parameter ranges.
#[derive(Debug, Default)]
pub struct Allocator {
    pub len: usize,
}

impl Allocator {
    pub fn take(&mut self, n: usize) -> usize {
        let at = self.len;
        self.len += n;
        at
    }
}

/// `y = x W + b` with `W` stored row-major as `input × output`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl Linear {
    pub fn new(input: usize, output: usize, alloc: &mut Allocator) -> Self {
        let offset = alloc.take(input * output + output);
        Self { input, output, offset }
    }

    pub fn param_len(&self) -> usize {
        self.input * self.output + self.output
    }

    fn split<'a>(&self, p: &'a [f64]) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let n = self.input * self.output;
        let w = ArrayView2::from_shape((self.input, self.output), &p[self.offset..self.offset + n]).expect("weight shape");
        let b = ArrayView1::from(&p[self.offset + n..self.offset + n + self.output]);
        (w, b)
    }

    fn split_mut<'a>(&self, g: &'a mut [f64]) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let n = self.input * self.output;
        let (w, b) = g[self.offset..self.offset + n + self.output].split_at_mut(n);
        (
            ArrayViewMut2::from_shape((self.input, self.output), w).expect("weight shape"),
            ArrayViewMut1::from(b),
        )
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let (w, b) = self.split(p);
        x.dot(&w) + &b
    }

    pub fn backward(&self, p: &[f64], x: ArrayView2<f64>, gy: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let (w, _) = self.split(p);
        let (mut gw, mut gb) = self.split_mut(grad);
        gw += &x.t().dot(&gy);
        gb += &gy.sum_axis(Axis(0));
        gy.dot(&w.t())
    }

    /// He-normal weights, zero bias.
    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let normal = Normal::new(0.0, (2.0 / self.input as f64).sqrt()).expect("finite std");
        let n = self.input * self.output;
        for v in &mut p[self.offset..self.offset + n] {
            *v = normal.sample(rng);
        }
        p[self.offset + n..self.offset + n + self.output].fill(0.0);
    }

    pub fn zero(&self, p: &mut [f64]) {
        p[self.offset..self.offset + self.param_len()].fill(0.0);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · sigmoid(x)`.
pub fn silu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_backward(x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
    let mut g = gy.clone();
    g.zip_mut_with(x, |g, &v| {
        let s = sigmoid(v);
        *g *= s * (1.0 + v * (1.0 - s));
    });
    g
}

/// Square-kernel convolution with zero padding on HWC images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub height: usize,
    pub width: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub offset: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        height: usize,
        width: usize,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        alloc: &mut Allocator,
    ) -> Self {
        let offset = alloc.take(kernel * kernel * cin * cout + cout);
        Self {
            height,
            width,
            cin,
            cout,
            kernel,
            stride,
            pad,
            offset,
        }
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn input_len(&self) -> usize {
        self.height * self.width * self.cin
    }

    pub fn output_len(&self) -> usize {
        self.out_height() * self.out_width() * self.cout
    }

    fn as_linear(&self) -> Linear {
        Linear {
            input: self.kernel * self.kernel * self.cin,
            output: self.cout,
            offset: self.offset,
        }
    }

    pub fn param_len(&self) -> usize {
        self.as_linear().param_len()
    }

    /// Rows are output pixels of every sample, columns `(ky, kx, c)`.
    fn im2col(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (ho, wo, k, c) = (self.out_height(), self.out_width(), self.kernel, self.cin);
        let batch = x.nrows();
        let x = x.as_standard_layout();
        let mut cols = Array2::zeros((batch * ho * wo, k * k * c));
        for b in 0..batch {
            let img = x.row(b);
            let img = img.as_slice().expect("contiguous rows");
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut row = cols.row_mut((b * ho + oy) * wo + ox);
                    let row = row.as_slice_mut().expect("contiguous rows");
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let src = (iy as usize * self.width + ix as usize) * c;
                            let dst = (ky * k + kx) * c;
                            row[dst..dst + c].copy_from_slice(&img[src..src + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, gcols: &Array2<f64>, batch: usize) -> Array2<f64> {
        let gcols = gcols.as_standard_layout();
        let (ho, wo, k, c) = (self.out_height(), self.out_width(), self.kernel, self.cin);
        let mut gx = Array2::zeros((batch, self.input_len()));
        for b in 0..batch {
            let mut img = gx.row_mut(b);
            let img = img.as_slice_mut().expect("contiguous rows");
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = gcols.row((b * ho + oy) * wo + ox);
                    let row = row.as_slice().expect("contiguous rows");
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let dst = (iy as usize * self.width + ix as usize) * c;
                            let src = (ky * k + kx) * c;
                            for i in 0..c {
                                img[dst + i] += row[src + i];
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    /// Returns the output and the column matrix needed by `backward`.
    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let batch = x.nrows();
        let cols = self.im2col(x);
        let y = self.as_linear().forward(p, cols.view());
        let y = y.into_shape_with_order((batch, self.output_len())).expect("conv output shape");
        (y, cols)
    }

    pub fn backward(&self, p: &[f64], cols: &Array2<f64>, gy: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let batch = gy.nrows();
        let gy = gy
            .to_owned()
            .into_shape_with_order((cols.nrows(), self.cout))
            .expect("conv gradient shape");
        let gcols = self.as_linear().backward(p, cols.view(), gy.view(), grad);
        self.col2im(&gcols, batch)
    }

    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        self.as_linear().init(p, rng)
    }
}

/// Mean over spatial positions of an HWC feature map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalAvgPool {
    pub positions: usize,
    pub channels: usize,
}

impl GlobalAvgPool {
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let batch = x.nrows();
        let mut y = Array2::zeros((batch, self.channels));
        for b in 0..batch {
            let map = x.slice(s![b, ..]).into_shape_with_order((self.positions, self.channels)).expect("pool input shape");
            y.row_mut(b).assign(&map.mean_axis(Axis(0)).expect("non-empty map"));
        }
        y
    }

    pub fn backward(&self, gy: ArrayView2<f64>) -> Array2<f64> {
        let batch = gy.nrows();
        let scale = 1.0 / self.positions as f64;
        let mut gx = Array2::zeros((batch, self.positions * self.channels));
        for b in 0..batch {
            let mut map = gx
                .row_mut(b)
                .into_shape_with_order((self.positions, self.channels))
                .expect("pool gradient shape");
            for mut row in map.rows_mut() {
                row.assign(&(&gy.row(b) * scale));
            }
        }
        gx
    }
}

/// Mean over rows of the squared row norm of `pred - target`, and its
/// gradient with respect to `pred`.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let batch = pred.nrows() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / batch;
    (loss, diff * (2.0 / batch))
}
