//! Dense row-major `f64` tensors and the raw kernels behind the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(vec![v])
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::dim(format!(
                "gradient of length {} for tensor of length {}",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest element; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

// Raw kernels. Shapes are checked by the callers on the tape.

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub(crate) fn matmul_at_b(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` for `a: m×n`, `b: k×n`.
pub(crate) fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 3 || kernels.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects C×H×W input and O×C×k×k kernels, got {input:?} and {kernels:?}"
            )));
        }
        let (c_in, h, w) = (input[0], input[1], input[2]);
        let (c_out, kc, kh, kw) = (kernels[0], kernels[1], kernels[2], kernels[3]);
        if kc != c_in {
            return Err(Error::dim(format!(
                "kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if kh != kw {
            return Err(Error::dim(format!("non-square kernel {kh}×{kw}")));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be positive"));
        }
        let k = kh;
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(Error::dim(format!(
                "kernel {k}×{k} larger than padded input {}×{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    /// Calls `f(out_index, in_index, kernel_index)` for every multiply-add of the
    /// cross-correlation. Padding positions are skipped.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let g = self;
        for o in 0..g.c_out {
            for oy in 0..g.h_out {
                for ox in 0..g.w_out {
                    let out_idx = (o * g.h_out + oy) * g.w_out + ox;
                    for c in 0..g.c_in {
                        for ky in 0..g.k {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..g.k {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let in_idx = (c * g.h + iy as usize) * g.w + ix as usize;
                                let k_idx = ((o * g.c_in + c) * g.k + ky) * g.k + kx;
                                f(out_idx, in_idx, k_idx);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, input: &[f64], kernels: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.c_out * self.h_out * self.w_out];
        self.for_each_tap(|o, i, k| out[o] += input[i] * kernels[k]);
        out
    }

    pub fn grad_input(&self, upstream: &[f64], kernels: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.c_in * self.h * self.w];
        self.for_each_tap(|o, i, k| g[i] += upstream[o] * kernels[k]);
        g
    }

    pub fn grad_kernels(&self, upstream: &[f64], input: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.c_out * self.c_in * self.k * self.k];
        self.for_each_tap(|o, i, k| g[k] += upstream[o] * input[i]);
        g
    }
}

pub(crate) fn avgpool2x2_raw(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let base = ch * h * w;
                let s = x[base + 2 * y * w + 2 * xx]
                    + x[base + 2 * y * w + 2 * xx + 1]
                    + x[base + (2 * y + 1) * w + 2 * xx]
                    + x[base + (2 * y + 1) * w + 2 * xx + 1];
                out[(ch * ho + y) * wo + xx] = 0.25 * s;
            }
        }
    }
    out
}

/// Population standard deviation (divisor = element count).
pub fn population_std(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Domain("standard deviation of an empty tensor".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}
