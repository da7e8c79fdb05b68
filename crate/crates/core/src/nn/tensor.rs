use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// A `[1, n]` row.
    pub fn row(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// Stacks equal-length rows into `[rows.len(), n]`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in rows {
            if r.as_ref().len() != n {
                return Err(Error::shape("ragged rows"));
            }
            data.extend_from_slice(r.as_ref());
        }
        Ok(Tensor {
            shape: vec![rows.len(), n],
            data,
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
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

    /// Rows and columns of a 2-D tensor (a 1-D tensor is one row).
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                let c = *other.last().unwrap_or(&1);
                (self.data.len() / c.max(1), c)
            }
        }
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[k,n] += aᵀ · c` with `a: [m,k]`, `c: [m,n]`.
pub(crate) fn matmul_tn_acc(a: &[f64], c: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &cv) in orow.iter_mut().zip(crow) {
                *o += aip * cv;
            }
        }
    }
}

/// `out[m,k] += c · bᵀ` with `c: [m,n]`, `b: [k,n]`.
pub(crate) fn matmul_nt_acc(c: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &c[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            *o += crow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// Geometry of a 2-D transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel - 2 * self.padding
    }
}

/// Transposed convolution. `x: [N, Ci, H, W]`, `w: [Ci, Co, k, k]`,
/// output `[N, Co, Ho, Wo]` with `Ho = (H-1) s + k - 2p`.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let (n, ci, h, wd) = dims4(x)?;
    let (wci, co, k, k2) = dims4(w)?;
    if wci != ci || k != geom.kernel || k2 != geom.kernel {
        return Err(Error::shape(format!(
            "conv_transpose2d: input {:?} incompatible with kernel {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (ho, wo) = (geom.output_size(h), geom.output_size(wd));
    let mut out = vec![0.0; n * co * ho * wo];
    let (xd, wdat) = (x.data(), w.data());
    for b in 0..n {
        for c_in in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = xd[((b * ci + c_in) * h + iy) * wd + ix];
                    for c_out in 0..co {
                        let obase = (b * co + c_out) * ho;
                        let wbase = (c_in * co + c_out) * k * k;
                        for ky in 0..k {
                            let oy = (iy * geom.stride + ky) as isize - geom.padding as isize;
                            if oy < 0 || oy >= ho as isize {
                                continue;
                            }
                            let orow = (obase + oy as usize) * wo;
                            for kx in 0..k {
                                let ox = (ix * geom.stride + kx) as isize - geom.padding as isize;
                                if ox < 0 || ox >= wo as isize {
                                    continue;
                                }
                                out[orow + ox as usize] += xv * wdat[wbase + ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, co, ho, wo], out))
}

/// Strided convolution that is the adjoint of [`conv_transpose2d`] with the
/// same kernel: `y: [N, Co, Ho, Wo]` maps back to `[N, Ci, h, w]`.
pub fn conv2d(y: &Tensor, w: &Tensor, geom: ConvGeometry, h: usize, wd: usize) -> Result<Tensor> {
    let (n, co, ho, wo) = dims4(y)?;
    let (ci, wco, k, _) = dims4(w)?;
    if wco != co || ho != geom.output_size(h) || wo != geom.output_size(wd) {
        return Err(Error::shape("conv2d: incompatible shapes"));
    }
    let mut out = vec![0.0; n * ci * h * wd];
    let (yd, wdat) = (y.data(), w.data());
    for b in 0..n {
        for c_in in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    let mut acc = 0.0;
                    for c_out in 0..co {
                        let ybase = (b * co + c_out) * ho;
                        let wbase = (c_in * co + c_out) * k * k;
                        for ky in 0..k {
                            let oy = (iy * geom.stride + ky) as isize - geom.padding as isize;
                            if oy < 0 || oy >= ho as isize {
                                continue;
                            }
                            let yrow = (ybase + oy as usize) * wo;
                            for kx in 0..k {
                                let ox = (ix * geom.stride + kx) as isize - geom.padding as isize;
                                if ox < 0 || ox >= wo as isize {
                                    continue;
                                }
                                acc += yd[yrow + ox as usize] * wdat[wbase + ky * k + kx];
                            }
                        }
                    }
                    out[((b * ci + c_in) * h + iy) * wd + ix] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, ci, h, wd], out))
}

/// Kernel gradient of [`conv_transpose2d`]: `dw[ci,co,ky,kx] = Σ x · dy`.
pub(crate) fn conv_transpose2d_kernel_grad(x: &Tensor, dy: &Tensor, geom: ConvGeometry, w_shape: &[usize]) -> Tensor {
    let s = x.shape();
    let (n, ci, h, wd) = (s[0], s[1], s[2], s[3]);
    let ys = dy.shape();
    let (co, ho, wo) = (ys[1], ys[2], ys[3]);
    let k = geom.kernel;
    let mut out = vec![0.0; w_shape.iter().product()];
    let (xd, yd) = (x.data(), dy.data());
    for b in 0..n {
        for c_in in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = xd[((b * ci + c_in) * h + iy) * wd + ix];
                    for c_out in 0..co {
                        let ybase = (b * co + c_out) * ho;
                        let wbase = (c_in * co + c_out) * k * k;
                        for ky in 0..k {
                            let oy = (iy * geom.stride + ky) as isize - geom.padding as isize;
                            if oy < 0 || oy >= ho as isize {
                                continue;
                            }
                            let yrow = (ybase + oy as usize) * wo;
                            for kx in 0..k {
                                let ox = (ix * geom.stride + kx) as isize - geom.padding as isize;
                                if ox < 0 || ox >= wo as isize {
                                    continue;
                                }
                                out[wbase + ky * k + kx] += xv * yd[yrow + ox as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(w_shape.to_vec(), out)
}

pub(crate) fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        other => Err(Error::shape(format!("expected a 4-D tensor, got {other:?}"))),
    }
}
