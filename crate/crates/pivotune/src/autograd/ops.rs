//! Differentiable operations.
//!
//! Each op validates shapes, computes the forward value, and (when any
//! input is tracked) registers a closure that routes the output gradient
//! back into its inputs. Contributions for untracked inputs are skipped.

use super::{tracking, Tensor};
use crate::error::{Error, Result};

fn mat_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(Error::Dim(format!("{what} must be 2-d, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

/// C[m,n] = A[m,k] * B[k,n]
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C[m,k] = A[m,n] * B[k,n]^T
fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = 0.0;
            for p in 0..n {
                s += arow[p] * brow[p];
            }
            c[i * k + j] = s;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T * B[m,n]
fn matmul_tn_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = arow[p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

impl Tensor {
    fn zip_elementwise(
        &self,
        other: &Tensor,
        op_name: &str,
        forward: impl Fn(f64, f64) -> f64,
        // d(out)/d(self), d(out)/d(other) given both input values
        dl: impl Fn(f64, f64) -> f64 + 'static,
        dr: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Dim(format!(
                "{op_name}: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let a = self.to_vec();
        let b = other.to_vec();
        let data: Vec<f64> = a.iter().zip(&b).map(|(&x, &y)| forward(x, y)).collect();
        let backward = tracking(&[self, other]).then(|| {
            let (lhs, rhs) = (self.clone(), other.clone());
            let (need_l, need_r) = (self.tracked(), other.tracked());
            Box::new(move |g: &[f64]| {
                if need_l {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(a.iter().zip(&b))
                        .map(|(&gv, (&x, &y))| gv * dl(x, y))
                        .collect();
                    lhs.accumulate_grad(&contrib);
                }
                if need_r {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(a.iter().zip(&b))
                        .map(|(&gv, (&x, &y))| gv * dr(x, y))
                        .collect();
                    rhs.accumulate_grad(&contrib);
                }
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            backward,
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_elementwise(other, "add", |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_elementwise(other, "sub", |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_elementwise(other, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|v| v * s).collect();
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| {
                let contrib: Vec<f64> = g.iter().map(|gv| gv * s).collect();
                input.accumulate_grad(&contrib);
            }) as super::BackwardFn
        });
        Tensor::result_of(self.shape(), data, vec![self.clone()], backward)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|v| v + s).collect();
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| input.accumulate_grad(g)) as super::BackwardFn
        });
        Tensor::result_of(self.shape(), data, vec![self.clone()], backward)
    }

    /// Add a length-`m` bias to every row of an `n x m` tensor.
    pub fn add_row_broadcast(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, m) = mat_dims(self, "add_row_broadcast input")?;
        if bias.shape() != [m] {
            return Err(Error::Dim(format!(
                "add_row_broadcast: bias {:?} vs row width {m}",
                bias.shape()
            )));
        }
        let b = bias.to_vec();
        let data: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % m])
            .collect();
        let backward = tracking(&[self, bias]).then(|| {
            let (input, bias_t) = (self.clone(), bias.clone());
            let (need_i, need_b) = (self.tracked(), bias.tracked());
            Box::new(move |g: &[f64]| {
                if need_i {
                    input.accumulate_grad(g);
                }
                if need_b {
                    let mut contrib = vec![0.0; m];
                    for (i, gv) in g.iter().enumerate() {
                        contrib[i % m] += gv;
                    }
                    bias_t.accumulate_grad(&contrib);
                }
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(
            vec![n, m],
            data,
            vec![self.clone(), bias.clone()],
            backward,
        ))
    }

    /// Standard matrix product; gradients accumulate into both factors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = mat_dims(self, "matmul lhs")?;
        let (k2, n) = mat_dims(other, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dim(format!(
                "matmul: inner dimensions disagree, {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let a = self.to_vec();
        let b = other.to_vec();
        let data = matmul_raw(&a, &b, m, k, n);
        let backward = tracking(&[self, other]).then(|| {
            let (lhs, rhs) = (self.clone(), other.clone());
            let (need_l, need_r) = (self.tracked(), other.tracked());
            Box::new(move |g: &[f64]| {
                if need_l {
                    lhs.accumulate_grad(&matmul_nt_raw(g, &b, m, n, k));
                }
                if need_r {
                    rhs.accumulate_grad(&matmul_tn_raw(&a, g, m, k, n));
                }
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            backward,
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (n, m) = mat_dims(self, "transpose input")?;
        let src = self.to_vec();
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = src[i * m + j];
            }
        }
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| {
                let mut contrib = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        contrib[i * m + j] = g[j * n + i];
                    }
                }
                input.accumulate_grad(&contrib);
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(vec![m, n], data, vec![self.clone()], backward))
    }

    /// Softmax over the last dimension, computed with max subtraction so
    /// large logits cannot overflow.
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let shape = self.shape();
        let m = *shape.last().ok_or_else(|| {
            Error::Dim("softmax_lastdim: tensor has no dimensions".to_string())
        })?;
        if m == 0 {
            return Err(Error::Dim("softmax_lastdim: empty last dimension".to_string()));
        }
        let src = self.to_vec();
        let mut data = vec![0.0; src.len()];
        for row in 0..src.len() / m {
            let x = &src[row * m..(row + 1) * m];
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[row * m..(row + 1) * m];
            let mut denom = 0.0;
            for (o, &v) in out.iter_mut().zip(x) {
                *o = (v - max).exp();
                denom += *o;
            }
            for o in out.iter_mut() {
                *o /= denom;
            }
        }
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            let y = data.clone();
            Box::new(move |g: &[f64]| {
                let mut contrib = vec![0.0; y.len()];
                for row in 0..y.len() / m {
                    let yr = &y[row * m..(row + 1) * m];
                    let gr = &g[row * m..(row + 1) * m];
                    let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    let cr = &mut contrib[row * m..(row + 1) * m];
                    for ((c, &yv), &gv) in cr.iter_mut().zip(yr).zip(gr) {
                        *c = yv * (gv - dot);
                    }
                }
                input.accumulate_grad(&contrib);
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(shape, data, vec![self.clone()], backward))
    }

    /// x * sigmoid(x); smooth activation used throughout the U-Net.
    pub fn silu(&self) -> Tensor {
        let src = self.to_vec();
        let data: Vec<f64> = src.iter().map(|&x| x / (1.0 + (-x).exp())).collect();
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| {
                let contrib: Vec<f64> = g
                    .iter()
                    .zip(&src)
                    .map(|(&gv, &x)| {
                        let s = 1.0 / (1.0 + (-x).exp());
                        gv * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                input.accumulate_grad(&contrib);
            }) as super::BackwardFn
        });
        Tensor::result_of(self.shape(), data, vec![self.clone()], backward)
    }

    /// Per-row layer normalization with affine parameters.
    pub fn layernorm_rows(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let (n, m) = mat_dims(self, "layernorm input")?;
        if gamma.shape() != [m] || beta.shape() != [m] {
            return Err(Error::Dim(format!(
                "layernorm: gamma {:?} / beta {:?} vs row width {m}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let src = self.to_vec();
        let gv = gamma.to_vec();
        let bv = beta.to_vec();
        let mut data = vec![0.0; n * m];
        let mut xhat = vec![0.0; n * m];
        let mut inv_sigma = vec![0.0; n];
        for i in 0..n {
            let row = &src[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[i] = inv;
            for j in 0..m {
                let xh = (row[j] - mean) * inv;
                xhat[i * m + j] = xh;
                data[i * m + j] = xh * gv[j] + bv[j];
            }
        }
        let backward = tracking(&[self, gamma, beta]).then(|| {
            let (input, gamma_t, beta_t) = (self.clone(), gamma.clone(), beta.clone());
            let needs = (self.tracked(), gamma.tracked(), beta.tracked());
            Box::new(move |g: &[f64]| {
                if needs.1 {
                    let mut cg = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            cg[j] += g[i * m + j] * xhat[i * m + j];
                        }
                    }
                    gamma_t.accumulate_grad(&cg);
                }
                if needs.2 {
                    let mut cb = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            cb[j] += g[i * m + j];
                        }
                    }
                    beta_t.accumulate_grad(&cb);
                }
                if needs.0 {
                    let mut cx = vec![0.0; n * m];
                    for i in 0..n {
                        let gr = &g[i * m..(i + 1) * m];
                        let xr = &xhat[i * m..(i + 1) * m];
                        // d/dx through the row statistics
                        let mut mean_gxh = 0.0;
                        let mut mean_gxh_xh = 0.0;
                        for j in 0..m {
                            let gxh = gr[j] * gv[j];
                            mean_gxh += gxh;
                            mean_gxh_xh += gxh * xr[j];
                        }
                        mean_gxh /= m as f64;
                        mean_gxh_xh /= m as f64;
                        for j in 0..m {
                            let gxh = gr[j] * gv[j];
                            cx[i * m + j] = inv_sigma[i] * (gxh - mean_gxh - xr[j] * mean_gxh_xh);
                        }
                    }
                    input.accumulate_grad(&cx);
                }
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(
            vec![n, m],
            data,
            vec![self.clone(), gamma.clone(), beta.clone()],
            backward,
        ))
    }

    /// 1-d convolution over rows (positions) with kernel size 3, stride 1,
    /// zero padding. Input `l x c_in`, weight `c_out x c_in x 3`, bias `c_out`.
    pub fn conv1d_k3(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (l, c_in) = mat_dims(self, "conv input")?;
        let ws = weight.shape();
        if ws.len() != 3 || ws[1] != c_in || ws[2] != 3 {
            return Err(Error::Dim(format!(
                "conv1d_k3: weight {:?} vs input {:?}",
                ws,
                self.shape()
            )));
        }
        let c_out = ws[0];
        if bias.shape() != [c_out] {
            return Err(Error::Dim(format!(
                "conv1d_k3: bias {:?} vs c_out {c_out}",
                bias.shape()
            )));
        }
        let x = self.to_vec();
        let w = weight.to_vec();
        let b = bias.to_vec();
        let mut data = vec![0.0; l * c_out];
        for p in 0..l {
            for o in 0..c_out {
                let mut s = b[o];
                for (tap, offset) in [-1i64, 0, 1].iter().enumerate() {
                    let q = p as i64 + offset;
                    if q < 0 || q >= l as i64 {
                        continue;
                    }
                    let xrow = &x[q as usize * c_in..(q as usize + 1) * c_in];
                    for i in 0..c_in {
                        s += xrow[i] * w[(o * c_in + i) * 3 + tap];
                    }
                }
                data[p * c_out + o] = s;
            }
        }
        let backward = tracking(&[self, weight, bias]).then(|| {
            let (input, weight_t, bias_t) = (self.clone(), weight.clone(), bias.clone());
            let needs = (self.tracked(), weight.tracked(), bias.tracked());
            Box::new(move |g: &[f64]| {
                if needs.2 {
                    let mut cb = vec![0.0; c_out];
                    for p in 0..l {
                        for o in 0..c_out {
                            cb[o] += g[p * c_out + o];
                        }
                    }
                    bias_t.accumulate_grad(&cb);
                }
                if needs.0 {
                    let mut cx = vec![0.0; l * c_in];
                    for p in 0..l {
                        let grow = &g[p * c_out..(p + 1) * c_out];
                        for (tap, offset) in [-1i64, 0, 1].iter().enumerate() {
                            let q = p as i64 + offset;
                            if q < 0 || q >= l as i64 {
                                continue;
                            }
                            let cxrow = &mut cx[q as usize * c_in..(q as usize + 1) * c_in];
                            for o in 0..c_out {
                                let gv = grow[o];
                                if gv == 0.0 {
                                    continue;
                                }
                                for i in 0..c_in {
                                    cxrow[i] += gv * w[(o * c_in + i) * 3 + tap];
                                }
                            }
                        }
                    }
                    input.accumulate_grad(&cx);
                }
                if needs.1 {
                    let mut cw = vec![0.0; c_out * c_in * 3];
                    for p in 0..l {
                        let grow = &g[p * c_out..(p + 1) * c_out];
                        for (tap, offset) in [-1i64, 0, 1].iter().enumerate() {
                            let q = p as i64 + offset;
                            if q < 0 || q >= l as i64 {
                                continue;
                            }
                            let xrow = &x[q as usize * c_in..(q as usize + 1) * c_in];
                            for o in 0..c_out {
                                let gv = grow[o];
                                if gv == 0.0 {
                                    continue;
                                }
                                for i in 0..c_in {
                                    cw[(o * c_in + i) * 3 + tap] += gv * xrow[i];
                                }
                            }
                        }
                    }
                    weight_t.accumulate_grad(&cw);
                }
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(
            vec![l, c_out],
            data,
            vec![self.clone(), weight.clone(), bias.clone()],
            backward,
        ))
    }

    /// Halve the number of rows by averaging adjacent pairs.
    pub fn avgpool2_rows(&self) -> Result<Tensor> {
        let (l, c) = mat_dims(self, "avgpool input")?;
        if l % 2 != 0 {
            return Err(Error::Dim(format!("avgpool2: odd length {l}")));
        }
        let x = self.to_vec();
        let half = l / 2;
        let mut data = vec![0.0; half * c];
        for p in 0..half {
            for ch in 0..c {
                data[p * c + ch] = 0.5 * (x[2 * p * c + ch] + x[(2 * p + 1) * c + ch]);
            }
        }
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| {
                let mut cx = vec![0.0; l * c];
                for p in 0..half {
                    for ch in 0..c {
                        let gv = 0.5 * g[p * c + ch];
                        cx[2 * p * c + ch] += gv;
                        cx[(2 * p + 1) * c + ch] += gv;
                    }
                }
                input.accumulate_grad(&cx);
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(vec![half, c], data, vec![self.clone()], backward))
    }

    /// Double the number of rows by nearest-neighbor repetition.
    pub fn upsample2_rows(&self) -> Result<Tensor> {
        let (l, c) = mat_dims(self, "upsample input")?;
        let x = self.to_vec();
        let mut data = vec![0.0; 2 * l * c];
        for p in 0..l {
            for ch in 0..c {
                data[2 * p * c + ch] = x[p * c + ch];
                data[(2 * p + 1) * c + ch] = x[p * c + ch];
            }
        }
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| {
                let mut cx = vec![0.0; l * c];
                for p in 0..l {
                    for ch in 0..c {
                        cx[p * c + ch] = g[2 * p * c + ch] + g[(2 * p + 1) * c + ch];
                    }
                }
                input.accumulate_grad(&cx);
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(vec![2 * l, c], data, vec![self.clone()], backward))
    }

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| {
                input.accumulate_grad(&vec![g[0]; n]);
            }) as super::BackwardFn
        });
        Tensor::result_of(vec![1], vec![total], vec![self.clone()], backward)
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().mul_scalar(1.0 / n as f64)
    }

    /// Mean squared error against `target`, reduced to a scalar.
    pub fn mse(&self, target: &Tensor) -> Result<Tensor> {
        let diff = self.sub(target)?;
        Ok(diff.mul(&diff)?.mean())
    }

    /// Stack tensors with identical row width along the row axis.
    /// Gradients split back to every part, so prepended rows stay trainable.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Usage("concat_rows: no inputs".to_string()));
        }
        let (_, m) = mat_dims(parts[0], "concat_rows input")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for part in parts {
            let (n_i, m_i) = mat_dims(part, "concat_rows input")?;
            if m_i != m {
                return Err(Error::Dim(format!(
                    "concat_rows: row width {m_i} vs {m}"
                )));
            }
            rows += n_i;
            data.extend_from_slice(&part.data());
        }
        let inputs: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let backward = tracking(parts).then(|| {
            let inputs = inputs.clone();
            Box::new(move |g: &[f64]| {
                let mut offset = 0;
                for input in &inputs {
                    let len = input.numel();
                    if input.tracked() {
                        input.accumulate_grad(&g[offset..offset + len]);
                    }
                    offset += len;
                }
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(vec![rows, m], data, inputs, backward))
    }

    /// Rows `start..end` of a 2-d tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (n, m) = mat_dims(self, "slice_rows input")?;
        if start >= end || end > n {
            return Err(Error::Dim(format!(
                "slice_rows: range {start}..{end} out of {n} rows"
            )));
        }
        let data = self.data()[start * m..end * m].to_vec();
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| {
                let mut cx = vec![0.0; n * m];
                cx[start * m..end * m].copy_from_slice(g);
                input.accumulate_grad(&cx);
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(
            vec![end - start, m],
            data,
            vec![self.clone()],
            backward,
        ))
    }

    /// Look up rows of an embedding table; backward scatter-adds into the
    /// selected rows only.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (n, m) = mat_dims(self, "gather_rows table")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Dim(format!("gather_rows: index {bad} out of {n} rows")));
        }
        let src = self.data();
        let mut data = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            data.extend_from_slice(&src[i * m..(i + 1) * m]);
        }
        drop(src);
        let idx: Vec<usize> = indices.to_vec();
        let backward = tracking(&[self]).then(|| {
            let table = self.clone();
            Box::new(move |g: &[f64]| {
                let mut cx = vec![0.0; n * m];
                for (row, &i) in idx.iter().enumerate() {
                    for j in 0..m {
                        cx[i * m + j] += g[row * m + j];
                    }
                }
                table.accumulate_grad(&cx);
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(
            vec![indices.len(), m],
            data,
            vec![self.clone()],
            backward,
        ))
    }

    /// Same data, new shape; gradient passes through untouched.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(Error::Dim(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| input.accumulate_grad(g)) as super::BackwardFn
        });
        Ok(Tensor::result_of(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            backward,
        ))
    }

    /// Mean over rows: `n x m` -> `1 x m`.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let (n, m) = mat_dims(self, "mean_rows input")?;
        let src = self.to_vec();
        let mut data = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                data[j] += src[i * m + j];
            }
        }
        for v in data.iter_mut() {
            *v /= n as f64;
        }
        let backward = tracking(&[self]).then(|| {
            let input = self.clone();
            Box::new(move |g: &[f64]| {
                let mut cx = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        cx[i * m + j] = g[j] / n as f64;
                    }
                }
                input.accumulate_grad(&cx);
            }) as super::BackwardFn
        });
        Ok(Tensor::result_of(vec![1, m], data, vec![self.clone()], backward))
    }
}
