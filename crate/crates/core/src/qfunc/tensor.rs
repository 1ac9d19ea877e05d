use super::real::{gemm, Real};

/// Channel-major `(channels, rows, cols)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Tensor { channels, rows, cols, data: vec![S::zero(); channels * rows * cols] }
    }

    pub fn from_vec(channels: usize, rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), channels * rows * cols, "tensor data length");
        Tensor { channels, rows, cols, data }
    }

    pub fn plane(&self) -> usize {
        self.rows * self.cols
    }

    pub fn at(&self, c: usize, r: usize, col: usize) -> S {
        self.data[(c * self.rows + r) * self.cols + col]
    }

    pub fn channel(&self, c: usize) -> &[S] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            channels: self.channels,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

/// Geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_dims(&self, rows: usize, cols: usize) -> (usize, usize) {
        (
            (rows + 2 * self.pad - self.kernel) / self.stride + 1,
            (cols + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds input patches into a `(in_ch·k·k) × (out_rows·out_cols)` matrix.
fn im2col<S: Real>(x: &Tensor<S>, cs: &ConvShape, out_rows: usize, out_cols: usize) -> Vec<S> {
    let n = out_rows * out_cols;
    let k = cs.kernel;
    let mut col = vec![S::zero(); cs.patch() * n];
    for c in 0..x.channels {
        let src = x.channel(c);
        for ky in 0..k {
            for kx in 0..k {
                let row_base = ((c * k + ky) * k + kx) * n;
                for oy in 0..out_rows {
                    let iy = (oy * cs.stride + ky) as isize - cs.pad as isize;
                    if iy < 0 || iy >= x.rows as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * x.cols..(iy as usize + 1) * x.cols];
                    let dst = &mut col[row_base + oy * out_cols..row_base + (oy + 1) * out_cols];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * cs.stride + kx) as isize - cs.pad as isize;
                        if ix >= 0 && ix < x.cols as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Folds a patch-gradient matrix back onto the input grid (accumulating).
fn col2im<S: Real>(col: &[S], cs: &ConvShape, rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Tensor<S> {
    let n = out_rows * out_cols;
    let k = cs.kernel;
    let mut dx = Tensor::zeros(cs.in_ch, rows, cols);
    for c in 0..cs.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let row_base = ((c * k + ky) * k + kx) * n;
                for oy in 0..out_rows {
                    let iy = (oy * cs.stride + ky) as isize - cs.pad as isize;
                    if iy < 0 || iy >= rows as isize {
                        continue;
                    }
                    let base = (c * rows + iy as usize) * cols;
                    for ox in 0..out_cols {
                        let ix = (ox * cs.stride + kx) as isize - cs.pad as isize;
                        if ix >= 0 && ix < cols as isize {
                            let v = col[row_base + oy * out_cols + ox];
                            dx.data[base + ix as usize] = dx.data[base + ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `y = W * x + b`. `weights` is `out_ch × (in_ch·k·k)` row-major.
pub fn conv_forward<S: Real>(cs: &ConvShape, weights: &[S], bias: &[S], x: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(x.channels, cs.in_ch);
    let (orows, ocols) = cs.out_dims(x.rows, x.cols);
    let n = orows * ocols;
    let mut y = Tensor::zeros(cs.out_ch, orows, ocols);
    for (o, chunk) in y.data.chunks_mut(n).enumerate() {
        chunk.fill(bias[o]);
    }
    let kk = cs.patch();
    if cs.is_pointwise() {
        gemm(cs.out_ch, kk, n, S::one(), (weights, kk, 1), (&x.data, n, 1), S::one(), &mut y.data);
    } else {
        let col = im2col(x, cs, orows, ocols);
        gemm(cs.out_ch, kk, n, S::one(), (weights, kk, 1), (&col, n, 1), S::one(), &mut y.data);
    }
    y
}

/// Accumulates weight and bias gradients; returns the input gradient when `need_dx`.
pub fn conv_backward<S: Real>(
    cs: &ConvShape,
    weights: &[S],
    x: &Tensor<S>,
    dy: &Tensor<S>,
    dw: &mut [S],
    db: &mut [S],
    need_dx: bool,
) -> Option<Tensor<S>> {
    let n = dy.plane();
    let kk = cs.patch();
    for (o, chunk) in dy.data.chunks(n).enumerate() {
        db[o] = chunk.iter().fold(db[o], |acc, &v| acc + v);
    }
    let owned;
    let col: &[S] = if cs.is_pointwise() {
        &x.data
    } else {
        owned = im2col(x, cs, dy.rows, dy.cols);
        &owned
    };
    // dW += dY · colᵀ
    gemm(cs.out_ch, n, kk, S::one(), (&dy.data, n, 1), (col, 1, n), S::one(), dw);
    if !need_dx {
        return None;
    }
    // dcol = Wᵀ · dY
    let mut dcol = vec![S::zero(); kk * n];
    gemm(kk, cs.out_ch, n, S::one(), (weights, 1, kk), (&dy.data, n, 1), S::zero(), &mut dcol);
    if cs.is_pointwise() {
        return Some(Tensor::from_vec(cs.in_ch, x.rows, x.cols, dcol));
    }
    Some(col2im(&dcol, cs, x.rows, x.cols, dy.rows, dy.cols))
}

pub fn leaky_relu<S: Real>(mut z: Tensor<S>, slope: S) -> Tensor<S> {
    for v in &mut z.data {
        if *v <= S::zero() {
            *v = *v * slope;
        }
    }
    z
}

/// Gradient through a leaky rectifier given its output.
pub fn leaky_relu_backward<S: Real>(out: &Tensor<S>, mut dy: Tensor<S>, slope: S) -> Tensor<S> {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= S::zero() {
            *d = *d * slope;
        }
    }
    dy
}

pub fn upsample2x<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    let (r2, c2) = (x.rows * 2, x.cols * 2);
    let mut y = Tensor::zeros(x.channels, r2, c2);
    for c in 0..x.channels {
        for r in 0..r2 {
            let src = &x.data[(c * x.rows + r / 2) * x.cols..(c * x.rows + r / 2 + 1) * x.cols];
            let dst = &mut y.data[(c * r2 + r) * c2..(c * r2 + r + 1) * c2];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = src[i / 2];
            }
        }
    }
    y
}

/// Adjoint of [`upsample2x`]: sums each 2×2 block.
pub fn upsample2x_backward<S: Real>(dy: &Tensor<S>) -> Tensor<S> {
    let (rows, cols) = (dy.rows / 2, dy.cols / 2);
    let mut dx = Tensor::zeros(dy.channels, rows, cols);
    for c in 0..dy.channels {
        for r in 0..dy.rows {
            for col in 0..dy.cols {
                let i = (c * rows + r / 2) * cols + col / 2;
                dx.data[i] = dx.data[i] + dy.data[(c * dy.rows + r) * dy.cols + col];
            }
        }
    }
    dx
}

pub fn concat<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols), "concat spatial mismatch");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.channels + b.channels, a.rows, a.cols, data)
}

/// Splits a channel-concatenated gradient into its two parts.
pub fn split<S: Real>(t: Tensor<S>, first_channels: usize) -> (Tensor<S>, Tensor<S>) {
    let cut = first_channels * t.plane();
    let mut data = t.data;
    let tail = data.split_off(cut);
    (
        Tensor::from_vec(first_channels, t.rows, t.cols, data),
        Tensor::from_vec(t.channels - first_channels, t.rows, t.cols, tail),
    )
}

pub fn add_assign<S: Real>(acc: &mut Tensor<S>, other: &Tensor<S>) {
    for (a, &b) in acc.data.iter_mut().zip(&other.data) {
        *a = *a + b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(cs: &ConvShape, w: &[f64], b: &[f64], x: &Tensor<f64>) -> Tensor<f64> {
        let (or, oc) = cs.out_dims(x.rows, x.cols);
        let mut y = Tensor::zeros(cs.out_ch, or, oc);
        for o in 0..cs.out_ch {
            for r in 0..or {
                for c in 0..oc {
                    let mut s = b[o];
                    for i in 0..cs.in_ch {
                        for ky in 0..cs.kernel {
                            for kx in 0..cs.kernel {
                                let iy = (r * cs.stride + ky) as isize - cs.pad as isize;
                                let ix = (c * cs.stride + kx) as isize - cs.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.rows && (ix as usize) < x.cols {
                                    let wi = ((o * cs.in_ch + i) * cs.kernel + ky) * cs.kernel + kx;
                                    s += w[wi] * x.at(i, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    y.data[(o * or + r) * oc + c] = s;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_strided() {
        for (stride, kernel, pad) in [(1, 3, 1), (2, 3, 1), (1, 1, 0)] {
            let cs = ConvShape { in_ch: 3, out_ch: 2, kernel, stride, pad };
            let w: Vec<f64> = (0..cs.out_ch * cs.patch()).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
            let b = vec![0.3, -0.2];
            let x = Tensor::from_vec(3, 6, 6, (0..108).map(|i| ((i * 13 % 17) as f64) * 0.05).collect());
            let y = conv_forward(&cs, &w, &b, &x);
            let want = naive_conv(&cs, &w, &b, &x);
            for (a, e) in y.data.iter().zip(&want.data) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dy, conv(x)> - bias part must equal <dx, x> for the linear map
        let cs = ConvShape { in_ch: 2, out_ch: 3, kernel: 3, stride: 2, pad: 1 };
        let w: Vec<f64> = (0..cs.out_ch * cs.patch()).map(|i| ((i * 5 % 7) as f64 - 3.0) * 0.2).collect();
        let zero_b = vec![0.0; 3];
        let x = Tensor::from_vec(2, 8, 8, (0..128).map(|i| ((i * 3 % 19) as f64) * 0.1 - 0.5).collect());
        let y = conv_forward(&cs, &w, &zero_b, &x);
        let dy = Tensor::from_vec(y.channels, y.rows, y.cols, (0..y.data.len()).map(|i| (i % 5) as f64 - 2.0).collect());
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 3];
        let dx = conv_backward(&cs, &w, &x, &dy, &mut dw, &mut db, true).unwrap();
        let lhs: f64 = dy.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
        // weights enter linearly as well
        let rhs_w: f64 = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-9);
    }

    #[test]
    fn upsample_adjoint() {
        let x = Tensor::from_vec(2, 2, 3, (0..12).map(|v| v as f64).collect());
        let y = upsample2x(&x);
        assert_eq!(y.at(1, 3, 5), x.at(1, 1, 2));
        let dy = Tensor::from_vec(2, 4, 6, (0..48).map(|v| (v % 7) as f64).collect());
        let dx = upsample2x_backward(&dy);
        let lhs: f64 = dy.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
