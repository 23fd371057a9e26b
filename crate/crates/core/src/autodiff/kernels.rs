//! Dense f32 kernels shared by the tape's forward and backward rules.
//!
//! Every kernel accumulates each output element in a fixed order so that
//! results are reproducible bit for bit and comparable against naive
//! nested-loop references.

/// Row-major `[m×k] · [k×n]`. Each output element is accumulated over the
/// inner index in ascending order, starting from zero.
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    if n == 1 && k > 0 {
        return a
            .chunks_exact(k)
            .take(m)
            .map(|row| row.iter().zip(b).fold(0.0f32, |acc, (x, y)| acc + x * y))
            .collect();
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Accumulates `da += dc · bᵀ` and `db += aᵀ · dc`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward(
    a: &[f32],
    b: &[f32],
    dc: &[f32],
    m: usize,
    k: usize,
    n: usize,
    da: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let dcrow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                let s: f32 = dcrow.iter().zip(brow).map(|(x, y)| x * y).sum();
                da[i * k + p] += s;
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let dcrow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let dbrow = &mut db[p * n..(p + 1) * n];
                for (o, &g) in dbrow.iter_mut().zip(dcrow) {
                    *o += aip * g;
                }
            }
        }
    }
}

/// Geometry of a 2-D convolution over a `C_in×H×W` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// Output spatial size, or `None` when the kernel does not fit the padded input.
    pub fn output_hw(&self) -> Option<(usize, usize)> {
        let ph = self.h + 2 * self.pad;
        let pw = self.w + 2 * self.pad;
        if self.stride == 0 || ph < self.kh || pw < self.kw {
            return None;
        }
        Some(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }

    /// Output indices `o` in `0..len_out` whose input coordinate
    /// `o*stride + k - pad` lands inside `0..len_in`.
    fn valid_range(&self, k: usize, len_in: usize, len_out: usize) -> std::ops::Range<usize> {
        let s = self.stride;
        // smallest o with o*s + k >= pad
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        // largest o with o*s + k - pad < len_in  =>  o*s < len_in + pad - k
        let lim = len_in + self.pad;
        let hi = if lim <= k { 0 } else { (lim - k).div_ceil(s) };
        lo.min(len_out)..hi.min(len_out)
    }
}

/// Cross-correlation with zero padding. Per output element the sum runs over
/// `(c_in, ky, kx)` in row-major order; padded taps are skipped; the bias, when
/// present, is added last.
pub fn conv2d(input: &[f32], kernels: &[f32], bias: Option<&[f32]>, g: &ConvGeometry) -> Vec<f32> {
    if g.stride != 1 {
        return conv2d_strided(input, kernels, bias, g);
    }
    // Column-major planes put the long H axis innermost.
    let (ho, wo) = g.output_hw().expect("conv geometry checked by caller");
    let input_t = transpose_planes(input, g.c_in, g.h, g.w);
    let mut out_t = vec![0.0f32; g.c_out * wo * ho];
    for co in 0..g.c_out {
        let oplane = &mut out_t[co * wo * ho..(co + 1) * wo * ho];
        for ci in 0..g.c_in {
            let iplane = &input_t[ci * g.w * g.h..(ci + 1) * g.w * g.h];
            for ky in 0..g.kh {
                let yr = g.valid_range(ky, g.h, ho);
                if yr.is_empty() {
                    continue;
                }
                let iy0 = yr.start + ky - g.pad;
                for kx in 0..g.kw {
                    let wv = kernels[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    for x in g.valid_range(kx, g.w, wo) {
                        let ix = x + kx - g.pad;
                        let ocol = &mut oplane[x * ho + yr.start..x * ho + yr.end];
                        let icol = &iplane[ix * g.h + iy0..ix * g.h + iy0 + yr.len()];
                        for (o, &iv) in ocol.iter_mut().zip(icol) {
                            *o += wv * iv;
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bv = b[co];
            for o in oplane.iter_mut() {
                *o += bv;
            }
        }
    }
    transpose_planes(&out_t, g.c_out, wo, ho)
}

/// `[c × rows × cols]` to `[c × cols × rows]`.
fn transpose_planes(x: &[f32], c: usize, rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (src, dst) in x
        .chunks_exact(rows * cols)
        .zip(out.chunks_exact_mut(rows * cols))
        .take(c)
    {
        for r in 0..rows {
            for (j, &v) in src[r * cols..(r + 1) * cols].iter().enumerate() {
                dst[j * rows + r] = v;
            }
        }
    }
    out
}

fn conv2d_strided(input: &[f32], kernels: &[f32], bias: Option<&[f32]>, g: &ConvGeometry) -> Vec<f32> {
    let (ho, wo) = g.output_hw().expect("conv geometry checked by caller");
    let mut out = vec![0.0f32; g.c_out * ho * wo];
    for co in 0..g.c_out {
        let oplane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..g.c_in {
            let iplane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let yr = g.valid_range(ky, g.h, ho);
                for kx in 0..g.kw {
                    let wv = kernels[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    let xr = g.valid_range(kx, g.w, wo);
                    for y in yr.clone() {
                        let iy = y * g.stride + ky - g.pad;
                        let orow = &mut oplane[y * wo..(y + 1) * wo];
                        let irow = &iplane[iy * g.w..(iy + 1) * g.w];
                        for x in xr.clone() {
                            orow[x] += wv * irow[x * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bv = b[co];
            for o in oplane.iter_mut() {
                *o += bv;
            }
        }
    }
    out
}

/// Accumulates input, kernel and bias gradients of [`conv2d`].
pub fn conv2d_backward(
    input: &[f32],
    kernels: &[f32],
    dout: &[f32],
    g: &ConvGeometry,
    mut dinput: Option<&mut [f32]>,
    mut dkernels: Option<&mut [f32]>,
    dbias: Option<&mut [f32]>,
) {
    let (ho, wo) = g.output_hw().expect("conv geometry checked by caller");
    for co in 0..g.c_out {
        let dplane = &dout[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..g.c_in {
            let ioff = ci * g.h * g.w;
            for ky in 0..g.kh {
                let yr = g.valid_range(ky, g.h, ho);
                for kx in 0..g.kw {
                    let kidx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                    let wv = kernels[kidx];
                    let xr = g.valid_range(kx, g.w, wo);
                    let mut kacc = 0.0f32;
                    for y in yr.clone() {
                        let iy = y * g.stride + ky - g.pad;
                        for x in xr.clone() {
                            let ix = x * g.stride + kx - g.pad;
                            let d = dplane[y * wo + x];
                            let ii = ioff + iy * g.w + ix;
                            kacc += input[ii] * d;
                            if let Some(di) = dinput.as_deref_mut() {
                                di[ii] += wv * d;
                            }
                        }
                    }
                    if let Some(dk) = dkernels.as_deref_mut() {
                        dk[kidx] += kacc;
                    }
                }
            }
        }
    }
    if let Some(db) = dbias {
        for co in 0..g.c_out {
            db[co] += dout[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f32>();
        }
    }
}

/// 2×2 max pooling with stride 2 over a `C×H×W` input. Returns the pooled
/// values and, for each output, the flat input index of the selected element
/// (first maximum in row-major window order).
pub fn maxpool2x2(input: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let mut best_i = base + (2 * y) * w + 2 * x;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    (out, arg)
}

/// Numerically stabilised softmax over each row of length `cols`.
pub fn softmax_rows(x: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (row, orow) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}
