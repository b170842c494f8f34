//! Dense NCHW grids and same-padded dilated 2D convolution.
//!
//! Storage is either `f32` or `f64`; every reduction accumulates in `f64`.
//! Forward and input-gradient kernels pack shifted input rows into tiles and
//! run a small register-blocked matrix product over them. Per output element
//! the summation order is `b, then (c, u, v)` in lexicographic order, which is
//! the same order a naive loop uses, so both paths agree exactly in `f64`.

use rayon::prelude::*;
use std::fmt::Debug;

use crate::error::{Error, Result};

/// Scalar storage type for grids and weights.
pub trait Element: Copy + Default + PartialEq + PartialOrd + Debug + Send + Sync + 'static {
    const NAME: &'static str;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    const NAME: &'static str = "f32";
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Row-major `(N, C, H, W)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid4<T> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Element> Grid4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::default(); n * c * h * w],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize, usize), data: Vec<T>) -> Result<Self> {
        let (n, c, h, w) = dims;
        if data.len() != n * c * h * w {
            return Err(Error::dims("Grid4::from_vec", n * c * h * w, data.len()));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn from_fn(
        dims: (usize, usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let (n, c, h, w) = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        data.push(f(ni, ci, i, j));
                    }
                }
            }
        }
        Self { n, c, h, w, data }
    }

    /// `(N, C, H, W)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.c + c) * self.h + i) * self.w + j
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, i: usize, j: usize) -> T {
        self.data[self.offset(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: T) {
        let o = self.offset(n, c, i, j);
        self.data[o] = v;
    }

    /// One `H × W` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &self.data[start..start + hw]
    }

    /// Copy of image `n` as a batch of one.
    pub fn image(&self, n: usize) -> Self {
        let len = self.c * self.h * self.w;
        Self {
            n: 1,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Concatenates single- or multi-image grids along the batch axis.
    pub fn stack(images: &[&Self]) -> Result<Self> {
        let first = images.first().ok_or(Error::Empty("image list"))?;
        let (_, c, h, w) = first.dims();
        let mut data = Vec::new();
        let mut n = 0;
        for img in images {
            if (img.c, img.h, img.w) != (c, h, w) {
                return Err(Error::dims(
                    "Grid4::stack",
                    format!("(_, {c}, {h}, {w})"),
                    format!("{:?}", img.dims()),
                ));
            }
            n += img.n;
            data.extend_from_slice(&img.data);
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn cast<U: Element>(&self) -> Grid4<U> {
        Grid4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }
}

/// Weights and bias of one convolution: `w` is `(C_out, C_in, K, K)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    c_out: usize,
    c_in: usize,
    k: usize,
    dilation: usize,
}

impl<T: Element> ConvWeights<T> {
    pub fn new(
        c_out: usize,
        c_in: usize,
        k: usize,
        dilation: usize,
        w: Vec<T>,
        b: Vec<T>,
    ) -> Result<Self> {
        if k == 0 || k % 2 == 0 {
            return Err(Error::InvalidKernel(k));
        }
        if dilation == 0 {
            return Err(Error::InvalidDilation(dilation));
        }
        if w.len() != c_out * c_in * k * k {
            return Err(Error::dims("ConvWeights::new (w)", c_out * c_in * k * k, w.len()));
        }
        if b.len() != c_out {
            return Err(Error::dims("ConvWeights::new (b)", c_out, b.len()));
        }
        Ok(Self {
            w,
            b,
            c_out,
            c_in,
            k,
            dilation,
        })
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize, dilation: usize) -> Result<Self> {
        Self::new(
            c_out,
            c_in,
            k,
            dilation,
            vec![T::default(); c_out * c_in * k * k],
            vec![T::default(); c_out],
        )
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    /// Half-width `r = (K - 1) / 2`.
    pub fn radius(&self) -> usize {
        (self.k - 1) / 2
    }

    #[inline]
    pub fn index(&self, o: usize, c: usize, u: usize, v: usize) -> usize {
        ((o * self.c_in + c) * self.k + u) * self.k + v
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn cast<U: Element>(&self) -> ConvWeights<U> {
        ConvWeights {
            w: self.w.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            b: self.b.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            c_out: self.c_out,
            c_in: self.c_in,
            k: self.k,
            dilation: self.dilation,
        }
    }

    /// Signed spatial offset of tap `u` (or `v`): `d * (u - r)`.
    #[inline]
    fn tap_offset(&self, u: usize) -> isize {
        self.dilation as isize * (u as isize - self.radius() as isize)
    }
}

/// Gradients of `Σ out ⊙ grad_out` with respect to the convolution inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Grid4<T>,
    pub grad_w: Vec<T>,
    pub grad_b: Vec<T>,
}

/// Range of indices `i` in `0..len` with `i + shift` also in `0..len`.
#[inline]
fn valid_range(len: usize, shift: isize) -> std::ops::Range<usize> {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift.max(0)).max(0) as usize;
    if lo >= hi {
        0..0
    } else {
        lo..hi
    }
}

/// Pixels per packed tile.
const TILE: usize = 64;
/// Output channels per register block.
const OB: usize = 4;
/// Pixels per register block.
const PB: usize = 8;

/// One shifted read `src[ch, i + dy, j + dx]`.
#[derive(Clone, Copy, Debug)]
struct Tap {
    ch: usize,
    dy: isize,
    dx: isize,
}

/// Packs `TILE` pixels starting at flat index `p0` for every tap into
/// `out[kk * TILE + t]`, zero outside the grid.
#[inline(always)]
fn pack_tile<T: Element>(
    src: &[T],
    h: usize,
    w: usize,
    taps: &[Tap],
    p0: usize,
    out: &mut [f64],
) {
    let hw = h * w;
    let p_end = (p0 + TILE).min(hw);
    for (kk, tap) in taps.iter().enumerate() {
        let row_out = &mut out[kk * TILE..(kk + 1) * TILE];
        row_out.fill(0.0);
        let plane = &src[tap.ch * hw..(tap.ch + 1) * hw];
        let mut p = p0;
        while p < p_end {
            let i = p / w;
            let j_start = p - i * w;
            let j_end = (p_end - i * w).min(w);
            let si = i as isize + tap.dy;
            if si >= 0 && (si as usize) < h {
                let cols = valid_range(w, tap.dx);
                let lo = cols.start.max(j_start);
                let hi = cols.end.min(j_end);
                if lo < hi {
                    let s0 = si as usize * w + (lo as isize + tap.dx) as usize;
                    let d0 = i * w + lo - p0;
                    let src_row = &plane[s0..s0 + hi - lo];
                    for (d, s) in row_out[d0..d0 + hi - lo].iter_mut().zip(src_row) {
                        *d = s.to_f64();
                    }
                }
            }
            p = i * w + j_end;
        }
    }
}

/// `out[o, p0 + t] = bias[o] + Σ_kk wmat[o, kk] · packed[kk, t]`, summed in
/// `kk` order. `wmat` rows are padded to a multiple of `OB`.
#[inline(always)]
fn gemm_tile<T: Element>(
    wmat: &[f64],
    bias: &[f64],
    ktot: usize,
    packed: &[f64],
    p0: usize,
    hw: usize,
    c_out: usize,
    out: &mut [T],
) {
    let valid = (hw - p0).min(TILE);
    let packed = &packed[..ktot * TILE];
    for ob in (0..c_out).step_by(OB) {
        let w0 = &wmat[ob * ktot..(ob + 1) * ktot];
        let w1 = &wmat[(ob + 1) * ktot..(ob + 2) * ktot];
        let w2 = &wmat[(ob + 2) * ktot..(ob + 3) * ktot];
        let w3 = &wmat[(ob + 3) * ktot..(ob + 4) * ktot];
        for pb in (0..valid).step_by(PB) {
            let mut a0 = [bias[ob]; PB];
            let mut a1 = [bias[ob + 1]; PB];
            let mut a2 = [bias[ob + 2]; PB];
            let mut a3 = [bias[ob + 3]; PB];
            for ((((prow, &v0), &v1), &v2), &v3) in packed
                .chunks_exact(TILE)
                .zip(w0)
                .zip(w1)
                .zip(w2)
                .zip(w3)
            {
                let p: &[f64; PB] = prow[pb..pb + PB].try_into().expect("PB divides TILE");
                for t in 0..PB {
                    a0[t] += v0 * p[t];
                    a1[t] += v1 * p[t];
                    a2[t] += v2 * p[t];
                    a3[t] += v3 * p[t];
                }
            }
            let n = (valid - pb).min(PB);
            for (r, a) in [a0, a1, a2, a3].iter().enumerate() {
                let o = ob + r;
                if o >= c_out {
                    break;
                }
                let dst = &mut out[o * hw + p0 + pb..o * hw + p0 + pb + n];
                for (d, v) in dst.iter_mut().zip(a) {
                    *d = T::from_f64(*v);
                }
            }
        }
    }
}

/// Dense convolution of one image through packed tiles.
#[inline(always)]
fn conv_image<T: Element>(
    src: &[T],
    h: usize,
    w: usize,
    taps: &[Tap],
    wmat: &[f64],
    bias: &[f64],
    c_out: usize,
    out: &mut [T],
) {
    let hw = h * w;
    let mut packed = vec![0.0f64; taps.len() * TILE];
    for p0 in (0..hw).step_by(TILE) {
        pack_tile(src, h, w, taps, p0, &mut packed);
        gemm_tile(wmat, bias, taps.len(), &packed, p0, hw, c_out, out);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
fn conv_image_avx2<T: Element>(
    src: &[T],
    h: usize,
    w: usize,
    taps: &[Tap],
    wmat: &[f64],
    bias: &[f64],
    c_out: usize,
    out: &mut [T],
) {
    conv_image(src, h, w, taps, wmat, bias, c_out, out)
}

/// Runtime dispatch; both builds perform the same IEEE operations in the
/// same order (no contraction), so results are identical.
#[allow(clippy::too_many_arguments)]
fn conv_image_dispatch<T: Element>(
    src: &[T],
    h: usize,
    w: usize,
    taps: &[Tap],
    wmat: &[f64],
    bias: &[f64],
    c_out: usize,
    out: &mut [T],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            unsafe { conv_image_avx2(src, h, w, taps, wmat, bias, c_out, out) };
            return;
        }
    }
    conv_image(src, h, w, taps, wmat, bias, c_out, out)
}

/// Taps and padded weight matrix for the forward direction. Taps whose
/// weights are zero for every output channel are dropped; they add exact
/// zeros for finite inputs.
fn forward_plan<T: Element>(wts: &ConvWeights<T>) -> (Vec<Tap>, Vec<f64>) {
    let k = wts.k;
    let mut taps = Vec::new();
    let mut cols = Vec::new();
    for c in 0..wts.c_in {
        for u in 0..k {
            for v in 0..k {
                let live = (0..wts.c_out).any(|o| wts.w[wts.index(o, c, u, v)].to_f64() != 0.0);
                if live {
                    taps.push(Tap {
                        ch: c,
                        dy: wts.tap_offset(u),
                        dx: wts.tap_offset(v),
                    });
                    cols.push((c, u, v));
                }
            }
        }
    }
    let rows = wts.c_out.div_ceil(OB) * OB;
    let mut wmat = vec![0.0f64; rows * taps.len()];
    for o in 0..wts.c_out {
        for (kk, &(c, u, v)) in cols.iter().enumerate() {
            wmat[o * taps.len() + kk] = wts.w[wts.index(o, c, u, v)].to_f64();
        }
    }
    (taps, wmat)
}

/// Same-padded dilated convolution with stride 1.
pub fn conv2d_forward<T: Element>(x: &Grid4<T>, wts: &ConvWeights<T>) -> Result<Grid4<T>> {
    let (n, c_in, h, w) = x.dims();
    if c_in != wts.c_in {
        return Err(Error::dims("conv2d_forward (channels)", wts.c_in, c_in));
    }
    let c_out = wts.c_out;
    let hw = h * w;
    let mut out = Grid4::zeros(n, c_out, h, w);
    if hw == 0 || c_out == 0 {
        return Ok(out);
    }
    let (taps, wmat) = forward_plan(wts);
    let mut bias: Vec<f64> = wts.b.iter().map(|b| b.to_f64()).collect();
    bias.resize(c_out.div_ceil(OB) * OB, 0.0);
    let in_len = c_in * hw;
    out.data_mut()
        .par_chunks_mut(c_out * hw)
        .enumerate()
        .for_each(|(ni, dst)| {
            let src = &x.data()[ni * in_len..(ni + 1) * in_len];
            conv_image_dispatch(src, h, w, &taps, &wmat, &bias, c_out, dst);
        });
    Ok(out)
}

/// Analytic gradients of `Σ conv2d_forward(x, wts) ⊙ grad_out`.
pub fn conv2d_backward<T: Element>(
    x: &Grid4<T>,
    wts: &ConvWeights<T>,
    grad_out: &Grid4<T>,
) -> Result<ConvGrads<T>> {
    let (grad_w, grad_b, grad_x) = backward_impl(x, wts, grad_out, true)?;
    Ok(ConvGrads {
        grad_x: grad_x.expect("requested"),
        grad_w,
        grad_b,
    })
}

/// Columns per register block of the weight-gradient product.
const KB: usize = 8;

/// `grad_w[o, kk] += Σ_t g[o, p0 + t] · x_tap_kk[p0 + t]`, summed over `t`
/// in order. Both tiles are pixel-major: `g_t` rows hold `opad` channels and
/// `packed_t` rows hold `kpad` taps, zero-padded.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn weight_grad_tile(
    g_t: &[f64],
    opad: usize,
    packed_t: &[f64],
    kpad: usize,
    valid: usize,
    c_out: usize,
    ktot: usize,
    acc: &mut [f64],
) {
    for ob in (0..opad).step_by(OB) {
        for kb in (0..kpad).step_by(KB) {
            let mut a = [[0.0f64; KB]; OB];
            for (grow, prow) in g_t
                .chunks_exact(opad)
                .zip(packed_t.chunks_exact(kpad))
                .take(valid)
            {
                let p: &[f64; KB] = prow[kb..kb + KB].try_into().expect("KB divides kpad");
                let gv: &[f64; OB] = grow[ob..ob + OB].try_into().expect("OB divides opad");
                for r in 0..OB {
                    for l in 0..KB {
                        a[r][l] += gv[r] * p[l];
                    }
                }
            }
            for (r, row) in a.iter().enumerate() {
                let o = ob + r;
                if o >= c_out {
                    break;
                }
                for (l, v) in row.iter().enumerate() {
                    let kk = kb + l;
                    if kk < ktot {
                        acc[o * ktot + kk] += v;
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn weight_grad_image<T: Element>(
    x: &[T],
    g: &[T],
    h: usize,
    w: usize,
    taps: &[Tap],
    c_out: usize,
    acc: &mut [f64],
) {
    let hw = h * w;
    let ktot = taps.len();
    let kpad = ktot.div_ceil(KB) * KB;
    let mut packed = vec![0.0f64; ktot * TILE];
    let opad = c_out.div_ceil(OB) * OB;
    let mut packed_t = vec![0.0f64; kpad * TILE];
    let mut g_t = vec![0.0f64; opad * TILE];
    for p0 in (0..hw).step_by(TILE) {
        let valid = (hw - p0).min(TILE);
        pack_tile(x, h, w, taps, p0, &mut packed);
        for (kk, row) in packed.chunks_exact(TILE).enumerate() {
            for (t, v) in row.iter().enumerate() {
                packed_t[t * kpad + kk] = *v;
            }
        }
        for o in 0..c_out {
            for (t, v) in g[o * hw + p0..o * hw + p0 + valid].iter().enumerate() {
                g_t[t * opad + o] = v.to_f64();
            }
        }
        weight_grad_tile(&g_t, opad, &packed_t, kpad, valid, c_out, ktot, acc);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn weight_grad_image_avx2<T: Element>(
    x: &[T],
    g: &[T],
    h: usize,
    w: usize,
    taps: &[Tap],
    c_out: usize,
    acc: &mut [f64],
) {
    weight_grad_image(x, g, h, w, taps, c_out, acc)
}

fn weight_grad_dispatch<T: Element>(
    x: &[T],
    g: &[T],
    h: usize,
    w: usize,
    taps: &[Tap],
    c_out: usize,
    acc: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            unsafe { weight_grad_image_avx2(x, g, h, w, taps, c_out, acc) };
            return;
        }
    }
    weight_grad_image(x, g, h, w, taps, c_out, acc)
}

/// Backward pass; `grad_x` is skipped when `need_grad_x` is false (first layer).
pub(crate) fn backward_impl<T: Element>(
    x: &Grid4<T>,
    wts: &ConvWeights<T>,
    grad_out: &Grid4<T>,
    need_grad_x: bool,
) -> Result<(Vec<T>, Vec<T>, Option<Grid4<T>>)> {
    let (n, c_in, h, w) = x.dims();
    if c_in != wts.c_in {
        return Err(Error::dims("conv2d_backward (channels)", wts.c_in, c_in));
    }
    let expected = (n, wts.c_out, h, w);
    if grad_out.dims() != expected {
        return Err(Error::dims(
            "conv2d_backward (grad_out)",
            format!("{expected:?}"),
            format!("{:?}", grad_out.dims()),
        ));
    }
    let k = wts.k;
    let c_out = wts.c_out;
    let hw = h * w;

    let grad_b: Vec<T> = (0..c_out)
        .map(|o| {
            let mut s = 0.0f64;
            for ni in 0..n {
                for g in grad_out.plane(ni, o) {
                    s += g.to_f64();
                }
            }
            T::from_f64(s)
        })
        .collect();

    // every tap, masked or not: this is the plain convolution gradient
    let all_taps: Vec<Tap> = (0..c_in)
        .flat_map(|c| (0..k).flat_map(move |u| (0..k).map(move |v| (c, u, v))))
        .map(|(c, u, v)| Tap {
            ch: c,
            dy: wts.tap_offset(u),
            dx: wts.tap_offset(v),
        })
        .collect();
    let ktot = all_taps.len();
    let per_image: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let mut acc = vec![0.0f64; c_out * ktot];
            if hw > 0 {
                let xs = &x.data()[ni * c_in * hw..(ni + 1) * c_in * hw];
                let gs = &grad_out.data()[ni * c_out * hw..(ni + 1) * c_out * hw];
                weight_grad_dispatch(xs, gs, h, w, &all_taps, c_out, &mut acc);
            }
            acc
        })
        .collect();
    let mut gw = vec![0.0f64; c_out * ktot];
    for img in &per_image {
        for (a, b) in gw.iter_mut().zip(img) {
            *a += b;
        }
    }
    // taps are enumerated in (c, u, v) order, matching the weight layout
    let grad_w: Vec<T> = gw.into_iter().map(T::from_f64).collect();

    let grad_x = if need_grad_x {
        // grad_x[c, p] = Σ_{o,u,v} w[o,c,u,v] · g[o, p − shift(u, v)]
        let mut taps = Vec::new();
        let mut cols = Vec::new();
        for o in 0..c_out {
            for u in 0..k {
                for v in 0..k {
                    let live = (0..c_in).any(|c| wts.w[wts.index(o, c, u, v)].to_f64() != 0.0);
                    if live {
                        taps.push(Tap {
                            ch: o,
                            dy: -wts.tap_offset(u),
                            dx: -wts.tap_offset(v),
                        });
                        cols.push((o, u, v));
                    }
                }
            }
        }
        let rows = c_in.div_ceil(OB) * OB;
        let mut wmat = vec![0.0f64; rows * taps.len()];
        for c in 0..c_in {
            for (kk, &(o, u, v)) in cols.iter().enumerate() {
                wmat[c * taps.len() + kk] = wts.w[wts.index(o, c, u, v)].to_f64();
            }
        }
        let zero_bias = vec![0.0f64; rows];
        let mut gx = Grid4::zeros(n, c_in, h, w);
        if hw > 0 {
            let g_len = c_out * hw;
            gx.data_mut()
                .par_chunks_mut(c_in * hw)
                .enumerate()
                .for_each(|(ni, dst)| {
                    let src = &grad_out.data()[ni * g_len..(ni + 1) * g_len];
                    conv_image_dispatch(src, h, w, &taps, &wmat, &zero_bias, c_in, dst);
                });
        }
        Some(gx)
    } else {
        None
    };

    Ok((grad_w, grad_b, grad_x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(x: &Grid4<f64>, wts: &ConvWeights<f64>) -> Grid4<f64> {
        let (n, c_in, h, w) = x.dims();
        let r = wts.radius() as isize;
        let d = wts.dilation() as isize;
        Grid4::from_fn((n, wts.c_out(), h, w), |ni, o, i, j| {
            let mut acc = wts.b[o];
            for c in 0..c_in {
                for u in 0..wts.kernel() {
                    for v in 0..wts.kernel() {
                        let si = i as isize + d * (u as isize - r);
                        let sj = j as isize + d * (v as isize - r);
                        let xv = if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                            x.get(ni, c, si as usize, sj as usize)
                        } else {
                            0.0
                        };
                        acc += wts.w[wts.index(o, c, u, v)] * xv;
                    }
                }
            }
            acc
        })
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn one_by_one_is_affine() {
        let x = Grid4::from_vec((1, 1, 1, 1), vec![5.0f32]).unwrap();
        let wts = ConvWeights::new(1, 1, 1, 1, vec![2.0], vec![1.0]).unwrap();
        let y = conv2d_forward(&x, &wts).unwrap();
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let x = Grid4::<f64>::zeros(1, 1, 3, 3);
        let wts = ConvWeights::new(1, 1, 3, 1, vec![0.7; 9], vec![0.0]).unwrap();
        let y = conv2d_forward(&x, &wts).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_delta_is_identity() {
        let x = Grid4::from_vec((1, 1, 3, 3), (1..=9).map(|v| v as f64).collect()).unwrap();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let wts = ConvWeights::new(1, 1, 3, 1, w, vec![0.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &wts).unwrap(), x);
    }

    #[test]
    fn forward_matches_naive_loop_exactly() {
        let mut rnd = lcg(11);
        let x = Grid4::from_fn((1, 2, 5, 5), |_, _, _, _| rnd());
        let w: Vec<f64> = (0..3 * 2 * 9).map(|_| rnd()).collect();
        let b: Vec<f64> = (0..3).map(|_| rnd()).collect();
        let wts = ConvWeights::new(3, 2, 3, 2, w, b).unwrap();
        let fast = conv2d_forward(&x, &wts).unwrap();
        let slow = naive_forward(&x, &wts);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn forward_matches_naive_loop_across_tiles() {
        let mut rnd = lcg(29);
        let x = Grid4::from_fn((2, 6, 13, 11), |_, _, _, _| rnd());
        let mut w: Vec<f64> = (0..5 * 6 * 25).map(|_| rnd()).collect();
        // a dead tap column exercises the pruned path
        for o in 0..5 {
            for c in 0..6 {
                w[((o * 6 + c) * 5 + 4) * 5 + 4] = 0.0;
            }
        }
        let b: Vec<f64> = (0..5).map(|_| rnd()).collect();
        let wts = ConvWeights::new(5, 6, 5, 2, w, b).unwrap();
        assert_eq!(conv2d_forward(&x, &wts).unwrap(), naive_forward(&x, &wts));
    }

    #[test]
    fn backward_matches_naive_sums() {
        let mut rnd = lcg(41);
        let (n, c_in, c_out, h, w, k, d) = (2, 3, 5, 9, 14, 3, 2);
        let x = Grid4::from_fn((n, c_in, h, w), |_, _, _, _| rnd());
        let g = Grid4::from_fn((n, c_out, h, w), |_, _, _, _| rnd());
        let wv: Vec<f64> = (0..c_out * c_in * k * k).map(|_| rnd()).collect();
        let wts = ConvWeights::new(c_out, c_in, k, d, wv, vec![0.0; c_out]).unwrap();
        let grads = conv2d_backward(&x, &wts, &g).unwrap();
        let r = wts.radius() as isize;
        let mut gw = vec![0.0; wts.w.len()];
        let mut gx = Grid4::<f64>::zeros(n, c_in, h, w);
        for ni in 0..n {
            for o in 0..c_out {
                for i in 0..h {
                    for j in 0..w {
                        let go = g.get(ni, o, i, j);
                        for c in 0..c_in {
                            for u in 0..k {
                                for v in 0..k {
                                    let si = i as isize + d as isize * (u as isize - r);
                                    let sj = j as isize + d as isize * (v as isize - r);
                                    if si < 0 || sj < 0 || si as usize >= h || sj as usize >= w {
                                        continue;
                                    }
                                    let (si, sj) = (si as usize, sj as usize);
                                    let idx = wts.index(o, c, u, v);
                                    gw[idx] += go * x.get(ni, c, si, sj);
                                    let cur = gx.get(ni, c, si, sj);
                                    gx.set(ni, c, si, sj, cur + go * wts.w[idx]);
                                }
                            }
                        }
                    }
                }
            }
        }
        for (a, b) in grads.grad_w.iter().zip(&gw) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
        for (a, b) in grads.grad_x.data().iter().zip(gx.data()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = Grid4::<f32>::zeros(1, 3, 4, 4);
        let wts = ConvWeights::<f32>::zeros(1, 2, 3, 1).unwrap();
        assert!(matches!(conv2d_forward(&x, &wts), Err(Error::DimMismatch { .. })));
        let g = Grid4::<f32>::zeros(1, 1, 4, 4);
        assert!(conv2d_backward(&x, &wts, &g).is_err());
    }

    #[test]
    fn grad_out_shape_checked() {
        let x = Grid4::<f32>::zeros(1, 2, 4, 4);
        let wts = ConvWeights::<f32>::zeros(1, 2, 3, 1).unwrap();
        let g = Grid4::<f32>::zeros(1, 1, 4, 5);
        assert!(conv2d_backward(&x, &wts, &g).is_err());
    }

    #[test]
    fn even_kernel_and_zero_dilation_rejected() {
        assert!(matches!(
            ConvWeights::<f32>::zeros(1, 1, 2, 1),
            Err(Error::InvalidKernel(2))
        ));
        assert!(matches!(
            ConvWeights::<f32>::zeros(1, 1, 3, 0),
            Err(Error::InvalidDilation(0))
        ));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rnd = lcg(3);
        let x = Grid4::from_fn((2, 2, 4, 4), |_, _, _, _| rnd());
        let w: Vec<f64> = (0..2 * 2 * 9).map(|_| rnd()).collect();
        let wts = ConvWeights::new(2, 2, 3, 1, w, vec![0.1, 0.2]).unwrap();
        let g = Grid4::zeros(2, 2, 4, 4);
        let grads = conv2d_backward(&x, &wts, &g).unwrap();
        assert!(grads.grad_x.data().iter().all(|&v| v == 0.0));
        assert!(grads.grad_w.iter().all(|&v| v == 0.0));
        assert!(grads.grad_b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_kernel_closed_form() {
        let x = Grid4::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Grid4::from_vec((1, 1, 2, 2), vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let wts = ConvWeights::new(1, 1, 1, 1, vec![3.0], vec![0.0]).unwrap();
        let grads = conv2d_backward(&x, &wts, &g).unwrap();
        assert_eq!(grads.grad_w, vec![0.5 - 2.0 + 6.0 + 1.0]);
        assert_eq!(grads.grad_b, vec![0.5 - 1.0 + 2.0 + 0.25]);
        assert_eq!(grads.grad_x.data(), &[1.5, -3.0, 6.0, 0.75]);
    }

    #[test]
    fn valid_range_edges() {
        assert_eq!(valid_range(5, 0), 0..5);
        assert_eq!(valid_range(5, 2), 0..3);
        assert_eq!(valid_range(5, -2), 2..5);
        assert!(valid_range(3, 4).is_empty());
        assert!(valid_range(3, -4).is_empty());
    }
}
