//! Kernel masks enforcing the raster-scan autoregressive factorization.
//!
//! With `r = (K - 1) / 2` the kernel center, tap `(u, v)` reads grid position
//! `(i + d(u - r), j + d(v - r))` when producing output `(i, j)`. A tap is kept
//! only if that position comes no later than `(i, j)` in raster order:
//!
//! ```text
//! causal_a (first layer)   causal_b (later layers)   bidir_a (first layer)
//!   1 1 1                    1 1 1                     1 1 1
//!   1 0 0                    1 1 0                     1 0 1
//!   0 0 0                    0 0 0                     1 1 1
//! ```
//!
//! Dilation stretches the tap positions but reuses the same pattern.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{ConvWeights, Element};

/// Raster-scan (row-major) order on grid positions.
pub struct RasterOrder;

impl RasterOrder {
    pub fn cmp(a: (usize, usize), b: (usize, usize)) -> Ordering {
        a.0.cmp(&b.0).then(a.1.cmp(&b.1))
    }

    /// `a ≺ b`
    pub fn precedes(a: (usize, usize), b: (usize, usize)) -> bool {
        Self::cmp(a, b) == Ordering::Less
    }

    /// Same order on signed offsets relative to the current position.
    pub fn offset_precedes(dy: isize, dx: isize) -> bool {
        dy < 0 || (dy == 0 && dx < 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Strictly-past taps only; center excluded.
    CausalA,
    /// Past taps plus the center.
    CausalB,
    /// Everything except the center.
    BidirA,
    Full,
}

impl MaskKind {
    pub const ALL: [MaskKind; 4] = [
        MaskKind::CausalA,
        MaskKind::CausalB,
        MaskKind::BidirA,
        MaskKind::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::CausalA => "causal_a",
            MaskKind::CausalB => "causal_b",
            MaskKind::BidirA => "bidir_a",
            MaskKind::Full => "full",
        }
    }

    pub fn is_causal(self) -> bool {
        matches!(self, MaskKind::CausalA | MaskKind::CausalB)
    }

    /// Whether tap `(u, v)` of a `K × K` kernel is kept.
    pub fn keeps(self, u: usize, v: usize, k: usize) -> bool {
        let r = (k - 1) / 2;
        match self {
            MaskKind::CausalA => u < r || (u == r && v < r),
            MaskKind::CausalB => u < r || (u == r && v <= r),
            MaskKind::BidirA => (u, v) != (r, r),
            MaskKind::Full => true,
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelMask {
    kind: MaskKind,
    k: usize,
    bits: Vec<bool>,
}

impl KernelMask {
    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.k + v]
    }

    /// Row-major `K × K` bits.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Rows of 0/1, handy for display and tests.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.bits
            .chunks(self.k)
            .map(|r| r.iter().map(|&b| b as u8).collect())
            .collect()
    }
}

impl fmt::Display for KernelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.to_rows() {
            let line: Vec<String> = row.iter().map(|b| b.to_string()).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

pub fn build_mask(kind: MaskKind, k: usize) -> Result<KernelMask> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidKernel(k));
    }
    let bits = (0..k * k).map(|idx| kind.keeps(idx / k, idx % k, k)).collect();
    Ok(KernelMask { kind, k, bits })
}

/// Zeroes every weight at a masked tap.
pub fn apply_mask<T: Element>(wts: &ConvWeights<T>, mask: &KernelMask) -> Result<ConvWeights<T>> {
    let mut out = wts.clone();
    mask_in_place(&mut out.w, wts.kernel(), mask)?;
    Ok(out)
}

/// Zeroes masked taps of a flat `(C_out, C_in, K, K)` buffer (weights or
/// their gradients).
pub fn mask_in_place<T: Element>(w: &mut [T], k: usize, mask: &KernelMask) -> Result<()> {
    if mask.k != k {
        return Err(Error::dims("apply_mask (kernel size)", k, mask.k));
    }
    let kk = k * k;
    if w.len() % kk != 0 {
        return Err(Error::dims("apply_mask (buffer length)", "multiple of K*K", w.len()));
    }
    for slice in w.chunks_mut(kk) {
        for (v, &keep) in slice.iter_mut().zip(&mask.bits) {
            if !keep {
                *v = T::default();
            }
        }
    }
    Ok(())
}
