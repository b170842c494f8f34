//! Little-endian binary tensor files.
//!
//! ```text
//! FGRD  "FGRD" u32 version=1 u32 N u32 H u32 W u32 D  then N·H·W·D f32, order (n, h, w, d)
//! AMSK  "AMSK" u32 version=1 u32 N u32 H u32 W        then N·H·W u8 in {0, 1}
//! AMAP  "AMAP" u32 version=1 u32 N u32 H u32 W        then N·H·W f32
//! ```
//!
//! Readers report the byte offset of the first violation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nll::AnomalyMap;
use crate::tensor::Grid4;

pub const FGRD_MAGIC: &[u8; 4] = b"FGRD";
pub const AMSK_MAGIC: &[u8; 4] = b"AMSK";
pub const AMAP_MAGIC: &[u8; 4] = b"AMAP";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.bytes.len() as u64,
                needed: (n - (self.bytes.len() - self.pos)) as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4], dims: usize) -> Result<Vec<usize>> {
        let found = self.take(4).map_err(|_| Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into(),
            found: String::from_utf8_lossy(self.bytes).into(),
        })?;
        if found != magic {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into(),
                found: String::from_utf8_lossy(found).into(),
            });
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::BadVersion {
                expected: VERSION,
                found: version,
            });
        }
        (0..dims).map(|_| self.u32().map(|v| v as usize)).collect()
    }

    fn payload(&mut self, count: usize, width: usize) -> Result<&'a [u8]> {
        let total = count.checked_mul(width).ok_or(Error::Format {
            offset: self.pos as u64,
            what: "payload size overflows".into(),
        })?;
        let s = self.take(total)?;
        if self.pos != self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                what: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(s)
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let start = self.pos;
        let raw = self.payload(count, 4)?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Format {
                        offset: (start + 4 * i) as u64,
                        what: format!("non-finite value {v}"),
                    })
                }
            })
            .collect()
    }
}

fn header_bytes(magic: &[u8; 4], dims: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * dims.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

/// Feature grids as stored on disk: `(n, h, w, d)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl FeatureSet {
    /// Channel-first single-image grids.
    pub fn to_grids(&self) -> Vec<Grid4<f32>> {
        let (h, w, d) = (self.h, self.w, self.d);
        let per = h * w * d;
        (0..self.n)
            .map(|n| {
                let img = &self.data[n * per..(n + 1) * per];
                Grid4::from_fn((1, d, h, w), |_, c, i, j| img[(i * w + j) * d + c])
            })
            .collect()
    }

    pub fn from_grids(grids: &[Grid4<f32>]) -> Result<Self> {
        let first = grids.first().ok_or(Error::Empty("grid list"))?;
        let (_, d, h, w) = first.dims();
        let mut data = Vec::with_capacity(grids.len() * h * w * d);
        let mut n = 0;
        for g in grids {
            let (gn, gd, gh, gw) = g.dims();
            if (gd, gh, gw) != (d, h, w) {
                return Err(Error::dims(
                    "FeatureSet::from_grids",
                    format!("(_, {d}, {h}, {w})"),
                    format!("{:?}", g.dims()),
                ));
            }
            for ni in 0..gn {
                for i in 0..h {
                    for j in 0..w {
                        for c in 0..d {
                            data.push(g.get(ni, c, i, j));
                        }
                    }
                }
            }
            n += gn;
        }
        Ok(Self { n, h, w, d, data })
    }
}

pub fn encode_fgrd(set: &FeatureSet) -> Vec<u8> {
    let mut out = header_bytes(FGRD_MAGIC, &[set.n, set.h, set.w, set.d]);
    out.reserve(set.data.len() * 4);
    for v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fgrd(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader::new(bytes);
    let dims = r.header(FGRD_MAGIC, 4)?;
    let (n, h, w, d) = (dims[0], dims[1], dims[2], dims[3]);
    let data = r.f32s(n * h * w * d)?;
    Ok(FeatureSet { n, h, w, d, data })
}

/// Binary masks, one `H × W` image each.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub h: usize,
    pub w: usize,
    pub masks: Vec<Vec<u8>>,
}

pub fn encode_amsk(set: &MaskSet) -> Vec<u8> {
    let mut out = header_bytes(AMSK_MAGIC, &[set.masks.len(), set.h, set.w]);
    for m in &set.masks {
        out.extend_from_slice(m);
    }
    out
}

pub fn decode_amsk(bytes: &[u8]) -> Result<MaskSet> {
    let mut r = Reader::new(bytes);
    let dims = r.header(AMSK_MAGIC, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let start = r.pos;
    let raw = r.payload(n * h * w, 1)?;
    if let Some(i) = raw.iter().position(|&b| b > 1) {
        return Err(Error::Format {
            offset: (start + i) as u64,
            what: format!("mask value {} is not 0 or 1", raw[i]),
        });
    }
    let masks = if h * w == 0 {
        vec![Vec::new(); n]
    } else {
        raw.chunks(h * w).map(|c| c.to_vec()).collect()
    };
    Ok(MaskSet { h, w, masks })
}

pub fn encode_amap(maps: &[AnomalyMap]) -> Result<Vec<u8>> {
    let (h, w) = maps.first().map_or((0, 0), |m| (m.height(), m.width()));
    let mut out = header_bytes(AMAP_MAGIC, &[maps.len(), h, w]);
    for m in maps {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::dims(
                "encode_amap",
                format!("{h}x{w}"),
                format!("{}x{}", m.height(), m.width()),
            ));
        }
        for v in m.scores() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_amap(bytes: &[u8]) -> Result<Vec<AnomalyMap>> {
    let mut r = Reader::new(bytes);
    let dims = r.header(AMAP_MAGIC, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let data = r.f32s(n * h * w)?;
    if h * w == 0 {
        return (0..n).map(|_| AnomalyMap::new(h, w, Vec::new())).collect();
    }
    data.chunks(h * w)
        .map(|c| AnomalyMap::new(h, w, c.to_vec()))
        .collect()
}

/// 8-bit binary PGM (`P5`, maxval 255) with per-image min-max scaling.
pub fn encode_pgm(map: &AnomalyMap) -> Vec<u8> {
    let (lo, hi) = map.min_max();
    let range = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(map.scores().iter().map(|&v| {
        if range > 0.0 {
            ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_fgrd(path: &Path) -> Result<FeatureSet> {
    decode_fgrd(&read_file(path)?)
}

pub fn read_amsk(path: &Path) -> Result<MaskSet> {
    decode_amsk(&read_file(path)?)
}

pub fn read_amap(path: &Path) -> Result<Vec<AnomalyMap>> {
    decode_amap(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSet {
        FeatureSet {
            n: 2,
            h: 2,
            w: 3,
            d: 2,
            data: (0..24).map(|v| v as f32 * 0.5).collect(),
        }
    }

    #[test]
    fn fgrd_layout_is_n_h_w_d() {
        let set = sample();
        let bytes = encode_fgrd(&set);
        assert_eq!(&bytes[..4], b"FGRD");
        assert_eq!(bytes.len(), 24 + 24 * 4);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        let grids = set.to_grids();
        // (n=1, h=1, w=2, d=1) -> flat index ((1*2+1)*3+2)*2+1 = 23
        assert_eq!(grids[1].get(0, 1, 1, 2), 23.0 * 0.5);
        assert_eq!(FeatureSet::from_grids(&grids).unwrap(), set);
        assert_eq!(decode_fgrd(&bytes).unwrap(), set);
    }

    #[test]
    fn fgrd_errors_name_offsets() {
        let bytes = encode_fgrd(&sample());
        match decode_fgrd(&bytes[..bytes.len() - 2]) {
            Err(Error::Truncated { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 2),
            other => panic!("{other:?}"),
        }
        let mut nan = bytes.clone();
        nan[24 + 8..24 + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_fgrd(&nan) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("{other:?}"),
        }
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(decode_fgrd(&v), Err(Error::BadVersion { found: 2, .. })));
        assert!(matches!(decode_fgrd(b"AMSK...."), Err(Error::BadMagic { .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_fgrd(&extra), Err(Error::Format { .. })));
    }

    #[test]
    fn amsk_rejects_non_binary() {
        let set = MaskSet {
            h: 2,
            w: 2,
            masks: vec![vec![0, 1, 1, 0], vec![1, 1, 0, 0]],
        };
        let mut bytes = encode_amsk(&set);
        assert_eq!(decode_amsk(&bytes).unwrap(), set);
        bytes[20 + 5] = 7;
        match decode_amsk(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 25),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn amap_round_trip() {
        let maps = vec![
            AnomalyMap::new(1, 3, vec![1.0, 2.5, -0.25]).unwrap(),
            AnomalyMap::new(1, 3, vec![0.0, 7.0, 3.0]).unwrap(),
        ];
        let bytes = encode_amap(&maps).unwrap();
        assert_eq!(&bytes[..4], b"AMAP");
        assert_eq!(bytes.len(), 20 + 24);
        assert_eq!(decode_amap(&bytes).unwrap(), maps);
    }

    #[test]
    fn pgm_header_and_scaling() {
        let m = AnomalyMap::new(2, 2, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let pgm = encode_pgm(&m);
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[0, 64, 128, 255]);
        let flat = encode_pgm(&AnomalyMap::new(1, 2, vec![3.0, 3.0]).unwrap());
        assert_eq!(&flat[flat.len() - 2..], &[0, 0]);
    }
}
