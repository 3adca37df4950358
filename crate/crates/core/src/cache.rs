//! Binary operator cache.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic "BFCT" | version u32 | k_max u32 | l_max u32 | gamma f64
//! grid: n_e n_rho1 n_t1 n_h2 n_t2 n_chi n_eps pad_rad pad_ang (u32 each)
//! n_channels u32 | n_rows u32 | n_slices u32 | flags u32 | max_zeroed f64
//! payload_len u64 | crc32 u32
//! payload: channels (3·u32 each) | slices (tau, q1, start, end u32)
//!          | q1 q2 q3 (u32 columns) | weights f64 | R values f64
//! ```
//!
//! The checksum covers the header fields before it and the whole payload.

use std::fs;
use std::path::Path;

use crate::angular::{ChannelTable, GauntCoo, Slice};
use crate::basis::SpectralConfig;
use crate::contraction::FactorizedOperator;
use crate::kinematic::RTensor;
use crate::quadrature::GridSpec;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BFCT";
pub const VERSION: u32 = 1;

const FLAG_CONSERVATION: u32 = 1;
const FLAG_BALANCE: u32 = 2;
const HEADER_LEN: usize = 4 + 4 * 3 + 8 + 9 * 4 + 4 * 4 + 8 + 8 + 4;

/// Header fields readable without decoding the payload.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheHeader {
    pub version: u32,
    pub k_max: usize,
    pub l_max: usize,
    pub gamma: f64,
    pub grid: GridSpec,
    pub n_channels: usize,
    pub n_rows: usize,
    pub n_slices: usize,
    pub conservation_applied: bool,
    pub detailed_balance_applied: bool,
    pub max_zeroed: f64,
    pub payload_len: u64,
    pub crc32: u32,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Capacity(format!("{v} does not fit the cache's u32 fields")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity(format!("truncated cache: needed {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serialize an operator to bytes.
pub fn encode(op: &FactorizedOperator) -> Result<Vec<u8>> {
    let (cfg, r, g) = (op.cfg(), op.r(), op.g());
    let mut p = Writer(Vec::new());
    for t in &g.channels.triplets {
        for &l in t {
            p.u32(l)?;
        }
    }
    for s in &g.slices {
        for v in [s.tau, s.q1, s.start, s.end] {
            p.u32(v as usize)?;
        }
    }
    for col in [&g.q1, &g.q2, &g.q3] {
        for &q in col {
            p.u32(q as usize)?;
        }
    }
    for &w in &g.weight {
        p.f64(w);
    }
    for &v in &r.values {
        p.f64(v);
    }
    let payload = p.0;

    let mut h = Writer(Vec::with_capacity(HEADER_LEN + payload.len()));
    h.0.extend_from_slice(MAGIC);
    h.u32(VERSION as usize)?;
    h.u32(cfg.k_max)?;
    h.u32(cfg.l_max)?;
    h.f64(cfg.gamma);
    let gr = &r.grid;
    for v in [gr.n_e, gr.n_rho1, gr.n_t1, gr.n_h2, gr.n_t2, gr.n_chi, gr.n_eps, gr.pad_rad, gr.pad_ang] {
        h.u32(v)?;
    }
    h.u32(g.channels.len())?;
    h.u32(g.n_rows())?;
    h.u32(g.n_slices())?;
    let mut flags = 0;
    if r.conservation_applied {
        flags |= FLAG_CONSERVATION;
    }
    if r.detailed_balance_applied {
        flags |= FLAG_BALANCE;
    }
    h.u32(flags as usize)?;
    h.f64(r.max_zeroed);
    h.0.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    let mut crc = crc32fast::Hasher::new();
    crc.update(&h.0);
    crc.update(&payload);
    h.0.extend_from_slice(&crc.finalize().to_le_bytes());
    debug_assert_eq!(h.0.len(), HEADER_LEN);
    h.0.extend_from_slice(&payload);
    Ok(h.0)
}

fn read_header(rd: &mut Reader) -> Result<CacheHeader> {
    let magic = rd
        .take(4)
        .map_err(|_| Error::Format("file is too short to hold a cache header".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let k_max = rd.usize()?;
    let l_max = rd.usize()?;
    let gamma = rd.f64()?;
    let mut gv = [0usize; 9];
    for v in gv.iter_mut() {
        *v = rd.usize()?;
    }
    let grid = GridSpec {
        n_e: gv[0],
        n_rho1: gv[1],
        n_t1: gv[2],
        n_h2: gv[3],
        n_t2: gv[4],
        n_chi: gv[5],
        n_eps: gv[6],
        pad_rad: gv[7],
        pad_ang: gv[8],
    };
    let n_channels = rd.usize()?;
    let n_rows = rd.usize()?;
    let n_slices = rd.usize()?;
    let flags = rd.u32()?;
    if flags & !(FLAG_CONSERVATION | FLAG_BALANCE) != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
    }
    let max_zeroed = rd.f64()?;
    let payload_len = rd.u64()?;
    let crc32 = rd.u32()?;
    Ok(CacheHeader {
        version,
        k_max,
        l_max,
        gamma,
        grid,
        n_channels,
        n_rows,
        n_slices,
        conservation_applied: flags & FLAG_CONSERVATION != 0,
        detailed_balance_applied: flags & FLAG_BALANCE != 0,
        max_zeroed,
        payload_len,
        crc32,
    })
}

/// Decode only the header.
pub fn decode_header(bytes: &[u8]) -> Result<CacheHeader> {
    read_header(&mut Reader { buf: bytes, pos: 0 })
}

/// Deserialize and validate an operator.
pub fn decode(bytes: &[u8]) -> Result<FactorizedOperator> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    let h = read_header(&mut rd)?;
    let n_k = h.k_max + 1;
    let expected = h.n_channels as u64 * 12
        + h.n_slices as u64 * 16
        + h.n_rows as u64 * 20
        + (h.n_channels * n_k * n_k * n_k) as u64 * 8;
    if h.payload_len != expected {
        return Err(Error::Format(format!(
            "payload length {} disagrees with the header counts ({expected})",
            h.payload_len
        )));
    }
    let body = bytes.get(HEADER_LEN..).unwrap_or(&[]);
    if (body.len() as u64) < h.payload_len {
        return Err(Error::Integrity(format!(
            "truncated cache: payload has {} of {} bytes",
            body.len(),
            h.payload_len
        )));
    }
    if body.len() as u64 > h.payload_len {
        return Err(Error::Integrity("trailing bytes after the payload".into()));
    }
    let mut crc = crc32fast::Hasher::new();
    crc.update(&bytes[..HEADER_LEN - 4]);
    crc.update(body);
    if crc.finalize() != h.crc32 {
        return Err(Error::Integrity("checksum mismatch".into()));
    }

    let cfg = SpectralConfig::new(h.k_max, h.l_max, h.gamma).map_err(|e| Error::Format(e.to_string()))?;
    let mut triplets = Vec::with_capacity(h.n_channels);
    for _ in 0..h.n_channels {
        triplets.push([rd.usize()?, rd.usize()?, rd.usize()?]);
    }
    let channels = ChannelTable::from_triplets(h.l_max, triplets).map_err(|e| Error::Format(e.to_string()))?;
    let mut slices = Vec::with_capacity(h.n_slices);
    for _ in 0..h.n_slices {
        slices.push(Slice { tau: rd.u32()?, q1: rd.u32()?, start: rd.u32()?, end: rd.u32()? });
    }
    let mut cols = [vec![], vec![], vec![]];
    for col in cols.iter_mut() {
        *col = (0..h.n_rows).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
    }
    let weight = (0..h.n_rows).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
    let [q1, q2, q3] = cols;
    let g = GauntCoo { l_max: h.l_max, channels: channels.clone(), q1, q2, q3, weight, slices };

    let mut r = RTensor::zeros(n_k, channels, h.gamma, h.grid);
    for v in r.values.iter_mut() {
        *v = rd.f64()?;
    }
    r.max_zeroed = h.max_zeroed;
    r.conservation_applied = h.conservation_applied;
    r.detailed_balance_applied = h.detailed_balance_applied;
    FactorizedOperator::new(cfg, r, g).map_err(|e| Error::Format(format!("inconsistent cache contents: {e}")))
}

pub fn save(op: &FactorizedOperator, path: &Path) -> Result<()> {
    fs::write(path, encode(op)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<FactorizedOperator> {
    decode(&fs::read(path)?)
}

pub fn load_header(path: &Path) -> Result<CacheHeader> {
    decode_header(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::grid_sizes;

    fn small_op() -> FactorizedOperator {
        let cfg = SpectralConfig::new(1, 2, 0.5).unwrap();
        FactorizedOperator::build(&cfg, &grid_sizes(1, 2, 1, 1)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let op = small_op();
        let bytes = encode(&op).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.cfg(), op.cfg());
        assert_eq!(back.g(), op.g());
        assert_eq!(back.r().grid, op.r().grid);
        assert_eq!(back.r().max_zeroed.to_bits(), op.r().max_zeroed.to_bits());
        assert!(back.r().conservation_applied && back.r().detailed_balance_applied);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.r().values), bits(&op.r().values));
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn header_reports_counts() {
        let op = small_op();
        let h = decode_header(&encode(&op).unwrap()).unwrap();
        assert_eq!((h.k_max, h.l_max, h.gamma), (1, 2, 0.5));
        assert_eq!(h.n_rows, op.g().n_rows());
        assert_eq!(h.n_channels, op.g().channels.len());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&small_op()).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode(&bad), Err(Error::Version { found: 7, expected: 1 })));

        let bad = &bytes[..bytes.len() - 5];
        assert!(matches!(decode(bad), Err(Error::Integrity(_))));

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 3] ^= 0x10;
        assert!(matches!(decode(&bad), Err(Error::Integrity(_))));

        assert!(matches!(decode(&bytes[..2]), Err(Error::Format(_))));
    }
}
