//! Binary serialization of TT tensors (`TTv1`) and TT operators (`TMv1`).
//!
//! Layout: 4-byte magic, `u32` d, `u64` mode sizes (row then column sizes
//! for operators), `u64` ranks `r_0..r_d`, then every core's entries as
//! little-endian `f64` with the last index fastest. All integers are
//! little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use crate::tt::{TtMatrix, TtTensor};

const TT_MAGIC: &[u8; 4] = b"TTv1";
const TM_MAGIC: &[u8; 4] = b"TMv1";
const MAX_D: u32 = 4096;

fn put_u64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = usize>) {
    for v in values {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
}

fn put_cores(out: &mut Vec<u8>, cores: &[DenseTensor]) {
    for c in cores {
        for v in c.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_tt(x: &TtTensor) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TT_MAGIC);
    out.extend_from_slice(&(x.d() as u32).to_le_bytes());
    put_u64s(&mut out, x.modes());
    put_u64s(&mut out, x.ranks());
    put_cores(&mut out, x.cores());
    out
}

pub fn encode_ttmat(a: &TtMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TM_MAGIC);
    out.extend_from_slice(&(a.d() as u32).to_le_bytes());
    put_u64s(&mut out, a.row_modes());
    put_u64s(&mut out, a.col_modes());
    put_u64s(&mut out, a.ranks());
    put_cores(&mut out, a.cores());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("file truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64s(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n)
            .map(|_| {
                let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
                usize::try_from(v).map_err(|_| Error::Format(format!("size {v} does not fit in memory")))
            })
            .collect()
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format("core size overflows".into()))?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn header(cur: &mut Cursor<'_>, magic: &[u8; 4]) -> Result<usize> {
    if cur.take(4).map_err(|_| Error::Format("file too short for magic".into()))? != magic {
        return Err(Error::Format(format!("bad magic, expected {:?}", std::str::from_utf8(magic).unwrap())));
    }
    let d = cur.u32()?;
    if d == 0 || d > MAX_D {
        return Err(Error::Format(format!("implausible order d = {d}")));
    }
    Ok(d as usize)
}

fn check_ranks(ranks: &[usize]) -> Result<()> {
    if ranks[0] != 1 || ranks[ranks.len() - 1] != 1 {
        return Err(Error::Format(format!("boundary ranks must be 1, got {:?}", ranks)));
    }
    if ranks.contains(&0) {
        return Err(Error::Format(format!("zero rank in {:?}", ranks)));
    }
    Ok(())
}

fn core_len(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format(format!("core {:?} too large", dims)))
}

pub fn decode_tt(buf: &[u8]) -> Result<TtTensor> {
    let mut cur = Cursor { buf, pos: 0 };
    let d = header(&mut cur, TT_MAGIC)?;
    let modes = cur.u64s(d)?;
    let ranks = cur.u64s(d + 1)?;
    check_ranks(&ranks)?;
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let shape = vec![ranks[k], modes[k], ranks[k + 1]];
        let data = cur.f64s(core_len(&shape)?)?;
        cores.push(DenseTensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?);
    }
    cur.finish()?;
    TtTensor::new(cores).map_err(|e| Error::Format(e.to_string()))
}

pub fn decode_ttmat(buf: &[u8]) -> Result<TtMatrix> {
    let mut cur = Cursor { buf, pos: 0 };
    let d = header(&mut cur, TM_MAGIC)?;
    let rows = cur.u64s(d)?;
    let cols = cur.u64s(d)?;
    let ranks = cur.u64s(d + 1)?;
    check_ranks(&ranks)?;
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let shape = vec![ranks[k], rows[k], cols[k], ranks[k + 1]];
        let data = cur.f64s(core_len(&shape)?)?;
        cores.push(DenseTensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?);
    }
    cur.finish()?;
    TtMatrix::new(cores).map_err(|e| Error::Format(e.to_string()))
}

pub fn tt_write(x: &TtTensor, path: impl AsRef<Path>) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_tt(x))?;
    Ok(())
}

pub fn tt_read(path: impl AsRef<Path>) -> Result<TtTensor> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_tt(&buf)
}

pub fn ttmat_write(a: &TtMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_ttmat(a))?;
    Ok(())
}

pub fn ttmat_read(path: impl AsRef<Path>) -> Result<TtMatrix> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_ttmat(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, SeedableRng};

    fn sample() -> TtTensor {
        let mut rng = StdRng::seed_from_u64(21);
        TtTensor::random(&[3, 2, 4], &[2, 3], &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let x = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ttv1");
        tt_write(&x, &path).unwrap();
        let y = tt_read(&path).unwrap();
        for (a, b) in x.cores().iter().zip(y.cores()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_tt(&TtTensor::ones(&[2, 5]));
        assert_eq!(&bytes[..4], b"TTv1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 4 + 4 + 2 * 8 + 3 * 8 + 7 * 8);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = encode_tt(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode_tt(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rank_chain_mismatch_rejected() {
        let mut bytes = encode_tt(&sample());
        // r_d sits right before the first core: offset 8 + 3*8 + 3*8.
        let off = 8 + 24 + 24;
        bytes[off..off + 8].copy_from_slice(&2u64.to_le_bytes());
        assert!(matches!(decode_tt(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode_tt(&sample());
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(decode_tt(&bytes[..cut]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn operator_round_trip() {
        let mut rng = StdRng::seed_from_u64(22);
        let a = TtMatrix::random(&[2, 3], 2, &mut rng).unwrap();
        let b = decode_ttmat(&encode_ttmat(&a)).unwrap();
        assert_eq!(a, b);
        assert!(decode_tt(&encode_ttmat(&a)).is_err());
    }
}
