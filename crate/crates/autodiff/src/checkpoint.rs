//! Parameter checkpoint codec.
//!
//! Layout, all little-endian: magic `SMNN`, version u32, tensor count u32,
//! then per tensor a u32 rank, u32 dims, and the payload as f32. The payload
//! is always stored as f32 regardless of the in-memory scalar type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CheckpointError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SMNN";
const VERSION: u32 = 1;

pub fn write_tensors<T: Real, W: Write>(mut w: W, tensors: &[&Tensor<T>]) -> Result<()> {
    let io = |e: std::io::Error| CheckpointError::Io(e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for t in tensors {
        w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for v in t.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

fn need<'a>(bytes: &'a [u8], cur: &mut usize, n: usize) -> Result<&'a [u8], CheckpointError> {
    if *cur + n > bytes.len() {
        return Err(CheckpointError::Truncated);
    }
    let s = &bytes[*cur..*cur + n];
    *cur += n;
    Ok(s)
}

fn read_u32(bytes: &[u8], cur: &mut usize) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(need(bytes, cur, 4)?.try_into().unwrap()))
}

pub fn read_tensors<T: Real, R: Read>(mut r: R) -> Result<Vec<Tensor<T>>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(CheckpointError::Io)?;
    let mut cur = 0usize;

    if need(&bytes, &mut cur, 4).map_err(|_| CheckpointError::MalformedHeader)? != &MAGIC[..] {
        return Err(CheckpointError::MalformedHeader.into());
    }
    let version = read_u32(&bytes, &mut cur)?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch(version).into());
    }
    let count = read_u32(&bytes, &mut cur)? as usize;

    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(&bytes, &mut cur)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&bytes, &mut cur)? as usize);
        }
        let elems: usize = shape.iter().product();
        let payload = need(&bytes, &mut cur, 4 * elems)?;
        let data: Vec<T> = payload
            .chunks_exact(4)
            .map(|c| T::of_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        tensors.push(Tensor::new(shape, data).expect("checkpoint tensor shape"));
    }
    if cur != bytes.len() {
        return Err(CheckpointError::TrailingData.into());
    }
    Ok(tensors)
}

pub fn save_tensors<T: Real>(path: &Path, tensors: &[&Tensor<T>]) -> Result<()> {
    let f = File::create(path).map_err(CheckpointError::Io)?;
    write_tensors(BufWriter::new(f), tensors)
}

pub fn load_tensors<T: Real>(path: &Path) -> Result<Vec<Tensor<T>>> {
    let f = File::open(path).map_err(CheckpointError::Io)?;
    read_tensors(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn roundtrip_preserves_shapes_and_values() {
        let a = Tensor::<f32>::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 0.25, 9.0]).unwrap();
        let b = Tensor::<f32>::scalar(7.0);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[&a, &b]).unwrap();
        let back: Vec<Tensor<f32>> = read_tensors(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], a);
        assert_eq!(back[1], b);
    }

    #[test]
    fn f64_tensors_round_through_f32_payload() {
        let t = Tensor::<f64>::from_vec(vec![0.5, -0.125, 3.0]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[&t]).unwrap();
        let back: Vec<Tensor<f64>> = read_tensors(&buf[..]).unwrap();
        assert_eq!(back[0], t); // exactly representable in f32
    }

    #[test]
    fn bad_magic_is_malformed_header() {
        let err = read_tensors::<f32, _>(&b"XYZ!rest"[..]).unwrap_err();
        assert!(matches!(
            err,
            Error::Checkpoint(CheckpointError::MalformedHeader)
        ));
    }

    #[test]
    fn wrong_version_is_distinct_error() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"SMNN");
        buf.extend_from_slice(&99u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        let err = read_tensors::<f32, _>(&buf[..]).unwrap_err();
        assert!(matches!(
            err,
            Error::Checkpoint(CheckpointError::VersionMismatch(99))
        ));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let t = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[&t]).unwrap();
        buf.truncate(buf.len() - 5);
        let err = read_tensors::<f32, _>(&buf[..]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::Truncated)));
    }

    #[test]
    fn trailing_bytes_are_detected() {
        let t = Tensor::<f32>::from_vec(vec![1.0]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[&t]).unwrap();
        buf.push(0);
        let err = read_tensors::<f32, _>(&buf[..]).unwrap_err();
        assert!(matches!(
            err,
            Error::Checkpoint(CheckpointError::TrailingData)
        ));
    }
}
