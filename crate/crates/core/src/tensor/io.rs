//! `TENS v1` container: a text header `TENS v1 <ndim> <d0> <d1> ...\n`
//! followed by row-major little-endian f64 values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

pub fn write_tens<T: Scalar>(mut out: impl Write, t: &Tensor<T>) -> Result<()> {
    let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    writeln!(out, "TENS v1 {} {}", t.ndim(), dims.join(" "))?;
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_tens<T: Scalar>(mut input: impl BufRead) -> Result<Tensor<T>> {
    let mut header = Vec::new();
    input.read_until(b'\n', &mut header)?;
    let header = String::from_utf8(header).map_err(|_| Error::format("TENS header", "not UTF-8"))?;
    let mut fields = header.split_whitespace();
    if (fields.next(), fields.next()) != (Some("TENS"), Some("v1")) {
        return Err(Error::format("TENS header", format!("bad magic in {:?}", header.trim_end())));
    }
    let ndim: usize = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("TENS header", "missing ndim"))?;
    let shape: Vec<usize> = fields.map(|s| s.parse().map_err(|_| Error::format("TENS header", format!("bad extent {s:?}")))).collect::<Result<_>>()?;
    if shape.len() != ndim {
        return Err(Error::format("TENS header", format!("ndim {ndim} but {} extents", shape.len())));
    }
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    input.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_tens_file<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_tens(&mut w, t)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tens_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tens(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(&[2, 1], vec![1.5f64, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tens(&mut buf, &t).unwrap();
        assert!(buf.starts_with(b"TENS v1 2 2 1\n"));
        assert_eq!(&buf[14..22], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 14 + 16);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_tens::<f64>(&b"TENZ v1 1 1\n\0\0\0\0\0\0\0\0"[..]).is_err());
        assert!(read_tens::<f64>(&b"TENS v1 1 2\n\0\0\0\0\0\0\0\0"[..]).is_err());
        assert!(read_tens::<f64>(&b"TENS v1 2 2\n\0\0\0\0\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(shape in prop::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
            let t = Tensor::<f64>::from_fn(&shape, |i| f64::from_bits(crate::rng::mix64(seed ^ i as u64) >> 2));
            let mut buf = Vec::new();
            write_tens(&mut buf, &t).unwrap();
            let back: Tensor<f64> = read_tens(&buf[..]).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
