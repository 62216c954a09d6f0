//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn to_byte<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[3,H,W]` image in `[0,1]` as P6.
pub fn write_ppm<T: Scalar>(mut out: impl Write, image: &Tensor<T>) -> Result<()> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::shape("write_ppm", "[3,H,W]", format!("{:?}", image.shape())));
    }
    write!(out, "P6\n{w} {h}\n255\n")?;
    let mut bytes = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            bytes.extend((0..3).map(|ch| to_byte(image.at3(ch, y, x))));
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Writes a label map as P5 with the given maxval.
pub fn write_pgm(mut out: impl Write, width: usize, height: usize, maxval: u8, values: &[u8]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::shape("write_pgm", format!("{} samples", width * height), values.len().to_string()));
    }
    write!(out, "P5\n{width} {height}\n{maxval}\n")?;
    out.write_all(values)?;
    Ok(())
}

fn next_token(input: &mut impl BufRead) -> Result<String> {
    let mut token = Vec::new();
    loop {
        let mut byte = [0u8];
        if input.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if token.is_empty() => {
                let mut skip = Vec::new();
                input.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !token.is_empty() {
                    break;
                }
            }
            b => token.push(b),
        }
    }
    if token.is_empty() {
        return Err(Error::format("PNM header", "unexpected end of header"));
    }
    Ok(String::from_utf8_lossy(&token).into_owned())
}

struct PnmHeader {
    width: usize,
    height: usize,
    maxval: usize,
}

fn read_header(input: &mut impl BufRead, magic: &str) -> Result<PnmHeader> {
    let m = next_token(input)?;
    if m != magic {
        return Err(Error::format("PNM header", format!("expected {magic}, found {m}")));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = next_token(input)?;
        t.parse().map_err(|_| Error::format("PNM header", format!("bad {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::format("PNM header", format!("unsupported {width}x{height} maxval {maxval}")));
    }
    Ok(PnmHeader { width, height, maxval })
}

/// Reads a P6 image into a `[3,H,W]` tensor scaled to `[0,1]`.
pub fn read_ppm<T: Scalar>(mut input: impl BufRead) -> Result<Tensor<T>> {
    let hdr = read_header(&mut input, "P6")?;
    let mut bytes = vec![0u8; 3 * hdr.width * hdr.height];
    input.read_exact(&mut bytes)?;
    let maxval = hdr.maxval as f64;
    let plane = hdr.width * hdr.height;
    let data = (0..3 * plane).map(|i| T::lit(bytes[(i % plane) * 3 + i / plane] as f64 / maxval)).collect();
    Tensor::new(&[3, hdr.height, hdr.width], data)
}

/// Reads a P5 map; returns `(width, height, raw samples)`.
pub fn read_pgm(mut input: impl BufRead) -> Result<(usize, usize, Vec<u8>)> {
    let hdr = read_header(&mut input, "P5")?;
    let mut bytes = vec![0u8; hdr.width * hdr.height];
    input.read_exact(&mut bytes)?;
    Ok((hdr.width, hdr.height, bytes))
}

pub fn write_ppm_file<T: Scalar>(path: impl AsRef<Path>, image: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_ppm(&mut w, image)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ppm_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    read_ppm(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_pgm_file(path: impl AsRef<Path>, width: usize, height: usize, maxval: u8, values: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_pgm(&mut w, width, height, maxval, values)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pgm_file(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    read_pgm(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_quantizes_to_bytes() {
        let img = Tensor::<f64>::from_fn(&[3, 2, 3], |i| i as f64 / 17.0);
        let mut buf = Vec::new();
        write_ppm(&mut buf, &img).unwrap();
        assert!(buf.starts_with(b"P6\n3 2\n255\n"));
        let back: Tensor<f64> = read_ppm(&buf[..]).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_with_comment() {
        let raw = b"P5\n# labels\n2 2\n4\n\x00\x01\x02\x04";
        let (w, h, v) = read_pgm(&raw[..]).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(v, vec![0, 1, 2, 4]);
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(read_pgm(&b"P6\n1 1\n255\n\x00\x00\x00"[..]).is_err());
        assert!(read_ppm::<f64>(&b"P6\n2 2\n255\n\x00"[..]).is_err());
    }
}
