//! On-disk face sets: manifests, images, parsing maps and depth tensors.
//!
//! Manifest rows carry no header. Face rows are `seed,image,parsing,depth`;
//! degraded rows append `,lq,params`. Relative paths resolve against the
//! manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::degradation::{degrade, sample_params, DegradationParams};
use crate::error::{Error, Result};
use crate::facegen::{generate_face, FaceSample, ParsingMap};
use crate::image_io::{read_pgm_file, read_ppm_file, write_pgm_file, write_ppm_file};
use crate::rng::derive_indexed;
use crate::scalar::Scalar;
use crate::tensor::{read_tens_file, write_tens_file, Tensor};

use super::corpus::{sample_seeds, Split};
use super::eval::EvalItem;

/// Largest parsing label, written as the PGM maxval.
pub const PARSING_MAXVAL: u8 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaceRecord {
    pub seed: u64,
    pub image: PathBuf,
    pub parsing: PathBuf,
    pub depth: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegradedRecord {
    pub face: FaceRecord,
    pub lq: PathBuf,
    pub params: PathBuf,
}

impl DegradedRecord {
    /// Sample name used in reports: the HQ image's file stem.
    pub fn name(&self) -> String {
        self.face.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_rows(path: &Path, fields: usize) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if cols.len() < fields {
            return Err(Error::Format { what: "manifest", detail: format!("{}:{}: expected {fields} columns, got {}", path.display(), n + 1, cols.len()) });
        }
        rows.push(cols);
    }
    Ok(rows)
}

fn face_from_cols(base: &Path, cols: &[String]) -> Result<FaceRecord> {
    let seed = cols[0]
        .parse()
        .map_err(|_| Error::Format { what: "manifest", detail: format!("bad seed {:?}", cols[0]) })?;
    Ok(FaceRecord { seed, image: resolve(base, &cols[1]), parsing: resolve(base, &cols[2]), depth: resolve(base, &cols[3]) })
}

pub fn read_face_manifest(path: impl AsRef<Path>) -> Result<Vec<FaceRecord>> {
    let path = path.as_ref();
    let base = manifest_dir(path);
    read_rows(path, 4)?.iter().map(|c| face_from_cols(&base, c)).collect()
}

pub fn read_degraded_manifest(path: impl AsRef<Path>) -> Result<Vec<DegradedRecord>> {
    let path = path.as_ref();
    let base = manifest_dir(path);
    read_rows(path, 6)?
        .iter()
        .map(|c| Ok(DegradedRecord { face: face_from_cols(&base, c)?, lq: resolve(&base, &c[4]), params: resolve(&base, &c[5]) }))
        .collect()
}

fn face_row(r: &FaceRecord) -> String {
    format!("{},{},{},{}", r.seed, r.image.display(), r.parsing.display(), r.depth.display())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_parsing_file(path: impl AsRef<Path>, parsing: &ParsingMap) -> Result<()> {
    write_pgm_file(path, parsing.width, parsing.height, PARSING_MAXVAL, &parsing.labels)
}

pub fn read_parsing_file(path: impl AsRef<Path>) -> Result<ParsingMap> {
    let (w, h, labels) = read_pgm_file(path)?;
    ParsingMap::new(h, w, labels)
}

/// Writes `count` synthetic faces into `out` and returns the manifest path.
/// File names are relative so the directory can be moved as a whole.
pub fn write_face_set(seed: u64, count: usize, resolution: usize, out: impl AsRef<Path>) -> Result<PathBuf> {
    let out = out.as_ref();
    create_dir(out)?;
    let mut manifest = String::new();
    for i in 0..count {
        let (face_seed, _) = sample_seeds(seed, Split::Train, i);
        let face: FaceSample<f64> = generate_face(face_seed, resolution)?;
        let rec = FaceRecord {
            seed: face_seed,
            image: format!("face_{i:04}.ppm").into(),
            parsing: format!("face_{i:04}_parsing.pgm").into(),
            depth: format!("face_{i:04}_depth.tens").into(),
        };
        write_ppm_file(out.join(&rec.image), &face.image)?;
        write_parsing_file(out.join(&rec.parsing), &face.parsing)?;
        write_tens_file(out.join(&rec.depth), &face.depth)?;
        let _ = writeln!(manifest, "{}", face_row(&rec));
    }
    let path = out.join("manifest.csv");
    write_text(&path, &manifest)?;
    Ok(path)
}

/// Degrades every face of a face manifest into `out`, writing LQ images,
/// parameter files and a degraded manifest whose face columns are absolute.
pub fn write_degraded_set(manifest: impl AsRef<Path>, seed: u64, m_range: (usize, usize), out: impl AsRef<Path>) -> Result<PathBuf> {
    if m_range.0 > m_range.1 {
        return Err(Error::invalid(format!("m_min {} exceeds m_max {}", m_range.0, m_range.1)));
    }
    let out = out.as_ref();
    create_dir(out)?;
    let faces = read_face_manifest(manifest)?;
    let mut text = String::new();
    for (i, face) in faces.iter().enumerate() {
        let hq: Tensor<f64> = read_ppm_file(&face.image)?;
        let depth: Tensor<f64> = read_tens_file(&face.depth)?;
        let params = sample_params(derive_indexed(seed, "degrade", i as u64), m_range);
        let lq = degrade(&hq, &depth, &params)?;
        let (lq_name, params_name) = (format!("lq_{i:04}.ppm"), format!("lq_{i:04}_params.txt"));
        write_ppm_file(out.join(&lq_name), &lq)?;
        write_text(&out.join(&params_name), &params.to_kv_text())?;
        let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
        let rec = FaceRecord { seed: face.seed, image: abs(&face.image)?, parsing: abs(&face.parsing)?, depth: abs(&face.depth)? };
        let _ = writeln!(text, "{},{lq_name},{params_name}", face_row(&rec));
    }
    let path = out.join("manifest.csv");
    write_text(&path, &text)?;
    Ok(path)
}

pub fn read_params_file(path: impl AsRef<Path>) -> Result<DegradationParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DegradationParams::from_kv_text(&text)
}

/// Loads a degraded manifest as evaluation items.
pub fn load_eval_items<T: Scalar>(manifest: impl AsRef<Path>) -> Result<Vec<EvalItem<T>>> {
    read_degraded_manifest(manifest)?
        .iter()
        .map(|r| {
            Ok(EvalItem {
                name: r.name(),
                hq: read_ppm_file(&r.face.image)?,
                lq: read_ppm_file(&r.lq)?,
                parsing: read_parsing_file(&r.face.parsing)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_and_degraded_sets_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_face_set(4, 2, 32, dir.path().join("faces")).unwrap();
        let faces = read_face_manifest(&m).unwrap();
        assert_eq!(faces.len(), 2);
        let parsing = read_parsing_file(&faces[0].parsing).unwrap();
        let face: FaceSample<f64> = generate_face(faces[0].seed, 32).unwrap();
        assert_eq!(parsing, face.parsing);

        let d = write_degraded_set(&m, 9, (1, 2), dir.path().join("lq")).unwrap();
        let recs = read_degraded_manifest(&d).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].name(), "face_0001");
        let p = read_params_file(&recs[0].params).unwrap();
        assert_eq!(p, sample_params(derive_indexed(9, "degrade", 0), (1, 2)));
        let items: Vec<EvalItem> = load_eval_items(&d).unwrap();
        assert_eq!(items[0].lq.shape(), &[3, 32, 32]);
    }

    #[test]
    fn malformed_manifests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "1,a.ppm,b.pgm\n").unwrap();
        assert!(read_face_manifest(&p).is_err());
        std::fs::write(&p, "x,a.ppm,b.pgm,c.tens\n").unwrap();
        assert!(read_face_manifest(&p).is_err());
        assert!(read_degraded_manifest(dir.path().join("missing.csv")).is_err());
    }
}
