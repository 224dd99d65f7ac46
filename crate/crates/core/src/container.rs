//! `LMS1` matrix container: a 20-byte header followed by row-major
//! little-endian `f32` values.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LMS1"
//! 4       4     rows (u32 LE)      -- Mel bands for spectrograms
//! 8       4     cols (u32 LE)      -- frames
//! 12      8     config hash (u64 LE)
//! 20      4·rows·cols  values (f32 LE)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dsp::{LogMelSpectrogram, Matrix};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LMS1";
const HEADER_LEN: usize = 20;

pub fn encode(rows: usize, cols: usize, config_hash: u64, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), rows * cols);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&config_hash.to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Returns `(matrix, config_hash)`.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Matrix, u64)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not an LMS1 matrix file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let rows = u32_at(4);
    let cols = u32_at(8);
    let hash = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::format(
            path,
            format!("LMS1 payload size does not match {rows}×{cols} header"),
        ));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite value in LMS1 payload"));
    }
    Ok((Matrix { rows, cols, values }, hash))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix, config_hash: u64) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(m.rows, m.cols, config_hash, &m.values)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<(Matrix, u64)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_spectrogram(path: impl AsRef<Path>, spec: &LogMelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    fs::write(
        path,
        encode(spec.n_mels, spec.n_frames, spec.config_id, &spec.values),
    )
    .map_err(|e| Error::io(path, e))
}

pub fn read_spectrogram(path: impl AsRef<Path>) -> Result<LogMelSpectrogram> {
    let path = path.as_ref();
    let (m, hash) = read_matrix(path)?;
    LogMelSpectrogram::from_values(m.rows, m.cols, m.values, hash)
}

/// One CSV line per row.
pub fn write_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in 0..m.rows {
        let line: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// 8-bit binary PGM, min–max scaled; row 0 is written last so low Mel bands
/// sit at the bottom of the image.
pub fn write_pgm(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let (lo, hi) = m
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", m.cols, m.rows).into_bytes();
    for r in (0..m.rows).rev() {
        out.extend(m.row(r).iter().map(|&v| ((v - lo) / span * 255.0).round() as u8));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_exact_for_f32_values(
            rows in 1usize..6,
            cols in 1usize..6,
            hash: u64,
            seed in prop::collection::vec(-1e6f32..1e6, 36),
        ) {
            let values: Vec<f64> = seed[..rows * cols].iter().map(|&v| v as f64).collect();
            let bytes = encode(rows, cols, hash, &values);
            let (m, h) = decode(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(h, hash);
            prop_assert_eq!((m.rows, m.cols), (rows, cols));
            prop_assert_eq!(m.values, values);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(2, 3, 0xdead_beef, &[0.0; 6]);
        assert_eq!(&bytes[..4], b"LMS1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &0xdead_beefu64.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 24);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let mut bytes = encode(2, 2, 1, &[1.0; 4]);
        bytes.pop();
        assert!(decode(&bytes, Path::new("x")).is_err());
        assert!(decode(b"RIFF0000000000000000", Path::new("x")).is_err());
    }
}
