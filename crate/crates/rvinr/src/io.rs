//! Array sidecar format: a JSON header next to a raw little-endian `f32`
//! payload, guarded by a 64-bit FNV-1a hash. Plus binary PGM export.

use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use rvinr_core::geometry::Image2D;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const DTYPE: &str = "f32";
pub const ENDIANNESS: &str = "little";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayHeader {
    pub name: String,
    pub dtype: String,
    /// Row-major, slowest axis first.
    pub dims: Vec<usize>,
    pub units: String,
    pub endianness: String,
    /// FNV-1a 64 of the payload bytes, 16 lowercase hex digits.
    pub hash: String,
}

impl ArrayHeader {
    /// Number of elements, or `None` on overflow.
    pub fn element_count(&self) -> Option<usize> {
        self.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    pub fn byte_len(&self) -> Option<usize> {
        self.element_count()?.checked_mul(4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredArray {
    pub header: ArrayHeader,
    /// Values widened from single precision.
    pub data: Vec<f64>,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn hash_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Payload path belonging to a header path (`x.json` -> `x.f32`).
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension(DTYPE)
}

pub fn encode_payload(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

/// Writes `data` (rounded to `f32`) with header `path` and a sibling payload.
pub fn write_array(path: &Path, name: &str, dims: &[usize], units: &str, data: &[f64]) -> Result<ArrayHeader> {
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
        PipelineError::DimensionOverflow { path: path.to_path_buf() }
    })?;
    if count != data.len() {
        return Err(PipelineError::invalid(path, format!("dims {dims:?} hold {count} values, got {}", data.len())));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite() || !(v.abs() <= f32::MAX as f64)) {
        return Err(PipelineError::invalid(path, format!("value {i} is not representable ({})", data[i])));
    }
    let payload = encode_payload(data);
    let header = ArrayHeader {
        name: name.to_string(),
        dtype: DTYPE.to_string(),
        dims: dims.to_vec(),
        units: units.to_string(),
        endianness: ENDIANNESS.to_string(),
        hash: hash_hex(&payload),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let payload_file = payload_path(path);
    fs::write(&payload_file, &payload).map_err(|e| PipelineError::io(&payload_file, e))?;
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))?;
    Ok(header)
}

pub fn read_header(path: &Path) -> Result<ArrayHeader> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let header: ArrayHeader =
        serde_json::from_str(&text).map_err(|e| PipelineError::invalid(path, e.to_string()))?;
    if header.dtype != DTYPE || header.endianness != ENDIANNESS {
        return Err(PipelineError::invalid(path, format!("unsupported dtype {} / {}", header.dtype, header.endianness)));
    }
    Ok(header)
}

/// Reads and verifies an array written by [`write_array`].
pub fn read_array(path: &Path) -> Result<StoredArray> {
    let header = read_header(path)?;
    let expected = header.byte_len().ok_or_else(|| PipelineError::DimensionOverflow { path: path.to_path_buf() })?;
    let payload_file = payload_path(path);
    let payload = fs::read(&payload_file).map_err(|e| PipelineError::io(&payload_file, e))?;
    if payload.len() < expected {
        return Err(PipelineError::Truncated { path: payload_file, expected, actual: payload.len() });
    }
    if payload.len() > expected {
        return Err(PipelineError::invalid(&payload_file, format!("{} trailing bytes", payload.len() - expected)));
    }
    let actual = hash_hex(&payload);
    if actual != header.hash {
        return Err(PipelineError::HashMismatch { path: payload_file, expected: header.hash, actual });
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    Ok(StoredArray { header, data })
}

pub fn write_image(path: &Path, name: &str, units: &str, img: &Image2D) -> Result<ArrayHeader> {
    write_array(path, name, &[img.height, img.width], units, &img.pixels)
}

pub fn read_image(path: &Path) -> Result<Image2D> {
    let arr = read_array(path)?;
    match arr.header.dims[..] {
        [h, w] => Image2D::new(w, h, arr.data).map_err(|e| PipelineError::invalid(path, e.to_string())),
        _ => Err(PipelineError::invalid(path, format!("expected 2 dims, got {:?}", arr.header.dims))),
    }
}

/// Stack of equally sized images as a `[n, h, w]` array.
pub fn write_stack(path: &Path, name: &str, units: &str, images: &[Image2D]) -> Result<ArrayHeader> {
    let (w, h) = images.first().map(|i| (i.width, i.height)).unwrap_or((0, 0));
    if images.iter().any(|i| i.width != w || i.height != h) {
        return Err(PipelineError::invalid(path, "images differ in size"));
    }
    let data: Vec<f64> = images.iter().flat_map(|i| i.pixels.iter().copied()).collect();
    write_array(path, name, &[images.len(), h, w], units, &data)
}

pub fn read_stack(path: &Path) -> Result<Vec<Image2D>> {
    let arr = read_array(path)?;
    let [n, h, w] = arr.header.dims[..] else {
        return Err(PipelineError::invalid(path, format!("expected 3 dims, got {:?}", arr.header.dims)));
    };
    let len = h * w;
    (0..n)
        .map(|i| Image2D::new(w, h, arr.data[i * len..(i + 1) * len].to_vec()))
        .collect::<rvinr_core::Result<Vec<_>>>()
        .map_err(|e| PipelineError::invalid(path, e.to_string()))
}

/// 8-bit grayscale bytes of `img` under the linear window `[lo, hi]`.
pub fn pgm_bytes(img: &Image2D, window: (f64, f64)) -> Result<Vec<u8>> {
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(PipelineError::InvalidWindow { lo, hi });
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        // NaN clamps to NaN; map it to black
        if t.is_nan() {
            0
        } else {
            (255.0 * t).round() as u8
        }
    }));
    Ok(out)
}

pub fn export_pgm(img: &Image2D, path: &Path, window: (f64, f64)) -> Result<()> {
    let bytes = pgm_bytes(img, window)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(hash_hex(b"foobar"), "85944171f73967e8");
    }

    #[test]
    fn pgm_windowing() {
        let (lo, hi) = (-1.0, 3.0);
        let header_len = "P5\n2 1\n255\n".len();
        let at = |v: f64| pgm_bytes(&Image2D::constant(2, 1, v), (lo, hi)).unwrap()[header_len..].to_vec();
        assert_eq!(at(lo), vec![0, 0]);
        assert_eq!(at(hi), vec![255, 255]);
        assert_eq!(at((lo + hi) / 2.0), vec![128, 128]);
        assert_eq!(at(-10.0), vec![0, 0]);
        assert_eq!(at(10.0), vec![255, 255]);
        assert!(pgm_bytes(&Image2D::constant(2, 1, 0.0), (1.0, 1.0)).is_err());
        assert!(pgm_bytes(&Image2D::constant(2, 1, 0.0), (2.0, 1.0)).is_err());
        assert!(pgm_bytes(&Image2D::constant(2, 1, 0.0), (0.0, 1.0)).unwrap().starts_with(b"P5\n2 1\n255\n"));
    }

    #[test]
    fn header_overflow_detected() {
        let h = ArrayHeader {
            name: "x".into(),
            dtype: DTYPE.into(),
            dims: vec![usize::MAX, 2],
            units: String::new(),
            endianness: ENDIANNESS.into(),
            hash: String::new(),
        };
        assert_eq!(h.element_count(), None);
    }
}
