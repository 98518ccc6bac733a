//! IDX array files, big-endian.
//!
//! Header: two zero bytes, a type byte (`0x08` unsigned byte, `0x0E` 64-bit
//! float), a dimension count, then one `u32` extent per dimension. Image
//! files are 3-d (`count, rows, cols`, magic `0x00000803`) or 4-d
//! (`count, channels, rows, cols`); label files are 1-d unsigned bytes
//! (magic `0x00000801`).

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TYPE_U8: u8 = 0x08;
const TYPE_F64: u8 = 0x0E;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    /// Raw values; unsigned bytes are widened, not rescaled.
    pub data: Vec<f64>,
}

impl IdxArray {
    fn element_type(&self) -> u8 {
        ((self.magic >> 8) & 0xff) as u8
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX byte buffer. The buffer must hold exactly the header and
/// the declared payload.
pub fn read_idx(bytes: &[u8], what: &str) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::format(what, "file shorter than the 4-byte magic number"));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let (ty, ndims) = (bytes[2], bytes[3] as usize);
    if bytes[0] != 0 || bytes[1] != 0 || !(ty == TYPE_U8 || ty == TYPE_F64) || ndims == 0 {
        return Err(Error::format(
            what,
            format!("bad magic number: expected 0x0000{{08,0E}}NN, found {magic:#010x}"),
        ));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::format(what, "truncated header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let width = if ty == TYPE_U8 { 1 } else { 8 };
    let expected = header + count * width;
    if bytes.len() != expected {
        return Err(Error::format(
            what,
            format!(
                "payload length mismatch: header declares {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let payload = &bytes[header..];
    let data = if ty == TYPE_U8 {
        payload.iter().map(|&b| f64::from(b)).collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect()
    };
    Ok(IdxArray { magic, dims, data })
}

/// Reads a label file (magic `0x00000801`).
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let what = path.display().to_string();
    let bytes = read_file(path)?;
    if bytes.len() >= 4 {
        let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
        if found != LABEL_MAGIC {
            return Err(Error::format(
                what,
                format!("bad magic number: expected {LABEL_MAGIC:#010x}, found {found:#010x}"),
            ));
        }
    }
    let arr = read_idx(&bytes, &what)?;
    Ok(arr.data.iter().map(|&v| v as usize).collect())
}

/// Loads an image/label IDX pair. Byte pixels are scaled to `[0, 1]`;
/// float payloads are taken as-is. Features are `[1, rows, cols]` for 3-d
/// files and `[channels, rows, cols]` for 4-d files.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let what = images_path.display().to_string();
    let bytes = read_file(images_path)?;
    if bytes.len() >= 4 && !matches!(bytes[3], 3 | 4) {
        let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
        return Err(Error::format(
            what,
            format!("bad magic number: expected {IMAGE_MAGIC:#010x} (3-d) or a 4-d image array, found {found:#010x}"),
        ));
    }
    let images = read_idx(&bytes, &what)?;
    let labels = read_labels(labels_path)?;

    let count = images.dims[0];
    if count != labels.len() {
        return Err(Error::format(
            what,
            format!("{count} images but {} labels", labels.len()),
        ));
    }
    let shape: Vec<usize> = match images.dims[1..] {
        [rows, cols] => vec![1, rows, cols],
        [c, rows, cols] => vec![c, rows, cols],
        _ => unreachable!("dimension count checked above"),
    };
    let scale = if images.element_type() == TYPE_U8 {
        1.0 / 255.0
    } else {
        1.0
    };
    let per: usize = shape.iter().product();
    let features = if count == 0 {
        Vec::new()
    } else {
        images
            .data
            .chunks_exact(per)
            .map(|px| Tensor::new(shape.clone(), px.iter().map(|v| v * scale).collect()))
            .collect::<Result<Vec<_>>>()?
    };
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(features, labels, class_count)
}

fn header(ty: u8, dims: &[usize]) -> Result<Vec<u8>> {
    let mut out = vec![0, 0, ty, dims.len() as u8];
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::contract("IDX extent exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    Ok(out)
}

/// Writes a float64 IDX array.
pub fn write_idx_f64(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::Dimension {
            op: "write_idx",
            left: dims.to_vec(),
            right: vec![data.len()],
        });
    }
    let mut out = header(TYPE_F64, dims)?;
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a 1-d unsigned-byte label file.
pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = header(TYPE_U8, &[labels.len()])?;
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::contract(format!("label {l} exceeds 255")))?);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Byte-by-byte fixture: 4 images of 2×2 pixels, labels 0..3.
    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = vec![0x00, 0x00, 0x08, 0x03];
        img.extend([0, 0, 0, 4]); // count
        img.extend([0, 0, 0, 2]); // rows
        img.extend([0, 0, 0, 2]); // cols
        img.extend([0, 255, 51, 102]);
        img.extend([255, 255, 255, 255]);
        img.extend([0, 0, 0, 0]);
        img.extend([1, 2, 3, 4]);
        let mut lbl = vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 4];
        lbl.extend([0, 1, 2, 3]);
        let (ip, lp) = (dir.join("img.idx"), dir.join("lbl.idx"));
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn loads_hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.labels, vec![0, 1, 2, 3]);
        assert_eq!(ds.class_count, 4);
        assert_eq!(ds.features[0].shape(), &[1, 2, 2]);
        assert_eq!(ds.features[0].data(), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.features[1].data(), &[1.0; 4]);
        assert_eq!(ds.features[3].data()[3], 4.0 / 255.0);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let mut bytes = fs::read(&ip).unwrap();
        bytes.pop();
        fs::write(&ip, bytes).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_cites_expected_and_found() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        // swap the roles: the label file is 1-d
        let err = load_idx(&lp, &ip).unwrap_err().to_string();
        assert!(err.contains("0x00000803") && err.contains("0x00000801"), "{err}");
        let err = load_idx(&ip, &ip).unwrap_err().to_string();
        assert!(err.contains("expected 0x00000801") && err.contains("found 0x00000803"), "{err}");
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        write_idx_labels(&lp, &[0, 1, 2]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn empty_pair_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        fs::write(&ip, [0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 28, 0, 0, 0, 28]).unwrap();
        fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn float_arrays_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("f.idx");
        let lp = dir.path().join("l.idx");
        let data = vec![0.5, -1.25, 3.0e-7, 42.0, f64::MIN_POSITIVE, -0.0];
        write_idx_f64(&ip, &[2, 1, 3], &data).unwrap();
        write_idx_labels(&lp, &[1, 0]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.features[0].shape(), &[1, 1, 3]);
        let back: Vec<f64> = ds.features.iter().flat_map(|t| t.data().to_vec()).collect();
        assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(fs::read(&ip).unwrap()[..4], [0, 0, 0x0E, 3]);
    }
}
