//! On-disk capture format.
//!
//! Arrays use the `.npy` v1.0 layout restricted to 2-D, row-major,
//! little-endian `float32`:
//!
//! ```text
//! \x93NUMPY 0x01 0x00 <u16 LE header_len> <header> <raw f32 LE data>
//! header = "{'descr': '<f4', 'fortran_order': False, 'shape': (N, C), }"
//!          padded with spaces and terminated by '\n' so that the data
//!          starts at a multiple of 64 bytes
//! ```
//!
//! A capture directory holds `manifest.json` listing the activation sites
//! in forward order and, per site, paired input/output arrays per batch.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::affinity::{reduce_spatial, Reduction, SpatialBatch};
use crate::error::{Error, Result};
use crate::stats::SampleMatrix;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const ALIGN: usize = 64;

/// Canonical `.npy` bytes for `m` (values rounded to `f32`).
pub fn encode_array(m: &SampleMatrix) -> Vec<u8> {
    let (n, c) = m.shape();
    let dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({n}, {c}), }}");
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    let header_len = dict.len() + pad + 1;

    let mut out = Vec::with_capacity(unpadded + pad + 4 * n * c);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    for v in m.to_row_major() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_array(m: &SampleMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_array(m)).map_err(|e| Error::io(path, e))
}

/// Parses `.npy` bytes; `origin` only labels errors.
pub fn decode_array(bytes: &[u8], origin: &Path) -> Result<SampleMatrix> {
    let bad = |msg: &str| Error::format(origin, msg);
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("missing .npy magic"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(bad(&format!("unsupported format version {}.{}", bytes[6], bytes[7])));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(bad("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[10..data_start]).map_err(|_| bad("header is not text"))?;
    let (n, c) = parse_header(header).map_err(|m| bad(&m))?;
    let data = &bytes[data_start..];
    let expected = n.checked_mul(c).and_then(|k| k.checked_mul(4)).ok_or_else(|| bad("shape overflows"))?;
    if data.len() != expected {
        return Err(bad(&format!("expected {expected} data bytes for shape ({n}, {c}), found {}", data.len())));
    }
    let values: Vec<f64> = data.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    SampleMatrix::from_row_slice(n, c, &values).map_err(|e| match e {
        Error::NonFinite(_) => bad("array holds NaN or infinite values"),
        other => other,
    })
}

pub fn read_array(path: impl AsRef<Path>) -> Result<SampleMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes, path)
}

/// Value following `'key':` in a Python dict literal, up to the next
/// top-level comma.
fn dict_value<'a>(header: &'a str, key: &str) -> std::result::Result<&'a str, String> {
    let pat = format!("'{key}':");
    let start = header.find(&pat).ok_or_else(|| format!("header lacks `{key}`"))? + pat.len();
    let rest = header[start..].trim_start();
    let mut depth = 0usize;
    for (i, ch) in rest.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' | '}' if depth == 0 => return Ok(rest[..i].trim()),
            _ => {}
        }
    }
    Err(format!("unterminated value for `{key}`"))
}

fn parse_header(header: &str) -> std::result::Result<(usize, usize), String> {
    let header = header.trim_end();
    if !header.starts_with('{') || !header.ends_with('}') {
        return Err("header is not a dict literal".into());
    }
    let descr = dict_value(header, "descr")?;
    if descr != "'<f4'" {
        return Err(format!("unsupported dtype {descr}, expected '<f4'"));
    }
    if dict_value(header, "fortran_order")? != "False" {
        return Err("only C-order arrays are supported".into());
    }
    let shape = dict_value(header, "shape")?;
    let inner =
        shape.strip_prefix('(').and_then(|s| s.strip_suffix(')')).ok_or_else(|| format!("malformed shape {shape}"))?;
    let dims: Vec<usize> = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("malformed shape {shape}")))
        .collect::<std::result::Result<_, _>>()?;
    match dims[..] {
        [n, c] => Ok((n, c)),
        _ => Err(format!("expected a 2-D shape, got {shape}")),
    }
}

/// Reduction applied by the writer of a capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptureReduction {
    Mean,
    Sum,
    Flatten,
    /// Raw `h × w × c` activations flattened per sample (NHWC order);
    /// the site carries `spatial_shape`.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEntry {
    pub site_id: String,
    pub activation_name: String,
    #[serde(default)]
    pub group_tag: String,
    pub input_files: Vec<String>,
    pub output_files: Vec<String>,
    pub n_per_batch: usize,
    pub channels: usize,
    /// Position in the forward pass; must equal the list position when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_index: Option<usize>,
    /// `[h, w]` for unreduced captures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_shape: Option<[usize; 2]>,
}

impl SiteEntry {
    /// Expected number of columns in this site's array files.
    pub fn file_columns(&self) -> usize {
        match self.spatial_shape {
            Some([h, w]) => h * w * self.channels,
            None => self.channels,
        }
    }

    pub fn batches(&self) -> usize {
        self.input_files.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureManifest {
    pub format_version: u32,
    pub model_name: String,
    pub dataset_tag: String,
    pub reduction: CaptureReduction,
    pub sites: Vec<SiteEntry>,
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CaptureManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Pretty-printed, stable JSON.
pub fn write_manifest(dir: impl AsRef<Path>, m: &CaptureManifest) -> Result<()> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads only the header of an array file and returns its shape.
fn array_shape(path: &Path) -> Result<(usize, usize)> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pre = [0u8; 10];
    f.read_exact(&mut pre).map_err(|_| Error::format(path, "truncated header"))?;
    if &pre[..6] != MAGIC || pre[6] != 1 || pre[7] != 0 {
        return Err(Error::format(path, "not a v1.0 .npy file"));
    }
    let len = u16::from_le_bytes([pre[8], pre[9]]) as usize;
    let mut header = vec![0u8; len];
    f.read_exact(&mut header).map_err(|_| Error::format(path, "truncated header"))?;
    let text = std::str::from_utf8(&header).map_err(|_| Error::format(path, "header is not text"))?;
    let shape = parse_header(text).map_err(|m| Error::format(path, m))?;
    let data_len = f.metadata().map_err(|e| Error::io(path, e))?.len() as usize - 10 - len;
    if data_len != shape.0 * shape.1 * 4 {
        return Err(Error::format(path, "data length does not match shape"));
    }
    Ok(shape)
}

/// Every problem with a manifest and the files it references.
pub fn validate(dir: impl AsRef<Path>, m: &CaptureManifest) -> Vec<String> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    if m.format_version != FORMAT_VERSION {
        out.push(format!("unsupported format_version {}", m.format_version));
    }
    if m.sites.is_empty() {
        out.push("manifest lists no sites".into());
    }
    let mut ids = HashSet::new();
    for (pos, site) in m.sites.iter().enumerate() {
        let id = &site.site_id;
        if !ids.insert(id.as_str()) {
            out.push(format!("site `{id}`: duplicate site_id"));
        }
        if let Some(k) = site.order_index {
            if k != pos {
                out.push(format!("site `{id}`: order_index {k} at position {pos} (sites out of forward order)"));
            }
        }
        if site.input_files.len() != site.output_files.len() {
            out.push(format!(
                "site `{id}`: {} input files but {} output files",
                site.input_files.len(),
                site.output_files.len()
            ));
        }
        if site.input_files.is_empty() {
            out.push(format!("site `{id}`: no batches"));
        }
        if (m.reduction == CaptureReduction::None) != site.spatial_shape.is_some() {
            out.push(format!("site `{id}`: spatial_shape must be given exactly when reduction is none"));
        }
        let want = (site.n_per_batch, site.file_columns());
        for file in site.input_files.iter().chain(&site.output_files) {
            let path = dir.join(file);
            if !path.is_file() {
                out.push(format!("site `{id}`: missing file {file}"));
                continue;
            }
            match array_shape(&path) {
                Ok(shape) if shape == want => {}
                Ok(shape) => out.push(format!("site `{id}`: {file} has shape {shape:?}, manifest declares {want:?}")),
                Err(e) => out.push(format!("site `{id}`: {e}")),
            }
        }
    }
    out
}

/// A manifest that has passed validation, bound to its directory.
#[derive(Debug, Clone)]
pub struct Capture {
    pub dir: PathBuf,
    pub manifest: CaptureManifest,
}

impl Capture {
    /// Reads and validates; any violation becomes `CaptureCorrupt`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = read_manifest(&dir)?;
        let violations = validate(&dir, &manifest);
        if !violations.is_empty() {
            return Err(Error::CaptureCorrupt(violations));
        }
        Ok(Capture { dir, manifest })
    }

    /// Input and output arrays of one batch, reduced to sample matrices.
    pub fn load_pair(&self, site: usize, batch: usize, reduction: Reduction) -> Result<(SampleMatrix, SampleMatrix)> {
        let entry = &self.manifest.sites[site];
        let input = self.load(entry, &entry.input_files[batch], reduction)?;
        let output = self.load(entry, &entry.output_files[batch], reduction)?;
        if input.shape() != output.shape() {
            return Err(Error::CaptureCorrupt(vec![format!(
                "site `{}` batch {batch}: input {:?} vs output {:?}",
                entry.site_id,
                input.shape(),
                output.shape()
            )]));
        }
        Ok((input, output))
    }

    fn load(&self, entry: &SiteEntry, file: &str, reduction: Reduction) -> Result<SampleMatrix> {
        let m = read_array(self.dir.join(file))?;
        match entry.spatial_shape {
            None => Ok(m),
            Some([h, w]) => {
                let t = SpatialBatch::new(m.nrows(), h, w, entry.channels, m.to_row_major())?;
                reduce_spatial(&t, reduction)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, rng};

    #[test]
    fn header_layout_of_2x3() {
        let m = SampleMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_array(&m);
        assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
        let hl = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hl) % 64, 0);
        assert_eq!(hl, 118);
        let header = std::str::from_utf8(&bytes[10..10 + hl]).unwrap();
        assert!(header.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }"));
        assert!(header.ends_with(" \n"));
        assert_eq!(bytes.len(), 128 + 24);
        assert_eq!(&bytes[128..132], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[148..152], &6.0f32.to_le_bytes());
    }

    #[test]
    fn fixture_from_independent_writer() {
        // bytes produced by numpy.save(np.arange(6, dtype='<f4').reshape(3, 2) * 0.5)
        let mut bytes = b"\x93NUMPY\x01\x00v\x00".to_vec();
        let mut header = b"{'descr': '<f4', 'fortran_order': False, 'shape': (3, 2), }".to_vec();
        header.resize(117, b' ');
        header.push(b'\n');
        bytes.extend_from_slice(&header);
        for v in [0.0f32, 0.5, 1.0, 1.5, 2.0, 2.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_array(&bytes, Path::new("fixture")).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m.to_row_major(), vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5]);
        assert_eq!(encode_array(&m), bytes);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let g = normal_matrix(&mut rng(1), 7, 5).map(|v| v as f32 as f64);
        let m = SampleMatrix::new(g).unwrap();
        let bytes = encode_array(&m);
        let back = decode_array(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_array(&back), bytes);
    }

    #[test]
    fn empty_rows_read_fine() {
        let m = SampleMatrix::from_row_slice(0, 4, &[]).unwrap();
        let back = decode_array(&encode_array(&m), Path::new("x")).unwrap();
        assert_eq!(back.shape(), (0, 4));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = SampleMatrix::from_row_slice(1, 2, &[1.0, 2.0]).unwrap();
        let good = encode_array(&m);
        let p = Path::new("x");

        let mut bad = good.clone();
        bad[1] = b'X';
        assert!(matches!(decode_array(&bad, p), Err(Error::Format { .. })));

        let mut bad = good.clone();
        bad[6] = 2;
        assert!(matches!(decode_array(&bad, p), Err(Error::Format { .. })));

        let text = String::from_utf8_lossy(&good).replace("<f4", "<f8");
        assert!(matches!(decode_array(text.as_bytes(), p), Err(Error::Format { .. })));

        assert!(matches!(decode_array(&good[..good.len() - 1], p), Err(Error::Format { .. })));
        assert!(matches!(decode_array(b"short", p), Err(Error::Format { .. })));
    }

    #[test]
    fn parses_numpy_spacing_variants() {
        assert_eq!(parse_header("{'descr': '<f4', 'fortran_order': False, 'shape': (12, 3)}"), Ok((12, 3)));
        assert_eq!(parse_header("{'shape': (4,5), 'fortran_order': False, 'descr': '<f4', }"), Ok((4, 5)));
        assert!(parse_header("{'descr': '<f4', 'fortran_order': False, 'shape': (4,), }").is_err());
        assert!(parse_header("{'descr': '<f4', 'fortran_order': True, 'shape': (4, 1), }").is_err());
    }
}
