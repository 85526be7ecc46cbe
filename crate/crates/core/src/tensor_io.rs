//! Point-cloud containers and their on-disk formats.
//!
//! `LTNT` record, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LTNT"
//! 4       1     version (1)
//! 5       1     dtype: low 7 bits 0 = f64, 1 = f32; bit 7 set = extension block follows
//! 6       4     u32 rows (N)
//! 10      4     u32 cols (D)
//! [14     2     u16 extension length L, then L bytes of (u8 tag, u8 len, payload) entries]
//! ...           N*D values, row-major
//! ```
//!
//! Extension tags: `1` image dims (u32 height, u32 width, u32 channels),
//! `2` neighborhood block size (u32). Unknown tags are skipped.
//!
//! `LBND` bundle: magic "LBND", u32 layer count, then per layer u16 name
//! length, UTF-8 name, u32 layer_index, u32 total_layers and one embedded
//! `LTNT` record.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TENSOR_MAGIC: &[u8; 4] = b"LTNT";
pub const BUNDLE_MAGIC: &[u8; 4] = b"LBND";
pub const FORMAT_VERSION: u8 = 1;

const EXT_FLAG: u8 = 0x80;
const TAG_IMAGE_DIMS: u8 = 1;
const TAG_BLOCK_SIZE: u8 = 2;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("bad magic at byte {offset}: expected {expected:?}, found {found:?}")]
    MagicMismatch {
        offset: usize,
        expected: String,
        found: Vec<u8>,
    },
    #[error("unsupported format version {version} at byte {offset}")]
    UnsupportedVersion { offset: usize, version: u8 },
    #[error("unknown dtype tag {tag} at byte {offset}")]
    UnknownDtype { offset: usize, tag: u8 },
    #[error("header at byte {offset} declares {rows}x{cols} but the payload holds {available_bytes} bytes ({value_bytes} bytes per value)")]
    ShapeMismatch {
        offset: usize,
        rows: usize,
        cols: usize,
        available_bytes: usize,
        value_bytes: usize,
    },
    #[error("data length {len} does not equal {rows}x{cols}")]
    InvalidShape { rows: usize, cols: usize, len: usize },
    #[error("non-finite value at row {row}, column {col} (byte {offset})")]
    NonFiniteValue { row: usize, col: usize, offset: usize },
    #[error("file truncated at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{count} trailing bytes after byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("malformed extension block at byte {offset}: {reason}")]
    BadExtension { offset: usize, reason: String },
    #[error("csv row {row}: {reason}")]
    Csv { row: usize, reason: String },
    #[error("layer name at byte {offset} is not valid UTF-8")]
    InvalidName { offset: usize },
    #[error("layer name `{0}` is longer than 65535 bytes")]
    NameTooLong(String),
    #[error("duplicate layer index {index}")]
    DuplicateLayerIndex { index: usize },
    #[error("layer index {index} out of range for {total} layers")]
    OrdinalOutOfRange { index: usize, total: usize },
    #[error("layer `{name}` has {rows} rows, expected {expected}")]
    RowCountMismatch { name: String, rows: usize, expected: usize },
    #[error("invalid image dimensions {height}x{width}x{channels}")]
    InvalidImage {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("tensor does not carry image dimensions")]
    NotAnImage,
    #[error("dimension {0} does not fit in u32")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Storage precision for the payload. In memory everything is `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

/// Optional header fields carried in the extension block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorExt {
    /// (height, width, channels) when the tensor stores an image as `(c, m*n)`.
    pub image_dims: Option<(u32, u32, u32)>,
    /// Rows are grouped in blocks of this size, each block being a base row
    /// followed by its neighbors.
    pub block_size: Option<u32>,
}

impl TensorExt {
    fn is_empty(&self) -> bool {
        self.image_dims.is_none() && self.block_size.is_none()
    }
}

/// N x D row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub ext: TensorExt,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorIoError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(TensorIoError::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            data,
            ext: TensorExt::default(),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            ext: TensorExt::default(),
        }
    }

    /// Builds a tensor from equally long rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
            ext: TensorExt::default(),
        }
    }

    pub fn with_block_size(mut self, block: usize) -> Self {
        self.ext.block_size = Some(block as u32);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
            ext: self.ext,
        }
    }

    /// Copies the selected rows into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
            ext: TensorExt::default(),
        }
    }

    fn check_finite(&self) -> Result<(), TensorIoError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(p) => Err(TensorIoError::NonFiniteValue {
                row: p / self.cols.max(1),
                col: p % self.cols.max(1),
                offset: 0,
            }),
        }
    }
}

/// Image of `height x width x channels`, stored as channel-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, TensorIoError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(TensorIoError::InvalidImage {
                height,
                width,
                channels,
            });
        }
        if data.len() != height * width * channels {
            return Err(TensorIoError::InvalidShape {
                rows: channels,
                cols: height * width,
                len: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self, TensorIoError> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Flattened pixel vector (channel-major), length `m*n*c`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let len = self.height * self.width;
        &self.data[c * len..(c + 1) * len]
    }

    pub fn pixel(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn to_tensor(&self) -> Tensor2D {
        let mut t = Tensor2D {
            rows: self.channels,
            cols: self.height * self.width,
            data: self.data.clone(),
            ext: TensorExt::default(),
        };
        t.ext.image_dims = Some((self.height as u32, self.width as u32, self.channels as u32));
        t
    }

    pub fn from_tensor(t: &Tensor2D) -> Result<Self, TensorIoError> {
        let (h, w, c) = t.ext.image_dims.ok_or(TensorIoError::NotAnImage)?;
        let (h, w, c) = (h as usize, w as usize, c as usize);
        if t.rows != c || t.cols != h * w {
            return Err(TensorIoError::InvalidShape {
                rows: t.rows,
                cols: t.cols,
                len: h * w * c,
            });
        }
        Self::new(h, w, c, t.data.clone())
    }
}

/// Latent codes of one network layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBundle {
    pub layer_name: String,
    pub layer_index: usize,
    pub total_layers: usize,
    pub tensor: Tensor2D,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorIoError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(TensorIoError::Truncated {
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TensorIoError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TensorIoError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TensorIoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), TensorIoError> {
        let offset = self.pos;
        let found = &self.buf[offset..(offset + 4).min(self.buf.len())];
        if found != expected {
            return Err(TensorIoError::MagicMismatch {
                offset,
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: found.to_vec(),
            });
        }
        self.pos += 4;
        Ok(())
    }
}

fn read_ext(r: &mut Reader<'_>) -> Result<TensorExt, TensorIoError> {
    let len = r.u16()? as usize;
    let start = r.pos;
    let block = r.take(len)?;
    let mut ext = TensorExt::default();
    let mut i = 0;
    while i < block.len() {
        if i + 2 > block.len() {
            return Err(TensorIoError::BadExtension {
                offset: start + i,
                reason: "entry header cut short".into(),
            });
        }
        let (tag, n) = (block[i], block[i + 1] as usize);
        let body = block.get(i + 2..i + 2 + n).ok_or(TensorIoError::BadExtension {
            offset: start + i,
            reason: format!("entry of {n} bytes overruns the block"),
        })?;
        let word = |k: usize| u32::from_le_bytes(body[4 * k..4 * k + 4].try_into().unwrap());
        match (tag, n) {
            (TAG_IMAGE_DIMS, 12) => ext.image_dims = Some((word(0), word(1), word(2))),
            (TAG_BLOCK_SIZE, 4) => ext.block_size = Some(word(0)),
            (TAG_IMAGE_DIMS, _) | (TAG_BLOCK_SIZE, _) => {
                return Err(TensorIoError::BadExtension {
                    offset: start + i,
                    reason: format!("tag {tag} has length {n}"),
                })
            }
            _ => {}
        }
        i += 2 + n;
    }
    Ok(ext)
}

fn read_tensor_record(r: &mut Reader<'_>) -> Result<Tensor2D, TensorIoError> {
    r.magic(TENSOR_MAGIC)?;
    let version_at = r.pos;
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(TensorIoError::UnsupportedVersion {
            offset: version_at,
            version,
        });
    }
    let dtype_at = r.pos;
    let tag = r.u8()?;
    let dtype = match tag & !EXT_FLAG {
        0 => Dtype::F64,
        1 => Dtype::F32,
        other => {
            return Err(TensorIoError::UnknownDtype {
                offset: dtype_at,
                tag: other,
            })
        }
    };
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let ext = if tag & EXT_FLAG != 0 {
        read_ext(r)?
    } else {
        TensorExt::default()
    };

    let payload_at = r.pos;
    let width = dtype.width();
    let needed = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .filter(|&n| n <= r.remaining());
    let Some(needed) = needed else {
        return Err(TensorIoError::ShapeMismatch {
            offset: payload_at,
            rows,
            cols,
            available_bytes: r.remaining(),
            value_bytes: width,
        });
    };
    let bytes = r.take(needed)?;
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in bytes.chunks_exact(width).enumerate() {
        let v = match dtype {
            Dtype::F64 => f64::from_le_bytes(chunk.try_into().unwrap()),
            Dtype::F32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
        };
        if !v.is_finite() {
            return Err(TensorIoError::NonFiniteValue {
                row: k / cols,
                col: k % cols,
                offset: payload_at + k * width,
            });
        }
        data.push(v);
    }
    Ok(Tensor2D { rows, cols, data, ext })
}

fn to_u32(n: usize) -> Result<u32, TensorIoError> {
    u32::try_from(n).map_err(|_| TensorIoError::TooLarge(n))
}

fn write_tensor_record(out: &mut Vec<u8>, t: &Tensor2D, dtype: Dtype) -> Result<(), TensorIoError> {
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(FORMAT_VERSION);
    let has_ext = !t.ext.is_empty();
    out.push(dtype.tag() | if has_ext { EXT_FLAG } else { 0 });
    out.extend_from_slice(&to_u32(t.rows)?.to_le_bytes());
    out.extend_from_slice(&to_u32(t.cols)?.to_le_bytes());
    if has_ext {
        let mut block = Vec::new();
        if let Some((h, w, c)) = t.ext.image_dims {
            block.extend_from_slice(&[TAG_IMAGE_DIMS, 12]);
            for v in [h, w, c] {
                block.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(b) = t.ext.block_size {
            block.extend_from_slice(&[TAG_BLOCK_SIZE, 4]);
            block.extend_from_slice(&b.to_le_bytes());
        }
        out.extend_from_slice(&(block.len() as u16).to_le_bytes());
        out.extend_from_slice(&block);
    }
    out.reserve(t.data.len() * dtype.width());
    match dtype {
        Dtype::F64 => t.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => t
            .data
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
    }
    Ok(())
}

fn expect_end(r: &Reader<'_>) -> Result<(), TensorIoError> {
    match r.remaining() {
        0 => Ok(()),
        count => Err(TensorIoError::TrailingBytes { offset: r.pos, count }),
    }
}

/// Decodes one `LTNT` record occupying the whole buffer.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor2D, TensorIoError> {
    let mut r = Reader::new(bytes);
    let t = read_tensor_record(&mut r)?;
    expect_end(&r)?;
    Ok(t)
}

pub fn encode_tensor(t: &Tensor2D, dtype: Dtype) -> Result<Vec<u8>, TensorIoError> {
    t.check_finite()?;
    let mut out = Vec::with_capacity(16 + t.data.len() * dtype.width());
    write_tensor_record(&mut out, t, dtype)?;
    Ok(out)
}

/// Parses comma-separated rows without a header. Blank lines are ignored.
pub fn parse_csv(text: &str) -> Result<Tensor2D, TensorIoError> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| TensorIoError::Csv {
                row: line_no,
                reason: format!("cannot parse `{}` as a number", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(TensorIoError::NonFiniteValue {
                    row: rows,
                    col: n,
                    offset: 0,
                });
            }
            data.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(TensorIoError::Csv {
                    row: line_no,
                    reason: format!("expected {c} fields, found {n}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or(TensorIoError::Csv {
        row: 0,
        reason: "no data rows".into(),
    })?;
    Tensor2D::new(rows, cols, data)
}

/// Loads an `LTNT` file, or a headerless CSV file when the magic is absent.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor2D, TensorIoError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        return decode_tensor(&bytes);
    }
    match std::str::from_utf8(&bytes) {
        Ok(text) if !bytes.starts_with(BUNDLE_MAGIC) => parse_csv(text),
        _ => Err(TensorIoError::MagicMismatch {
            offset: 0,
            expected: "LTNT".into(),
            found: bytes[..bytes.len().min(4)].to_vec(),
        }),
    }
}

pub fn save_tensor(t: &Tensor2D, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
    save_tensor_as(t, path, Dtype::F64)
}

/// Saves with the requested payload precision. `F32` is lossy.
pub fn save_tensor_as(t: &Tensor2D, path: impl AsRef<Path>, dtype: Dtype) -> Result<(), TensorIoError> {
    fs::write(path, encode_tensor(t, dtype)?)?;
    Ok(())
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<LayerBundle>, TensorIoError> {
    let mut r = Reader::new(bytes);
    r.magic(BUNDLE_MAGIC)?;
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| TensorIoError::InvalidName { offset: name_at })?
            .to_owned();
        let layer_index = r.u32()? as usize;
        let total_layers = r.u32()? as usize;
        if layer_index >= total_layers {
            return Err(TensorIoError::OrdinalOutOfRange {
                index: layer_index,
                total: total_layers,
            });
        }
        if !seen.insert(layer_index) {
            return Err(TensorIoError::DuplicateLayerIndex { index: layer_index });
        }
        let tensor = read_tensor_record(&mut r)?;
        layers.push(LayerBundle {
            layer_name: name,
            layer_index,
            total_layers,
            tensor,
        });
    }
    expect_end(&r)?;
    check_aligned(&layers)?;
    layers.sort_by_key(|l| l.layer_index);
    Ok(layers)
}

fn check_aligned(layers: &[LayerBundle]) -> Result<(), TensorIoError> {
    if let Some(first) = layers.first() {
        let expected = first.tensor.rows();
        if let Some(bad) = layers.iter().find(|l| l.tensor.rows() != expected) {
            return Err(TensorIoError::RowCountMismatch {
                name: bad.layer_name.clone(),
                rows: bad.tensor.rows(),
                expected,
            });
        }
    }
    Ok(())
}

pub fn encode_bundle(layers: &[LayerBundle], dtype: Dtype) -> Result<Vec<u8>, TensorIoError> {
    let mut seen = HashSet::new();
    for l in layers {
        if l.layer_index >= l.total_layers {
            return Err(TensorIoError::OrdinalOutOfRange {
                index: l.layer_index,
                total: l.total_layers,
            });
        }
        if !seen.insert(l.layer_index) {
            return Err(TensorIoError::DuplicateLayerIndex { index: l.layer_index });
        }
        l.tensor.check_finite()?;
    }
    check_aligned(layers)?;
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&to_u32(layers.len())?.to_le_bytes());
    for l in layers {
        let name = l.layer_name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| TensorIoError::NameTooLong(l.layer_name.clone()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&to_u32(l.layer_index)?.to_le_bytes());
        out.extend_from_slice(&to_u32(l.total_layers)?.to_le_bytes());
        write_tensor_record(&mut out, &l.tensor, dtype)?;
    }
    Ok(out)
}

/// Loads a bundle, sorted by layer index.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<Vec<LayerBundle>, TensorIoError> {
    decode_bundle(&fs::read(path)?)
}

pub fn save_bundle(layers: &[LayerBundle], path: impl AsRef<Path>) -> Result<(), TensorIoError> {
    save_bundle_as(layers, path, Dtype::F64)
}

pub fn save_bundle_as(layers: &[LayerBundle], path: impl AsRef<Path>, dtype: Dtype) -> Result<(), TensorIoError> {
    fs::write(path, encode_bundle(layers, dtype)?)?;
    Ok(())
}
