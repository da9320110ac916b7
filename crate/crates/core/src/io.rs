//! File formats: AVDS tensors, PGM images and TOML run configurations.
//!
//! AVDS layout: magic `AVDS`, version byte, dtype byte (0 real, 1 complex),
//! ndim byte, `ndim` little-endian u64 dims, then little-endian f64 payload
//! in column-major order with complex values interleaved `(re, im)`.

use crate::harness::ExperimentConfig;
use crate::mask::{Mask, MaskMode};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TENSOR_MAGIC: &[u8; 4] = b"AVDS";
pub const TENSOR_VERSION: u8 = 1;
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not an AVDS tensor (bad magic)")]
    BadMagic,
    #[error("unsupported tensor version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype {0}")]
    BadDtype(u8),
    #[error("truncated tensor: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{0} trailing bytes after tensor payload")]
    TrailingBytes(usize),
    #[error("PGM parse error at byte {offset}: {message}")]
    Pgm { offset: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u64>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self, IoError> {
        let n: u64 = dims.iter().product();
        let len = match &data {
            TensorData::Real(v) => v.len(),
            TensorData::Complex(v) => v.len(),
        };
        if dims.len() > u8::MAX as usize || n != len as u64 {
            return Err(IoError::Shape(format!("dims {dims:?} do not match {len} elements")));
        }
        Ok(Self { dims, data })
    }

    pub fn real(dims: Vec<u64>, values: Vec<f64>) -> Result<Self, IoError> {
        Self::new(dims, TensorData::Real(values))
    }

    pub fn complex(dims: Vec<u64>, values: Vec<Complex64>) -> Result<Self, IoError> {
        Self::new(dims, TensorData::Complex(values))
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len() as u64;
        Self {
            dims: vec![n],
            data: TensorData::Real(values),
        }
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real payload; complex tensors are rejected.
    pub fn into_real(self) -> Result<Vec<f64>, IoError> {
        match self.data {
            TensorData::Real(v) => Ok(v),
            TensorData::Complex(_) => Err(IoError::Shape("expected a real tensor".into())),
        }
    }

    /// Payload as complex values; real tensors are promoted.
    pub fn into_complex(self) -> Vec<Complex64> {
        match self.data {
            TensorData::Real(v) => v.into_iter().map(|r| Complex64::new(r, 0.0)).collect(),
            TensorData::Complex(v) => v,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 8 * self.dims.len() + 16 * self.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(TENSOR_VERSION);
        out.push(match self.data {
            TensorData::Real(_) => 0,
            TensorData::Complex(_) => 1,
        });
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Complex(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoError> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(IoError::Truncated {
                    expected,
                    got: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(7)?;
        if &bytes[..4] != TENSOR_MAGIC {
            return Err(IoError::BadMagic);
        }
        if bytes[4] != TENSOR_VERSION {
            return Err(IoError::UnsupportedVersion(bytes[4]));
        }
        let dtype = bytes[5];
        let width = match dtype {
            0 => 8,
            1 => 16,
            other => return Err(IoError::BadDtype(other)),
        };
        let ndim = bytes[6] as usize;
        let header = 7 + 8 * ndim;
        need(header)?;
        let dims: Vec<u64> = bytes[7..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| IoError::Shape(format!("dims {dims:?} overflow")))?;
        need(header + count)?;
        if bytes.len() > header + count {
            return Err(IoError::TrailingBytes(bytes.len() - header - count));
        }
        let floats = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let data = if dtype == 0 {
            TensorData::Real(floats.collect())
        } else {
            let v: Vec<f64> = floats.collect();
            TensorData::Complex(v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
        };
        Ok(Self { dims, data })
    }
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), IoError> {
    write_atomic(path, &tensor.to_bytes())
}

pub fn read_tensor(path: &Path) -> Result<Tensor, IoError> {
    Tensor::from_bytes(&fs::read(path).map_err(io_err(path))?)
}

/// Masks are stored as an `[n, 2]` real tensor: indices, then multiplicities.
pub fn mask_to_tensor(mask: &Mask) -> Tensor {
    let n = mask.len();
    let mut v: Vec<f64> = mask.indices().iter().map(|&i| i as f64).collect();
    v.extend(mask.multiplicities().iter().map(|&m| m as f64));
    Tensor::real(vec![n as u64, 2], v).expect("consistent mask shape")
}

pub fn mask_from_tensor(tensor: Tensor, domain_len: usize) -> Result<Mask, IoError> {
    let dims = tensor.dims().to_vec();
    if dims.len() != 2 || dims[1] != 2 {
        return Err(IoError::Shape(format!("mask tensor must be [n, 2], got {dims:?}")));
    }
    let v = tensor.into_real()?;
    let n = dims[0] as usize;
    let as_count = |x: f64| -> Result<u64, IoError> {
        if x >= 0.0 && x.fract() == 0.0 {
            Ok(x as u64)
        } else {
            Err(IoError::Shape(format!("non-integer mask entry {x}")))
        }
    };
    let mut counts = BTreeMap::new();
    for r in 0..n {
        let idx = as_count(v[r])? as usize;
        let m = as_count(v[n + r])?;
        if m == 0 {
            return Err(IoError::Shape("zero multiplicity in mask".into()));
        }
        *counts.entry(idx).or_insert(0) += m;
    }
    let mode = if counts.values().all(|&m| m == 1) {
        MaskMode::DistinctUntilBudget
    } else {
        MaskMode::IidWithReplacement
    };
    Mask::from_counts(domain_len, counts, mode).map_err(|e| IoError::Shape(e.to_string()))
}

/// Grayscale image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Column-major vectorisation (`x[row + height * col]`).
    pub fn to_column_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pixels.len());
        for col in 0..self.width {
            for row in 0..self.height {
                out.push(self.get(row, col));
            }
        }
        out
    }

    pub fn from_column_major(height: usize, width: usize, v: &[f64]) -> Self {
        let mut pixels = vec![0.0; height * width];
        for col in 0..width {
            for row in 0..height {
                pixels[row * width + col] = v[row + height * col];
            }
        }
        Self { width, height, pixels }
    }
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn err(&self, message: impl Into<String>) -> IoError {
        IoError::Pgm {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize, IoError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(if self.pos >= self.bytes.len() {
                "unexpected end of file"
            } else {
                "expected a decimal number"
            }));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IoError::Pgm {
                offset: start,
                message: "number out of range".into(),
            })
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image, IoError> {
    let mut c = PgmCursor { bytes, pos: 0 };
    if bytes.len() < 2 {
        return Err(c.err("missing magic number"));
    }
    let binary = match &bytes[..2] {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(c.err("magic must be P2 or P5")),
    };
    c.pos = 2;
    let width = c.number()?;
    let height = c.number()?;
    let maxval = c.number()?;
    if width == 0 || height == 0 {
        return Err(c.err("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(c.err(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let scale = 1.0 / maxval as f64;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        if c.pos >= bytes.len() || !bytes[c.pos].is_ascii_whitespace() {
            return Err(c.err("expected whitespace after header"));
        }
        c.pos += 1;
        let width_bytes = if maxval < 256 { 1 } else { 2 };
        let need = n * width_bytes;
        if bytes.len() - c.pos < need {
            return Err(IoError::Pgm {
                offset: bytes.len(),
                message: format!("truncated payload: expected {need} bytes from offset {}", c.pos),
            });
        }
        for i in 0..n {
            let at = c.pos + i * width_bytes;
            let v = if width_bytes == 1 {
                bytes[at] as usize
            } else {
                u16::from_be_bytes([bytes[at], bytes[at + 1]]) as usize
            };
            if v > maxval {
                return Err(IoError::Pgm {
                    offset: at,
                    message: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            pixels.push(v as f64 * scale);
        }
    } else {
        for _ in 0..n {
            let at = c.pos;
            let v = c.number()?;
            if v > maxval {
                return Err(IoError::Pgm {
                    offset: at,
                    message: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            pixels.push(v as f64 * scale);
        }
    }
    Ok(Image { width, height, pixels })
}

pub fn read_pgm(path: &Path) -> Result<Image, IoError> {
    parse_pgm(&fs::read(path).map_err(io_err(path))?)
}

/// Binary PGM, values clipped to `[0, 1]` and quantised to 8 bits.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, image: &Image) -> Result<(), IoError> {
    write_atomic(path, &encode_pgm(image))
}

/// Log-scale rendering of a nonnegative map, `floor` decades below its max.
pub fn log_image(height: usize, width: usize, column_major: &[f64], decades: f64) -> Image {
    let max = column_major.iter().cloned().fold(0.0, f64::max);
    let scaled: Vec<f64> = column_major
        .iter()
        .map(|&v| {
            if max <= 0.0 || v <= 0.0 {
                0.0
            } else {
                (1.0 + (v / max).log10() / decades).max(0.0)
            }
        })
        .collect();
    Image::from_column_major(height, width, &scaled)
}

/// Loads a TOML run configuration. Unknown keys are rejected and relative
/// paths are resolved against the directory holding the file.
pub fn load_run_config(path: &Path) -> Result<ExperimentConfig, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg = parse_run_config(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok(cfg)
}

pub fn parse_run_config(text: &str) -> Result<ExperimentConfig, IoError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| IoError::Config(e.message().to_string()))?;
    if cfg.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(IoError::Config(format!(
            "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    cfg.validate().map_err(|e| IoError::Config(e.to_string()))?;
    Ok(cfg)
}
