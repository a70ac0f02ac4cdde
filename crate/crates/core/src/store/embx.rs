//! EMBX: per-layer encoder activations on disk.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `EMBX`                   |
//! | 4      | 4    | version (u32, = 1)             |
//! | 8      | 4    | layers L (u32)                 |
//! | 12     | 4    | frames T (u32)                 |
//! | 16     | 4    | dim D (u32)                    |
//! | 20     | 4    | frames_valid (u32)             |
//! | 24     | 4    | reserved (u32, = 0)            |
//! | 28     | 4·L·T·D | f32 values, `[layer][frame][dim]` |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::store::write_atomically;

pub const MAGIC: &[u8; 4] = b"EMBX";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

/// Hidden states of every layer of one encoder on one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStack {
    layers: usize,
    frames: usize,
    dim: usize,
    frames_valid: usize,
    values: Vec<f32>,
}

/// Shape information stored in an EMBX header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbxHeader {
    pub layers: usize,
    pub frames: usize,
    pub dim: usize,
    pub frames_valid: usize,
}

impl EmbxHeader {
    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + 4 * (self.layers * self.frames * self.dim) as u64
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.frames == 0 || self.dim == 0 {
            return Err(Error::validation(format!("zero extent in {self:?}")));
        }
        if self.frames_valid == 0 || self.frames_valid > self.frames {
            return Err(Error::validation(format!(
                "frames_valid {} outside [1, {}]",
                self.frames_valid, self.frames
            )));
        }
        Ok(())
    }
}

impl ActivationStack {
    pub fn new(layers: usize, frames: usize, dim: usize, frames_valid: usize, values: Vec<f32>) -> Result<Self> {
        let header = EmbxHeader {
            layers,
            frames,
            dim,
            frames_valid,
        };
        header.validate()?;
        if values.len() != layers * frames * dim {
            return Err(Error::Shape {
                shape: vec![layers, frames, dim],
                reason: format!("got {} values", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                location: format!("activation value {i}"),
            });
        }
        Ok(Self {
            layers,
            frames,
            dim,
            frames_valid,
            values,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames_valid(&self) -> usize {
        self.frames_valid
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn header(&self) -> EmbxHeader {
        EmbxHeader {
            layers: self.layers,
            frames: self.frames,
            dim: self.dim,
            frames_valid: self.frames_valid,
        }
    }

    /// `frames × dim` block of one layer.
    pub fn layer(&self, l: usize) -> &[f32] {
        let n = self.frames * self.dim;
        &self.values[l * n..(l + 1) * n]
    }

    pub fn frame(&self, l: usize, t: usize) -> &[f32] {
        let start = (l * self.frames + t) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// `true` for the first `frames_valid` positions.
    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.frames).map(|t| t < self.frames_valid).collect()
    }

    /// Appends `extra` padding frames to every layer; `fill` supplies values.
    pub fn with_padding(&self, extra: usize, mut fill: impl FnMut() -> f32) -> Result<Self> {
        let frames = self.frames + extra;
        let mut values = Vec::with_capacity(self.layers * frames * self.dim);
        for l in 0..self.layers {
            values.extend_from_slice(self.layer(l));
            values.extend((0..extra * self.dim).map(|_| fill()));
        }
        Self::new(self.layers, frames, self.dim, self.frames_valid, values)
    }
}

pub fn encode_activation(stack: &ActivationStack) -> Vec<u8> {
    let mut buf = Vec::with_capacity(stack.header().file_len() as usize);
    buf.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        stack.layers as u32,
        stack.frames as u32,
        stack.dim as u32,
        stack.frames_valid as u32,
        0,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &stack.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_activation(stack: &ActivationStack, path: &Path) -> Result<()> {
    let bytes = encode_activation(stack);
    write_atomically(path, |f| f.write_all(&bytes))
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<EmbxHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let format_err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if &bytes[..4] != MAGIC {
        return Err(format_err(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    if u32_at(bytes, 24) != 0 {
        return Err(format_err("reserved header field is not zero".into()));
    }
    let header = EmbxHeader {
        layers: u32_at(bytes, 8) as usize,
        frames: u32_at(bytes, 12) as usize,
        dim: u32_at(bytes, 16) as usize,
        frames_valid: u32_at(bytes, 20) as usize,
    };
    header.validate()?;
    Ok(header)
}

pub fn decode_activation(bytes: &[u8], path: &Path) -> Result<ActivationStack> {
    let header = parse_header(bytes, path)?;
    let expected = header.file_len();
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: actual - expected,
        });
    }
    let mut values = Vec::with_capacity((expected as usize - HEADER_LEN) / 4);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Numeric {
                location: format!("{} byte offset {}", path.display(), HEADER_LEN + 4 * i),
            });
        }
        values.push(v);
    }
    ActivationStack::new(header.layers, header.frames, header.dim, header.frames_valid, values)
}

pub fn read_activation(path: &Path) -> Result<ActivationStack> {
    let bytes = fs::read(path).map_err(|e| Error::storage(path, e))?;
    decode_activation(&bytes, path)
}

/// Reads and validates only the header, also checking the file length.
pub fn read_header(path: &Path) -> Result<EmbxHeader> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::storage(path, e))?;
    let mut head = Vec::with_capacity(HEADER_LEN);
    Read::by_ref(&mut f)
        .take(HEADER_LEN as u64)
        .read_to_end(&mut head)
        .map_err(|e| Error::storage(path, e))?;
    let header = parse_header(&head, path)?;
    let actual = f.metadata().map_err(|e| Error::storage(path, e))?.len();
    let expected = header.file_len();
    match actual.cmp(&expected) {
        std::cmp::Ordering::Less => Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        }),
        std::cmp::Ordering::Greater => Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: actual - expected,
        }),
        std::cmp::Ordering::Equal => Ok(header),
    }
}

/// Frames produced by a convolutional front end with the given hop and
/// receptive field: `floor((samples - receptive) / hop) + 1`.
pub fn conv_frame_count(samples: usize, receptive_field: usize, hop: usize) -> usize {
    if samples < receptive_field {
        return 0;
    }
    (samples - receptive_field) / hop + 1
}
