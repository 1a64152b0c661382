//! Reader and writer for the `.npy` binary tensor format (version 1.0 on
//! write; 1.0, 2.0 and 3.0 accepted on read).
//!
//! Only little-endian `f4`/`f8` payloads in C order are supported.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dtype, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// Reads a tensor file from disk.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes a tensor file to disk, using the tensor's own dtype.
pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensor);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Serializes a tensor into `.npy` bytes.
pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let shape = match tensor.shape.len() {
        1 => format!("({},)", tensor.shape[0]),
        _ => {
            let dims: Vec<String> = tensor.shape.iter().map(|d| d.to_string()).collect();
            format!("({})", dims.join(", "))
        }
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        tensor.dtype.descr(),
        shape
    );
    // magic(6) + version(2) + header length(2) + header, padded with spaces and
    // terminated by a newline so the payload starts on an aligned offset
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    let width = tensor.dtype.width();
    let mut out = Vec::with_capacity(10 + header.len() + tensor.data.len() * width);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match tensor.dtype {
        Dtype::F32 => {
            for &v in &tensor.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in &tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Parses `.npy` bytes into a tensor, widening `f4` payloads to `f64`.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::MalformedHeader("bad magic bytes".into()));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::MalformedHeader("header length truncated".into()));
            }
            let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
            (len as usize, 12)
        }
        v => return Err(Error::MalformedHeader(format!("unknown format version {v}"))),
    };
    let header_end = header_start + header_len;
    if bytes.len() < header_end {
        return Err(Error::MalformedHeader("header extends past end of file".into()));
    }
    let header = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|_| Error::MalformedHeader("header is not valid text".into()))?;
    let parsed = parse_header(header)?;

    let dtype = match parsed.descr.as_str() {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => return Err(Error::UnsupportedDtype(other.to_string())),
    };
    if parsed.fortran_order {
        return Err(Error::MalformedHeader(
            "fortran_order arrays are not supported".into(),
        ));
    }

    let count: usize = parsed.shape.iter().product();
    let width = dtype.width();
    let payload = &bytes[header_end..];
    let expected = count * width;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload[..expected]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => payload[..expected]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    Tensor::with_dtype(parsed.shape, data, dtype)
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Minimal parser for the python-literal dict in the header.
fn parse_header(text: &str) -> Result<Header> {
    let body = text.trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| Error::MalformedHeader("header is not a dict literal".into()))?;

    let descr = dict_value(body, "descr")?;
    let descr = descr
        .trim()
        .trim_matches(|c| c == '\'' || c == '"')
        .to_string();

    let fortran_order = match dict_value(body, "fortran_order")?.trim() {
        "False" => false,
        "True" => true,
        other => {
            return Err(Error::MalformedHeader(format!(
                "bad fortran_order value {other:?}"
            )))
        }
    };

    let shape_text = dict_value(body, "shape")?;
    let inner = shape_text
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::MalformedHeader("shape is not a tuple".into()))?;
    let mut shape = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let dim = part
            .trim_end_matches('L')
            .parse::<usize>()
            .map_err(|_| Error::MalformedHeader(format!("bad shape entry {part:?}")))?;
        shape.push(dim);
    }

    Ok(Header {
        descr,
        fortran_order,
        shape,
    })
}

/// Returns the raw text of the value for `key` in a dict body.
fn dict_value<'a>(body: &'a str, key: &str) -> Result<&'a str> {
    let missing = || Error::MalformedHeader(format!("header lacks key {key:?}"));
    let pos = [format!("'{key}'"), format!("\"{key}\"")]
        .iter()
        .find_map(|k| body.find(k.as_str()).map(|p| p + k.len()))
        .ok_or_else(missing)?;
    let rest = body[pos..].trim_start();
    let rest = rest.strip_prefix(':').ok_or_else(missing)?.trim_start();
    // values are either a parenthesized tuple or a token ending at the next comma
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        Some(rest.find(',').unwrap_or(rest.len()))
    }
    .ok_or_else(|| Error::MalformedHeader(format!("unterminated value for {key:?}")))?;
    Ok(&rest[..end])
}
