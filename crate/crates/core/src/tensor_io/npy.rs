//! Reading and writing the numpy `.npy` container.
//!
//! Only C-order, little-endian `f4`/`f8` arrays are supported. Files are
//! written as version 1.0 with the header padded so that the data starts on
//! a 64-byte boundary, which is what numpy itself produces.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";
const ALIGN: usize = 64;

/// Element type as stored on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A dense array read from or destined for an `.npy` file. Values are held
/// as f32; float64 input is narrowed on read.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    /// dtype found on disk (F64 means the data was narrowed)
    pub source_dtype: Dtype,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(NpyArray {
            shape,
            data,
            source_dtype: Dtype::F32,
        })
    }
}

#[derive(Debug, PartialEq)]
struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let arr = decode(&bytes)?;
    if arr.source_dtype == Dtype::F64 {
        log::warn!("{}: float64 data narrowed to float32", path.display());
    }
    Ok(arr)
}

pub fn write_npy(path: impl AsRef<Path>, shape: &[usize], data: &[f32]) -> Result<()> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    encode_into(&mut file, shape, data)?;
    file.flush()?;
    Ok(())
}

/// Writes float64 data without narrowing.
pub fn write_npy_f64(path: impl AsRef<Path>, shape: &[usize], data: &[f64]) -> Result<()> {
    check_len(shape, data.len())?;
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    write_header(&mut file, Dtype::F64, shape)?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    file.flush()?;
    Ok(())
}

/// Serializes an f32 array to an in-memory `.npy` image.
pub fn encode(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ALIGN + data.len() * 4);
    encode_into(&mut out, shape, data)?;
    Ok(out)
}

pub fn encode_into<W: Write>(w: &mut W, shape: &[usize], data: &[f32]) -> Result<()> {
    check_len(shape, data.len())?;
    write_header(w, Dtype::F32, shape)?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<NpyArray> {
    let mut cursor = bytes;
    let header = read_header(&mut cursor)?;
    let n: usize = header.shape.iter().product();
    let need = n
        .checked_mul(header.dtype.size())
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    if cursor.len() != need {
        return Err(Error::Format(format!(
            "expected {need} data bytes for shape {:?}, found {}",
            header.shape,
            cursor.len()
        )));
    }
    let data = match header.dtype {
        Dtype::F32 => cursor
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F64 => cursor
            .chunks_exact(8)
            .map(|c| {
                let v = f64::from_le_bytes(c.try_into().expect("chunk of 8"));
                v as f32
            })
            .collect(),
    };
    Ok(NpyArray {
        shape: header.shape,
        data,
        source_dtype: header.dtype,
    })
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::shape(format!(
            "shape {shape:?} needs {n} values, got {len}"
        )));
    }
    Ok(())
}

fn write_header<W: Write>(w: &mut W, dtype: Dtype, shape: &[usize]) -> io::Result<()> {
    let shape_str = match shape {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    );
    // magic(6) + version(2) + header length(2) + dict + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');
    let len = u16::try_from(dict.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "npy header too long"))?;
    w.write_all(&MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(dict.as_bytes())
}

fn read_header(r: &mut &[u8]) -> Result<Header> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut version = [0u8; 2];
    r.read_exact(&mut version)
        .map_err(|_| Error::Format("truncated version".into()))?;
    let header_len = match version[0] {
        1 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)
                .map_err(|_| Error::Format("truncated header length".into()))?;
            usize::from(u16::from_le_bytes(b))
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| Error::Format("truncated header length".into()))?;
            u32::from_le_bytes(b) as usize
        }
        v => return Err(Error::Format(format!("unsupported version {v}.{}", version[1]))),
    };
    if r.len() < header_len {
        return Err(Error::Format("truncated header".into()));
    }
    let (dict, rest) = r.split_at(header_len);
    *r = rest;
    let dict = std::str::from_utf8(dict).map_err(|_| Error::Format("header is not text".into()))?;
    parse_dict(dict)
}

fn parse_dict(dict: &str) -> Result<Header> {
    let body = dict.trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| Error::Format(format!("header is not a dict: {body:?}")))?;

    let descr = dict_value(body, "descr")?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    let dtype = match descr {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => return Err(Error::Dtype(other.to_string())),
    };

    match dict_value(body, "fortran_order")? {
        "False" => {}
        "True" => return Err(Error::Format("fortran_order arrays are not supported".into())),
        other => return Err(Error::Format(format!("bad fortran_order {other:?}"))),
    }

    let shape = dict_value(body, "shape")?;
    let shape = shape
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("bad shape {shape:?}")))?;
    let shape = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad dimension {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Header { dtype, shape })
}

/// Returns the raw text of the value for `key` in a python dict literal.
fn dict_value<'a>(body: &'a str, key: &str) -> Result<&'a str> {
    let missing = || Error::Format(format!("header has no {key:?} entry"));
    let pos = body
        .find(&format!("'{key}'"))
        .or_else(|| body.find(&format!("\"{key}\"")))
        .ok_or_else(missing)?;
    let after = &body[pos + key.len() + 2..];
    let after = after.trim_start().strip_prefix(':').ok_or_else(missing)?.trim_start();
    // a value ends at the first top-level comma
    let mut depth = 0usize;
    for (i, ch) in after.char_indices() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => return Ok(after[..i].trim()),
            _ => {}
        }
    }
    Ok(after.trim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_roundtrip() {
        let bytes = encode(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let arr = decode(&bytes).unwrap();
        assert_eq!(arr.shape, vec![2, 2]);
        assert_eq!(arr.data, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(arr.source_dtype, Dtype::F32);
    }

    #[test]
    fn header_layout_matches_numpy() {
        let bytes = encode(&[2, 3], &[0.0; 6]).unwrap();
        assert_eq!(&bytes[..6], b"\x93NUMPY");
        assert_eq!(&bytes[6..8], &[1, 0]);
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        let text = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
        assert!(text.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }"));
        assert!(text.ends_with('\n'));
        assert_eq!(bytes.len(), 10 + hlen + 24);
    }

    #[test]
    fn one_dimensional_shape_has_trailing_comma() {
        let bytes = encode(&[5], &[0.0; 5]).unwrap();
        let text = String::from_utf8_lossy(&bytes[10..]);
        assert!(text.contains("'shape': (5,)"));
        assert_eq!(decode(&bytes).unwrap().shape, vec![5]);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode(&[1], &[1.0]).unwrap();
        bytes[1] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_dtype() {
        let mut bytes = encode(&[1], &[1.0]).unwrap();
        let pos = bytes.windows(3).position(|w| w == b"<f4").unwrap();
        bytes[pos..pos + 3].copy_from_slice(b"<i4");
        assert!(matches!(decode(&bytes), Err(Error::Dtype(d)) if d == "<i4"));
        bytes[pos..pos + 3].copy_from_slice(b">f4");
        assert!(matches!(decode(&bytes), Err(Error::Dtype(_))));
    }

    #[test]
    fn fortran_order_rejected() {
        let mut bytes = encode(&[1], &[1.0]).unwrap();
        let pos = bytes.windows(5).position(|w| w == b"False").unwrap();
        bytes[pos..pos + 5].copy_from_slice(b"True ");
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_data() {
        let bytes = encode(&[4], &[1.0; 4]).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    }

    #[test]
    fn float64_is_narrowed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.npy");
        write_npy_f64(&p, &[3], &[0.5, 1.0 / 3.0, -2.0]).unwrap();
        let arr = read_npy(&p).unwrap();
        assert_eq!(arr.source_dtype, Dtype::F64);
        assert_eq!(arr.data, vec![0.5, (1.0f64 / 3.0) as f32, -2.0]);
    }

    #[test]
    fn reads_numpy_style_header_variants() {
        // double-quoted keys, no trailing comma, long-int suffix
        let dict = "{\"descr\": \"<f4\", \"fortran_order\": False, \"shape\": (2L, 1L)}";
        let h = parse_dict(dict).unwrap();
        assert_eq!(h.shape, vec![2, 1]);
        assert_eq!(parse_dict("{'descr': '<f8', 'fortran_order': False, 'shape': (), }").unwrap().shape, Vec::<usize>::new());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(
            dims in proptest::collection::vec(1usize..5, 1..4),
            bits in proptest::collection::vec(any::<u32>(), 64),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = bits.iter().cycle().take(n).map(|b| f32::from_bits(*b)).collect();
            let bytes = encode(&dims, &data).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back.shape, &dims);
            let a: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(encode(&back.shape, &back.data).unwrap(), bytes);
        }
    }
}
