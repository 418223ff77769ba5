//! Reader and writer for the numpy `.npy` format, versions 1.0 and 2.0.
//!
//! Only little-endian, C-ordered payloads of `f4`, `f8`, `u1` and `i4` are
//! accepted. The writer emits the same header layout as numpy itself (dict
//! literal padded with spaces to a 64-byte boundary) so files round-trip
//! byte for byte.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
    I32,
}

impl DType {
    fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::F64 => "<f8",
            DType::U8 => "|u1",
            DType::I32 => "<i4",
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(DType::F32),
            "<f8" => Ok(DType::F64),
            "|u1" | "<u1" => Ok(DType::U8),
            "<i4" => Ok(DType::I32),
            d if d.starts_with('>') => Err(Error::UnsupportedFormat(format!(
                "big-endian dtype `{d}`"
            ))),
            d => Err(Error::UnsupportedFormat(format!("dtype `{d}`"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
            TensorData::I32(_) => DType::I32,
        }
    }
}

/// A dense row-major tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    shape: Vec<usize>,
    data: TensorData,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::validation(format!(
                "shape {shape:?} needs {n} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(shape, TensorData::U8(data))
    }

    pub fn i32(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        Self::new(shape, TensorData::I32(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Values promoted to f64. Integer tensors are rejected.
    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match &self.data {
            TensorData::F32(v) => Ok(v.iter().map(|&x| f64::from(x)).collect()),
            TensorData::F64(v) => Ok(v.clone()),
            _ => Err(Error::validation(format!(
                "expected a float tensor, found {:?}",
                self.dtype()
            ))),
        }
    }

    /// Values as i32 labels. Float tensors are rejected.
    pub fn to_labels(&self) -> Result<Vec<i32>> {
        match &self.data {
            TensorData::U8(v) => Ok(v.iter().map(|&x| i32::from(x)).collect()),
            TensorData::I32(v) => Ok(v.clone()),
            _ => Err(Error::validation(format!(
                "expected a uint8 or int32 label tensor, found {:?}",
                self.dtype()
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = header_bytes(self.dtype(), &self.shape);
        let mut out = Vec::with_capacity(header.len() + self.data.len() * self.dtype().size());
        out.extend_from_slice(&header);
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }
}

fn shape_literal(shape: &[usize]) -> String {
    match shape {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        dims => {
            let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    }
}

fn header_bytes(dtype: DType, shape: &[usize]) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_literal(shape)
    );
    // magic(6) + version(2) + len(2 or 4) + dict + padding + '\n'
    let padded = |prefix: usize| (prefix + dict.len() + 1).div_ceil(ALIGN) * ALIGN;
    let (major, len_bytes) = if padded(10) - 10 <= u16::MAX as usize {
        (1u8, 2)
    } else {
        (2u8, 4)
    };
    let prefix = MAGIC.len() + 2 + len_bytes;
    let total = padded(prefix);
    let header_len = total - prefix;

    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(MAGIC);
    out.push(major);
    out.push(0);
    if len_bytes == 2 {
        out.extend_from_slice(&(header_len as u16).to_le_bytes());
    } else {
        out.extend_from_slice(&(header_len as u32).to_le_bytes());
    }
    out.extend_from_slice(dict.as_bytes());
    out.resize(total - 1, b' ');
    out.push(b'\n');
    out
}

struct Header {
    dtype: DType,
    shape: Vec<usize>,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::parse("missing NPY magic"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, prefix) = match (major, minor) {
        (1, 0) => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        (2, 0) => {
            if bytes.len() < 12 {
                return Err(Error::parse("truncated NPY v2 header"));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "NPY version {major}.{minor}"
            )))
        }
    };
    let end = prefix + header_len;
    if bytes.len() < end {
        return Err(Error::parse("truncated NPY header"));
    }
    let text = std::str::from_utf8(&bytes[prefix..end])
        .map_err(|_| Error::parse("NPY header is not ASCII"))?;
    let dict = parse_dict(text)?;

    let descr = dict.descr.ok_or_else(|| Error::parse("header lacks `descr`"))?;
    let fortran = dict
        .fortran_order
        .ok_or_else(|| Error::parse("header lacks `fortran_order`"))?;
    let shape = dict.shape.ok_or_else(|| Error::parse("header lacks `shape`"))?;
    if fortran {
        return Err(Error::UnsupportedFormat("Fortran-ordered array".into()));
    }
    Ok(Header {
        dtype: DType::from_descr(&descr)?,
        shape,
        data_offset: end,
    })
}

#[derive(Default)]
struct HeaderDict {
    descr: Option<String>,
    fortran_order: Option<bool>,
    shape: Option<Vec<usize>>,
}

/// Minimal parser for the python dict literal numpy writes.
fn parse_dict(text: &str) -> Result<HeaderDict> {
    let mut p = Lexer {
        s: text.trim_end().as_bytes(),
        i: 0,
    };
    let mut dict = HeaderDict::default();
    p.expect(b'{')?;
    loop {
        p.skip_ws();
        if p.eat(b'}') {
            break;
        }
        let key = p.string()?;
        p.expect(b':')?;
        match key.as_str() {
            "descr" => dict.descr = Some(p.string()?),
            "fortran_order" => dict.fortran_order = Some(p.boolean()?),
            "shape" => dict.shape = Some(p.tuple()?),
            other => return Err(Error::parse(format!("unexpected header key `{other}`"))),
        }
        p.skip_ws();
        if !p.eat(b',') {
            p.expect(b'}')?;
            break;
        }
    }
    p.skip_ws();
    if p.i != p.s.len() {
        return Err(Error::parse("trailing characters after header dict"));
    }
    Ok(dict)
}

struct Lexer<'a> {
    s: &'a [u8],
    i: usize,
}

impl Lexer<'_> {
    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::parse(format!(
                "expected `{}` at header offset {}",
                c as char, self.i
            )))
        }
    }

    fn string(&mut self) -> Result<String> {
        self.skip_ws();
        let quote = match self.s.get(self.i) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(Error::parse("expected quoted string in header")),
        };
        self.i += 1;
        let start = self.i;
        while self.i < self.s.len() && self.s[self.i] != quote {
            self.i += 1;
        }
        if self.i == self.s.len() {
            return Err(Error::parse("unterminated string in header"));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.i]).into_owned();
        self.i += 1;
        Ok(out)
    }

    fn boolean(&mut self) -> Result<bool> {
        self.skip_ws();
        let rest = &self.s[self.i..];
        if rest.starts_with(b"True") {
            self.i += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.i += 5;
            Ok(false)
        } else {
            Err(Error::parse("expected True or False in header"))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                break;
            }
            let start = self.i;
            while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                self.i += 1;
            }
            let digits = std::str::from_utf8(&self.s[start..self.i]).unwrap_or("");
            let dim: usize = digits
                .parse()
                .map_err(|_| Error::parse("bad dimension in shape tuple"))?;
            // numpy on some platforms writes `3L`
            if self.s.get(self.i) == Some(&b'L') {
                self.i += 1;
            }
            dims.push(dim);
            if !self.eat(b',') {
                self.expect(b')')?;
                break;
            }
        }
        Ok(dims)
    }
}

pub fn read_tensor_bytes(bytes: &[u8]) -> Result<TensorFile> {
    let header = parse_header(bytes)?;
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse("shape overflows"))?;
    let body = &bytes[header.data_offset..];
    let expected = count * header.dtype.size();
    if body.len() != expected {
        return Err(Error::parse(format!(
            "shape {:?} needs {expected} data bytes, file has {}",
            header.shape,
            body.len()
        )));
    }
    let data = match header.dtype {
        DType::F32 => TensorData::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::U8 => TensorData::U8(body.to_vec()),
        DType::I32 => TensorData::I32(
            body.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    TensorFile::new(header.shape, data)
}

pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    let bytes = super::read_file(path)?;
    read_tensor_bytes(&bytes)
}

/// Reads only the header: dtype and shape, without touching the payload.
pub fn read_header(path: &Path) -> Result<(DType, Vec<usize>)> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = vec![0u8; 12];
    f.read_exact(&mut buf)
        .map_err(|_| Error::parse(format!("{} is too short for NPY", path.display())))?;
    let len = match buf[6] {
        1 => 10 + u16::from_le_bytes([buf[8], buf[9]]) as usize,
        2 => 12 + u32::from_le_bytes([buf[8], buf[9], buf[10], buf[11]]) as usize,
        _ => 12,
    };
    if len > buf.len() {
        let mut rest = vec![0u8; len - buf.len()];
        f.read_exact(&mut rest)
            .map_err(|_| Error::parse("truncated NPY header"))?;
        buf.extend_from_slice(&rest);
    }
    let h = parse_header(&buf)?;
    Ok((h.dtype, h.shape))
}

pub fn write_tensor(path: &Path, tensor: &TensorFile) -> Result<()> {
    super::atomic_write(path, &tensor.to_bytes())
}
