//! The single-file model container.
//!
//! Layout (little-endian): magic `EMED`, u16 version, u16 flags, u64 manifest
//! length, manifest text, u32 tensor count, the tensor table, zero padding to
//! a 4096-byte boundary, then the weight blob. Every tensor payload starts at
//! a 64-byte aligned blob offset; gaps are zero.

use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::modelpack::quant::{dequantize_bytes, QuantizedTensor};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"EMED";
pub const VERSION: u16 = 1;
pub const FLAG_TRAINING: u16 = 1;
pub const FLAG_QUANTIZED: u16 = 2;
pub const PAGE: usize = 4096;
pub const TENSOR_ALIGN: usize = 64;
const MAX_RANK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32 = 0,
    Q8 = 1,
}

impl DType {
    pub fn elem_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::Q8 => 1,
        }
    }
}

/// One integrity problem, located by byte offset in the file.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    pub offset: u64,
    pub tensor: Option<String>,
    pub detail: String,
}

impl Violation {
    fn at(offset: usize, detail: impl Into<String>) -> Self {
        Violation { offset: offset as u64, tensor: None, detail: detail.into() }
    }

    fn tensor(offset: usize, name: &str, detail: impl Into<String>) -> Self {
        Violation { offset: offset as u64, tensor: Some(name.to_string()), detail: detail.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.tensor {
            Some(t) => write!(f, "byte {}: tensor `{t}`: {}", self.offset, self.detail),
            None => write!(f, "byte {}: {}", self.offset, self.detail),
        }
    }
}

/// A row of the tensor table.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub scale: f32,
    pub zero_point: i32,
    /// Offset from the start of the weight blob.
    pub offset: u64,
    pub byte_len: u64,
    pub crc32: u32,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parsed header of a bundle.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct BundleLayout {
    pub version: u16,
    pub flags: u16,
    pub manifest: String,
    pub manifest_range: Range<u64>,
    pub tensors: Vec<TensorEntry>,
    pub blob_offset: u64,
    pub blob_len: u64,
    pub file_len: u64,
}

impl BundleLayout {
    pub fn is_quantized(&self) -> bool {
        self.flags & FLAG_QUANTIZED != 0
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(TensorEntry::numel).sum()
    }

    /// Blob bytes relative to storing every element as f32.
    pub fn f32_equivalent_ratio(&self) -> f64 {
        self.blob_len as f64 / (4 * self.element_count()).max(1) as f64
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Payload bytes of `entry` inside a buffer holding the whole file.
    pub fn payload<'a>(&self, file: &'a [u8], entry: &TensorEntry) -> &'a [u8] {
        let start = (self.blob_offset + entry.offset) as usize;
        &file[start..start + entry.byte_len as usize]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    Q8 { data: Vec<u8>, scale: f32, zero_point: i32 },
}

/// A named tensor as written to or read from a bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl StoredTensor {
    pub fn f32(name: String, shape: Vec<usize>, data: Vec<f32>) -> Self {
        StoredTensor { name, shape, payload: Payload::F32(data) }
    }

    pub fn q8(name: String, q: QuantizedTensor) -> Self {
        StoredTensor {
            name,
            shape: q.shape,
            payload: Payload::Q8 { data: q.data, scale: q.scale, zero_point: q.zero_point },
        }
    }

    pub fn dtype(&self) -> DType {
        match self.payload {
            Payload::F32(_) => DType::F32,
            Payload::Q8 { .. } => DType::Q8,
        }
    }

    fn bytes(&self) -> Vec<u8> {
        match &self.payload {
            Payload::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Payload::Q8 { data, .. } => data.clone(),
        }
    }

    /// Values as f32, dequantizing if needed.
    pub fn into_f32(self) -> Result<Tensor> {
        let data = match self.payload {
            Payload::F32(v) => v,
            Payload::Q8 { data, scale, zero_point } => dequantize_bytes(&data, scale, zero_point),
        };
        Tensor::new(self.shape, data)
    }
}

fn align_up(x: usize, a: usize) -> usize {
    x.div_ceil(a) * a
}

/// Serializes a bundle into memory.
pub fn encode_bundle(manifest: &str, flags: u16, tensors: &[StoredTensor]) -> Result<Vec<u8>> {
    let mut header = Vec::new();
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&flags.to_le_bytes());
    header.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    header.extend_from_slice(manifest.as_bytes());
    header.extend_from_slice(&(tensors.len() as u32).to_le_bytes());

    let mut blob: Vec<u8> = Vec::new();
    for t in tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize || t.shape.len() > MAX_RANK {
            return Err(Error::Input(format!("tensor `{}` name or rank too large", t.name)));
        }
        let numel: usize = t.shape.iter().product();
        let bytes = t.bytes();
        if bytes.len() != numel * t.dtype().elem_size() {
            return Err(Error::Input(format!("tensor `{}` payload does not match shape {:?}", t.name, t.shape)));
        }
        blob.resize(align_up(blob.len(), TENSOR_ALIGN), 0);
        let offset = blob.len() as u64;
        blob.extend_from_slice(&bytes);
        let (scale, zp) = match t.payload {
            Payload::F32(_) => (0.0f32, 0i32),
            Payload::Q8 { scale, zero_point, .. } => (scale, zero_point),
        };
        header.extend_from_slice(&(name.len() as u16).to_le_bytes());
        header.extend_from_slice(name);
        header.push(t.dtype() as u8);
        header.push(t.shape.len() as u8);
        for &d in &t.shape {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        header.extend_from_slice(&scale.to_le_bytes());
        header.extend_from_slice(&zp.to_le_bytes());
        header.extend_from_slice(&offset.to_le_bytes());
        header.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        header.extend_from_slice(&crc32fast::hash(&bytes).to_le_bytes());
    }
    let blob_offset = align_up(header.len(), PAGE);
    assert!(blob_offset % PAGE == 0, "blob must start on a page boundary");
    header.resize(blob_offset, 0);
    header.extend_from_slice(&blob);
    Ok(header)
}

/// Writes a bundle and returns its parsed layout.
pub fn write_bundle(path: &Path, manifest: &str, flags: u16, tensors: &[StoredTensor]) -> Result<()> {
    let bytes = encode_bundle(manifest, flags, tensors)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], Violation> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(Violation::at(self.pos, format!("file truncated while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> std::result::Result<u8, Violation> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> std::result::Result<u16, Violation> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, Violation> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, Violation> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses the header and table without touching payload bytes.
pub fn parse_layout(buf: &[u8]) -> std::result::Result<BundleLayout, Vec<Violation>> {
    parse_header(buf).map_err(|v| vec![v])
}

fn parse_header(buf: &[u8]) -> std::result::Result<BundleLayout, Violation> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Violation::at(0, "bad magic"));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Violation::at(4, format!("unsupported version {version}")));
    }
    let flags = c.u16("flags")?;
    if flags & !(FLAG_TRAINING | FLAG_QUANTIZED) != 0 {
        return Err(Violation::at(6, format!("unknown flag bits {flags:#06x}")));
    }
    let manifest_len = c.u64("manifest length")?;
    let manifest_start = c.pos;
    let raw = c.take(usize::try_from(manifest_len).unwrap_or(usize::MAX), "manifest")?;
    let manifest = std::str::from_utf8(raw)
        .map_err(|e| Violation::at(manifest_start + e.valid_up_to(), "manifest is not UTF-8"))?
        .to_string();
    let count_at = c.pos;
    let count = c.u32("tensor count")? as usize;
    // Each table row takes at least 32 bytes.
    if count > (buf.len() - c.pos) / 32 {
        return Err(Violation::at(count_at, format!("tensor count {count} exceeds file size")));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let row_at = c.pos;
        let name_len = c.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "tensor name")?)
            .map_err(|_| Violation::at(row_at + 2, "tensor name is not UTF-8"))?
            .to_string();
        let dtype = match c.u8("dtype")? {
            0 => DType::F32,
            1 => DType::Q8,
            d => return Err(Violation::tensor(c.pos - 1, &name, format!("unknown dtype {d}"))),
        };
        let rank = c.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Violation::tensor(c.pos - 1, &name, format!("rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let scale = f32::from_le_bytes(c.take(4, "scale")?.try_into().unwrap());
        let zero_point = i32::from_le_bytes(c.take(4, "zero point")?.try_into().unwrap());
        let offset = c.u64("offset")?;
        let byte_len = c.u64("byte length")?;
        let crc32 = c.u32("crc32")?;
        tensors.push(TensorEntry { name, dtype, shape, scale, zero_point, offset, byte_len, crc32 });
    }
    let header_end = c.pos;
    let blob_offset = align_up(header_end, PAGE);
    if buf.len() < blob_offset {
        return Err(Violation::at(buf.len(), "file truncated inside header padding"));
    }
    Ok(BundleLayout {
        version,
        flags,
        manifest,
        manifest_range: manifest_start as u64..(manifest_start as u64 + manifest_len),
        tensors,
        blob_offset: blob_offset as u64,
        blob_len: (buf.len() - blob_offset) as u64,
        file_len: buf.len() as u64,
    })
}

/// Structural checks plus per-tensor CRC over an in-memory (or mapped) file.
pub fn verify_bytes(buf: &[u8]) -> std::result::Result<BundleLayout, Vec<Violation>> {
    let layout = parse_layout(buf)?;
    let mut v = Vec::new();
    let header_end = header_len(&layout);
    if let Some(i) = buf[header_end..layout.blob_offset as usize].iter().position(|&b| b != 0) {
        v.push(Violation::at(header_end + i, "non-zero byte in header padding"));
    }
    if let Err(e) = crate::nn::parse_manifest(&layout.manifest) {
        v.push(Violation::at(layout.manifest_range.start as usize, format!("manifest: {e}")));
    }
    let blob = &buf[layout.blob_offset as usize..];
    let mut cursor = 0u64;
    let mut seen = std::collections::HashSet::new();
    for t in &layout.tensors {
        let row_name = &t.name;
        let file_off = layout.blob_offset + t.offset;
        if !seen.insert(row_name.as_str()) {
            v.push(Violation::tensor(file_off as usize, row_name, "duplicate tensor name"));
        }
        if t.offset % TENSOR_ALIGN as u64 != 0 {
            v.push(Violation::tensor(file_off as usize, row_name, format!("offset {} not 64-byte aligned", t.offset)));
        }
        if t.offset < cursor {
            v.push(Violation::tensor(file_off as usize, row_name, "offset overlaps the previous tensor"));
        }
        let expected = t.shape.iter().try_fold(t.dtype.elem_size() as u64, |acc, &d| acc.checked_mul(d as u64));
        if expected != Some(t.byte_len) || t.shape.contains(&0) {
            v.push(Violation::tensor(file_off as usize, row_name, format!("byte length {} does not match shape {:?}", t.byte_len, t.shape)));
        }
        match t.dtype {
            DType::F32 if t.scale != 0.0 || t.zero_point != 0 => {
                v.push(Violation::tensor(file_off as usize, row_name, "f32 tensor carries quantization parameters"))
            }
            DType::Q8 if !(t.scale.is_finite() && t.scale > 0.0) || !(0..=255).contains(&t.zero_point) => {
                v.push(Violation::tensor(file_off as usize, row_name, format!("bad scale {} / zero point {}", t.scale, t.zero_point)))
            }
            _ => {}
        }
        let end = t.offset.checked_add(t.byte_len);
        match end {
            Some(end) if end <= blob.len() as u64 => {
                if t.offset >= cursor {
                    if let Some(i) = blob[cursor as usize..t.offset as usize].iter().position(|&b| b != 0) {
                        v.push(Violation::at((layout.blob_offset + cursor) as usize + i, "non-zero byte in alignment padding"));
                    }
                }
                let payload = &blob[t.offset as usize..end as usize];
                let crc = crc32fast::hash(payload);
                if crc != t.crc32 {
                    v.push(Violation::tensor(
                        file_off as usize,
                        row_name,
                        format!("crc32 mismatch: stored {:08x}, computed {crc:08x}", t.crc32),
                    ));
                }
                cursor = cursor.max(end);
            }
            _ => v.push(Violation::tensor(file_off as usize, row_name, "payload extends past end of file")),
        }
    }
    if cursor < blob.len() as u64 {
        v.push(Violation::at((layout.blob_offset + cursor) as usize, "trailing bytes after last tensor"));
    }
    if v.is_empty() {
        Ok(layout)
    } else {
        Err(v)
    }
}

fn header_len(layout: &BundleLayout) -> usize {
    let rows: usize = layout.tensors.iter().map(|t| 2 + t.name.len() + 2 + 4 * t.shape.len() + 4 + 4 + 8 + 8 + 4).sum();
    layout.manifest_range.end as usize + 4 + rows
}

/// Reads and verifies a bundle file.
pub fn verify_bundle(path: &Path) -> Result<BundleLayout> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    verify_bytes(&buf).map_err(Error::Integrity)
}

/// A verified bundle with every tensor copied into memory.
#[derive(Clone, Debug)]
pub struct LoadedBundle {
    pub flags: u16,
    pub manifest: String,
    pub layout: BundleLayout,
    pub tensors: Vec<StoredTensor>,
}

pub fn decode_bundle(buf: &[u8]) -> Result<LoadedBundle> {
    let layout = verify_bytes(buf).map_err(Error::Integrity)?;
    let tensors = layout
        .tensors
        .iter()
        .map(|t| {
            let bytes = layout.payload(buf, t);
            let payload = match t.dtype {
                DType::F32 => Payload::F32(
                    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                DType::Q8 => Payload::Q8 { data: bytes.to_vec(), scale: t.scale, zero_point: t.zero_point },
            };
            StoredTensor { name: t.name.clone(), shape: t.shape.clone(), payload }
        })
        .collect();
    Ok(LoadedBundle { flags: layout.flags, manifest: layout.manifest.clone(), layout, tensors })
}

pub fn read_bundle(path: &Path) -> Result<LoadedBundle> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let tensors = vec![
            StoredTensor::f32("a.weight".into(), vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            StoredTensor::q8(
                "a.bias".into(),
                QuantizedTensor { shape: vec![2], data: vec![0, 255], scale: 0.5, zero_point: 7 },
            ),
        ];
        let manifest = "input,dims=3\ndense,name=a,in=3,out=2\nsoftmax,name=s\n";
        encode_bundle(manifest, FLAG_QUANTIZED, &tensors).unwrap()
    }

    #[test]
    fn header_fields_are_bit_exact() {
        let b = sample();
        assert_eq!(&b[0..4], &[0x45, 0x4D, 0x45, 0x44]);
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), FLAG_QUANTIZED);
        let mlen = u64::from_le_bytes(b[8..16].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(b[16 + mlen..20 + mlen].try_into().unwrap());
        assert_eq!(count, 2);
        // First row: name length, name, dtype 0, rank 2, dims 3 and 2.
        let r = 20 + mlen;
        assert_eq!(u16::from_le_bytes([b[r], b[r + 1]]), 8);
        assert_eq!(&b[r + 2..r + 10], b"a.weight");
        assert_eq!(&b[r + 10..r + 12], &[0, 2]);
        assert_eq!(b.len(), PAGE + 64 + 2);
        let layout = verify_bytes(&b).unwrap();
        assert_eq!(layout.blob_offset, PAGE as u64);
        assert_eq!(layout.tensors[1].offset, 64);
        assert_eq!(layout.tensors[0].crc32, crc32fast::hash(&b[PAGE..PAGE + 24]));
    }

    #[test]
    fn payload_bit_flip_names_tensor() {
        let b = sample();
        for (pos, name) in [(PAGE + 5, "a.weight"), (PAGE + 65, "a.bias")] {
            let mut c = b.clone();
            c[pos] ^= 0x10;
            let v = verify_bytes(&c).unwrap_err();
            assert_eq!(v.len(), 1, "{v:?}");
            assert_eq!(v[0].tensor.as_deref(), Some(name));
            assert!(v[0].detail.contains("crc32"));
        }
    }

    #[test]
    fn padding_flip_detected() {
        let mut c = sample();
        c[PAGE + 30] = 1;
        let v = verify_bytes(&c).unwrap_err();
        assert_eq!(v[0].offset, (PAGE + 30) as u64);
    }

    #[test]
    fn truncation_never_panics() {
        let b = sample();
        for n in 0..b.len() {
            assert!(verify_bytes(&b[..n]).is_err(), "prefix {n} accepted");
        }
        let mut longer = b.clone();
        longer.push(0);
        assert!(verify_bytes(&longer).is_err());
    }

    #[test]
    fn decode_round_trip() {
        let loaded = decode_bundle(&sample()).unwrap();
        assert_eq!(loaded.tensors[0].clone().into_f32().unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(loaded.tensors[1].clone().into_f32().unwrap().data(), &[-3.5, 124.0]);
    }
}
