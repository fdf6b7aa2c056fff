use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use super::image::{Image, CHANNELS};
use super::world::{Features, LabeledSample};
use crate::error::{Error, Result};

/// Upper bound on one record payload; larger length prefixes are corruption.
pub const MAX_RECORD_LEN: u64 = 64 << 20;
const TAG_SYMPTOMS: u8 = 0;
const TAG_IMAGE: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OnCorrupt {
    Fail,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptRecord {
    pub index: u64,
    pub offset: u64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordReport {
    pub samples: Vec<LabeledSample>,
    pub skipped: Vec<CorruptRecord>,
}

pub fn encode_sample(sample: &LabeledSample) -> Vec<u8> {
    let mut out = Vec::new();
    match &sample.features {
        Features::Symptoms(bits) => {
            out.push(TAG_SYMPTOMS);
            out.extend_from_slice(&sample.label.to_le_bytes());
            out.extend_from_slice(&(bits.len() as u32).to_le_bytes());
            out.extend_from_slice(bits);
        }
        Features::Image(img) => {
            out.push(TAG_IMAGE);
            out.extend_from_slice(&sample.label.to_le_bytes());
            out.extend_from_slice(&(img.height() as u32).to_le_bytes());
            out.extend_from_slice(&(img.width() as u32).to_le_bytes());
            out.extend_from_slice(img.data());
        }
    }
    out
}

pub fn decode_sample(payload: &[u8]) -> std::result::Result<LabeledSample, String> {
    let u32_at = |at: usize| -> std::result::Result<u32, String> {
        payload
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| "payload too short".to_string())
    };
    let tag = *payload.first().ok_or("empty payload")?;
    let label = u32_at(1)?;
    match tag {
        TAG_SYMPTOMS => {
            let n = u32_at(5)? as usize;
            let bits = &payload[9..];
            if bits.len() != n {
                return Err(format!("symptom count {n} but {} bytes", bits.len()));
            }
            if bits.iter().any(|b| *b > 1) {
                return Err("symptom byte not 0 or 1".into());
            }
            Ok(LabeledSample { features: Features::Symptoms(bits.to_vec()), label })
        }
        TAG_IMAGE => {
            let h = u32_at(5)? as usize;
            let w = u32_at(9)? as usize;
            let data = &payload[13..];
            if h.checked_mul(w).and_then(|p| p.checked_mul(CHANNELS)) != Some(data.len()) {
                return Err(format!("image {h}x{w} but {} bytes", data.len()));
            }
            let img = Image::new(h, w, data.to_vec()).map_err(|e| e.to_string())?;
            Ok(LabeledSample { features: Features::Image(img), label })
        }
        t => Err(format!("unknown modality tag {t}")),
    }
}

pub struct RecordWriter<W: Write> {
    out: W,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        RecordWriter { out }
    }

    pub fn write(&mut self, sample: &LabeledSample) -> io::Result<()> {
        let payload = encode_sample(sample);
        self.out.write_all(&(payload.len() as u64).to_le_bytes())?;
        self.out.write_all(&payload)?;
        self.out.write_all(&crc32fast::hash(&payload).to_le_bytes())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn write_records(samples: &[LabeledSample], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = RecordWriter::new(BufWriter::new(file));
    for s in samples {
        w.write(s).map_err(|e| Error::io(path, e))?;
    }
    let file = w.into_inner().into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

/// Streaming reader. Reads exactly the bytes of each record and nothing
/// beyond, so it must not be wrapped in a read-ahead buffer when that matters.
pub struct RecordReader<R: Read> {
    input: R,
    index: u64,
    offset: u64,
    policy: OnCorrupt,
    skipped: Vec<CorruptRecord>,
    done: bool,
}

impl<R: Read> RecordReader<R> {
    pub fn new(input: R, policy: OnCorrupt) -> Self {
        RecordReader { input, index: 0, offset: 0, policy, skipped: Vec::new(), done: false }
    }

    pub fn skipped(&self) -> &[CorruptRecord] {
        &self.skipped
    }

    fn fail(&mut self, offset: u64, detail: String) -> Error {
        self.done = true;
        Error::Record { index: self.index, offset, detail }
    }

    /// Reads into `buf` fully; `Ok(false)` on a clean EOF before any byte.
    fn fill(&mut self, buf: &mut [u8], eof_ok: bool) -> io::Result<bool> {
        let mut got = 0;
        while got < buf.len() {
            match self.input.read(&mut buf[got..]) {
                Ok(0) if got == 0 && eof_ok => return Ok(false),
                Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(true)
    }

    fn next_record(&mut self) -> Option<Result<LabeledSample>> {
        loop {
            if self.done {
                return None;
            }
            let start = self.offset;
            let mut len_buf = [0u8; 8];
            match self.fill(&mut len_buf, true) {
                Ok(false) => {
                    self.done = true;
                    return None;
                }
                Ok(true) => {}
                Err(e) => return Some(Err(self.fail(start, format!("truncated length prefix: {e}")))),
            }
            let len = u64::from_le_bytes(len_buf);
            if len > MAX_RECORD_LEN {
                return Some(Err(self.fail(start, format!("record length {len} exceeds limit"))));
            }
            let mut payload = vec![0u8; len as usize];
            let mut crc_buf = [0u8; 4];
            if let Err(e) = self.fill(&mut payload, false).and_then(|_| self.fill(&mut crc_buf, false)) {
                return Some(Err(self.fail(start, format!("truncated record: {e}"))));
            }
            self.offset += 8 + len + 4;
            let index = self.index;
            self.index += 1;
            let problem = if crc32fast::hash(&payload) != u32::from_le_bytes(crc_buf) {
                Some("checksum mismatch".to_string())
            } else {
                match decode_sample(&payload) {
                    Ok(s) => return Some(Ok(s)),
                    Err(d) => Some(d),
                }
            };
            let detail = problem.unwrap();
            match self.policy {
                OnCorrupt::Fail => {
                    self.done = true;
                    return Some(Err(Error::Record { index, offset: start, detail }));
                }
                OnCorrupt::Skip => self.skipped.push(CorruptRecord { index, offset: start, detail }),
            }
        }
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<LabeledSample>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record()
    }
}

pub fn open_records(path: &Path, policy: OnCorrupt) -> Result<RecordReader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(RecordReader::new(f, policy))
}

pub fn read_records_from<R: Read>(input: R, policy: OnCorrupt) -> Result<RecordReport> {
    let mut reader = RecordReader::new(input, policy);
    let samples = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(RecordReport { samples, skipped: reader.skipped })
}

pub fn read_records(path: &Path, policy: OnCorrupt) -> Result<RecordReport> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records_from(io::BufReader::new(f), policy)
}
