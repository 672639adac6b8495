//! Trace records, the on-disk trace formats, and the synthetic trace generator.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! header : "IPCT" | version: u32 (= 1)
//! record : kind: u8 (0 = IFetch, 1 = Load, 2 = Store) | vaddr: u64 | reserved: u8 (= 0)
//! ```
//!
//! The text format holds one record per line, `I|L|S <hex vaddr>`; blank lines
//! and everything after a `#` are ignored.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{LINE_SHIFT, LINE_SIZE, PAGE_4K_SHIFT};

pub const MAGIC: &[u8; 4] = b"IPCT";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 8;
pub const RECORD_BYTES: usize = 10;

/// Exclusive upper bound on virtual addresses (57-bit, five-level radix table).
pub const VADDR_LIMIT: u64 = 1 << 57;

/// Generated code lives at `CODE_BASE..2^32`.
pub const CODE_BASE: u64 = 0x40_0000;
/// Generated data lives at or above 2^40.
pub const DATA_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    IFetch,
    Load,
    Store,
}

impl AccessKind {
    fn code(self) -> u8 {
        match self {
            AccessKind::IFetch => 0,
            AccessKind::Load => 1,
            AccessKind::Store => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(AccessKind::IFetch),
            1 => Some(AccessKind::Load),
            2 => Some(AccessKind::Store),
            _ => None,
        }
    }

    fn letter(self) -> char {
        match self {
            AccessKind::IFetch => 'I',
            AccessKind::Load => 'L',
            AccessKind::Store => 'S',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceRecord {
    pub kind: AccessKind,
    pub vaddr: u64,
}

impl TraceRecord {
    pub fn new(kind: AccessKind, vaddr: u64) -> Self {
        debug_assert!(vaddr < VADDR_LIMIT);
        Self { kind, vaddr }
    }

    pub fn ifetch(vaddr: u64) -> Self {
        Self::new(AccessKind::IFetch, vaddr)
    }

    pub fn line(&self) -> u64 {
        self.vaddr >> LINE_SHIFT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Binary,
    Text,
}

/// Streaming reader over either trace format. The format is sniffed from the
/// first four bytes.
pub struct TraceReader<R: BufRead> {
    inner: R,
    path: PathBuf,
    format: TraceFormat,
    /// Byte offset (binary) or 1-based line number of the last line read (text).
    position: u64,
    line_buf: String,
    done: bool,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(file), path)
    }
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(mut inner: R, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let head = inner.fill_buf().map_err(|e| Error::io(&path, e))?;
        let format = if head.starts_with(MAGIC) {
            TraceFormat::Binary
        } else {
            TraceFormat::Text
        };
        let mut reader = Self {
            inner,
            path,
            format,
            position: 0,
            line_buf: String::new(),
            done: false,
        };
        if format == TraceFormat::Binary {
            reader.read_header()?;
        }
        Ok(reader)
    }

    pub fn format(&self) -> TraceFormat {
        self.format
    }

    fn parse_error(&self, location: String, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            location,
            message: message.into(),
        }
    }

    fn read_header(&mut self) -> Result<()> {
        let mut header = [0u8; HEADER_BYTES];
        let got = read_full(&mut self.inner, &mut header).map_err(|e| Error::io(&self.path, e))?;
        if got < HEADER_BYTES {
            return Err(self.parse_error(format!("byte {got}"), "truncated header"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(self.parse_error("byte 4".into(), format!("unsupported version {version}")));
        }
        self.position = HEADER_BYTES as u64;
        Ok(())
    }

    fn next_binary(&mut self) -> Result<Option<TraceRecord>> {
        let mut buf = [0u8; RECORD_BYTES];
        let got = read_full(&mut self.inner, &mut buf).map_err(|e| Error::io(&self.path, e))?;
        if got == 0 {
            return Ok(None);
        }
        let offset = self.position;
        if got < RECORD_BYTES {
            return Err(self.parse_error(
                format!("byte {offset}"),
                format!("truncated record ({got} of {RECORD_BYTES} bytes)"),
            ));
        }
        let kind = AccessKind::from_code(buf[0])
            .ok_or_else(|| self.parse_error(format!("byte {offset}"), format!("bad kind {}", buf[0])))?;
        let vaddr = u64::from_le_bytes(buf[1..9].try_into().unwrap());
        if vaddr >= VADDR_LIMIT {
            return Err(self.parse_error(
                format!("byte {}", offset + 1),
                format!("vaddr {vaddr:#x} is not below 2^57"),
            ));
        }
        if buf[9] != 0 {
            return Err(self.parse_error(format!("byte {}", offset + 9), "reserved byte is not zero"));
        }
        self.position += RECORD_BYTES as u64;
        Ok(Some(TraceRecord { kind, vaddr }))
    }

    fn next_text(&mut self) -> Result<Option<TraceRecord>> {
        loop {
            self.line_buf.clear();
            let n = self
                .inner
                .read_line(&mut self.line_buf)
                .map_err(|e| match e.kind() {
                    io::ErrorKind::InvalidData => Error::Parse {
                        path: self.path.clone(),
                        location: format!("line {}", self.position + 1),
                        message: "not valid UTF-8".into(),
                    },
                    _ => Error::io(&self.path, e),
                })?;
            if n == 0 {
                return Ok(None);
            }
            self.position += 1;
            let content = match self.line_buf.find('#') {
                Some(i) => &self.line_buf[..i],
                None => &self.line_buf[..],
            };
            let mut fields = content.split_whitespace();
            let Some(kind) = fields.next() else {
                continue;
            };
            let location = format!("line {}", self.position);
            let kind = match kind {
                "I" => AccessKind::IFetch,
                "L" => AccessKind::Load,
                "S" => AccessKind::Store,
                other => return Err(self.parse_error(location, format!("unknown record kind {other:?}"))),
            };
            let addr = fields
                .next()
                .ok_or_else(|| self.parse_error(location.clone(), "missing address"))?;
            if fields.next().is_some() {
                return Err(self.parse_error(location, "trailing fields"));
            }
            let digits = addr
                .strip_prefix("0x")
                .or_else(|| addr.strip_prefix("0X"))
                .unwrap_or(addr);
            let vaddr = u64::from_str_radix(digits, 16)
                .map_err(|e| self.parse_error(location.clone(), format!("bad address {addr:?}: {e}")))?;
            if vaddr >= VADDR_LIMIT {
                return Err(self.parse_error(location, format!("vaddr {vaddr:#x} is not below 2^57")));
            }
            return Ok(Some(TraceRecord { kind, vaddr }));
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let res = match self.format {
            TraceFormat::Binary => self.next_binary(),
            TraceFormat::Text => self.next_text(),
        };
        match res {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads a whole trace into memory.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    TraceReader::open(path)?.collect()
}

pub fn write_trace(records: &[TraceRecord], path: impl AsRef<Path>, format: TraceFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_trace(records, &mut w, format).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_trace(records: &[TraceRecord], w: &mut impl Write, format: TraceFormat) -> io::Result<()> {
    match format {
        TraceFormat::Binary => {
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            for r in records {
                let mut buf = [0u8; RECORD_BYTES];
                buf[0] = r.kind.code();
                buf[1..9].copy_from_slice(&r.vaddr.to_le_bytes());
                w.write_all(&buf)?;
            }
        }
        TraceFormat::Text => {
            for r in records {
                writeln!(w, "{} {:#x}", r.kind.letter(), r.vaddr)?;
            }
        }
    }
    Ok(())
}

/// Parameters of the synthetic server-like trace generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceGenSpec {
    /// Distinct 4KB instruction pages in the code region.
    pub code_pages: u64,
    pub functions: u64,
    /// Cache lines per function body.
    pub func_size_lines: u64,
    /// Zipf exponent of function popularity (0 = uniform).
    pub popularity_skew: f64,
    /// Fraction of records that are loads/stores, in `[0, 1)`.
    pub data_ratio: f64,
    /// Distinct 4KB data pages addressed by loads/stores.
    pub data_pages: u64,
    pub length: u64,
    pub seed: u64,
}

impl Default for TraceGenSpec {
    fn default() -> Self {
        Self {
            code_pages: 512,
            functions: 1024,
            func_size_lines: 32,
            popularity_skew: 0.8,
            data_ratio: 0.3,
            data_pages: 4096,
            length: 150_000,
            seed: 1,
        }
    }
}

impl TraceGenSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(format!("trace generator: {m}")));
        if self.code_pages == 0 {
            return fail("code_pages must be >= 1");
        }
        if CODE_BASE + (self.code_pages << PAGE_4K_SHIFT) > 1 << 32 {
            return fail("code region must stay below 2^32");
        }
        if self.functions == 0 {
            return fail("functions must be >= 1");
        }
        if self.func_size_lines == 0 {
            return fail("func_size_lines must be >= 1");
        }
        if !(self.popularity_skew >= 0.0 && self.popularity_skew.is_finite()) {
            return fail("popularity_skew must be a finite value >= 0");
        }
        if !(0.0..1.0).contains(&self.data_ratio) {
            return fail("data_ratio must be in [0, 1)");
        }
        if self.data_ratio > 0.0 && self.data_pages == 0 {
            return fail("data_pages must be >= 1 when data_ratio > 0");
        }
        if self.length == 0 {
            return fail("length must be >= 1");
        }
        Ok(())
    }

    /// Line range `[start, end)` (relative to `CODE_BASE`) of every function.
    fn layout(&self) -> Vec<(u64, u64)> {
        let total_lines = self.code_pages * (1 << (PAGE_4K_SHIFT - LINE_SHIFT));
        (0..self.functions)
            .map(|i| {
                let start = (i as u128 * total_lines as u128 / self.functions as u128) as u64;
                let end = (start + self.func_size_lines).min(total_lines);
                (start, end)
            })
            .collect()
    }
}

/// Generates a deterministic trace: Zipf-popular functions executed as
/// sequential line walks, interleaved with loads/stores to a disjoint data
/// region.
pub fn generate_trace(spec: &TraceGenSpec) -> Result<Vec<TraceRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = spec.layout();

    let weights: Vec<f64> = (0..layout.len())
        .map(|rank| 1.0 / ((rank + 1) as f64).powf(spec.popularity_skew))
        .collect();
    let popularity = WeightedIndex::new(&weights).map_err(|e| Error::config(e.to_string()))?;
    // Hot functions are scattered over the code region rather than clustered at its start.
    let mut rank_to_function: Vec<usize> = (0..layout.len()).collect();
    rank_to_function.shuffle(&mut rng);

    let lines_per_data_page = 1u64 << (PAGE_4K_SHIFT - LINE_SHIFT);
    let len = spec.length as usize;
    let mut out = Vec::with_capacity(len);
    'outer: loop {
        let (start, end) = layout[rank_to_function[popularity.sample(&mut rng)]];
        for line in start..end {
            while rng.gen::<f64>() < spec.data_ratio {
                if out.len() == len {
                    break 'outer;
                }
                let page = rng.gen_range(0..spec.data_pages);
                let offset = rng.gen_range(0..lines_per_data_page);
                let kind = if rng.gen_range(0..3) < 2 {
                    AccessKind::Load
                } else {
                    AccessKind::Store
                };
                let vaddr = DATA_BASE + (page << PAGE_4K_SHIFT) + offset * LINE_SIZE;
                out.push(TraceRecord::new(kind, vaddr));
            }
            if out.len() == len {
                break 'outer;
            }
            out.push(TraceRecord::ifetch(CODE_BASE + line * LINE_SIZE));
        }
    }
    Ok(out)
}
