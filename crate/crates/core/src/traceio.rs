//! Binary trace files: a header followed by fixed-size per-step records.
//!
//! All integers are little-endian `u32` unless noted; all reals are
//! little-endian IEEE-754 `f32`. See `docs/trace-format.md` for offsets.
//!
//! ```text
//! header:  "DAID" | version | L | H | V | logit_mode:u8 | prompt_len
//!          | span_count | span_count x index | step_count
//! record:  L*V logits (layer-major) | L*H visual mass (layer-major) | source token
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::backend::{Backend, BackendDescriptor, LogitMode};
use crate::error::{Error, Result};
use crate::types::{
    validate_introspection, AttentionSummary, LogitVector, ModelDims, StepIntrospection, TokenId,
    VisualSpan,
};

pub const MAGIC: [u8; 4] = *b"DAID";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub dims: ModelDims,
    pub logit_mode: LogitMode,
    pub prompt_len: u32,
    pub visual_span: VisualSpan,
    pub step_count: u32,
}

impl TraceHeader {
    /// Encoded header length in bytes.
    pub fn byte_len(&self) -> usize {
        4 * 8 + 1 + 4 * self.visual_span.len()
    }

    /// Encoded length of one record in bytes.
    pub fn record_byte_len(&self) -> usize {
        let ModelDims {
            num_layers: l,
            num_heads: h,
            vocab_size: v,
        } = self.dims;
        4 * (l * v + l * h) + 4
    }

    pub fn validate(&self) -> Result<()> {
        self.dims
            .validate()
            .map_err(|e| Error::BadHeader(e.to_string()))?;
        if self.step_count == 0 {
            return Err(Error::BadHeader("step_count must be >= 1".into()));
        }
        self.visual_span
            .validate(self.prompt_len as usize)
            .map_err(|e| Error::BadHeader(e.to_string()))?;
        for d in [
            self.dims.num_layers,
            self.dims.num_heads,
            self.dims.vocab_size,
        ] {
            if u32::try_from(d).is_err() {
                return Err(Error::BadHeader(format!(
                    "dimension {d} does not fit in u32"
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        for x in [
            VERSION,
            self.dims.num_layers as u32,
            self.dims.num_heads as u32,
            self.dims.vocab_size as u32,
        ] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.push(self.logit_mode.to_byte());
        out.extend_from_slice(&self.prompt_len.to_le_bytes());
        out.extend_from_slice(&(self.visual_span.len() as u32).to_le_bytes());
        for &i in self.visual_span.indices() {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out.extend_from_slice(&self.step_count.to_le_bytes());
        out
    }

    pub fn descriptor(&self, name: impl Into<String>) -> BackendDescriptor {
        BackendDescriptor {
            dims: self.dims,
            visual_span: self.visual_span.clone(),
            logit_mode: self.logit_mode,
            name: name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: StepIntrospection,
    /// Token the source model actually emitted at this step.
    pub source_token: TokenId,
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], err: impl FnOnce() -> Error) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => err(),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, || Error::TruncatedHeader)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_header<R: Read>(r: &mut R) -> Result<TraceHeader> {
    let mut magic = [0u8; 4];
    read_exact_or(r, &mut magic, || Error::TruncatedHeader)?;
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let num_layers = read_u32(r)? as usize;
    let num_heads = read_u32(r)? as usize;
    let vocab_size = read_u32(r)? as usize;
    let mut mode = [0u8; 1];
    read_exact_or(r, &mut mode, || Error::TruncatedHeader)?;
    let logit_mode = LogitMode::from_byte(mode[0])
        .ok_or_else(|| Error::BadHeader(format!("unknown logit_mode {}", mode[0])))?;
    let prompt_len = read_u32(r)?;
    let span_count = read_u32(r)?;
    if span_count > prompt_len {
        return Err(Error::BadHeader(format!(
            "visual span of {span_count} positions exceeds prompt length {prompt_len}"
        )));
    }
    let mut indices = Vec::with_capacity(span_count as usize);
    for _ in 0..span_count {
        indices.push(read_u32(r)?);
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadHeader(
            "visual span indices must be strictly increasing".into(),
        ));
    }
    let step_count = read_u32(r)?;
    let header = TraceHeader {
        dims: ModelDims {
            num_layers,
            num_heads,
            vocab_size,
        },
        logit_mode,
        prompt_len,
        visual_span: VisualSpan::new(indices),
        step_count,
    };
    header.validate()?;
    Ok(header)
}

fn check_record(header: &TraceHeader, record: &TraceRecord) -> Result<()> {
    validate_introspection(&record.step, &header.dims)
}

pub fn write_trace_to<W: Write>(
    mut w: W,
    header: &TraceHeader,
    records: &[TraceRecord],
) -> Result<()> {
    header.validate()?;
    if records.len() != header.step_count as usize {
        return Err(Error::ShapeMismatch {
            what: "trace records",
            expected: header.step_count as usize,
            got: records.len(),
        });
    }
    for r in records {
        check_record(header, r)?;
    }
    w.write_all(&header.encode())?;
    let mut buf = Vec::with_capacity(header.record_byte_len());
    for r in records {
        buf.clear();
        for layer in &r.step.layer_logits {
            for x in layer.as_slice() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        for x in r.step.attention.as_slice() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&r.source_token.to_le_bytes());
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a complete trace. Shapes are checked before the file is created.
pub fn write_trace(
    path: impl AsRef<Path>,
    header: &TraceHeader,
    records: &[TraceRecord],
) -> Result<()> {
    header.validate()?;
    if records.len() != header.step_count as usize {
        return Err(Error::ShapeMismatch {
            what: "trace records",
            expected: header.step_count as usize,
            got: records.len(),
        });
    }
    for r in records {
        check_record(header, r)?;
    }
    let file = File::create(path)?;
    write_trace_to(BufWriter::new(file), header, records)
}

/// Streaming reader: holds one record buffer regardless of step count.
pub struct TraceReader<R> {
    inner: R,
    header: TraceHeader,
    next_step: u32,
    buf: Vec<u8>,
    failed: bool,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> TraceReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header = read_header(&mut inner)?;
        let buf = vec![0u8; header.record_byte_len()];
        Ok(Self {
            inner,
            header,
            next_step: 0,
            buf,
            failed: false,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn read_record(&mut self) -> Result<TraceRecord> {
        let step = self.next_step;
        read_exact_or(&mut self.inner, &mut self.buf, || Error::Truncated { step })?;
        let ModelDims {
            num_layers: l,
            num_heads: h,
            vocab_size: v,
        } = self.header.dims;
        let mut floats = self.buf[..4 * (l * v + l * h)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let layer_logits: Vec<LogitVector> = (0..l)
            .map(|_| LogitVector::new(floats.by_ref().take(v).collect()))
            .collect();
        let mass: Vec<f32> = floats.collect();
        let tail = &self.buf[self.buf.len() - 4..];
        let source_token = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
        let record = TraceRecord {
            step: StepIntrospection {
                layer_logits,
                attention: AttentionSummary::new(l, h, mass)?,
            },
            source_token,
        };
        check_record(&self.header, &record)?;
        Ok(record)
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next_step >= self.header.step_count {
            return None;
        }
        let out = self.read_record();
        match out {
            Ok(_) => self.next_step += 1,
            Err(_) => self.failed = true,
        }
        Some(out)
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<(TraceHeader, TraceReader<BufReader<File>>)> {
    let reader = TraceReader::open(path)?;
    Ok((reader.header().clone(), reader))
}

/// Reads every record, stopping at the first error.
pub fn read_all<R: Read>(reader: R) -> Result<(TraceHeader, Vec<TraceRecord>)> {
    let reader = TraceReader::new(reader)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

/// Replays stored records one per call, ignoring context contents.
pub struct TraceBackend<R> {
    reader: TraceReader<R>,
    descriptor: BackendDescriptor,
    forward_passes: u64,
    source_tokens: Vec<TokenId>,
}

impl<R: Read> TraceBackend<R> {
    pub fn new(reader: TraceReader<R>) -> Self {
        let descriptor = reader.header().descriptor("trace");
        Self {
            reader,
            descriptor,
            forward_passes: 0,
            source_tokens: Vec::new(),
        }
    }

    pub fn header(&self) -> &TraceHeader {
        self.reader.header()
    }

    /// Source-model tokens of the records replayed so far.
    pub fn source_tokens(&self) -> &[TokenId] {
        &self.source_tokens
    }
}

pub fn trace_backend(path: impl AsRef<Path>) -> Result<TraceBackend<BufReader<File>>> {
    Ok(TraceBackend::new(TraceReader::open(path)?))
}

impl<R: Read> Backend for TraceBackend<R> {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn step(&mut self, context: &[TokenId]) -> Result<StepIntrospection> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        let prompt_len = self.reader.header().prompt_len as usize;
        if context.len() < prompt_len {
            return Err(Error::BackendFailure(format!(
                "context of {} tokens is shorter than the recorded prompt ({prompt_len})",
                context.len()
            )));
        }
        match self.reader.next() {
            Some(Ok(record)) => {
                self.forward_passes += 1;
                self.source_tokens.push(record.source_token);
                Ok(record.step)
            }
            Some(Err(e)) => Err(e),
            None => Err(Error::TraceExhausted {
                steps: self.reader.header().step_count,
            }),
        }
    }

    fn forward_pass_count(&self) -> u64 {
        self.forward_passes
    }
}

/// Drives `backend` greedily from `prompt` and captures every step as a
/// trace record. Used to produce offline fixtures from the toy backend.
pub fn record_trace<B: Backend + ?Sized>(
    backend: &mut B,
    prompt: &[TokenId],
    steps: u32,
) -> Result<(TraceHeader, Vec<TraceRecord>)> {
    let header = TraceHeader {
        dims: backend.dims(),
        logit_mode: backend.descriptor().logit_mode,
        prompt_len: u32::try_from(prompt.len())
            .map_err(|_| Error::InvalidConfig("prompt too long".into()))?,
        visual_span: backend.descriptor().visual_span.clone(),
        step_count: steps,
    };
    header.validate()?;
    let mut context = prompt.to_vec();
    let mut records = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let step = backend.step(&context)?;
        let token = step.final_logits().argmax();
        context.push(token);
        records.push(TraceRecord {
            step,
            source_token: token,
        });
    }
    Ok((header, records))
}

/// Reads a whole trace from bytes; handy for tests and tooling.
pub fn read_all_bytes(bytes: &[u8]) -> Result<(TraceHeader, Vec<TraceRecord>)> {
    read_all(io::Cursor::new(bytes))
}
