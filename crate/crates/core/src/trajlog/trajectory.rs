use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{check_version, checked_len, read_exact, CrcReader, CrcWriter};
use crate::error::{Error, Result};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"TDLG";

/// Fixed-size prefix: magic, version, kind, mode, reserved, N, C, T.
pub const HEADER_BYTES: u64 = 28;

/// Tolerance on row sums of logged probability vectors.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    FullProbs,
    DeltaMagnitudes,
}

impl PayloadKind {
    fn code(self) -> u8 {
        match self {
            PayloadKind::FullProbs => 0,
            PayloadKind::DeltaMagnitudes => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(PayloadKind::FullProbs),
            1 => Ok(PayloadKind::DeltaMagnitudes),
            other => Err(Error::format(format!("unknown payload kind {other}"))),
        }
    }
}

/// When the logged probabilities were captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordingMode {
    /// At the minibatch forward pass, before that minibatch's update.
    TrainTime,
    /// By a separate pass over the whole dataset at the end of each epoch.
    EvalTime,
}

impl std::str::FromStr for RecordingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "train-time" => Ok(RecordingMode::TrainTime),
            "eval" | "eval-time" => Ok(RecordingMode::EvalTime),
            other => Err(Error::param(format!("unknown recording mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for RecordingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecordingMode::TrainTime => "train-time",
            RecordingMode::EvalTime => "eval-time",
        })
    }
}

impl RecordingMode {
    fn code(self) -> u8 {
        match self {
            RecordingMode::TrainTime => 0,
            RecordingMode::EvalTime => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(RecordingMode::TrainTime),
            1 => Ok(RecordingMode::EvalTime),
            other => Err(Error::format(format!("unknown recording mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryHeader {
    pub n_samples: usize,
    pub n_classes: usize,
    /// Number of epochs recorded. DeltaMagnitudes payloads hold `n_epochs - 1` blocks.
    pub n_epochs: usize,
    pub payload_kind: PayloadKind,
    pub recording_mode: RecordingMode,
    pub labels: Vec<u32>,
}

impl TrajectoryHeader {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::format("trajectory needs at least one sample"));
        }
        if self.n_classes < 2 {
            return Err(Error::format("trajectory needs at least two classes"));
        }
        if self.n_epochs < 2 {
            return Err(Error::format("trajectory needs at least two epochs"));
        }
        if u32::try_from(self.n_classes).is_err() || u32::try_from(self.n_epochs).is_err() {
            return Err(Error::format("class or epoch count exceeds u32"));
        }
        if self.labels.len() != self.n_samples {
            return Err(Error::format(format!(
                "{} labels for {} samples",
                self.labels.len(),
                self.n_samples
            )));
        }
        if let Some((i, &y)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y as usize >= self.n_classes)
        {
            return Err(Error::format(format!(
                "label {y} of sample {i} not below class count {}",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        match self.payload_kind {
            PayloadKind::FullProbs => self.n_epochs,
            PayloadKind::DeltaMagnitudes => self.n_epochs - 1,
        }
    }

    /// Number of f32 values in one payload block.
    pub fn block_len(&self) -> usize {
        match self.payload_kind {
            PayloadKind::FullProbs => self.n_samples * self.n_classes,
            PayloadKind::DeltaMagnitudes => self.n_samples,
        }
    }

    pub fn payload_offset(&self) -> u64 {
        HEADER_BYTES + 4 * self.n_samples as u64
    }

    /// Exact size of a complete file with this header.
    pub fn file_len(&self) -> u64 {
        self.payload_offset() + 4 * (self.block_count() * self.block_len()) as u64 + 4
    }
}

/// Predicted probabilities of every sample at one epoch, row-major N×C.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    pub epoch: usize,
    pub n_classes: usize,
    pub data: Vec<f32>,
}

impl ProbMatrix {
    pub fn new(epoch: usize, n_classes: usize, data: Vec<f32>) -> Result<Self> {
        if n_classes == 0 || !data.len().is_multiple_of(n_classes) {
            return Err(Error::shape(format!(
                "{} values do not form rows of {n_classes}",
                data.len()
            )));
        }
        Ok(ProbMatrix { epoch, n_classes, data })
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_classes
    }

    pub fn row(&self, n: usize) -> &[f32] {
        &self.data[n * self.n_classes..(n + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.n_classes)
    }

    /// Checks every row is a distribution: entries finite in [0, 1] and a sum
    /// within [`ROW_SUM_TOLERANCE`] of one.
    pub fn validate(&self) -> Result<()> {
        for (n, row) in self.rows().enumerate() {
            let mut sum = 0.0f64;
            for &p in row {
                if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                    return Err(Error::data(format!(
                        "epoch {} sample {n}: probability {p} outside [0, 1]",
                        self.epoch
                    )));
                }
                sum += f64::from(p);
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::data(format!(
                    "epoch {} sample {n}: row sums to {sum}",
                    self.epoch
                )));
            }
        }
        Ok(())
    }
}

/// Streaming writer for "TDLG" files. Blocks are pushed in epoch order; the
/// CRC trailer is written by [`TrajectoryWriter::finish`].
pub struct TrajectoryWriter<W: Write> {
    sink: CrcWriter<W>,
    header: TrajectoryHeader,
    blocks: usize,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(header: TrajectoryHeader, sink: W) -> Result<Self> {
        header.validate()?;
        let mut sink = CrcWriter::new(sink, TRAJECTORY_MAGIC)?;
        sink.put_u32(1)?;
        sink.put_u8(header.payload_kind.code())?;
        sink.put_u8(header.recording_mode.code())?;
        sink.put_u16(0)?;
        sink.put_u64(header.n_samples as u64)?;
        sink.put_u32(header.n_classes as u32)?;
        sink.put_u32(header.n_epochs as u32)?;
        let mut labels = Vec::with_capacity(header.labels.len() * 4);
        for y in &header.labels {
            labels.extend_from_slice(&y.to_le_bytes());
        }
        sink.put(&labels)?;
        Ok(TrajectoryWriter {
            sink,
            header,
            blocks: 0,
        })
    }

    pub fn header(&self) -> &TrajectoryHeader {
        &self.header
    }

    fn check_room(&self, len: usize) -> Result<()> {
        if self.blocks >= self.header.block_count() {
            return Err(Error::format(format!(
                "header declares {} blocks, got one more",
                self.header.block_count()
            )));
        }
        if len != self.header.block_len() {
            return Err(Error::format(format!(
                "block has {len} values, header requires {}",
                self.header.block_len()
            )));
        }
        Ok(())
    }

    /// Appends one epoch of probabilities (FullProbs payloads only).
    pub fn push_probs(&mut self, block: &ProbMatrix) -> Result<()> {
        if self.header.payload_kind != PayloadKind::FullProbs {
            return Err(Error::format("probability block pushed to a delta log"));
        }
        if block.n_classes != self.header.n_classes {
            return Err(Error::format(format!(
                "block has {} classes, header has {}",
                block.n_classes, self.header.n_classes
            )));
        }
        self.check_room(block.data.len())?;
        block.validate()?;
        self.sink.put_f32_slice(&block.data)?;
        self.blocks += 1;
        Ok(())
    }

    /// Appends one block of N delta magnitudes (DeltaMagnitudes payloads only).
    pub fn push_deltas(&mut self, block: &[f32]) -> Result<()> {
        if self.header.payload_kind != PayloadKind::DeltaMagnitudes {
            return Err(Error::format("delta block pushed to a probability log"));
        }
        self.check_room(block.len())?;
        if let Some((n, v)) = block.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::data(format!(
                "delta block {} sample {n}: {v} is not a finite magnitude",
                self.blocks
            )));
        }
        self.sink.put_f32_slice(block)?;
        self.blocks += 1;
        Ok(())
    }

    /// Writes the CRC trailer. Returns the sink and the total byte count.
    pub fn finish(self) -> Result<(W, u64)> {
        if self.blocks != self.header.block_count() {
            return Err(Error::format(format!(
                "wrote {} blocks, header declares {}",
                self.blocks,
                self.header.block_count()
            )));
        }
        self.sink.finish()
    }
}

/// Writes a complete FullProbs trajectory. Returns bytes written.
pub fn write_trajectory<'a, W: Write>(
    header: &TrajectoryHeader,
    blocks: impl IntoIterator<Item = &'a ProbMatrix>,
    sink: W,
) -> Result<u64> {
    let mut w = TrajectoryWriter::new(header.clone(), sink)?;
    for b in blocks {
        w.push_probs(b)?;
    }
    Ok(w.finish()?.1)
}

fn parse_header<R: Read>(r: &mut CrcReader<R>) -> Result<TrajectoryHeader> {
    check_version(r.u32()?, "trajectory")?;
    let payload_kind = PayloadKind::from_code(r.u8()?)?;
    let recording_mode = RecordingMode::from_code(r.u8()?)?;
    if r.u16()? != 0 {
        return Err(Error::format("reserved header field is not zero"));
    }
    let n_samples = checked_len(r.u64()?, "sample")?;
    let n_classes = r.u32()? as usize;
    let n_epochs = r.u32()? as usize;
    // Validate counts before allocating the label vector.
    if n_samples == 0 || n_classes < 2 || n_epochs < 2 {
        return Err(Error::format(format!(
            "invalid dimensions N={n_samples} C={n_classes} T={n_epochs}"
        )));
    }
    let mut raw = vec![0u8; n_samples * 4];
    r.take(&mut raw)?;
    let labels = raw
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let header = TrajectoryHeader {
        n_samples,
        n_classes,
        n_epochs,
        payload_kind,
        recording_mode,
        labels,
    };
    header.validate()?;
    Ok(header)
}

/// Random-access reader over a "TDLG" source. Opening reads only the header
/// and labels; epoch blocks are fetched on demand.
#[derive(Debug)]
pub struct TrajectoryReader<R> {
    source: R,
    header: TrajectoryHeader,
}

impl TrajectoryReader<BufReader<File>> {
    /// Opens a file and verifies its length and CRC before returning.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = TrajectoryReader::new(BufReader::new(File::open(path)?))?;
        reader.verify()?;
        Ok(reader)
    }
}

impl<R: Read + Seek> TrajectoryReader<R> {
    /// Parses the header. Fails if the source is shorter or longer than the
    /// header implies; the checksum is only checked by [`Self::verify`].
    pub fn new(mut source: R) -> Result<Self> {
        source.seek(SeekFrom::Start(0))?;
        let header = {
            let mut r = CrcReader::new(&mut source, TRAJECTORY_MAGIC)?;
            parse_header(&mut r)?
        };
        let actual = source.seek(SeekFrom::End(0))?;
        let expected = header.file_len();
        if actual < expected {
            return Err(Error::format(format!(
                "truncated file: {actual} bytes, expected {expected}"
            )));
        }
        if actual > expected {
            return Err(Error::format(format!("file has {} trailing bytes", actual - expected)));
        }
        Ok(TrajectoryReader { source, header })
    }

    pub fn header(&self) -> &TrajectoryHeader {
        &self.header
    }

    pub fn into_inner(self) -> R {
        self.source
    }

    /// Streams the whole file through the checksum.
    pub fn verify(&mut self) -> Result<()> {
        self.source.seek(SeekFrom::Start(0))?;
        let mut r = CrcReader::new(&mut self.source, TRAJECTORY_MAGIC)?;
        let mut remaining = self.header.file_len() - 8;
        let mut buf = vec![0u8; 1 << 16];
        while remaining > 0 {
            let take = remaining.min(buf.len() as u64) as usize;
            r.take(&mut buf[..take])?;
            remaining -= take as u64;
        }
        r.finish()
    }

    fn read_block(&mut self, index: usize) -> Result<Vec<f32>> {
        let limit = self.header.block_count();
        if index >= limit {
            return Err(Error::Range {
                what: "trajectory block",
                index,
                limit,
            });
        }
        let len = self.header.block_len();
        let offset = self.header.payload_offset() + (index * len * 4) as u64;
        self.source.seek(SeekFrom::Start(offset))?;
        let mut raw = vec![0u8; len * 4];
        read_exact(&mut self.source, &mut raw)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    /// Reads the N×C probability block of epoch `t`.
    pub fn read_epoch(&mut self, t: usize) -> Result<ProbMatrix> {
        if self.header.payload_kind != PayloadKind::FullProbs {
            return Err(Error::format("log stores delta magnitudes, not probabilities"));
        }
        let data = self.read_block(t)?;
        ProbMatrix::new(t, self.header.n_classes, data)
    }

    /// Reads block `t` of a DeltaMagnitudes log: |Δℓ| between epochs t and t+1.
    pub fn read_deltas(&mut self, t: usize) -> Result<Vec<f32>> {
        if self.header.payload_kind != PayloadKind::DeltaMagnitudes {
            return Err(Error::format("log stores probabilities, not delta magnitudes"));
        }
        self.read_block(t)
    }

    /// Loads every block into memory.
    pub fn read_all(&mut self) -> Result<TrajectoryLog> {
        let blocks = (0..self.header.block_count())
            .map(|t| self.read_block(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrajectoryLog {
            header: self.header.clone(),
            blocks,
        })
    }
}

/// Reads only the header of a "TDLG" source.
pub fn read_header<R: Read + Seek>(source: R) -> Result<TrajectoryHeader> {
    Ok(TrajectoryReader::new(source)?.header)
}

/// A fully resident trajectory, as produced by the toy trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub header: TrajectoryHeader,
    /// `block_count()` blocks of `block_len()` values each.
    pub blocks: Vec<Vec<f32>>,
}

impl TrajectoryLog {
    /// Builds a FullProbs log from per-epoch blocks, validating every row.
    pub fn from_probs(
        labels: Vec<u32>,
        n_classes: usize,
        recording_mode: RecordingMode,
        epochs: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let header = TrajectoryHeader {
            n_samples: labels.len(),
            n_classes,
            n_epochs: epochs.len(),
            payload_kind: PayloadKind::FullProbs,
            recording_mode,
            labels,
        };
        header.validate()?;
        for (t, block) in epochs.iter().enumerate() {
            if block.len() != header.block_len() {
                return Err(Error::format(format!(
                    "epoch {t} has {} values, expected {}",
                    block.len(),
                    header.block_len()
                )));
            }
            ProbMatrix::new(t, n_classes, block.clone())?.validate()?;
        }
        Ok(TrajectoryLog { header, blocks: epochs })
    }

    pub fn write_to<W: Write>(&self, sink: W) -> Result<u64> {
        let mut w = TrajectoryWriter::new(self.header.clone(), sink)?;
        for (t, block) in self.blocks.iter().enumerate() {
            match self.header.payload_kind {
                PayloadKind::FullProbs => w.push_probs(&ProbMatrix::new(t, self.header.n_classes, block.clone())?)?,
                PayloadKind::DeltaMagnitudes => w.push_deltas(block)?,
            }
        }
        Ok(w.finish()?.1)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let mut out = BufWriter::new(File::create(path)?);
        let n = self.write_to(&mut out)?;
        out.flush()?;
        Ok(n)
    }
}

/// Epoch-at-a-time access shared by in-memory logs and file readers, so
/// scorers never need the full history resident.
pub trait EpochSource {
    fn header(&self) -> &TrajectoryHeader;
    fn epoch(&mut self, t: usize) -> Result<ProbMatrix>;
    fn deltas(&mut self, t: usize) -> Result<Vec<f32>>;
}

impl<R: Read + Seek> EpochSource for TrajectoryReader<R> {
    fn header(&self) -> &TrajectoryHeader {
        &self.header
    }
    fn epoch(&mut self, t: usize) -> Result<ProbMatrix> {
        self.read_epoch(t)
    }
    fn deltas(&mut self, t: usize) -> Result<Vec<f32>> {
        self.read_deltas(t)
    }
}

impl TrajectoryLog {
    pub fn epoch(&self, t: usize) -> Result<ProbMatrix> {
        if self.header.payload_kind != PayloadKind::FullProbs {
            return Err(Error::format("log stores delta magnitudes, not probabilities"));
        }
        let block = self.blocks.get(t).ok_or(Error::Range {
            what: "trajectory epoch",
            index: t,
            limit: self.blocks.len(),
        })?;
        ProbMatrix::new(t, self.header.n_classes, block.clone())
    }

    pub fn deltas(&self, t: usize) -> Result<Vec<f32>> {
        if self.header.payload_kind != PayloadKind::DeltaMagnitudes {
            return Err(Error::format("log stores probabilities, not delta magnitudes"));
        }
        self.blocks.get(t).cloned().ok_or(Error::Range {
            what: "delta block",
            index: t,
            limit: self.blocks.len(),
        })
    }
}

impl EpochSource for TrajectoryLog {
    fn header(&self) -> &TrajectoryHeader {
        &self.header
    }
    fn epoch(&mut self, t: usize) -> Result<ProbMatrix> {
        TrajectoryLog::epoch(self, t)
    }
    fn deltas(&mut self, t: usize) -> Result<Vec<f32>> {
        TrajectoryLog::deltas(self, t)
    }
}

impl EpochSource for &TrajectoryLog {
    fn header(&self) -> &TrajectoryHeader {
        &self.header
    }
    fn epoch(&mut self, t: usize) -> Result<ProbMatrix> {
        TrajectoryLog::epoch(self, t)
    }
    fn deltas(&mut self, t: usize) -> Result<Vec<f32>> {
        TrajectoryLog::deltas(self, t)
    }
}

impl<S: EpochSource + ?Sized> EpochSource for &mut S {
    fn header(&self) -> &TrajectoryHeader {
        (**self).header()
    }
    fn epoch(&mut self, t: usize) -> Result<ProbMatrix> {
        (**self).epoch(t)
    }
    fn deltas(&mut self, t: usize) -> Result<Vec<f32>> {
        (**self).deltas(t)
    }
}
