use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::io::{check_version, checked_len, CrcReader, CrcWriter};
use crate::error::{Error, Result};

pub const SCORES_MAGIC: &[u8; 4] = b"TDSC";
pub const CORESET_MAGIC: &[u8; 4] = b"TDCS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tdds,
    Random,
    Entropy,
    Forgetting,
    El2n,
    Aum,
    DynUnc,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Tdds,
        Method::Random,
        Method::Entropy,
        Method::Forgetting,
        Method::El2n,
        Method::Aum,
        Method::DynUnc,
    ];

    pub fn code(self) -> u16 {
        match self {
            Method::Tdds => 0,
            Method::Random => 1,
            Method::Entropy => 2,
            Method::Forgetting => 3,
            Method::El2n => 4,
            Method::Aum => 5,
            Method::DynUnc => 6,
        }
    }

    pub fn from_code(code: u16) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.code() == code)
            .ok_or_else(|| Error::format(format!("unknown method code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Tdds => "tdds",
            Method::Random => "random",
            Method::Entropy => "entropy",
            Method::Forgetting => "forgetting",
            Method::El2n => "el2n",
            Method::Aum => "aum",
            Method::DynUnc => "dynunc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::param(format!("unknown method {s:?}")))
    }
}

/// Parameters recorded alongside a score vector. Baselines reuse the fields:
/// `window` holds the EL2N epoch count or the Dyn-Unc window, `beta` is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParams {
    pub epochs: u32,
    pub window: u32,
    pub beta: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub method: Method,
    pub params: ScoreParams,
    pub scores: Vec<f64>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((n, s)) = self.scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(Error::data(format!("score of sample {n} is {s}")));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, sink: W) -> Result<u64> {
        self.validate()?;
        let mut w = CrcWriter::new(sink, SCORES_MAGIC)?;
        w.put_u32(1)?;
        w.put_u16(self.method.code())?;
        w.put_u16(0)?;
        w.put_u32(self.params.epochs)?;
        w.put_u32(self.params.window)?;
        w.put_f32(self.params.beta)?;
        w.put_u64(self.scores.len() as u64)?;
        for &s in &self.scores {
            w.put_f64(s)?;
        }
        Ok(w.finish()?.1)
    }

    pub fn read_from<R: Read>(source: R) -> Result<Self> {
        let mut r = CrcReader::new(source, SCORES_MAGIC)?;
        check_version(r.u32()?, "scores")?;
        let method = Method::from_code(r.u16()?)?;
        if r.u16()? != 0 {
            return Err(Error::format("reserved scores field is not zero"));
        }
        let params = ScoreParams {
            epochs: r.u32()?,
            window: r.u32()?,
            beta: r.f32()?,
        };
        let n = checked_len(r.u64()?, "score")?;
        let mut scores = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            scores.push(r.f64()?);
        }
        r.finish()?;
        let table = ScoreTable { method, params, scores };
        table.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        self.validate()?;
        writeln!(sink, "index,method,epochs_t,window_k,beta,score")?;
        for (i, s) in self.scores.iter().enumerate() {
            writeln!(
                sink,
                "{i},{},{},{},{},{s}",
                self.method, self.params.epochs, self.params.window, self.params.beta
            )?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut method = None;
        let mut params = None;
        let mut scores = Vec::new();
        for (line_no, fields) in csv_records(source, 6)? {
            let index: usize = parse_field(&fields[0], line_no)?;
            if index != scores.len() {
                return Err(Error::format(format!("line {line_no}: index {index} out of sequence")));
            }
            let m: Method = fields[1].parse()?;
            let p = ScoreParams {
                epochs: parse_field(&fields[2], line_no)?,
                window: parse_field(&fields[3], line_no)?,
                beta: parse_field(&fields[4], line_no)?,
            };
            if method.get_or_insert(m) != &m || params.get_or_insert(p) != &p {
                return Err(Error::format(format!(
                    "line {line_no}: metadata differs from earlier rows"
                )));
            }
            scores.push(parse_field(&fields[5], line_no)?);
        }
        let (Some(method), Some(params)) = (method, params) else {
            return Err(Error::format("score csv has no rows"));
        };
        let table = ScoreTable { method, params, scores };
        table.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(table)
    }
}

/// Selected sample indices with their importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Coreset {
    pub n_total: u64,
    /// Strictly increasing, all below `n_total`.
    pub indices: Vec<u64>,
    pub weights: Vec<f64>,
    pub pruning_rate: f32,
}

impl Coreset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.weights.len() {
            return Err(Error::format(format!(
                "{} indices but {} weights",
                self.indices.len(),
                self.weights.len()
            )));
        }
        if self.indices.is_empty() {
            return Err(Error::format("coreset is empty"));
        }
        if self.indices.len() as u64 > self.n_total {
            return Err(Error::format(format!(
                "coreset of {} exceeds dataset of {}",
                self.indices.len(),
                self.n_total
            )));
        }
        if !(self.pruning_rate >= 0.0 && self.pruning_rate < 1.0) {
            return Err(Error::format(format!(
                "pruning rate {} outside [0, 1)",
                self.pruning_rate
            )));
        }
        for pair in self.indices.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::format(format!(
                    "indices not strictly increasing at {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = self.indices.last() {
            if last >= self.n_total {
                return Err(Error::format(format!(
                    "index {last} not below dataset size {}",
                    self.n_total
                )));
            }
        }
        if let Some(w) = self.weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::format(format!("weight {w} is not finite")));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, sink: W) -> Result<u64> {
        self.validate()?;
        let mut w = CrcWriter::new(sink, CORESET_MAGIC)?;
        w.put_u32(1)?;
        w.put_u64(self.n_total)?;
        w.put_u64(self.indices.len() as u64)?;
        w.put_f32(self.pruning_rate)?;
        w.put_u32(0)?;
        for (&i, &wt) in self.indices.iter().zip(&self.weights) {
            w.put_u64(i)?;
            w.put_f64(wt)?;
        }
        Ok(w.finish()?.1)
    }

    pub fn read_from<R: Read>(source: R) -> Result<Self> {
        let mut r = CrcReader::new(source, CORESET_MAGIC)?;
        check_version(r.u32()?, "coreset")?;
        let n_total = r.u64()?;
        let m = r.u64()?;
        if m > n_total {
            return Err(Error::format(format!("coreset of {m} exceeds dataset of {n_total}")));
        }
        let m = checked_len(m, "coreset")?;
        let pruning_rate = r.f32()?;
        if r.u32()? != 0 {
            return Err(Error::format("reserved coreset field is not zero"));
        }
        let mut indices = Vec::with_capacity(m.min(1 << 20));
        let mut weights = Vec::with_capacity(m.min(1 << 20));
        for _ in 0..m {
            indices.push(r.u64()?);
            weights.push(r.f64()?);
        }
        r.finish()?;
        let coreset = Coreset {
            n_total,
            indices,
            weights,
            pruning_rate,
        };
        coreset.validate()?;
        Ok(coreset)
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        self.validate()?;
        writeln!(sink, "index,weight,n_total,pruning_rate")?;
        for (i, w) in self.indices.iter().zip(&self.weights) {
            writeln!(sink, "{i},{w},{},{}", self.n_total, self.pruning_rate)?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut meta = None;
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for (line_no, fields) in csv_records(source, 4)? {
            indices.push(parse_field(&fields[0], line_no)?);
            weights.push(parse_field(&fields[1], line_no)?);
            let m: (u64, f32) = (parse_field(&fields[2], line_no)?, parse_field(&fields[3], line_no)?);
            if meta.get_or_insert(m) != &m {
                return Err(Error::format(format!(
                    "line {line_no}: metadata differs from earlier rows"
                )));
            }
        }
        let Some((n_total, pruning_rate)) = meta else {
            return Err(Error::format("coreset csv has no rows"));
        };
        let coreset = Coreset {
            n_total,
            indices,
            weights,
            pruning_rate,
        };
        coreset.validate()?;
        Ok(coreset)
    }
}

fn csv_records<R: Read>(source: R, width: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != width {
            return Err(Error::format(format!(
                "line {}: expected {width} fields, found {}",
                i + 1,
                fields.len()
            )));
        }
        out.push((i + 1, fields));
    }
    Ok(out)
}

fn parse_field<T: FromStr>(field: &str, line_no: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::format(format!("line {line_no}: cannot parse {field:?}")))
}

/// On-disk encoding selected by `--format`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FileFormat {
    #[serde(rename = "bin")]
    Binary,
    #[serde(rename = "csv")]
    Csv,
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bin" | "binary" => Ok(FileFormat::Binary),
            "csv" => Ok(FileFormat::Csv),
            other => Err(Error::param(format!("unknown format {other:?}"))),
        }
    }
}

impl fmt::Display for FileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FileFormat::Binary => "bin",
            FileFormat::Csv => "csv",
        })
    }
}

pub fn save_scores(table: &ScoreTable, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        FileFormat::Binary => {
            table.write_to(&mut out)?;
        }
        FileFormat::Csv => table.write_csv(&mut out)?,
    }
    out.flush()?;
    Ok(())
}

/// Loads a score table, detecting binary vs CSV from the leading magic.
pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(SCORES_MAGIC) {
        ScoreTable::read_from(bytes.as_slice())
    } else {
        ScoreTable::read_csv(bytes.as_slice())
    }
}

pub fn save_coreset(coreset: &Coreset, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        FileFormat::Binary => {
            coreset.write_to(&mut out)?;
        }
        FileFormat::Csv => coreset.write_csv(&mut out)?,
    }
    out.flush()?;
    Ok(())
}

pub fn load_coreset(path: impl AsRef<Path>) -> Result<Coreset> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(CORESET_MAGIC) {
        Coreset::read_from(bytes.as_slice())
    } else {
        Coreset::read_csv(bytes.as_slice())
    }
}
