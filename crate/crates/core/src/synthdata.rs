//! Labelled synthetic datasets with known redundancy and label noise.
//!
//! Gaussian blobs: class centers sit at pairwise distance `center_scale`.
//! When `C <= D` center `c` is `(center_scale / √2) · e_c`; otherwise centers
//! are drawn uniformly on the sphere of radius `center_scale / √2`. All
//! randomness comes from ChaCha8 seeded with the spec seed: stream 0 draws
//! centers, stream 1 training samples, stream 2 held-out samples.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::trajlog::{checked_len, CrcReader, CrcWriter, FileFormat};

pub const DATASET_MAGIC: &[u8; 4] = b"TDDT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Clean,
    Duplicate { of: usize },
    Mislabeled { original: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub n_classes: usize,
    /// Row-major N×D.
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    pub provenance: Vec<Provenance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x(&self, n: usize) -> &[f64] {
        &self.features[n * self.n_features..(n + 1) * self.n_features]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.n_features == 0 || self.n_classes < 2 {
            return Err(Error::format(format!(
                "dataset needs D >= 1 and C >= 2, got D={} C={}",
                self.n_features, self.n_classes
            )));
        }
        if self.features.len() != n * self.n_features || self.provenance.len() != n {
            return Err(Error::format("dataset arrays disagree in length"));
        }
        if let Some(v) = self.features.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("feature value {v} is not finite")));
        }
        for (i, (&y, p)) in self.labels.iter().zip(&self.provenance).enumerate() {
            if y as usize >= self.n_classes {
                return Err(Error::format(format!("label {y} of sample {i} out of range")));
            }
            match *p {
                Provenance::Duplicate { of } => {
                    if self.provenance.get(of) != Some(&Provenance::Clean) {
                        return Err(Error::format(format!(
                            "sample {i} duplicates {of}, which is not a clean sample"
                        )));
                    }
                }
                Provenance::Mislabeled { original } => {
                    if original as usize >= self.n_classes || original == y {
                        return Err(Error::format(format!("sample {i} has inconsistent mislabel record")));
                    }
                }
                Provenance::Clean => {}
            }
        }
        Ok(())
    }

    /// Counts of (clean, duplicate, mislabeled) tags.
    pub fn provenance_counts(&self) -> (usize, usize, usize) {
        self.provenance.iter().fold((0, 0, 0), |(c, d, m), p| match p {
            Provenance::Clean => (c + 1, d, m),
            Provenance::Duplicate { .. } => (c, d + 1, m),
            Provenance::Mislabeled { .. } => (c, d, m + 1),
        })
    }

    pub fn write_to<W: Write>(&self, sink: W) -> Result<u64> {
        self.validate()?;
        let mut w = CrcWriter::new(sink, DATASET_MAGIC)?;
        w.put_u32(1)?;
        w.put_u64(self.len() as u64)?;
        w.put_u32(self.n_features as u32)?;
        w.put_u32(self.n_classes as u32)?;
        for &v in &self.features {
            w.put_f64(v)?;
        }
        for &y in &self.labels {
            w.put_u32(y)?;
        }
        for p in &self.provenance {
            let (tag, of, original) = encode_provenance(p);
            w.put_u8(tag)?;
            w.put_u64(of)?;
            w.put_u32(original)?;
        }
        Ok(w.finish()?.1)
    }

    pub fn read_from<R: Read>(source: R) -> Result<Self> {
        let mut r = CrcReader::new(source, DATASET_MAGIC)?;
        if r.u32()? != 1 {
            return Err(Error::format("unsupported dataset version"));
        }
        let n = checked_len(r.u64()?, "sample")?;
        let d = r.u32()? as usize;
        let c = r.u32()? as usize;
        let total = n
            .checked_mul(d)
            .ok_or_else(|| Error::format("feature count overflows"))?;
        let mut features = Vec::with_capacity(total.min(1 << 24));
        for _ in 0..total {
            features.push(r.f64()?);
        }
        let mut labels = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            labels.push(r.u32()?);
        }
        let mut provenance = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let tag = r.u8()?;
            let of = r.u64()?;
            let original = r.u32()?;
            provenance.push(decode_provenance(tag, of, original)?);
        }
        r.finish()?;
        let ds = Dataset {
            n_features: d,
            n_classes: c,
            features,
            labels,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        self.validate()?;
        let cols: Vec<String> = (0..self.n_features).map(|j| format!("x{j}")).collect();
        writeln!(sink, "{},label,n_classes,tag,ref,original", cols.join(","))?;
        for i in 0..self.len() {
            let (tag, of, original) = encode_provenance(&self.provenance[i]);
            for v in self.x(i) {
                write!(sink, "{v},")?;
            }
            writeln!(sink, "{},{},{tag},{of},{original}", self.labels[i], self.n_classes)?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut lines = BufReader::new(source).lines();
        let head = lines.next().ok_or_else(|| Error::format("empty dataset csv"))??;
        let d = head.split(',').count().saturating_sub(5);
        if d == 0 {
            return Err(Error::format("dataset csv header has no feature columns"));
        }
        let bad = |line: usize| Error::format(format!("dataset csv line {line} is malformed"));
        let mut ds = Dataset {
            n_features: d,
            n_classes: 0,
            features: Vec::new(),
            labels: Vec::new(),
            provenance: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != d + 5 {
                return Err(bad(i + 2));
            }
            for v in &f[..d] {
                ds.features.push(v.parse().map_err(|_| bad(i + 2))?);
            }
            ds.labels.push(f[d].parse().map_err(|_| bad(i + 2))?);
            ds.n_classes = f[d + 1].parse().map_err(|_| bad(i + 2))?;
            ds.provenance.push(decode_provenance(
                f[d + 2].parse().map_err(|_| bad(i + 2))?,
                f[d + 3].parse().map_err(|_| bad(i + 2))?,
                f[d + 4].parse().map_err(|_| bad(i + 2))?,
            )?);
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        match format {
            FileFormat::Binary => {
                self.write_to(&mut out)?;
            }
            FileFormat::Csv => self.write_csv(&mut out)?,
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a dataset, detecting binary vs CSV from the leading magic.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(DATASET_MAGIC) {
            Dataset::read_from(bytes.as_slice())
        } else {
            Dataset::read_csv(bytes.as_slice())
        }
    }
}

fn encode_provenance(p: &Provenance) -> (u8, u64, u32) {
    match *p {
        Provenance::Clean => (0, 0, 0),
        Provenance::Duplicate { of } => (1, of as u64, 0),
        Provenance::Mislabeled { original } => (2, 0, original),
    }
}

fn decode_provenance(tag: u8, of: u64, original: u32) -> Result<Provenance> {
    match tag {
        0 => Ok(Provenance::Clean),
        1 => Ok(Provenance::Duplicate {
            of: checked_len(of, "duplicate reference")?,
        }),
        2 => Ok(Provenance::Mislabeled { original }),
        other => Err(Error::format(format!("unknown provenance tag {other}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    /// Pairwise distance between class centers.
    pub center_scale: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl BlobSpec {
    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.dim < 2 {
            return Err(Error::param("blobs need C >= 2 and D >= 2"));
        }
        if !(self.sigma >= 0.0) || !self.center_scale.is_finite() {
            return Err(Error::param("sigma must be >= 0 and center scale finite"));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Row-major C×D class centers.
    pub fn centers(&self) -> Vec<f64> {
        let (c, d) = (self.n_classes, self.dim);
        let radius = self.center_scale / std::f64::consts::SQRT_2;
        let mut out = vec![0.0; c * d];
        if c <= d {
            for k in 0..c {
                out[k * d + k] = radius;
            }
        } else {
            let mut rng = self.rng(0);
            for row in out.chunks_exact_mut(d) {
                row.iter_mut().for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                row.iter_mut().for_each(|v| *v *= radius / norm);
            }
        }
        out
    }

    fn sample(&self, n_per_class: usize, stream: u64) -> Dataset {
        let (c, d) = (self.n_classes, self.dim);
        let centers = self.centers();
        let mut rng = self.rng(stream);
        let n = n_per_class * c;
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n_per_class {
            for k in 0..c {
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(centers[k * d + j] + self.sigma * z);
                }
                labels.push(k as u32);
            }
        }
        Dataset {
            n_features: d,
            n_classes: c,
            features,
            labels,
            provenance: vec![Provenance::Clean; n],
        }
    }
}

/// Balanced Gaussian blobs, samples interleaved by class.
pub fn gen_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(spec.sample(spec.n_per_class, 1))
}

/// Held-out samples from the same class distributions as [`gen_blobs`].
pub fn gen_blobs_holdout(spec: &BlobSpec, n_per_class: usize) -> Result<Dataset> {
    spec.validate()?;
    Ok(spec.sample(n_per_class, 2))
}

/// Appends `round(fraction · N)` jittered copies of uniformly chosen clean samples.
pub fn inject_duplicates(dataset: &Dataset, fraction: f64, jitter: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&fraction) || !(jitter >= 0.0) {
        return Err(Error::param("need 0 <= fraction < 1 and jitter >= 0"));
    }
    let clean: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.provenance[i] == Provenance::Clean)
        .collect();
    let count = (fraction * dataset.len() as f64).round() as usize;
    if count > 0 && clean.is_empty() {
        return Err(Error::param("no clean samples to duplicate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for _ in 0..count {
        let src = clean[rng.gen_range(0..clean.len())];
        for j in 0..dataset.n_features {
            let z: f64 = rng.sample(StandardNormal);
            out.features.push(dataset.x(src)[j] + jitter * z);
        }
        out.labels.push(dataset.labels[src]);
        out.provenance.push(Provenance::Duplicate { of: src });
    }
    Ok(out)
}

/// Relabels `round(fraction · N)` distinct samples with a uniformly chosen
/// wrong class. Only clean samples that no duplicate points at are eligible.
pub fn inject_label_noise(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::param("need 0 <= fraction < 1"));
    }
    let mut referenced = vec![false; dataset.len()];
    for p in &dataset.provenance {
        if let Provenance::Duplicate { of } = *p {
            referenced[of] = true;
        }
    }
    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.provenance[i] == Provenance::Clean && !referenced[i])
        .collect();
    let count = (fraction * dataset.len() as f64).round() as usize;
    if count > eligible.len() {
        return Err(Error::param(format!(
            "cannot mislabel {count} samples, only {} eligible",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = index::sample(&mut rng, eligible.len(), count)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    picks.sort_unstable();
    let mut out = dataset.clone();
    let c = dataset.n_classes as u32;
    for i in picks {
        let original = out.labels[i];
        let mut y = rng.gen_range(0..c - 1);
        if y >= original {
            y += 1;
        }
        out.labels[i] = y;
        out.provenance[i] = Provenance::Mislabeled { original };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BlobSpec {
        BlobSpec {
            n_per_class: 25,
            n_classes: 4,
            dim: 5,
            center_scale: 3.0,
            sigma: 1.0,
            seed: 11,
        }
    }

    #[test]
    fn zero_sigma_collapses_to_centers() {
        let s = BlobSpec { sigma: 0.0, ..spec() };
        let ds = gen_blobs(&s).unwrap();
        let centers = s.centers();
        for i in 0..ds.len() {
            let k = ds.labels[i] as usize;
            assert_eq!(ds.x(i), &centers[k * 5..(k + 1) * 5]);
        }
        let d01: f64 = (0..5)
            .map(|j| (centers[j] - centers[5 + j]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((d01 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_and_balanced() {
        let a = gen_blobs(&spec()).unwrap();
        assert_eq!(a, gen_blobs(&spec()).unwrap());
        assert_ne!(a, gen_blobs(&BlobSpec { seed: 12, ..spec() }).unwrap());
        for k in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&y| y == k).count(), 25);
        }
        let h = gen_blobs_holdout(&spec(), 5).unwrap();
        assert_eq!(h.len(), 20);
        assert_ne!(&h.features[..5], &a.features[..5]);
        // more classes than dimensions falls back to the sphere
        let wide = BlobSpec {
            n_classes: 7,
            dim: 3,
            ..spec()
        };
        let c = wide.centers();
        let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        assert!((r - 3.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn duplicates() {
        let base = gen_blobs(&spec()).unwrap();
        assert_eq!(inject_duplicates(&base, 0.0, 0.5, 1).unwrap(), base);
        let dup = inject_duplicates(&base, 0.2, 0.0, 1).unwrap();
        assert_eq!(dup.provenance_counts(), (100, 20, 0));
        for i in 100..120 {
            let Provenance::Duplicate { of } = dup.provenance[i] else {
                panic!("expected duplicate tag");
            };
            assert_eq!(dup.x(i), base.x(of));
            assert_eq!(dup.labels[i], base.labels[of]);
        }
        dup.validate().unwrap();
    }

    #[test]
    fn label_noise() {
        let base = gen_blobs(&spec()).unwrap();
        assert_eq!(inject_label_noise(&base, 0.0, 3).unwrap(), base);
        let noisy = inject_label_noise(&base, 0.2, 3).unwrap();
        assert_eq!(noisy.provenance_counts(), (80, 0, 20));
        for (i, p) in noisy.provenance.iter().enumerate() {
            if let Provenance::Mislabeled { original } = *p {
                assert_eq!(original, base.labels[i]);
                assert_ne!(noisy.labels[i], original);
            }
        }
        assert_eq!(noisy, inject_label_noise(&base, 0.2, 3).unwrap());
        // duplicate targets are never relabelled
        let dup = inject_duplicates(&base, 0.3, 0.01, 5).unwrap();
        inject_label_noise(&dup, 0.2, 9).unwrap().validate().unwrap();
    }

    #[test]
    fn file_roundtrips() {
        let ds = inject_label_noise(
            &inject_duplicates(&gen_blobs(&spec()).unwrap(), 0.1, 0.1, 2).unwrap(),
            0.1,
            4,
        )
        .unwrap();
        let mut bin = Vec::new();
        let n = ds.write_to(&mut bin).unwrap();
        assert_eq!(n as usize, bin.len());
        assert_eq!(Dataset::read_from(bin.as_slice()).unwrap(), ds);
        let mut csv = Vec::new();
        ds.write_csv(&mut csv).unwrap();
        assert_eq!(Dataset::read_csv(csv.as_slice()).unwrap(), ds);
        bin[30] ^= 0x40;
        assert!(Dataset::read_from(bin.as_slice()).is_err());
    }
}
