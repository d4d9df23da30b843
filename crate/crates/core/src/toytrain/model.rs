use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajlog::{checked_len, CrcReader, CrcWriter};

pub const MODEL_MAGIC: &[u8; 4] = b"TDMD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Softmax regression: `z = W x + b`.
    Linear,
    /// One tanh hidden layer: `z = W2 tanh(W1 x + b1) + b2`.
    Mlp { hidden: usize },
}

impl Arch {
    pub fn param_count(self, d: usize, c: usize) -> usize {
        match self {
            Arch::Linear => c * d + c,
            Arch::Mlp { hidden: h } => h * d + h + c * h + c,
        }
    }
}

/// Small differentiable classifier with a flat f64 parameter vector.
///
/// Layout: Linear is `W (C×D) | b (C)`; MLP is `W1 (H×D) | b1 (H) | W2 (C×H) | b2 (C)`,
/// all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub arch: Arch,
    pub n_features: usize,
    pub n_classes: usize,
    pub theta: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(arch: Arch, n_features: usize, n_classes: usize) -> Self {
        ToyModel {
            arch,
            n_features,
            n_classes,
            theta: vec![0.0; arch.param_count(n_features, n_classes)],
        }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init<R: Rng>(arch: Arch, n_features: usize, n_classes: usize, rng: &mut R) -> Self {
        let mut m = ToyModel::zeros(arch, n_features, n_classes);
        let (d, c) = (n_features, n_classes);
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            slice.iter_mut().for_each(|w| *w = rng.gen_range(-a..a));
        };
        match arch {
            Arch::Linear => fill(&mut m.theta[..c * d], d),
            Arch::Mlp { hidden: h } => {
                fill(&mut m.theta[..h * d], d);
                let w2 = h * d + h;
                fill(&mut m.theta[w2..w2 + c * h], h);
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_classes < 2 {
            return Err(Error::shape("model needs D >= 1 and C >= 2"));
        }
        if let Arch::Mlp { hidden: 0 } = self.arch {
            return Err(Error::shape("hidden width must be positive"));
        }
        let want = self.arch.param_count(self.n_features, self.n_classes);
        if self.theta.len() != want {
            return Err(Error::shape(format!(
                "theta has {} entries, architecture needs {want}",
                self.theta.len()
            )));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("theta contains non-finite values"));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::shape(format!(
                "input of length {}, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Logits plus, for the MLP, the hidden activations.
    fn logits_with_hidden(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, c) = (self.n_features, self.n_classes);
        let th = &self.theta;
        match self.arch {
            Arch::Linear => {
                let (w, b) = th.split_at(c * d);
                let z = (0..c).map(|k| b[k] + dot(&w[k * d..(k + 1) * d], x)).collect();
                (z, Vec::new())
            }
            Arch::Mlp { hidden: h } => {
                let (w1, rest) = th.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                let hid: Vec<f64> = (0..h)
                    .map(|j| (b1[j] + dot(&w1[j * d..(j + 1) * d], x)).tanh())
                    .collect();
                let z = (0..c).map(|k| b2[k] + dot(&w2[k * h..(k + 1) * h], &hid)).collect();
                (z, hid)
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.logits_with_hidden(x).0)
    }

    /// Softmax of the logits.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Cross-entropy `-ln f(x)[y]`, computed through log-sum-exp.
    pub fn loss(&self, x: &[f64], label: u32) -> Result<f64> {
        let z = self.logits(x)?;
        let y = label as usize;
        if y >= self.n_classes {
            return Err(Error::Range {
                what: "label",
                index: y,
                limit: self.n_classes,
            });
        }
        Ok(log_sum_exp(&z) - z[y])
    }

    /// Adds `weight · ∇θ CE(x, y)` into `out`. Returns the probabilities and
    /// loss at the current θ.
    pub(crate) fn accumulate_grad(&self, x: &[f64], label: usize, weight: f64, out: &mut [f64]) -> (Vec<f64>, f64) {
        let (d, c) = (self.n_features, self.n_classes);
        let (z, hid) = self.logits_with_hidden(x);
        let lse = log_sum_exp(&z);
        let loss = lse - z[label];
        let probs: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        let dz: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(k, &p)| weight * (p - if k == label { 1.0 } else { 0.0 }))
            .collect();
        match self.arch {
            Arch::Linear => {
                let (gw, gb) = out.split_at_mut(c * d);
                for k in 0..c {
                    let row = &mut gw[k * d..(k + 1) * d];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += dz[k] * xi;
                    }
                    gb[k] += dz[k];
                }
            }
            Arch::Mlp { hidden: h } => {
                let w2 = &self.theta[h * d + h..h * d + h + c * h];
                let (gw1, rest) = out.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                let mut dh = vec![0.0; h];
                for k in 0..c {
                    for j in 0..h {
                        gw2[k * h + j] += dz[k] * hid[j];
                        dh[j] += w2[k * h + j] * dz[k];
                    }
                    gb2[k] += dz[k];
                }
                for j in 0..h {
                    let da = dh[j] * (1.0 - hid[j] * hid[j]);
                    for (g, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += da * xi;
                    }
                    gb1[j] += da;
                }
            }
        }
        (probs, loss)
    }

    /// `Σ_n w_n ∇θ CE(f(x_n), y_n)` over a batch, accumulated in batch order.
    pub fn grad(&self, xs: &[&[f64]], labels: &[u32], weights: &[f64]) -> Result<Vec<f64>> {
        if xs.len() != labels.len() || xs.len() != weights.len() {
            return Err(Error::shape(format!(
                "batch of {} inputs, {} labels, {} weights",
                xs.len(),
                labels.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::param(format!("sample weight {w} is negative")));
        }
        let mut g = vec![0.0; self.theta.len()];
        for ((x, &y), &w) in xs.iter().zip(labels).zip(weights) {
            self.check_input(x)?;
            if y as usize >= self.n_classes {
                return Err(Error::Range {
                    what: "label",
                    index: y as usize,
                    limit: self.n_classes,
                });
            }
            self.accumulate_grad(x, y as usize, w, &mut g);
        }
        Ok(g)
    }

    pub fn write_to<W: Write>(&self, sink: W) -> Result<u64> {
        self.validate()?;
        let mut w = CrcWriter::new(sink, MODEL_MAGIC)?;
        w.put_u32(1)?;
        let (code, h) = match self.arch {
            Arch::Linear => (0u8, 0u32),
            Arch::Mlp { hidden } => (1, hidden as u32),
        };
        w.put_u8(code)?;
        w.put_u32(self.n_features as u32)?;
        w.put_u32(self.n_classes as u32)?;
        w.put_u32(h)?;
        w.put_u64(self.theta.len() as u64)?;
        for &v in &self.theta {
            w.put_f64(v)?;
        }
        Ok(w.finish()?.1)
    }

    pub fn read_from<R: Read>(source: R) -> Result<Self> {
        let mut r = CrcReader::new(source, MODEL_MAGIC)?;
        if r.u32()? != 1 {
            return Err(Error::format("unsupported model version"));
        }
        let code = r.u8()?;
        let d = r.u32()? as usize;
        let c = r.u32()? as usize;
        let h = r.u32()? as usize;
        let arch = match code {
            0 => Arch::Linear,
            1 => Arch::Mlp { hidden: h },
            other => return Err(Error::format(format!("unknown architecture {other}"))),
        };
        let len = checked_len(r.u64()?, "parameter")?;
        let mut theta = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            theta.push(r.f64()?);
        }
        r.finish()?;
        let m = ToyModel {
            arch,
            n_features: d,
            n_classes: c,
            theta,
        };
        m.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ToyModel::read_from(std::io::BufReader::new(File::open(path)?))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_linear_is_uniform() {
        let m = ToyModel::zeros(Arch::Linear, 3, 4);
        let p = m.forward(&[1.0, -2.0, 5.0]).unwrap();
        assert!(p.iter().all(|&v| v == 0.25));
        assert_eq!(m.loss(&[0.0; 3], 2).unwrap(), 4f64.ln());
    }

    #[test]
    fn forward_sums_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for arch in [Arch::Linear, Arch::Mlp { hidden: 5 }] {
            let m = ToyModel::init(arch, 4, 3, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = m.forward(&x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let z = m.logits(&x).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + 17.5).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(ToyModel::zeros(Arch::Linear, 3, 2).forward(&[1.0]).is_err());
    }

    #[test]
    fn gradient_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = ToyModel::init(Arch::Mlp { hidden: 3 }, 2, 3, &mut rng);
        let xs: [&[f64]; 2] = [&[0.5, -1.0], &[1.5, 0.25]];
        let g0 = m.grad(&xs, &[0, 2], &[0.0, 0.0]).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
        let g1 = m.grad(&xs, &[0, 2], &[1.0, 0.5]).unwrap();
        let g2 = m.grad(&xs, &[0, 2], &[2.0, 1.0]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
        assert!(m.grad(&xs, &[0], &[1.0, 1.0]).is_err());
        assert!(m.grad(&xs, &[0, 3], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ToyModel::init(Arch::Mlp { hidden: 4 }, 3, 2, &mut rng);
        let mut buf = Vec::new();
        let n = m.write_to(&mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        assert_eq!(ToyModel::read_from(buf.as_slice()).unwrap(), m);
        let last = buf.len() - 5;
        buf[last] ^= 1;
        assert!(ToyModel::read_from(buf.as_slice()).is_err());
    }
}
