use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clamp applied to probabilities before taking logarithms.
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaKind {
    /// `f_next · ln(f_next / f_prev)`: uses the whole predicted distribution.
    Kl,
    /// `ln(f_next[y] / f_prev[y])`: the cross-entropy change on the target class.
    Ce,
}

impl std::str::FromStr for DeltaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(DeltaKind::Kl),
            "ce" => Ok(DeltaKind::Ce),
            other => Err(Error::param(format!("unknown delta kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for DeltaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DeltaKind::Kl => "kl",
            DeltaKind::Ce => "ce",
        })
    }
}

/// Loss change between adjacent epochs measured by the KL divergence of the
/// newer prediction from the older one, in nats.
pub fn kl_delta<P: Copy + Into<f64>>(f_next: &[P], f_prev: &[P], epsilon: f64) -> Result<f64> {
    if f_next.len() != f_prev.len() {
        return Err(Error::shape(format!(
            "distributions of length {} and {}",
            f_next.len(),
            f_prev.len()
        )));
    }
    Ok(kl_unchecked(f_next, f_prev, epsilon))
}

#[inline]
pub(crate) fn kl_unchecked<P: Copy + Into<f64>>(f_next: &[P], f_prev: &[P], epsilon: f64) -> f64 {
    f_next
        .iter()
        .zip(f_prev)
        .map(|(&q, &p)| {
            let q: f64 = q.into();
            let p: f64 = p.into();
            q * (q.max(epsilon) / p.max(epsilon)).ln()
        })
        .sum()
}

/// Target-class log-probability change `ln f_next[y] - ln f_prev[y]`. Signed.
pub fn ce_delta<P: Copy + Into<f64>>(f_next: &[P], f_prev: &[P], target: usize, epsilon: f64) -> Result<f64> {
    if f_next.len() != f_prev.len() {
        return Err(Error::shape(format!(
            "distributions of length {} and {}",
            f_next.len(),
            f_prev.len()
        )));
    }
    if target >= f_next.len() {
        return Err(Error::Range {
            what: "target class",
            index: target,
            limit: f_next.len(),
        });
    }
    Ok(ce_unchecked(f_next, f_prev, target, epsilon))
}

#[inline]
pub(crate) fn ce_unchecked<P: Copy + Into<f64>>(f_next: &[P], f_prev: &[P], target: usize, epsilon: f64) -> f64 {
    let q: f64 = f_next[target].into();
    let p: f64 = f_prev[target].into();
    q.max(epsilon).ln() - p.max(epsilon).ln()
}
