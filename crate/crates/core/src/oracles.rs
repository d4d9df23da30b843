//! Exhaustive and numerical checks of the scoring theory on small instances.
//!
//! [`equivalence_check`] enumerates every kept subset of a magnitude matrix and
//! confirms that minimizing the pruned-coordinate matching error and maximizing
//! the kept temporal variance pick the same subsets. [`taylor_residual`] measures
//! how well the gradient projection onto a step predicts the loss change.
//! [`gradient_check`] compares analytic gradients with central differences.

use crate::error::{Error, Result};
use crate::scoring::top_m_indices;
use crate::toytrain::ToyModel;

/// Largest column count accepted by [`equivalence_check`].
pub const MAX_ENUM_SAMPLES: usize = 16;

/// `T×N` non-negative magnitudes, row-major by epoch: `get(t, n) = |g_t(x_n)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeMatrix {
    epochs: usize,
    samples: usize,
    data: Vec<f64>,
}

impl MagnitudeMatrix {
    pub fn new(epochs: usize, samples: usize, data: Vec<f64>) -> Result<Self> {
        if epochs == 0 || samples == 0 {
            return Err(Error::shape("magnitude matrix needs T >= 1 and N >= 1"));
        }
        if data.len() != epochs * samples {
            return Err(Error::shape(format!(
                "{} values for a {epochs}x{samples} matrix",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::data(format!("magnitude {v} is negative or non-finite")));
        }
        Ok(MagnitudeMatrix { epochs, samples, data })
    }

    /// Builds from per-sample columns (each of length `T`).
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.len();
        let t = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != t) {
            return Err(Error::shape("columns differ in length"));
        }
        let data = (0..t).flat_map(|i| columns.iter().map(move |c| c[i])).collect();
        MagnitudeMatrix::new(t, n, data)
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn get(&self, t: usize, n: usize) -> f64 {
        self.data[t * self.samples + n]
    }

    /// `Σ_t (G[t][n] − mean_t G[·][n])²` for every column.
    pub fn column_variances(&self) -> Vec<f64> {
        let t = self.epochs as f64;
        (0..self.samples)
            .map(|n| {
                // Shifting by the first entry keeps constant columns at exactly zero.
                let base = self.get(0, n);
                let mean = (0..self.epochs).map(|i| self.get(i, n) - base).sum::<f64>() / t;
                (0..self.epochs).map(|i| (self.get(i, n) - base - mean).powi(2)).sum()
            })
            .collect()
    }

    fn check_keep(&self, keep: &[usize]) -> Result<Vec<bool>> {
        if keep.is_empty() {
            return Err(Error::param("kept subset must be nonempty"));
        }
        let mut mask = vec![false; self.samples];
        for &k in keep {
            if k >= self.samples {
                return Err(Error::Range {
                    what: "column",
                    index: k,
                    limit: self.samples,
                });
            }
            if std::mem::replace(&mut mask[k], true) {
                return Err(Error::param(format!("column {k} listed twice")));
            }
        }
        Ok(mask)
    }
}

/// Matching error over pruned coordinates with each pruned sample replaced by
/// its temporal mean: `(1/T) Σ_{n ∉ keep} Σ_t (G[t][n] − Ḡ_n)²`.
pub fn mse_objective(g: &MagnitudeMatrix, keep: &[usize]) -> Result<f64> {
    let mask = g.check_keep(keep)?;
    let var = g.column_variances();
    Ok(pruned_sum(&var, &mask) / g.epochs as f64)
}

/// Kept temporal variance `Σ_{m ∈ keep} Σ_t (G[t][m] − Ḡ_m)²`.
pub fn variance_objective(g: &MagnitudeMatrix, keep: &[usize]) -> Result<f64> {
    let mask = g.check_keep(keep)?;
    let var = g.column_variances();
    Ok(kept_sum(&var, &mask))
}

fn pruned_sum(var: &[f64], mask: &[bool]) -> f64 {
    var.iter().zip(mask).filter(|(_, k)| !**k).map(|(v, _)| v).sum()
}

fn kept_sum(var: &[f64], mask: &[bool]) -> f64 {
    var.iter().zip(mask).filter(|(_, k)| **k).map(|(v, _)| v).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub subsets_checked: usize,
    /// All subsets attaining the minimum matching error (within tie tolerance).
    pub argmin_mse: Vec<Vec<usize>>,
    /// All subsets attaining the maximum kept variance (within tie tolerance).
    pub argmax_variance: Vec<Vec<usize>>,
    /// Whether the two optimal sets coincide.
    pub equal: bool,
    /// Largest relative violation of `T·J(S) + R(S) = total` over all subsets.
    pub max_conservation_error: f64,
    /// Whether the greedy top-M by column variance is one of the minimizers.
    pub top_m_is_optimal: bool,
}

impl EquivalenceReport {
    pub fn passed(&self, conservation_tol: f64) -> bool {
        self.equal && self.top_m_is_optimal && self.max_conservation_error <= conservation_tol
    }
}

/// Enumerates every size-`m` kept subset (Gosper's hack over bitmasks).
pub fn equivalence_check(g: &MagnitudeMatrix, m: usize) -> Result<EquivalenceReport> {
    let n = g.samples;
    if n > MAX_ENUM_SAMPLES {
        return Err(Error::Capacity(format!(
            "{n} samples exceed the enumeration limit of {MAX_ENUM_SAMPLES}"
        )));
    }
    if m == 0 || m >= n {
        return Err(Error::param(format!("subset size {m} must be in 1..{n}")));
    }
    let var = g.column_variances();
    let total: f64 = var.iter().sum();
    let t = g.epochs as f64;
    let scale = total.abs().max(f64::MIN_POSITIVE);
    let tie_tol = 1e-12 * scale;

    let mut js = Vec::new();
    let mut rs = Vec::new();
    let mut masks = Vec::new();
    let mut max_err: f64 = 0.0;
    let limit = 1u32 << n;
    let mut s: u32 = (1u32 << m) - 1;
    while s < limit {
        let mask: Vec<bool> = (0..n).map(|i| s >> i & 1 == 1).collect();
        let j = pruned_sum(&var, &mask) / t;
        let r = kept_sum(&var, &mask);
        let err = (t * j + r - total).abs() / scale;
        max_err = max_err.max(if total == 0.0 { (t * j + r).abs() } else { err });
        js.push(j);
        rs.push(r);
        masks.push(s);
        let c = s & s.wrapping_neg();
        let hi = s + c;
        s = (((hi ^ s) >> 2) / c) | hi;
    }

    let jmin = js.iter().copied().fold(f64::INFINITY, f64::min);
    let rmax = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let argmin: Vec<u32> = masks
        .iter()
        .zip(&js)
        .filter(|(_, &j)| j <= jmin + tie_tol / t)
        .map(|(&s, _)| s)
        .collect();
    let argmax: Vec<u32> = masks
        .iter()
        .zip(&rs)
        .filter(|(_, &r)| r >= rmax - tie_tol)
        .map(|(&s, _)| s)
        .collect();
    let greedy: u32 = top_m_indices(&var, m).iter().map(|&i| 1u32 << i).sum();
    let to_sets = |v: &[u32]| -> Vec<Vec<usize>> {
        v.iter()
            .map(|&s| (0..n).filter(|i| s >> i & 1 == 1).collect())
            .collect()
    };
    Ok(EquivalenceReport {
        subsets_checked: masks.len(),
        equal: argmin == argmax,
        top_m_is_optimal: argmin.contains(&greedy),
        argmin_mse: to_sets(&argmin),
        argmax_variance: to_sets(&argmax),
        max_conservation_error: max_err,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorReport {
    /// `(1/η)|ℓ(θ_next) − ℓ(θ_t)|`
    pub lhs: f64,
    /// `|∇ℓ(θ_t) · (θ_t − θ_next)/η|`
    pub rhs: f64,
    pub residual: f64,
}

/// First-order prediction error for any differentiable loss given its values
/// at both ends of a step and its gradient at the start.
pub fn first_order_residual(
    loss_t: f64,
    loss_next: f64,
    grad_t: &[f64],
    theta_t: &[f64],
    theta_next: &[f64],
    eta: f64,
) -> Result<TaylorReport> {
    if grad_t.len() != theta_t.len() || theta_t.len() != theta_next.len() {
        return Err(Error::shape(format!(
            "gradient {}, theta_t {}, theta_next {} differ in length",
            grad_t.len(),
            theta_t.len(),
            theta_next.len()
        )));
    }
    if !(eta > 0.0) {
        return Err(Error::param(format!("step size {eta} must be positive")));
    }
    let lhs = (loss_next - loss_t).abs() / eta;
    let proj: f64 = grad_t
        .iter()
        .zip(theta_t.iter().zip(theta_next))
        .map(|(g, (a, b))| g * (a - b) / eta)
        .sum();
    let rhs = proj.abs();
    Ok(TaylorReport {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// Compares the per-sample loss change across a step `θ_t → θ_next` with its
/// first-order estimate from the sample's gradient at `θ_t`.
pub fn taylor_residual(
    model_t: &ToyModel,
    theta_next: &[f64],
    x: &[f64],
    label: u32,
    eta: f64,
) -> Result<TaylorReport> {
    if theta_next.len() != model_t.theta.len() {
        return Err(Error::shape(format!(
            "theta_next has {} entries, model has {}",
            theta_next.len(),
            model_t.theta.len()
        )));
    }
    let next = ToyModel {
        theta: theta_next.to_vec(),
        ..model_t.clone()
    };
    let g = model_t.grad(&[x], &[label], &[1.0])?;
    first_order_residual(
        model_t.loss(x, label)?,
        next.loss(x, label)?,
        &g,
        &model_t.theta,
        theta_next,
        eta,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Denominator floor for the componentwise relative error, so coordinates
/// whose true gradient is ~0 are judged by absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Analytic `Σ w ∇ℓ` against central differences of `Σ w ℓ` with step `h`.
pub fn gradient_check(
    model: &ToyModel,
    xs: &[&[f64]],
    labels: &[u32],
    weights: &[f64],
    h: f64,
) -> Result<GradientCheck> {
    let analytic = model.grad(xs, labels, weights)?;
    let objective = |m: &ToyModel| -> Result<f64> {
        let mut total = 0.0;
        for ((x, &y), &w) in xs.iter().zip(labels).zip(weights) {
            total += w * m.loss(x, y)?;
        }
        Ok(total)
    };
    let mut probe = model.clone();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.theta[i];
        probe.theta[i] = orig + h;
        let up = objective(&probe)?;
        probe.theta[i] = orig - h;
        let down = objective(&probe)?;
        probe.theta[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let abs = (a - fd).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / a.abs().max(fd.abs()).max(GRAD_CHECK_FLOOR));
    }
    Ok(GradientCheck {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::toytrain::Arch;

    fn two_sample() -> MagnitudeMatrix {
        MagnitudeMatrix::from_columns(&[vec![0.0, 2.0], vec![1.0, 1.0]]).unwrap()
    }

    #[test]
    fn hand_example() {
        let g = two_sample();
        assert_eq!(mse_objective(&g, &[0]).unwrap(), 0.0);
        assert_eq!(mse_objective(&g, &[1]).unwrap(), 1.0);
        assert_eq!(variance_objective(&g, &[0]).unwrap(), 2.0);
        assert_eq!(mse_objective(&g, &[0, 1]).unwrap(), 0.0);
        let r = equivalence_check(&g, 1).unwrap();
        assert!(r.equal && r.top_m_is_optimal);
        assert_eq!(r.argmin_mse, vec![vec![0]]);
        assert_eq!(r.subsets_checked, 2);
    }

    #[test]
    fn constant_matrix_all_tie() {
        let g = MagnitudeMatrix::new(3, 5, vec![0.4; 15]).unwrap();
        for m in 1..5 {
            let r = equivalence_check(&g, m).unwrap();
            assert!(r.passed(1e-9));
            assert_eq!(r.argmin_mse.len(), r.subsets_checked);
            assert_eq!(mse_objective(&g, &[0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn subset_counts_match_binomial() {
        let g = MagnitudeMatrix::new(1, 6, vec![1.0; 6]).unwrap();
        let counts: Vec<usize> = (1..6)
            .map(|m| equivalence_check(&g, m).unwrap().subsets_checked)
            .collect();
        assert_eq!(counts, vec![6, 15, 20, 15, 6]);
    }

    #[test]
    fn errors() {
        let g = two_sample();
        assert!(matches!(mse_objective(&g, &[]), Err(Error::Param(_))));
        assert!(matches!(variance_objective(&g, &[2]), Err(Error::Range { .. })));
        assert!(matches!(equivalence_check(&g, 2), Err(Error::Param(_))));
        let big = MagnitudeMatrix::new(1, 17, vec![0.0; 17]).unwrap();
        assert!(matches!(equivalence_check(&big, 3), Err(Error::Capacity(_))));
        assert!(MagnitudeMatrix::new(1, 2, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn taylor_zero_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = ToyModel::init(Arch::Linear, 3, 2, &mut rng);
        let r = taylor_residual(&m, &m.theta.clone(), &[1.0, 0.5, -0.5], 1, 0.1).unwrap();
        assert_eq!((r.lhs, r.rhs, r.residual), (0.0, 0.0, 0.0));
    }

    #[test]
    fn quadratic_surrogate_residual_shrinks_with_eta() {
        // L(θ) = ½ Σ a_i θ_i² + b·θ; a gradient step leaves residual (η/2) gᵀ diag(a) g.
        let a = [1.0, 3.0, 0.5];
        let b = [0.2, -1.0, 0.7];
        let theta = [0.3, 0.8, -1.2];
        let loss = |th: &[f64]| -> f64 {
            th.iter()
                .zip(&a)
                .zip(&b)
                .map(|((t, a), b)| 0.5 * a * t * t + b * t)
                .sum()
        };
        let grad: Vec<f64> = theta.iter().zip(&a).zip(&b).map(|((t, a), b)| a * t + b).collect();
        let mut prev = f64::INFINITY;
        for k in 0..6 {
            let eta = 0.5 / 10f64.powi(k);
            let next: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - eta * g).collect();
            let r = first_order_residual(loss(&theta), loss(&next), &grad, &theta, &next, eta).unwrap();
            let expected = 0.5 * eta * grad.iter().zip(&a).map(|(g, a)| a * g * g).sum::<f64>();
            assert!((r.residual - expected).abs() <= 1e-9 * r.rhs.max(1.0));
            assert!(r.residual < prev);
            prev = r.residual;
        }
    }

    #[test]
    fn gradient_check_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for arch in [Arch::Linear, Arch::Mlp { hidden: 4 }] {
            let m = ToyModel::init(arch, 3, 3, &mut rng);
            let xs: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let r = gradient_check(&m, &refs, &[0, 1, 2, 1], &[1.0, 0.5, 2.0, 0.0], 1e-6).unwrap();
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
    }
}
