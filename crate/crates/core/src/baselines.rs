//! Comparison criteria computed from the same trajectory logs. Every scorer
//! returns a table where a larger score means "more worth keeping".

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scoring::DEFAULT_EPSILON;
use crate::trajlog::{EpochSource, Method, PayloadKind, ScoreParams, ScoreTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineParams {
    /// EL2N averages the error norm over this many leading epochs.
    pub el2n_epochs: usize,
    /// Dyn-Unc sliding window length.
    pub dynunc_window: usize,
    /// Seed for the Random baseline.
    pub seed: u64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            el2n_epochs: 10,
            dynunc_window: 10,
            seed: 0,
        }
    }
}

fn require_probs<S: EpochSource>(source: &S) -> Result<()> {
    if source.header().payload_kind != PayloadKind::FullProbs {
        return Err(Error::param("baselines need a full-probability log"));
    }
    Ok(())
}

fn table(method: Method, epochs: usize, window: usize, scores: Vec<f64>) -> ScoreTable {
    ScoreTable {
        method,
        params: ScoreParams {
            epochs: epochs as u32,
            window: window as u32,
            beta: 0.0,
        },
        scores,
    }
}

/// Argmax with ties going to the lower class index.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = c;
        }
    }
    best
}

/// Shannon entropy (nats) of the final-epoch prediction.
pub fn entropy_score<S: EpochSource>(mut source: S) -> Result<ScoreTable> {
    require_probs(&source)?;
    let t = source.header().n_epochs;
    let last = source.epoch(t - 1)?;
    let scores = last
        .rows()
        .map(|row| {
            -row.iter()
                .map(|&p| {
                    let p = f64::from(p);
                    p * p.max(DEFAULT_EPSILON).ln()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(table(Method::Entropy, t, 0, scores))
}

/// Counts correct-to-incorrect transitions between consecutive epochs.
/// Samples never classified correctly get the sentinel score `T`.
pub fn forgetting_score<S: EpochSource>(mut source: S) -> Result<ScoreTable> {
    require_probs(&source)?;
    let header = source.header().clone();
    let n = header.n_samples;
    let mut prev = vec![false; n];
    let mut ever = vec![false; n];
    let mut events = vec![0u32; n];
    for t in 0..header.n_epochs {
        let block = source.epoch(t)?;
        for (i, row) in block.rows().enumerate() {
            let correct = argmax(row) == header.labels[i] as usize;
            if t > 0 && prev[i] && !correct {
                events[i] += 1;
            }
            prev[i] = correct;
            ever[i] |= correct;
        }
    }
    let sentinel = header.n_epochs as f64;
    let scores = events
        .iter()
        .zip(&ever)
        .map(|(&e, &seen)| if seen { f64::from(e) } else { sentinel })
        .collect();
    Ok(table(Method::Forgetting, header.n_epochs, 0, scores))
}

/// Mean L2 norm of `prediction - onehot(label)` over the first `epochs` epochs.
pub fn el2n_score<S: EpochSource>(mut source: S, epochs: usize) -> Result<ScoreTable> {
    require_probs(&source)?;
    let header = source.header().clone();
    if epochs < 1 || epochs > header.n_epochs {
        return Err(Error::param(format!(
            "EL2N epoch count {epochs} outside [1, {}]",
            header.n_epochs
        )));
    }
    let mut acc = vec![0.0f64; header.n_samples];
    for t in 0..epochs {
        let block = source.epoch(t)?;
        for (i, row) in block.rows().enumerate() {
            let y = header.labels[i] as usize;
            let sq: f64 = row
                .iter()
                .enumerate()
                .map(|(c, &p)| {
                    let e = f64::from(p) - if c == y { 1.0 } else { 0.0 };
                    e * e
                })
                .sum();
            acc[i] += sq.sqrt();
        }
    }
    let scores = acc.into_iter().map(|s| s / epochs as f64).collect();
    Ok(table(Method::El2n, header.n_epochs, epochs, scores))
}

/// Mean over epochs of `p[label] - max_{c != label} p[c]`, on probabilities.
pub fn aum_score<S: EpochSource>(mut source: S) -> Result<ScoreTable> {
    require_probs(&source)?;
    let header = source.header().clone();
    let mut acc = vec![0.0f64; header.n_samples];
    for t in 0..header.n_epochs {
        let block = source.epoch(t)?;
        for (i, row) in block.rows().enumerate() {
            let y = header.labels[i] as usize;
            let other = row
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != y)
                .map(|(_, &p)| p)
                .fold(f32::NEG_INFINITY, f32::max);
            acc[i] += f64::from(row[y]) - f64::from(other);
        }
    }
    let t = header.n_epochs as f64;
    let scores = acc.into_iter().map(|s| s / t).collect();
    Ok(table(Method::Aum, header.n_epochs, 0, scores))
}

/// Population standard deviation of the target probability over each
/// length-`window` sliding window, averaged over the `T - window + 1` windows.
pub fn dyn_unc_score<S: EpochSource>(mut source: S, window: usize) -> Result<ScoreTable> {
    require_probs(&source)?;
    let header = source.header().clone();
    let t_total = header.n_epochs;
    if window < 2 || window > t_total {
        return Err(Error::param(format!("Dyn-Unc window {window} outside [2, {t_total}]")));
    }
    let n = header.n_samples;
    let mut ring = vec![0.0f64; n * window];
    let mut acc = vec![0.0f64; n];
    let mut scratch = Vec::with_capacity(window);
    for t in 0..t_total {
        let block = source.epoch(t)?;
        let slot = t % window;
        for (i, row) in block.rows().enumerate() {
            ring[i * window + slot] = f64::from(row[header.labels[i] as usize]);
        }
        if t + 1 < window {
            continue;
        }
        let start = (t + 1) % window;
        for i in 0..n {
            let r = &ring[i * window..(i + 1) * window];
            scratch.clear();
            scratch.extend(r[start..].iter().chain(&r[..start]));
            let mean = scratch.iter().sum::<f64>() / window as f64;
            let var = scratch.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / window as f64;
            acc[i] += var.sqrt();
        }
    }
    let windows = (t_total - window + 1) as f64;
    let scores = acc.into_iter().map(|s| s / windows).collect();
    Ok(table(Method::DynUnc, t_total, window, scores))
}

/// Ranks of a uniformly random permutation drawn from ChaCha8 seeded with `seed`.
pub fn random_score(n_samples: usize, seed: u64) -> ScoreTable {
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut scores = vec![0.0; n_samples];
    for (rank, &i) in order.iter().enumerate() {
        scores[i] = rank as f64;
    }
    table(Method::Random, 0, 0, scores)
}

/// Dispatches to the baseline named by `method`.
pub fn baseline_scores<S: EpochSource>(source: S, method: Method, params: &BaselineParams) -> Result<ScoreTable> {
    match method {
        Method::Random => Ok(random_score(source.header().n_samples, params.seed)),
        Method::Entropy => entropy_score(source),
        Method::Forgetting => forgetting_score(source),
        Method::El2n => el2n_score(source, params.el2n_epochs),
        Method::Aum => aum_score(source),
        Method::DynUnc => dyn_unc_score(source, params.dynunc_window),
        Method::Tdds => Err(Error::param("tdds is not a baseline")),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::trajlog::{RecordingMode, TrajectoryLog};

    fn log(labels: Vec<u32>, c: usize, epochs: Vec<Vec<f32>>) -> TrajectoryLog {
        TrajectoryLog::from_probs(labels, c, RecordingMode::TrainTime, epochs).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let l = log(
            vec![0, 0, 0],
            4,
            vec![
                vec![0.25; 12],
                [[1.0, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25], [0.9, 0.1, 0.0, 0.0]].concat(),
            ],
        );
        let s = entropy_score(l).unwrap().scores;
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 4f64.ln()).abs() < 1e-12);
        assert!((s[2] - 0.325_083).abs() < 1e-6);
    }

    #[test]
    fn forgetting_examples() {
        let correct = [0.9f32, 0.1];
        let wrong = [0.1f32, 0.9];
        let l = log(
            vec![0, 0, 0],
            2,
            vec![
                [correct, correct, wrong].concat(),
                [wrong, correct, wrong].concat(),
                [correct, correct, wrong].concat(),
            ],
        );
        assert_eq!(forgetting_score(l).unwrap().scores, vec![1.0, 0.0, 3.0]);
    }

    #[test]
    fn forgetting_never_correct_over_five() {
        let l = log(vec![1], 2, vec![vec![0.6, 0.4]; 5]);
        assert_eq!(forgetting_score(l).unwrap().scores, vec![5.0]);
        // exact tie resolves to class 0, so label 1 is never correct
        let tie = log(vec![1], 2, vec![vec![0.5, 0.5]; 3]);
        assert_eq!(forgetting_score(tie).unwrap().scores, vec![3.0]);
    }

    #[test]
    fn el2n_examples() {
        let perfect = log(vec![1], 2, vec![vec![0.0, 1.0]; 3]);
        assert_eq!(el2n_score(perfect, 3).unwrap().scores, vec![0.0]);
        let l = log(vec![0], 2, vec![vec![0.5, 0.5], vec![1.0, 0.0]]);
        assert!((el2n_score(l.clone(), 1).unwrap().scores[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert!((el2n_score(l.clone(), 2).unwrap().scores[0] - 0.353_553).abs() < 1e-6);
        assert!(el2n_score(l.clone(), 0).is_err());
        assert!(el2n_score(l, 3).is_err());
    }

    #[test]
    fn aum_examples() {
        let l = log(vec![0], 3, vec![vec![0.7, 0.2, 0.1]; 2]);
        assert!((aum_score(l).unwrap().scores[0] - 0.5).abs() < 1e-6);
        let u = log(vec![2], 3, vec![vec![1.0 / 3.0; 3]; 2]);
        assert_eq!(aum_score(u).unwrap().scores, vec![0.0]);
        let neg = log(vec![0], 2, vec![vec![0.1, 0.9]; 4]);
        assert!((aum_score(neg).unwrap().scores[0] + 0.8).abs() < 1e-6);
    }

    #[test]
    fn dyn_unc_examples() {
        let flat = log(vec![0], 2, vec![vec![0.3, 0.7]; 4]);
        assert_eq!(dyn_unc_score(flat, 2).unwrap().scores, vec![0.0]);
        let two = log(vec![0], 2, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(dyn_unc_score(two, 2).unwrap().scores, vec![0.5]);
        let three = log(vec![0], 2, vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(dyn_unc_score(three.clone(), 2).unwrap().scores, vec![0.5]);
        assert!(matches!(dyn_unc_score(three.clone(), 1), Err(Error::Param(_))));
        assert!(matches!(dyn_unc_score(three, 4), Err(Error::Param(_))));
    }

    #[test]
    fn random_is_seeded() {
        let a = random_score(50, 7);
        assert_eq!(a, random_score(50, 7));
        let distinct = (0..32u64).filter(|&s| random_score(50, s).scores != a.scores).count();
        assert!(distinct >= 31);
        let mut sorted = a.scores.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, (0..50).map(f64::from).collect::<Vec<_>>());
        assert_eq!(random_score(1, 3).scores, vec![0.0]);
    }

    fn dist_rows(n: usize, c: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(proptest::collection::vec(0.0f32..1.0, c), n).prop_map(move |rows| {
            rows.into_iter()
                .flat_map(|r| {
                    let s: f32 = r.iter().sum::<f32>() + 1e-3;
                    r.into_iter()
                        .map(move |v| (v + 1e-3 / c as f32) / s)
                        .collect::<Vec<_>>()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ranges((c2, rows) in (2usize..6).prop_flat_map(|c| (Just(c), dist_rows(20, c)))) {
            let labels: Vec<u32> = (0..20).map(|i| (i % c2) as u32).collect();
            let l = log(labels, c2, vec![rows.clone(), rows]);
            for s in aum_score(l.clone()).unwrap().scores {
                prop_assert!((-1.0..=1.0).contains(&s));
            }
            for s in el2n_score(l.clone(), 2).unwrap().scores {
                prop_assert!((0.0..=2f64.sqrt() + 1e-9).contains(&s));
            }
            for s in entropy_score(l).unwrap().scores {
                prop_assert!(s <= (c2 as f64).ln() + 1e-6);
            }
        }
    }
}
