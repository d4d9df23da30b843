//! Temporal dual-depth scoring.
//!
//! Inner level: each sample's contribution per epoch is estimated by the
//! loss difference between adjacent epochs (KL or CE form, see [`DeltaKind`]).
//! Outer level: the variability of those contributions is measured over
//! sliding K-delta windows and aggregated with an exponential moving average.
//!
//! T logged epochs yield T-1 deltas, so there are `W = T - K` windows with
//! stride one. The EMA starts from the first window's variance. `beta = 0`
//! selects the plain mean over all windows instead of the EMA.

mod delta;
mod select;
mod window;

use rayon::prelude::*;

pub use delta::{ce_delta, kl_delta, DeltaKind, DEFAULT_EPSILON};
pub use select::{kept_count, select_top_m, top_m_indices};
pub use window::{ema_update, window_variance};

use crate::error::{Error, Result};
use crate::trajlog::{EpochSource, Method, PayloadKind, ScoreParams, ScoreTable, TrajectoryHeader, TrajectoryLog};
use delta::{ce_unchecked, kl_unchecked};
use window::sum_sq_dev;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TddsParams {
    /// Leading epochs of the log to use.
    pub epochs: usize,
    /// Window length in deltas.
    pub window: usize,
    /// EMA decay in [0, 1]; zero means simple average over windows.
    pub beta: f64,
    pub delta_kind: DeltaKind,
    /// Probability floor before logarithms, in (0, 1e-6].
    pub epsilon: f64,
    /// Keep the sign of each delta instead of its magnitude (ablation only).
    /// Signed KL deltas take the sign of the target-probability change.
    pub signed: bool,
}

impl TddsParams {
    pub fn new(epochs: usize, window: usize, beta: f64) -> Self {
        TddsParams {
            epochs,
            window,
            beta,
            delta_kind: DeltaKind::Kl,
            epsilon: DEFAULT_EPSILON,
            signed: false,
        }
    }

    pub fn with_delta(mut self, kind: DeltaKind) -> Self {
        self.delta_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::param("window must be at least 1"));
        }
        if self.window + 1 > self.epochs {
            return Err(Error::param(format!(
                "window {} needs at least {} epochs, got {}",
                self.window,
                self.window + 1,
                self.epochs
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::param(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return Err(Error::param(format!("epsilon {} outside (0, 1e-6]", self.epsilon)));
        }
        Ok(())
    }

    pub fn validate_for(&self, header: &TrajectoryHeader) -> Result<()> {
        self.validate()?;
        if self.epochs > header.n_epochs {
            return Err(Error::param(format!(
                "asked for {} epochs, log has {}",
                self.epochs, header.n_epochs
            )));
        }
        Ok(())
    }

    /// Number of windows folded into each score.
    pub fn window_count(&self) -> usize {
        (self.epochs - 1) + 1 - self.window
    }

    pub fn score_params(&self) -> ScoreParams {
        ScoreParams {
            epochs: self.epochs as u32,
            window: self.window as u32,
            beta: self.beta as f32,
        }
    }
}

/// Per-sample loss differences between adjacent epochs, stored as f32 blocks
/// so the resident and on-disk forms score identically.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSeries {
    pub n_samples: usize,
    /// `blocks[t][n]` is the delta between epochs t and t+1.
    pub blocks: Vec<Vec<f32>>,
}

impl DeltaSeries {
    pub fn n_deltas(&self) -> usize {
        self.blocks.len()
    }

    pub fn get(&self, n: usize, t: usize) -> f32 {
        self.blocks[t][n]
    }

    /// Delta history of one sample.
    pub fn sample(&self, n: usize) -> Vec<f32> {
        self.blocks.iter().map(|b| b[n]).collect()
    }

    /// Wraps the series as a DeltaMagnitudes log sharing `source`'s labels.
    pub fn into_log(self, source: &TrajectoryHeader) -> Result<TrajectoryLog> {
        if self.n_samples != source.n_samples {
            return Err(Error::shape("delta series does not match header"));
        }
        let header = TrajectoryHeader {
            n_epochs: self.blocks.len() + 1,
            payload_kind: PayloadKind::DeltaMagnitudes,
            ..source.clone()
        };
        header.validate()?;
        Ok(TrajectoryLog {
            header,
            blocks: self.blocks,
        })
    }
}

fn delta_block(prev: &[f32], next: &[f32], labels: &[u32], n_classes: usize, params: &TddsParams) -> Vec<f32> {
    let eps = params.epsilon;
    next.par_chunks_exact(n_classes)
        .zip(prev.par_chunks_exact(n_classes))
        .zip(labels.par_iter())
        .map(|((q, p), &y)| {
            let y = y as usize;
            let d = match params.delta_kind {
                DeltaKind::Kl => kl_unchecked(q, p, eps),
                DeltaKind::Ce => ce_unchecked(q, p, y, eps),
            };
            let v = if !params.signed {
                d.abs()
            } else if params.delta_kind == DeltaKind::Kl && q[y] < p[y] {
                -d.abs()
            } else if params.delta_kind == DeltaKind::Kl {
                d.abs()
            } else {
                d
            };
            v as f32
        })
        .collect()
}

/// Streams delta blocks out of `source`, holding at most two epochs.
fn for_each_delta_block<S: EpochSource>(
    source: &mut S,
    params: &TddsParams,
    mut sink: impl FnMut(Vec<f32>),
) -> Result<()> {
    let header = source.header().clone();
    params.validate_for(&header)?;
    match header.payload_kind {
        PayloadKind::FullProbs => {
            let mut prev = source.epoch(0)?;
            for t in 1..params.epochs {
                let next = source.epoch(t)?;
                sink(delta_block(
                    &prev.data,
                    &next.data,
                    &header.labels,
                    header.n_classes,
                    params,
                ));
                prev = next;
            }
        }
        PayloadKind::DeltaMagnitudes => {
            for t in 0..params.epochs - 1 {
                sink(source.deltas(t)?);
            }
        }
    }
    Ok(())
}

/// Computes |Δℓ| for every sample over the first `params.epochs` epochs.
/// A DeltaMagnitudes source is passed through unchanged.
pub fn compute_deltas<S: EpochSource>(mut source: S, params: &TddsParams) -> Result<DeltaSeries> {
    let n_samples = source.header().n_samples;
    let mut blocks = Vec::with_capacity(params.epochs.saturating_sub(1));
    for_each_delta_block(&mut source, params, |b| blocks.push(b))?;
    Ok(DeltaSeries { n_samples, blocks })
}

/// Running window/EMA state for all samples. Memory is `N·K` deltas.
struct WindowFold {
    window: usize,
    beta: f64,
    ring: Vec<f32>,
    score: Vec<f64>,
    seen: usize,
    folded: usize,
}

impl WindowFold {
    fn new(n_samples: usize, window: usize, beta: f64) -> Self {
        WindowFold {
            window,
            beta,
            ring: vec![0.0; n_samples * window],
            score: vec![0.0; n_samples],
            seen: 0,
            folded: 0,
        }
    }

    fn push(&mut self, block: &[f32]) {
        let k = self.window;
        let slot = self.seen % k;
        self.seen += 1;
        let full = self.seen >= k;
        let first = self.folded == 0;
        let beta = self.beta;
        // Oldest entry sits right after the slot just written.
        let start = self.seen % k;
        self.ring
            .par_chunks_exact_mut(k)
            .zip(self.score.par_iter_mut())
            .zip(block.par_iter())
            .for_each_init(
                || Vec::with_capacity(k),
                |scratch, ((ring, r), &d)| {
                    ring[slot] = d;
                    if !full {
                        return;
                    }
                    scratch.clear();
                    scratch.extend(ring[start..].iter().chain(&ring[..start]).map(|&v| f64::from(v)));
                    let v = sum_sq_dev(scratch);
                    *r = if first {
                        v
                    } else if beta == 0.0 {
                        *r + v
                    } else {
                        ema_update(*r, v, beta)
                    };
                },
            );
        if full {
            self.folded += 1;
        }
    }

    fn finish(mut self) -> Vec<f64> {
        if self.beta == 0.0 {
            let w = self.folded as f64;
            self.score.iter_mut().for_each(|r| *r /= w);
        }
        self.score
    }
}

/// Scores every sample of `source`. Deterministic: identical inputs give
/// bit-identical scores regardless of thread count.
pub fn tdds_scores<S: EpochSource>(mut source: S, params: &TddsParams) -> Result<ScoreTable> {
    let header = source.header().clone();
    params.validate_for(&header)?;
    let mut fold = WindowFold::new(header.n_samples, params.window, params.beta);
    for_each_delta_block(&mut source, params, |b| fold.push(&b))?;
    debug_assert_eq!(fold.folded, params.window_count());
    let scores = fold.finish();
    Ok(ScoreTable {
        method: Method::Tdds,
        params: params.score_params(),
        scores,
    })
}

/// Scores a resident delta series directly.
pub fn tdds_scores_from_deltas(series: &DeltaSeries, params: &TddsParams) -> Result<ScoreTable> {
    params.validate()?;
    if series.n_deltas() + 1 < params.epochs {
        return Err(Error::param(format!(
            "asked for {} epochs, series covers {}",
            params.epochs,
            series.n_deltas() + 1
        )));
    }
    let mut fold = WindowFold::new(series.n_samples, params.window, params.beta);
    for b in &series.blocks[..params.epochs - 1] {
        fold.push(b);
    }
    Ok(ScoreTable {
        method: Method::Tdds,
        params: params.score_params(),
        scores: fold.finish(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::trajlog::{RecordingMode, TrajectoryReader};

    fn one_sample_log(rows: &[[f32; 2]], label: u32) -> TrajectoryLog {
        TrajectoryLog::from_probs(
            vec![label],
            2,
            RecordingMode::TrainTime,
            rows.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    /// A delta-magnitude log with the given per-sample delta rows.
    fn delta_log(rows: &[Vec<f32>]) -> TrajectoryLog {
        let n = rows.len();
        let t = rows[0].len();
        let blocks = (0..t).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
        TrajectoryLog {
            header: TrajectoryHeader {
                n_samples: n,
                n_classes: 2,
                n_epochs: t + 1,
                payload_kind: PayloadKind::DeltaMagnitudes,
                recording_mode: RecordingMode::TrainTime,
                labels: vec![0; n],
            },
            blocks,
        }
    }

    #[test]
    fn constant_log_scores_zero() {
        let log = one_sample_log(&[[0.3, 0.7]; 6], 1);
        let d = compute_deltas(log.clone(), &TddsParams::new(6, 2, 0.9)).unwrap();
        assert!(d.blocks.iter().flatten().all(|&v| v == 0.0));
        let s = tdds_scores(log, &TddsParams::new(6, 2, 0.9)).unwrap();
        assert_eq!(s.scores, vec![0.0]);
    }

    #[test]
    fn hand_built_kl_deltas() {
        let log = one_sample_log(&[[0.5, 0.5], [0.9, 0.1], [0.9, 0.1]], 0);
        let d = compute_deltas(log, &TddsParams::new(3, 1, 0.9)).unwrap();
        let got = d.sample(0);
        assert!((f64::from(got[0]) - 0.368_064).abs() < 1e-6);
        assert_eq!(got[1], 0.0);
    }

    #[test]
    fn ce_magnitude_of_sign_flip() {
        let log = one_sample_log(&[[0.9, 0.1], [0.5, 0.5]], 0);
        let p = TddsParams::new(2, 1, 0.9).with_delta(DeltaKind::Ce);
        let d = compute_deltas(log.clone(), &p).unwrap();
        assert!((f64::from(d.get(0, 0)) - 0.587_787).abs() < 1e-6);
        let signed = TddsParams { signed: true, ..p };
        assert_eq!(compute_deltas(log, &signed).unwrap().get(0, 0), -d.get(0, 0));
    }

    #[test]
    fn ema_over_two_windows() {
        let log = delta_log(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let s = tdds_scores(log.clone(), &TddsParams::new(5, 3, 0.9)).unwrap();
        assert!((s.scores[0] - 2.0).abs() < 1e-12);
        let sa = tdds_scores(log, &TddsParams::new(5, 3, 0.0)).unwrap();
        assert!((sa.scores[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ema_order_matters() {
        // windows of [0,0,4]: 32/3 then [0,4,0]: 32/3 then [4,0,0]: 32/3, then [0,0,1]: 2/3
        let log = delta_log(&[vec![0.0, 0.0, 4.0, 0.0, 0.0, 1.0]]);
        let p = TddsParams::new(7, 3, 0.5);
        let w = [32.0 / 3.0, 32.0 / 3.0, 32.0 / 3.0, 2.0 / 3.0];
        let mut r = w[0];
        for v in &w[1..] {
            r = 0.5 * v + 0.5 * r;
        }
        let s = tdds_scores(log, &p).unwrap();
        assert!((s.scores[0] - r).abs() < 1e-12);
    }

    #[test]
    fn parameter_errors() {
        let log = one_sample_log(&[[0.3, 0.7]; 4], 1);
        for p in [
            TddsParams::new(4, 4, 0.9),
            TddsParams::new(4, 0, 0.9),
            TddsParams::new(5, 2, 0.9),
            TddsParams::new(4, 2, 1.5),
            TddsParams {
                epsilon: 1e-3,
                ..TddsParams::new(4, 2, 0.9)
            },
        ] {
            assert!(matches!(tdds_scores(log.clone(), &p), Err(Error::Param(_))), "{p:?}");
        }
        assert_eq!(TddsParams::new(4, 3, 0.9).window_count(), 1);
    }

    #[test]
    fn truncates_to_requested_epochs() {
        let mut rows = vec![[0.5f32, 0.5]; 4];
        rows.push([0.99, 0.01]);
        let log = one_sample_log(&rows, 0);
        let s = tdds_scores(log, &TddsParams::new(4, 2, 0.9)).unwrap();
        assert_eq!(s.scores, vec![0.0]);
        assert_eq!(s.params.epochs, 4);
    }

    fn arb_log() -> impl Strategy<Value = TrajectoryLog> {
        (1usize..8, 2usize..5, 3usize..10).prop_flat_map(|(n, c, t)| {
            (
                proptest::collection::vec(0..c as u32, n),
                proptest::collection::vec(proptest::collection::vec(0.0f32..1.0, c), n * t),
            )
                .prop_map(move |(labels, rows)| {
                    let mut epochs = vec![Vec::new(); t];
                    for (i, row) in rows.into_iter().enumerate() {
                        let s: f32 = row.iter().sum::<f32>() + 1e-6;
                        epochs[i / n].extend(row.iter().map(|v| (v + 1e-6 / c as f32) / s));
                    }
                    TrajectoryLog::from_probs(labels, c, RecordingMode::EvalTime, epochs).unwrap()
                })
        })
    }

    fn permute(log: &TrajectoryLog, perm: &[usize]) -> TrajectoryLog {
        let c = log.header.n_classes;
        let mut out = log.clone();
        out.header.labels = perm.iter().map(|&i| log.header.labels[i]).collect();
        for (dst, src) in out.blocks.iter_mut().zip(&log.blocks) {
            *dst = perm
                .iter()
                .flat_map(|&i| src[i * c..(i + 1) * c].iter().copied())
                .collect();
        }
        out
    }

    proptest! {
        #[test]
        fn beta_one_is_last_window(log in arb_log(), k in 1usize..4, kind in prop::bool::ANY) {
            let t = log.header.n_epochs;
            prop_assume!(k < t);
            let kind = if kind { DeltaKind::Kl } else { DeltaKind::Ce };
            let p = TddsParams::new(t, k, 1.0).with_delta(kind);
            let d = compute_deltas(log.clone(), &p).unwrap();
            let s = tdds_scores(log, &p).unwrap();
            for n in 0..d.n_samples {
                let hist: Vec<f64> = d.sample(n).iter().map(|&v| f64::from(v)).collect();
                let last = window_variance(&hist[hist.len() - k..], k).unwrap();
                prop_assert!((s.scores[n] - last).abs() <= 1e-12 * (1.0 + last));
            }
        }

        #[test]
        fn permutation_equivariant(log in arb_log(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = log.header.n_samples;
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p = TddsParams::new(log.header.n_epochs, 2.min(log.header.n_epochs - 1), 0.9);
            let a = tdds_scores(log.clone(), &p).unwrap();
            let b = tdds_scores(permute(&log, &perm), &p).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(a.scores[i].to_bits(), b.scores[j].to_bits());
            }
        }

        #[test]
        fn delta_file_path_is_bit_identical(log in arb_log(), beta in prop::sample::select(vec![0.0, 0.5, 0.9, 1.0])) {
            let t = log.header.n_epochs;
            let p = TddsParams::new(t, (t - 1).min(3), beta);
            let direct = tdds_scores(log.clone(), &p).unwrap();
            let deltas = compute_deltas(log.clone(), &p).unwrap();
            let mut buf = Vec::new();
            deltas.into_log(&log.header).unwrap().write_to(&mut buf).unwrap();
            let reader = TrajectoryReader::new(std::io::Cursor::new(buf)).unwrap();
            let via_file = tdds_scores(reader, &p).unwrap();
            let bits = |s: &ScoreTable| s.scores.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&direct), bits(&via_file));
        }
    }
}
