use dynaprune::oracles::{equivalence_check, gradient_check, taylor_residual, MagnitudeMatrix, TaylorReport};
use dynaprune::synthdata::{gen_blobs, BlobSpec, Dataset};
use dynaprune::toytrain::{Arch, ToyModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CheckArgs;

const CONSERVATION_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;
const TAYLOR_STEPS: usize = 20;
const TAYLOR_ETA: f64 = 1e-3;
const TAYLOR_REL_TOL: f64 = 0.05;
const TAYLOR_DECAY: (f64, f64) = (0.02, 0.5);

struct CheckResult {
    name: &'static str,
    passed: bool,
    detail: String,
}

pub fn run(args: &CheckArgs) -> bool {
    let results = [equivalence(args), gradients(args), taylor(args)];
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("summary: {passed}/{} checks passed", results.len());
    passed == results.len()
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn equivalence(args: &CheckArgs) -> CheckResult {
    let mut rng = rng(args.seed, 10);
    let mut subsets = 0;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..args.instances {
        let n = rng.gen_range(2..=10);
        let t = rng.gen_range(1..=6);
        let coarse = rng.gen_bool(0.25);
        let data = (0..n * t)
            .map(|_| {
                if coarse {
                    f64::from(rng.gen_range(0..4u8)) * 0.5
                } else {
                    rng.gen_range(0.0..3.0)
                }
            })
            .collect();
        let g = MagnitudeMatrix::new(t, n, data).expect("valid matrix");
        for m in 1..n {
            match equivalence_check(&g, m) {
                Ok(r) => {
                    subsets += r.subsets_checked;
                    worst = worst.max(r.max_conservation_error);
                    failures += usize::from(!r.passed(CONSERVATION_TOL));
                }
                Err(_) => failures += 1,
            }
        }
    }
    CheckResult {
        name: "subset equivalence",
        passed: failures == 0,
        detail: format!(
            "{} matrices, {subsets} subsets, {failures} mismatches, max conservation error {worst:.2e}",
            args.instances
        ),
    }
}

fn gradients(args: &CheckArgs) -> CheckResult {
    let mut rng = rng(args.seed, 11);
    let mut worst: f64 = 0.0;
    for i in 0..args.instances {
        let d = rng.gen_range(1..=5);
        let c = rng.gen_range(2..=5);
        let arch = if i % 2 == 0 {
            Arch::Linear
        } else {
            Arch::Mlp {
                hidden: rng.gen_range(1..=6),
            }
        };
        let model = ToyModel::init(arch, d, c, &mut rng);
        let b = rng.gen_range(1..=6);
        let xs: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let labels: Vec<u32> = (0..b).map(|_| rng.gen_range(0..c as u32)).collect();
        let weights: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..2.0)).collect();
        match gradient_check(&model, &refs, &labels, &weights, FD_STEP) {
            Ok(r) => worst = worst.max(r.max_rel_error),
            Err(e) => {
                return CheckResult {
                    name: "gradient",
                    passed: false,
                    detail: e.to_string(),
                }
            }
        }
    }
    CheckResult {
        name: "gradient",
        passed: worst < GRAD_TOL,
        detail: format!(
            "{} instances, max relative error {worst:.2e} (limit {GRAD_TOL:e})",
            args.instances
        ),
    }
}

/// One full-batch logistic-regression step and the first-order report for one sample.
pub fn full_batch_step(model: &ToyModel, ds: &Dataset, sample: usize, eta: f64) -> dynaprune::Result<TaylorReport> {
    let xs: Vec<&[f64]> = (0..ds.len()).map(|i| ds.x(i)).collect();
    let g = model.grad(&xs, &ds.labels, &vec![1.0; ds.len()])?;
    let next: Vec<f64> = model.theta.iter().zip(&g).map(|(t, g)| t - eta * g).collect();
    taylor_residual(model, &next, ds.x(sample), ds.labels[sample], eta)
}

fn taylor(args: &CheckArgs) -> CheckResult {
    let mut rng = rng(args.seed, 12);
    let mut worst_rel: f64 = 0.0;
    let mut decay_range = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..TAYLOR_STEPS {
        let spec = BlobSpec {
            n_per_class: 16,
            n_classes: 2,
            dim: 4,
            center_scale: 2.0,
            sigma: 1.0,
            seed: args.seed.wrapping_add(i as u64),
        };
        let ds = gen_blobs(&spec).expect("valid blob spec");
        let model = ToyModel::init(Arch::Linear, 4, 2, &mut rng);
        let sample = rng.gen_range(0..ds.len());
        let (big, small) = match (
            full_batch_step(&model, &ds, sample, TAYLOR_ETA),
            full_batch_step(&model, &ds, sample, TAYLOR_ETA / 10.0),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                return CheckResult {
                    name: "first-order loss change",
                    passed: false,
                    detail: e.to_string(),
                }
            }
        };
        worst_rel = worst_rel.max(big.residual / big.lhs);
        let decay = small.residual / big.residual;
        decay_range = (decay_range.0.min(decay), decay_range.1.max(decay));
    }
    let passed = worst_rel < TAYLOR_REL_TOL && decay_range.0 >= TAYLOR_DECAY.0 && decay_range.1 <= TAYLOR_DECAY.1;
    CheckResult {
        name: "first-order loss change",
        passed,
        detail: format!(
            "{TAYLOR_STEPS} steps at eta {TAYLOR_ETA:e}: max residual/lhs {worst_rel:.3e}, residual decay per 10x in [{:.3}, {:.3}]",
            decay_range.0, decay_range.1
        ),
    }
}
