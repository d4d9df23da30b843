use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use dynaprune::baselines::{baseline_scores, BaselineParams};
use dynaprune::compare::{run_compare, CompareConfig, CompareLayout};
use dynaprune::scoring::{select_top_m, tdds_scores, TddsParams, DEFAULT_EPSILON};
use dynaprune::synthdata::{gen_blobs, gen_blobs_holdout, inject_duplicates, inject_label_noise, BlobSpec, Dataset};
use dynaprune::toytrain::{evaluate, train_epochs, weighted_retrain, Weighting};
use dynaprune::trajlog::{load_coreset, load_scores, save_coreset, save_scores, Method, TrajectoryReader};

use super::manifest::RunManifest;
use super::*;

struct Outcome {
    /// Files or directories produced; the first one anchors the manifest.
    outputs: Vec<PathBuf>,
    success: bool,
}

impl Outcome {
    fn files(outputs: Vec<PathBuf>) -> Self {
        Outcome { outputs, success: true }
    }

    fn report(success: bool) -> Self {
        Outcome {
            outputs: Vec::new(),
            success,
        }
    }
}

pub fn run_command(command: Command) -> anyhow::Result<ExitCode> {
    if let Command::Replay(args) = command {
        return replay(&args);
    }
    let mut command = command;
    absolutize(&mut command)?;
    let started = Instant::now();
    let outcome = execute(&command)?;
    if let Some(anchor) = outcome.outputs.first() {
        let manifest = RunManifest::new(command, outcome.outputs.clone(), started.elapsed().as_secs_f64());
        manifest.save(&RunManifest::location_for(anchor))?;
    }
    Ok(if outcome.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn execute(command: &Command) -> anyhow::Result<Outcome> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Select(a) => select(a),
        Command::Retrain(a) => retrain(a),
        Command::Check(a) => Ok(Outcome::report(super::check::run(a))),
        Command::Compare(a) => compare(a),
        Command::Info(a) => super::info::describe(&a.input).map(|()| Outcome::report(true)),
        Command::Replay(_) => bail!("a replay cannot be replayed"),
    }
}

fn replay(args: &ReplayArgs) -> anyhow::Result<ExitCode> {
    let manifest = RunManifest::load(&args.manifest)?;
    let mut command = manifest.command;
    if let Some(out) = &args.output {
        redirect(&mut command, out);
    }
    log::info!("replaying {}", args.manifest.display());
    run_command(command)
}

/// Points a command's outputs at `out`. Secondary files keep their names and
/// move next to the new primary output.
fn redirect(command: &mut Command, out: &Path) {
    let beside = |old: &mut Option<PathBuf>| {
        if let Some(p) = old {
            let dir = out.parent().unwrap_or(Path::new("."));
            *p = dir.join(p.file_name().unwrap_or_default());
        }
    };
    match command {
        Command::GenData(a) => {
            a.output = out.into();
            beside(&mut a.test_output);
        }
        Command::Train(a) => {
            a.output = out.into();
            beside(&mut a.model);
        }
        Command::Score(a) => a.output = out.into(),
        Command::Select(a) => a.output = out.into(),
        Command::Retrain(a) => a.output = out.into(),
        Command::Compare(a) => a.output = out.into(),
        Command::Check(_) | Command::Info(_) | Command::Replay(_) => {}
    }
}

/// Rewrites every path as absolute so a manifest replays from any directory.
fn absolutize(command: &mut Command) -> anyhow::Result<()> {
    fn abs(p: &mut PathBuf) -> anyhow::Result<()> {
        *p = std::path::absolute(&*p)?;
        Ok(())
    }
    fn abs_opt(p: &mut Option<PathBuf>) -> anyhow::Result<()> {
        p.as_mut().map_or(Ok(()), abs)
    }
    match command {
        Command::GenData(a) => {
            abs(&mut a.output)?;
            abs_opt(&mut a.test_output)
        }
        Command::Train(a) => {
            abs(&mut a.input)?;
            abs(&mut a.output)?;
            abs_opt(&mut a.model)
        }
        Command::Score(a) => {
            abs(&mut a.input)?;
            abs(&mut a.output)
        }
        Command::Select(a) => {
            abs(&mut a.input)?;
            abs(&mut a.output)
        }
        Command::Retrain(a) => {
            abs(&mut a.input)?;
            abs(&mut a.coreset)?;
            abs(&mut a.output)?;
            abs_opt(&mut a.test)
        }
        Command::Compare(a) => {
            abs(&mut a.input)?;
            abs(&mut a.test)?;
            abs(&mut a.output)
        }
        Command::Info(a) => abs(&mut a.input),
        Command::Check(_) | Command::Replay(_) => Ok(()),
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn gen_data(a: &GenDataArgs) -> anyhow::Result<Outcome> {
    let spec = BlobSpec {
        n_per_class: a.n_per_class,
        n_classes: a.classes,
        dim: a.dim,
        center_scale: a.center_distance,
        sigma: a.sigma,
        seed: a.seed,
    };
    let mut ds = gen_blobs(&spec)?;
    if a.duplicates > 0.0 {
        ds = inject_duplicates(&ds, a.duplicates, a.jitter, a.seed.wrapping_add(1))?;
    }
    if a.label_noise > 0.0 {
        ds = inject_label_noise(&ds, a.label_noise, a.seed.wrapping_add(2))?;
    }
    ds.save(&a.output, a.format)?;
    let (clean, dup, mis) = ds.provenance_counts();
    println!(
        "wrote {} samples ({clean} clean, {dup} duplicate, {mis} mislabeled) to {}",
        ds.len(),
        a.output.display()
    );
    let mut outputs = vec![a.output.clone()];
    if let Some(test_path) = &a.test_output {
        let test = gen_blobs_holdout(&spec, a.test_per_class)?;
        test.save(test_path, a.format)?;
        println!("wrote {} test samples to {}", test.len(), test_path.display());
        outputs.push(test_path.clone());
    }
    Ok(Outcome::files(outputs))
}

fn train(a: &TrainArgs) -> anyhow::Result<Outcome> {
    let ds = load_dataset(&a.input)?;
    let cfg = a.train.config(a.seed, Weighting::None)?;
    let (model, log) = train_epochs(&ds, &cfg, true)?;
    let log = log.context("training produced no log")?;
    let bytes = log.save(&a.output)?;
    let fit = evaluate(&model, &ds)?;
    println!(
        "trained {} epochs: train accuracy {:.4}, loss {:.4}; log {} ({bytes} bytes)",
        cfg.epochs,
        fit.accuracy,
        fit.mean_loss,
        a.output.display()
    );
    let mut outputs = vec![a.output.clone()];
    if let Some(path) = &a.model {
        model.save(path)?;
        outputs.push(path.clone());
    }
    Ok(Outcome::files(outputs))
}

fn score(a: &ScoreArgs) -> anyhow::Result<Outcome> {
    let mut reader = TrajectoryReader::open(&a.input).with_context(|| format!("opening log {}", a.input.display()))?;
    let header = reader.header().clone();
    let table = match a.method {
        Method::Tdds => {
            let params = TddsParams {
                epochs: a.scoring.epochs_t.unwrap_or(header.n_epochs),
                window: a.scoring.window_k,
                beta: a.scoring.beta,
                delta_kind: a.scoring.delta,
                epsilon: DEFAULT_EPSILON,
                signed: a.scoring.signed,
            };
            tdds_scores(&mut reader, &params)?
        }
        other => {
            let params = BaselineParams {
                el2n_epochs: a.scoring.el2n_epochs,
                dynunc_window: a.scoring.dynunc_window,
                seed: a.seed,
            };
            baseline_scores(&mut reader, other, &params)?
        }
    };
    save_scores(&table, &a.output, a.format)?;
    println!(
        "scored {} samples with {} -> {}",
        table.scores.len(),
        table.method,
        a.output.display()
    );
    Ok(Outcome::files(vec![a.output.clone()]))
}

fn select(a: &SelectArgs) -> anyhow::Result<Outcome> {
    let table = load_scores(&a.input).with_context(|| format!("loading scores {}", a.input.display()))?;
    let coreset = select_top_m(&table, a.rate)?;
    save_coreset(&coreset, &a.output, a.format)?;
    println!(
        "kept {} of {} samples at p = {} -> {}",
        coreset.indices.len(),
        coreset.n_total,
        a.rate,
        a.output.display()
    );
    Ok(Outcome::files(vec![a.output.clone()]))
}

fn retrain(a: &RetrainArgs) -> anyhow::Result<Outcome> {
    let ds = load_dataset(&a.input)?;
    let coreset = load_coreset(&a.coreset).with_context(|| format!("loading coreset {}", a.coreset.display()))?;
    let cfg = a.train.config(a.seed, a.weighting)?;
    let model = weighted_retrain(&ds, &coreset, &cfg)?;
    model.save(&a.output)?;
    println!(
        "retrained on {} samples -> {}",
        coreset.indices.len(),
        a.output.display()
    );
    if let Some(test_path) = &a.test {
        let report = evaluate(&model, &load_dataset(test_path)?)?;
        println!("test accuracy {:.4}, loss {:.4}", report.accuracy, report.mean_loss);
    }
    Ok(Outcome::files(vec![a.output.clone()]))
}

fn compare(a: &CompareArgs) -> anyhow::Result<Outcome> {
    let train = load_dataset(&a.input)?;
    let test = load_dataset(&a.test)?;
    let config = CompareConfig {
        methods: a.methods.clone(),
        rates: a.rates.clone(),
        tdds: TddsParams {
            epochs: a.scoring.epochs_t.unwrap_or(a.train.epochs),
            window: a.scoring.window_k,
            beta: a.scoring.beta,
            delta_kind: a.scoring.delta,
            epsilon: DEFAULT_EPSILON,
            signed: a.scoring.signed,
        },
        baselines: BaselineParams {
            el2n_epochs: a.scoring.el2n_epochs,
            dynunc_window: a.scoring.dynunc_window,
            seed: 0,
        },
        train: a.train.config(0, a.weighting)?,
        seeds: a.seeds.clone(),
        jobs: a.jobs.unwrap_or(0),
        format: a.format,
    };
    let layout = CompareLayout::new(&a.output, a.format);
    let report = run_compare(&train, &test, &config, Some(&layout))?;
    print!("{}", report.to_text());
    let errors = report.error_count();
    if errors > 0 {
        eprintln!("{errors} run(s) failed; see {}", layout.runs_csv().display());
    }
    Ok(Outcome {
        outputs: vec![a.output.clone()],
        success: errors == 0,
    })
}
