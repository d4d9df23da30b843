use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use anyhow::{bail, Context};
use dynaprune::synthdata::{Dataset, DATASET_MAGIC};
use dynaprune::toytrain::{Arch, ToyModel, MODEL_MAGIC};
use dynaprune::trajlog::{load_coreset, load_scores, TrajectoryReader, CORESET_MAGIC, SCORES_MAGIC, TRAJECTORY_MAGIC};

pub fn describe(path: &Path) -> anyhow::Result<()> {
    let mut head = [0u8; 4];
    let n = File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read(&mut head)?;
    let head = &head[..n];
    let size = std::fs::metadata(path)?.len();
    println!("file: {} ({size} bytes)", path.display());
    if head == TRAJECTORY_MAGIC {
        let mut r = TrajectoryReader::open(path)?;
        r.verify()?;
        let h = r.header();
        println!("kind: trajectory log (checksum ok)");
        println!(
            "samples: {}  classes: {}  epochs: {}",
            h.n_samples, h.n_classes, h.n_epochs
        );
        println!("payload: {:?}  recording: {}", h.payload_kind, h.recording_mode);
    } else if head == SCORES_MAGIC {
        scores(path)?;
    } else if head == CORESET_MAGIC {
        coreset(path)?;
    } else if head == DATASET_MAGIC {
        dataset(path)?;
    } else if head == MODEL_MAGIC {
        let m = ToyModel::load(path)?;
        println!("kind: model checkpoint");
        match m.arch {
            Arch::Linear => println!("arch: linear"),
            Arch::Mlp { hidden } => println!("arch: mlp (hidden {hidden}, tanh)"),
        }
        println!(
            "inputs: {}  classes: {}  parameters: {}",
            m.n_features,
            m.n_classes,
            m.theta.len()
        );
    } else {
        let mut first = String::new();
        BufReader::new(File::open(path)?).read_line(&mut first)?;
        if first.starts_with("index,method") {
            scores(path)?;
        } else if first.starts_with("index,weight") {
            coreset(path)?;
        } else if first.starts_with("x0,") {
            dataset(path)?;
        } else {
            bail!("unrecognized file format");
        }
    }
    Ok(())
}

fn scores(path: &Path) -> anyhow::Result<()> {
    let t = load_scores(path)?;
    let (lo, hi) = t
        .scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    let mean = t.scores.iter().sum::<f64>() / t.scores.len().max(1) as f64;
    println!("kind: score table ({})", t.method);
    println!(
        "samples: {}  epochs: {}  window: {}  beta: {}",
        t.scores.len(),
        t.params.epochs,
        t.params.window,
        t.params.beta
    );
    println!("score min {lo:.6e}  mean {mean:.6e}  max {hi:.6e}");
    Ok(())
}

fn coreset(path: &Path) -> anyhow::Result<()> {
    let c = load_coreset(path)?;
    println!("kind: coreset");
    println!(
        "kept: {} of {}  pruning rate: {}",
        c.indices.len(),
        c.n_total,
        c.pruning_rate
    );
    Ok(())
}

fn dataset(path: &Path) -> anyhow::Result<()> {
    let d = Dataset::load(path)?;
    let (clean, dup, mis) = d.provenance_counts();
    println!("kind: dataset");
    println!(
        "samples: {}  features: {}  classes: {}",
        d.len(),
        d.n_features,
        d.n_classes
    );
    println!("clean: {clean}  duplicate: {dup}  mislabeled: {mis}");
    Ok(())
}
