//! Byte-level conformance of the trajectory writer against logs produced by an
//! independent writer (tests/data/gen_golden_logs.py).

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use dynaprune::trajlog::{RecordingMode, TrajectoryLog, TrajectoryReader};

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden")
}

fn corpus() -> Vec<(String, TrajectoryLog)> {
    let text = fs::read_to_string(golden().join("corpus.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json.as_object()
        .unwrap()
        .iter()
        .map(|(name, v)| {
            let labels = v["labels"]
                .as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_u64().unwrap() as u32)
                .collect();
            let mode = match v["mode"].as_u64().unwrap() {
                0 => RecordingMode::TrainTime,
                _ => RecordingMode::EvalTime,
            };
            let epochs = v["epochs"]
                .as_array()
                .unwrap()
                .iter()
                .map(|e| {
                    e.as_array()
                        .unwrap()
                        .iter()
                        .flat_map(|r| r.as_array().unwrap().iter().map(|p| p.as_f64().unwrap() as f32))
                        .collect()
                })
                .collect();
            let c = v["n_classes"].as_u64().unwrap() as usize;
            (
                name.clone(),
                TrajectoryLog::from_probs(labels, c, mode, epochs).unwrap(),
            )
        })
        .collect()
}

#[test]
fn writer_reproduces_golden_bytes() {
    let cases = corpus();
    assert_eq!(cases.len(), 13);
    for (name, log) in cases {
        let mut bytes = Vec::new();
        let written = log.write_to(&mut bytes).unwrap();
        let expected = fs::read(golden().join(format!("{name}.tdlg"))).unwrap();
        assert_eq!(written as usize, expected.len(), "{name}");
        assert_eq!(bytes, expected, "{name}");
    }
}

#[test]
fn reader_recovers_golden_contents() {
    for (name, log) in corpus() {
        let bytes = fs::read(golden().join(format!("{name}.tdlg"))).unwrap();
        let back = TrajectoryReader::new(Cursor::new(bytes)).unwrap().read_all().unwrap();
        assert_eq!(back, log, "{name}");
    }
}

#[test]
fn fixed_log_has_known_checksum() {
    let bytes = fs::read(golden().join("fixed_2x2x2.tdlg")).unwrap();
    assert_eq!(bytes.len(), 72);
    assert_eq!(&bytes[..4], b"TDLG");
    assert_eq!(&bytes[68..], &[0x08, 0xba, 0x1f, 0x33]);
}
