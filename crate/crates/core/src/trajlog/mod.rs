//! Binary trajectory, score, and coreset files.
//!
//! All integers and floats are little-endian. Every file ends with a CRC32
//! (IEEE) over all bytes after the 4-byte magic.
//!
//! ```text
//! TDLG  magic | version u32 | kind u8 | mode u8 | reserved u16 | N u64 | C u32 | T u32
//!       | labels N×u32 | T blocks of N·C f32 (or T-1 blocks of N f32) | crc u32
//! TDSC  magic | version u32 | method u16 | reserved u16 | T u32 | K u32 | beta f32
//!       | N u64 | scores N×f64 | crc u32
//! TDCS  magic | version u32 | N_total u64 | M u64 | p f32 | reserved u32
//!       | M×(index u64, weight f64) | crc u32
//! ```

mod io;
mod tables;
mod trajectory;

pub use tables::{
    load_coreset, load_scores, save_coreset, save_scores, Coreset, FileFormat, Method, ScoreParams, ScoreTable,
    CORESET_MAGIC, SCORES_MAGIC,
};
pub use trajectory::{
    read_header, write_trajectory, EpochSource, PayloadKind, ProbMatrix, RecordingMode, TrajectoryHeader,
    TrajectoryLog, TrajectoryReader, TrajectoryWriter, HEADER_BYTES, ROW_SUM_TOLERANCE, TRAJECTORY_MAGIC,
};

pub(crate) use io::{checked_len, CrcReader, CrcWriter};

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use proptest::prelude::*;

    use super::*;
    use crate::error::Error;

    fn header(n: usize, c: usize, t: usize, labels: Vec<u32>) -> TrajectoryHeader {
        TrajectoryHeader {
            n_samples: n,
            n_classes: c,
            n_epochs: t,
            payload_kind: PayloadKind::FullProbs,
            recording_mode: RecordingMode::TrainTime,
            labels,
        }
    }

    fn two_by_two() -> (TrajectoryHeader, Vec<ProbMatrix>) {
        let h = header(2, 2, 2, vec![0, 1]);
        let blocks = vec![
            ProbMatrix::new(0, 2, vec![0.5, 0.5, 0.25, 0.75]).unwrap(),
            ProbMatrix::new(1, 2, vec![0.9, 0.1, 0.125, 0.875]).unwrap(),
        ];
        (h, blocks)
    }

    #[test]
    fn small_file_has_expected_size() {
        let (h, blocks) = two_by_two();
        let mut buf = Vec::new();
        let n = write_trajectory(&h, &blocks, &mut buf).unwrap();
        // 28 header + 8 labels + 2 blocks of 2·2·4 + 4 crc
        assert_eq!(n, 72);
        assert_eq!(buf.len(), 72);
        assert_eq!(&buf[..4], b"TDLG");
        assert_eq!(h.file_len(), 72);
    }

    #[test]
    fn header_and_epochs_roundtrip() {
        let (h, blocks) = two_by_two();
        let mut buf = Vec::new();
        write_trajectory(&h, &blocks, &mut buf).unwrap();
        let mut r = TrajectoryReader::new(Cursor::new(&buf)).unwrap();
        r.verify().unwrap();
        assert_eq!(r.header(), &h);
        assert_eq!(r.read_epoch(0).unwrap(), blocks[0]);
        assert_eq!(r.read_epoch(1).unwrap(), blocks[1]);
        assert_eq!(r.read_epoch(1).unwrap(), r.read_epoch(1).unwrap());
        assert!(matches!(r.read_epoch(2), Err(Error::Range { .. })));
    }

    #[test]
    fn rejects_row_sum_beyond_tolerance() {
        let h = header(1, 2, 2, vec![0]);
        let mut w = TrajectoryWriter::new(h, Vec::new()).unwrap();
        let bad = ProbMatrix::new(0, 2, vec![0.5, 0.4]).unwrap();
        assert!(matches!(w.push_probs(&bad), Err(Error::Data(_))));
        // within tolerance is accepted as-is
        let ok = ProbMatrix::new(0, 2, vec![0.5, 0.50005]).unwrap();
        w.push_probs(&ok).unwrap();
    }

    #[test]
    fn rejects_non_finite_and_wrong_block_count() {
        let h = header(1, 2, 2, vec![0]);
        let mut w = TrajectoryWriter::new(h.clone(), Vec::new()).unwrap();
        let nan = ProbMatrix::new(0, 2, vec![f32::NAN, 1.0]).unwrap();
        assert!(matches!(w.push_probs(&nan), Err(Error::Data(_))));
        let short = ProbMatrix::new(0, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(w.push_probs(&short), Err(Error::Format(_))));
        w.push_probs(&ProbMatrix::new(0, 2, vec![0.5, 0.5]).unwrap()).unwrap();
        assert!(matches!(w.finish(), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_invalid_headers() {
        let mut h = header(2, 2, 2, vec![0, 2]);
        assert!(TrajectoryWriter::new(h.clone(), Vec::new()).is_err());
        h.labels = vec![0];
        assert!(TrajectoryWriter::new(h.clone(), Vec::new()).is_err());
        let h1 = header(1, 2, 1, vec![0]);
        assert!(TrajectoryWriter::new(h1, Vec::new()).is_err());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let (h, blocks) = two_by_two();
        let mut buf = Vec::new();
        write_trajectory(&h, &blocks, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_header(Cursor::new(&bad)), Err(Error::Format(_))));

        let cut = &buf[..buf.len() - 10];
        assert!(matches!(TrajectoryReader::new(Cursor::new(cut)), Err(Error::Format(_))));

        let mut v = buf.clone();
        v[4] = 2;
        assert!(matches!(read_header(Cursor::new(&v)), Err(Error::Format(_))));
    }

    #[test]
    fn delta_payload_roundtrip() {
        let mut h = header(3, 2, 3, vec![0, 1, 0]);
        h.payload_kind = PayloadKind::DeltaMagnitudes;
        h.recording_mode = RecordingMode::EvalTime;
        let mut w = TrajectoryWriter::new(h.clone(), Vec::new()).unwrap();
        w.push_deltas(&[0.0, 1.5, 2.0]).unwrap();
        assert!(matches!(w.push_deltas(&[0.0, -1.0, 2.0]), Err(Error::Data(_))));
        w.push_deltas(&[0.25, 0.0, 3.0]).unwrap();
        let (buf, n) = w.finish().unwrap();
        assert_eq!(n as usize, buf.len());
        assert_eq!(n, 28 + 12 + 2 * 12 + 4);
        let mut r = TrajectoryReader::new(Cursor::new(&buf)).unwrap();
        r.verify().unwrap();
        assert_eq!(r.header(), &h);
        assert_eq!(r.read_deltas(1).unwrap(), vec![0.25, 0.0, 3.0]);
        assert!(r.read_epoch(0).is_err());
    }

    #[test]
    fn scores_roundtrip_bitwise() {
        let table = ScoreTable {
            method: Method::Tdds,
            params: ScoreParams {
                epochs: 30,
                window: 10,
                beta: 0.9,
            },
            scores: vec![0.1 + 0.2, -0.0, 1e-300],
        };
        let mut buf = Vec::new();
        let n = table.write_to(&mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        let back = ScoreTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.method, table.method);
        assert_eq!(back.params, table.params);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.scores), bits(&table.scores));

        let mut csv = Vec::new();
        table.write_csv(&mut csv).unwrap();
        let back = ScoreTable::read_csv(csv.as_slice()).unwrap();
        assert_eq!(bits(&back.scores), bits(&table.scores));
        assert_eq!(back.params, table.params);
    }

    fn coreset_bytes(indices: &[u64], n_total: u64) -> Vec<u8> {
        // Hand-assembled so invalid content can reach the reader.
        let mut w = CrcWriter::new(Vec::new(), CORESET_MAGIC).unwrap();
        w.put_u32(1).unwrap();
        w.put_u64(n_total).unwrap();
        w.put_u64(indices.len() as u64).unwrap();
        w.put_f32(0.5).unwrap();
        w.put_u32(0).unwrap();
        for &i in indices {
            w.put_u64(i).unwrap();
            w.put_f64(1.0).unwrap();
        }
        w.finish().unwrap().0
    }

    #[test]
    fn coreset_reader_rejects_duplicates_and_oversize() {
        let ok = coreset_bytes(&[0, 2], 4);
        let c = Coreset::read_from(ok.as_slice()).unwrap();
        assert_eq!(c.indices, vec![0, 2]);
        let dup = coreset_bytes(&[1, 1], 4);
        assert!(matches!(Coreset::read_from(dup.as_slice()), Err(Error::Format(_))));
        let big = coreset_bytes(&[0, 1, 2], 2);
        assert!(matches!(Coreset::read_from(big.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn coreset_csv_roundtrip() {
        let c = Coreset {
            n_total: 10,
            indices: vec![1, 4, 9],
            weights: vec![0.5, 1.0 / 3.0, 7.0],
            pruning_rate: 0.7,
        };
        let mut csv = Vec::new();
        c.write_csv(&mut csv).unwrap();
        assert_eq!(Coreset::read_csv(csv.as_slice()).unwrap(), c);
        let mut bin = Vec::new();
        c.write_to(&mut bin).unwrap();
        assert_eq!(Coreset::read_from(bin.as_slice()).unwrap(), c);
    }

    fn arb_log() -> impl Strategy<Value = TrajectoryLog> {
        (1usize..6, 2usize..5, 2usize..6, any::<bool>()).prop_flat_map(|(n, c, t, eval)| {
            let labels = proptest::collection::vec(0..c as u32, n);
            let rows = proptest::collection::vec(proptest::collection::vec(0.01f32..1.0, c), n * t);
            (labels, rows).prop_map(move |(labels, rows)| {
                let mut epochs = vec![Vec::with_capacity(n * c); t];
                for (i, row) in rows.into_iter().enumerate() {
                    let s: f32 = row.iter().sum();
                    epochs[i / n].extend(row.iter().map(|v| v / s));
                }
                let mode = if eval {
                    RecordingMode::EvalTime
                } else {
                    RecordingMode::TrainTime
                };
                TrajectoryLog::from_probs(labels, c, mode, epochs).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn trajectory_roundtrip(log in arb_log(), pick in any::<prop::sample::Index>()) {
            let mut buf = Vec::new();
            let n = log.write_to(&mut buf).unwrap();
            prop_assert_eq!(n as usize, buf.len());
            prop_assert_eq!(n, log.header.file_len());
            let mut r = TrajectoryReader::new(Cursor::new(&buf)).unwrap();
            r.verify().unwrap();
            let back = r.read_all().unwrap();
            prop_assert_eq!(&back, &log);
            let t = pick.index(log.header.n_epochs);
            prop_assert_eq!(&r.read_epoch(t).unwrap().data, &log.blocks[t]);
        }

        #[test]
        fn crc_catches_single_byte_corruption(
            log in arb_log(),
            pos in any::<prop::sample::Index>(),
            flip in 1u8..=255,
        ) {
            let mut buf = Vec::new();
            log.write_to(&mut buf).unwrap();
            let payload_start = log.header.payload_offset() as usize;
            let i = payload_start + pos.index(buf.len() - payload_start);
            buf[i] ^= flip;
            let mut r = TrajectoryReader::new(Cursor::new(&buf)).unwrap();
            prop_assert!(matches!(r.verify(), Err(Error::Format(_))));
        }
    }
}
