//! CSV and JSON report files.

use std::fs::File;
use std::path::Path;

use calm_core::evaluation::{PrecisionReport, SweepCurve};
use calm_core::trainer::StepRecord;
use serde::Serialize;

use crate::error::{Error, Result};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let file = File::create(path).map_err(Error::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// `step,l_calm,l_tts_proxy,l_total`
pub fn write_stats(path: &Path, stats: &[StepRecord]) -> Result<()> {
    write_rows(
        path,
        &["step", "l_calm", "l_tts_proxy", "l_total"],
        stats.iter().map(|r| (r.step, r.l_calm, r.l_tts_proxy, r.l_total)),
    )
}

/// `query_id,N,N_plus,precision`
pub fn write_precision(path: &Path, report: &PrecisionReport) -> Result<()> {
    write_rows(
        path,
        &["query_id", "N", "N_plus", "precision"],
        report.queries.iter().map(|q| (&q.query_id, q.n, q.n_plus, q.precision)),
    )
}

/// `N,mean_similarity`
pub fn write_sweep(path: &Path, curve: &SweepCurve) -> Result<()> {
    write_rows(path, &["N", "mean_similarity"], curve.points.iter().copied())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("report values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(Error::io(path))
}

/// Reads a stats file back, for comparing runs.
pub fn read_stats(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize::<(usize, f64, f64, f64)>()
        .map(|row| {
            let (step, l_calm, l_tts_proxy, l_total) = row.map_err(csv_err(path))?;
            Ok(StepRecord {
                step,
                l_calm,
                l_tts_proxy,
                l_total,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.csv");
        let stats: Vec<StepRecord> = (0..5)
            .map(|i| {
                let l_calm = 1.0 / (i as f64 + 3.0);
                let l_tts_proxy = 0.1f64.powi(i + 1);
                StepRecord {
                    step: i as usize,
                    l_calm,
                    l_tts_proxy,
                    l_total: l_tts_proxy + l_calm,
                }
            })
            .collect();
        write_stats(&path, &stats).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,l_calm,l_tts_proxy,l_total\n0,0.3333333333333333,"));
        assert_eq!(read_stats(&path).unwrap(), stats);
    }

    #[test]
    fn sweep_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let curve = SweepCurve {
            points: vec![(1, 0.5), (5, 0.75)],
            n_queries: 2,
            index_size: 9,
        };
        write_sweep(&path, &curve).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "N,mean_similarity\n1,0.5\n5,0.75\n");
    }
}
