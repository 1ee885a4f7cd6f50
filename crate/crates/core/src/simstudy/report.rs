use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{svg, MonteCarloConfig, ScenarioSpec, StudyError};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// Aggregated performance of one estimator in one cell of the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub estimator: String,
    pub regime: String,
    pub n: usize,
    /// Replications that completed.
    pub reps: usize,
    pub mean_psi: Option<f64>,
    /// `sqrt(n) * |mean_psi - truth|`.
    pub scaled_abs_bias: Option<f64>,
    /// `sqrt(n) * sd(psi)` over completed replications.
    pub scaled_sd: Option<f64>,
    /// Share of Wald intervals covering the truth; empty without intervals.
    pub coverage: Option<f64>,
    pub mean_se: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<MetricRow>,
}

/// One estimator run on one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub scenario: String,
    pub estimator: String,
    pub regime: String,
    pub n: usize,
    pub rep: usize,
    pub psi: Option<f64>,
    pub se: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Number of warning-level diagnostics.
    pub warnings: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub regime: String,
    pub value: f64,
    /// `"given"` or `"simulated"`.
    pub source: String,
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

/// Everything needed to reproduce a study, without timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetadata {
    pub version: String,
    pub config: MonteCarloConfig,
    pub scenarios: Vec<ScenarioSpec>,
    pub truths: Vec<TruthRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub report: StudyReport,
    pub replicates: Vec<Replicate>,
    pub metadata: StudyMetadata,
}

fn csv_err(path: Option<&Path>, e: csv::Error) -> StudyError {
    let line = e.position().map(|p| p.line());
    StudyError::Csv {
        path: path.map(|p| p.display().to_string()).unwrap_or_else(|| "<stream>".into()),
        line,
        message: e.to_string(),
    }
}

fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T], header: &[&str]) -> Result<(), StudyError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(header).map_err(|e| csv_err(None, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(None, e))?;
    }
    w.flush()?;
    Ok(())
}

const METRIC_COLUMNS: [&str; 11] = [
    "scenario",
    "estimator",
    "regime",
    "n",
    "reps",
    "mean_psi",
    "scaled_abs_bias",
    "scaled_sd",
    "coverage",
    "mean_se",
    "failures",
];

const REPLICATE_COLUMNS: [&str; 11] =
    ["scenario", "estimator", "regime", "n", "rep", "psi", "se", "lo", "hi", "warnings", "error"];

impl StudyReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), StudyError> {
        write_rows(writer, &self.rows, &METRIC_COLUMNS)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, StudyError> {
        Self::read_inner(reader, None)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self, StudyError> {
        let file = fs::File::open(path).map_err(|e| StudyError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::read_inner(file, Some(path))
    }

    fn read_inner<R: Read>(reader: R, path: Option<&Path>) -> Result<Self, StudyError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.iter().ne(METRIC_COLUMNS.iter().copied()) {
            return Err(StudyError::Csv {
                path: path.map(|p| p.display().to_string()).unwrap_or_else(|| "<stream>".into()),
                line: Some(1),
                message: format!("expected header {}", METRIC_COLUMNS.join(",")),
            });
        }
        let rows = r
            .deserialize()
            .collect::<Result<Vec<MetricRow>, _>>()
            .map_err(|e| csv_err(path, e))?;
        Ok(Self { rows })
    }

    /// Write `metrics.csv` and, when `plots` is set, the three charts.
    pub fn emit(&self, out_dir: &Path, plots: bool) -> Result<Vec<PathBuf>, StudyError> {
        create_dir(out_dir)?;
        let path = out_dir.join(METRICS_FILE);
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        write_file(&path, &buf)?;
        let mut written = vec![path];
        if plots {
            written.extend(self.emit_plots(out_dir)?);
        }
        Ok(written)
    }

    pub fn emit_plots(&self, out_dir: &Path) -> Result<Vec<PathBuf>, StudyError> {
        create_dir(out_dir)?;
        let mut written = Vec::new();
        for (file, text) in svg::render_all(self) {
            let path = out_dir.join(file);
            write_file(&path, text.as_bytes())?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn write_replicates<W: Write>(writer: W, rows: &[Replicate]) -> Result<(), StudyError> {
    write_rows(writer, rows, &REPLICATE_COLUMNS)
}

pub fn read_replicates<R: Read>(reader: R) -> Result<Vec<Replicate>, StudyError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<Vec<Replicate>, _>>()
        .map_err(|e| csv_err(None, e))
}

impl StudyOutput {
    /// Write metrics, replicates, metadata and (optionally) charts.
    pub fn emit(&self, out_dir: &Path, plots: bool) -> Result<Vec<PathBuf>, StudyError> {
        let mut written = self.report.emit(out_dir, plots)?;
        let path = out_dir.join(REPLICATES_FILE);
        let mut buf = Vec::new();
        write_replicates(&mut buf, &self.replicates)?;
        write_file(&path, &buf)?;
        written.push(path);
        let path = out_dir.join(METADATA_FILE);
        let mut text = serde_json::to_string_pretty(&self.metadata).expect("metadata serialises");
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        written.push(path);
        Ok(written)
    }
}

/// Regenerate the charts from a metrics file alone.
pub fn plot_from_csv(metrics: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, StudyError> {
    StudyReport::read_csv_path(metrics)?.emit_plots(out_dir)
}

fn create_dir(dir: &Path) -> Result<(), StudyError> {
    fs::create_dir_all(dir).map_err(|e| StudyError::Io { path: dir.display().to_string(), source: e })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StudyError> {
    fs::write(path, bytes).map_err(|e| StudyError::Io { path: path.display().to_string(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scenario: &str, estimator: &str, n: usize, coverage: Option<f64>) -> MetricRow {
        MetricRow {
            scenario: scenario.into(),
            estimator: estimator.into(),
            regime: "11".into(),
            n,
            reps: 10,
            mean_psi: Some(0.4512345678901234),
            scaled_abs_bias: Some(0.1 + n as f64 * 1e-4),
            scaled_sd: Some(1.0 / 3.0),
            coverage,
            mean_se: None,
            failures: 1,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut buf = Vec::new();
        StudyReport::default().write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "scenario,estimator,regime,n,reps,mean_psi,scaled_abs_bias,scaled_sd,coverage,mean_se,failures\n"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let report = StudyReport {
            rows: vec![row("a", "tmle", 500, Some(0.95)), row("b", "ipw1", 1000, None)],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(2).unwrap().contains(",,"));
        assert_eq!(StudyReport::read_csv(&buf[..]).unwrap(), report);
    }

    #[test]
    fn wrong_header_is_rejected_with_position() {
        let err = StudyReport::read_csv("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, StudyError::Csv { line: Some(1), .. }));
        let bad = "scenario,estimator,regime,n,reps,mean_psi,scaled_abs_bias,scaled_sd,coverage,mean_se,failures\na,tmle,11,x,1,,,,,,0\n";
        assert!(matches!(StudyReport::read_csv(bad.as_bytes()), Err(StudyError::Csv { .. })));
    }

    #[test]
    fn replicate_round_trip() {
        let reps = vec![Replicate {
            scenario: "a".into(),
            estimator: "onestep".into(),
            regime: "00".into(),
            n: 500,
            rep: 3,
            psi: None,
            se: None,
            lo: None,
            hi: None,
            warnings: 0,
            error: Some("fit failed, singular".into()),
        }];
        let mut buf = Vec::new();
        write_replicates(&mut buf, &reps).unwrap();
        assert_eq!(read_replicates(&buf[..]).unwrap(), reps);
    }

    #[test]
    fn emit_writes_counted_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for s in ["a", "b"] {
            for e in ["onestep", "tmle", "ipw1"] {
                for n in [500, 1000, 2000, 3000, 4000, 5000] {
                    rows.push(row(s, e, n, if e == "ipw1" { None } else { Some(0.9) }));
                }
            }
        }
        let report = StudyReport { rows };
        let written = report.emit(dir.path(), true).unwrap();
        assert_eq!(written.len(), 4);
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 37);
        for f in ["bias.svg", "sd.svg", "coverage.svg"] {
            let svg = fs::read_to_string(dir.path().join(f)).unwrap();
            assert_eq!(svg.matches("class=\"panel\"").count(), 2, "{f}");
        }
        let again = tempfile::tempdir().unwrap();
        plot_from_csv(&dir.path().join(METRICS_FILE), again.path()).unwrap();
        for f in ["bias.svg", "sd.svg", "coverage.svg"] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(again.path().join(f)).unwrap()
            );
        }
    }
}
