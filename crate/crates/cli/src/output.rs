//! Artifact writers and readers. Every CSV starts with a `# sde-moments
//! <kind> v1` schema line; JSON is pretty-printed with a trailing newline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest round-trip representation, so equal values print identically.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Writes a CSV with a schema comment line, a header and string rows.
pub fn write_csv<I, R>(path: &Path, kind: &str, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# sde-moments {kind} v{SCHEMA_VERSION}").map_err(CliError::io(path))?;
    let mut writer = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer
            .write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(csv_err)?;
    }
    writer.flush().map_err(CliError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, command: &'static str) -> Result<T, CliError> {
    let text = read_artifact(path, command)?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a two-column numeric table `(x, value)` from a density or KDE CSV,
/// taking the last two columns of each record.
pub fn read_curve(path: &Path, command: &'static str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let text = read_artifact(path, command)?;
    let malformed = |message: String| CliError::Artifact {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let n = record.len();
        if n < 2 {
            return Err(malformed("expected at least two columns".into()));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| malformed(format!("{s:?}: {e}")))
        };
        xs.push(parse(&record[n - 2])?);
        ys.push(parse(&record[n - 1])?);
    }
    Ok((xs, ys))
}

fn read_artifact(path: &Path, command: &'static str) -> Result<String, CliError> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            command,
        }),
        Err(e) => Err(CliError::Io {
            path: path.to_path_buf(),
            source: e,
        }),
    }
}

/// Artifact file names inside an output directory.
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Layout { dir: dir.into() }
    }

    pub fn moments(&self) -> PathBuf {
        self.dir.join("moments.csv")
    }

    pub fn trajectory_moments(&self) -> PathBuf {
        self.dir.join("trajectory_moments.csv")
    }

    pub fn central_path(&self) -> PathBuf {
        self.dir.join("central_path.csv")
    }

    pub fn covariance(&self) -> PathBuf {
        self.dir.join("covariance.json")
    }

    pub fn timings(&self) -> PathBuf {
        self.dir.join("timings.json")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn density(&self, k: usize) -> PathBuf {
        self.dir.join(format!("density_{k}.csv"))
    }

    pub fn density_report(&self) -> PathBuf {
        self.dir.join("density_report.json")
    }

    pub fn ensemble(&self) -> PathBuf {
        self.dir.join("ensemble.csv")
    }

    pub fn baseline_summary(&self) -> PathBuf {
        self.dir.join("baseline_summary.json")
    }

    pub fn baseline_timings(&self) -> PathBuf {
        self.dir.join("baseline_timings.json")
    }

    pub fn kde(&self, k: usize) -> PathBuf {
        self.dir.join(format!("kde_{k}.csv"))
    }

    pub fn comparison(&self) -> PathBuf {
        self.dir.join("comparison.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for x in [0.1, -6.66e3, 1e-300, 7.784338495550994, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_curve_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let rows = [(0.5, 1.25), (1.0, -2e-7)];
        write_csv(
            &path,
            "density",
            &["component", "x", "pdf_value"],
            rows.iter()
                .map(|(x, y)| vec!["0".to_string(), fmt_f64(*x), fmt_f64(*y)]),
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# sde-moments density v1\ncomponent,x,pdf_value\n"));
        let (xs, ys) = read_curve(&path, "density").unwrap();
        assert_eq!(xs, vec![0.5, 1.0]);
        assert_eq!(ys, vec![1.25, -2e-7]);
    }

    #[test]
    fn missing_artifact_is_reported() {
        let err = read_curve(Path::new("/nonexistent/density_0.csv"), "density").unwrap_err();
        assert!(matches!(err, CliError::MissingArtifact { .. }));
        assert_eq!(err.exit_code(), 2);
    }
}
