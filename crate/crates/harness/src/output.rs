//! CSV tables and 16-bit PGM images.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cligme::Vector;

use crate::error::{HarnessError, Result};
use crate::experiment::{SweepRow, TrialsSummary};

/// Full double precision: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    csv::Writer::from_path(path).map_err(|source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<()> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// `iteration, se_trial_0, ..., mean_se`, one row per iteration including 0.
pub fn write_trace_csv(path: &Path, summary: &TrialsSummary) -> Result<()> {
    let mut header = vec!["iteration".to_string()];
    header.extend((0..summary.trials.len()).map(|t| format!("se_trial_{t}")));
    header.push("mean_se".into());
    let rows = summary
        .mean_trace
        .iter()
        .enumerate()
        .map(|(k, mean)| {
            let mut row = vec![k.to_string()];
            row.extend(summary.trials.iter().map(|t| {
                fmt_f64(if k == 0 { t.initial_se } else { t.se_trace[k - 1] })
            }));
            row.push(fmt_f64(*mean));
            row
        })
        .collect();
    write_rows(path, header, rows)
}

/// `model, case, mu, mse, std_err`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let header = ["model", "case", "mu", "mse", "std_err"].map(String::from).to_vec();
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                r.model.to_string(),
                r.case.to_string(),
                fmt_f64(r.mu),
                fmt_f64(r.mse),
                fmt_f64(r.std_err),
            ]
        })
        .collect();
    write_rows(path, header, rows)
}

/// One mean-SE column per `(model, case)` summary.
pub fn write_mean_traces_csv(path: &Path, summaries: &[TrialsSummary]) -> Result<()> {
    let mut header = vec!["iteration".to_string()];
    header.extend(summaries.iter().map(|s| format!("{}_{}", s.model, s.case)));
    let len = summaries.iter().map(|s| s.mean_trace.len()).max().unwrap_or(0);
    let rows = (0..len)
        .map(|k| {
            let mut row = vec![k.to_string()];
            row.extend(
                summaries
                    .iter()
                    .map(|s| s.mean_trace.get(k).map_or_else(String::new, |v| fmt_f64(*v))),
            );
            row
        })
        .collect();
    write_rows(path, header, rows)
}

/// Writes a column-major `side x side` image as binary 16-bit PGM.
///
/// Values are clipped to `[0, 1]` for display only.
pub fn write_pgm(path: &Path, image: &Vector, side: usize) -> Result<()> {
    if image.len() != side * side {
        return Err(HarnessError::Config(format!(
            "image has {} pixels, expected {}",
            image.len(),
            side * side
        )));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut bytes = format!("P5\n{side} {side}\n65535\n").into_bytes();
    for i in 0..side {
        for j in 0..side {
            let v = image[i + j * side].clamp(0.0, 1.0);
            let sample = (v * 65535.0).round() as u16;
            bytes.extend_from_slice(&sample.to_be_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

/// Reads a binary 16-bit PGM back into a column-major image in `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<(Vector, usize, usize)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |msg: &str| HarnessError::Config(format!("{}: {msg}", path.display()));
    // header: magic, width, height, maxval separated by whitespace
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 65535 {
        return Err(bad("expected 16-bit samples"));
    }
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() != 2 * width * height {
        return Err(bad("pixel data length mismatch"));
    }
    let mut img = Vector::zeros(width * height);
    for i in 0..height {
        for j in 0..width {
            let k = 2 * (i * width + j);
            let sample = u16::from_be_bytes([data[k], data[k + 1]]);
            img[i + j * height] = sample as f64 / 65535.0;
        }
    }
    Ok((img, width, height))
}

/// Original, observed and recovered panels for the first trial.
pub fn write_images(dir: &Path, prefix: &str, phantom: &Vector, summary: &TrialsSummary, side: usize) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let original = dir.join("original.pgm");
    write_pgm(&original, phantom, side)?;
    written.push(original);
    if let Some(first) = summary.trials.first() {
        let observed = dir.join("observed.pgm");
        write_pgm(&observed, &first.observation, side)?;
        written.push(observed);
        let recovered = dir.join(format!("{prefix}recovered.pgm"));
        write_pgm(&recovered, &first.recovered, side)?;
        written.push(recovered);
    }
    Ok(written)
}
