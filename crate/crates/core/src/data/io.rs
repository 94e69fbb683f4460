//! CSV record files: `index,hr,quality` at one row per second, and
//! `epoch,stage` label files with stage `W` or `S`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::record::{SleepRecord, Stage, EPOCH_SECONDS, QUALITY_DEFECTIVE, QUALITY_GOOD};
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Opens a headed CSV file and checks its header line.
fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let found = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(rdr)
}

fn rows(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec));
    }
    Ok(out)
}

/// Reads the HR and quality columns of a record file.
pub fn load_signal(path: &Path) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut rdr = reader(path, &["index", "hr", "quality"])?;
    let mut hr = Vec::new();
    let mut quality = Vec::new();
    for (line, rec) in rows(path, &mut rdr)? {
        let index: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad index `{}`", &rec[0])))?;
        if index != hr.len() {
            return Err(parse_err(path, line, format!("index {index}, expected {}", hr.len())));
        }
        let q: u8 = rec[2]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad quality `{}`", &rec[2])))?;
        if q != QUALITY_GOOD && q != QUALITY_DEFECTIVE {
            return Err(parse_err(path, line, format!("quality {q} is not 0 or 2")));
        }
        // defective rows may leave the HR blank
        let value = if rec[1].is_empty() && q == QUALITY_DEFECTIVE {
            0.0
        } else {
            rec[1]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("bad heart rate `{}`", &rec[1])))?
        };
        hr.push(value);
        quality.push(q);
    }
    Ok((hr, quality))
}

pub fn load_labels(path: &Path) -> Result<Vec<Stage>> {
    let mut rdr = reader(path, &["epoch", "stage"])?;
    let mut labels = Vec::new();
    for (line, rec) in rows(path, &mut rdr)? {
        let epoch: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad epoch `{}`", &rec[0])))?;
        if epoch != labels.len() {
            return Err(parse_err(path, line, format!("epoch {epoch}, expected {}", labels.len())));
        }
        let stage = Stage::from_symbol(&rec[1])
            .ok_or_else(|| parse_err(path, line, format!("stage `{}` is not W or S", &rec[1])))?;
        labels.push(stage);
    }
    Ok(labels)
}

/// Loads a record and its labels. A tail shorter than one epoch is
/// dropped; the label count must equal the number of whole epochs.
pub fn load_record(subject_id: &str, record_path: &Path, labels_path: &Path) -> Result<SleepRecord> {
    let (hr, quality) = load_signal(record_path)?;
    let labels = load_labels(labels_path)?;
    let epochs = hr.len() / EPOCH_SECONDS;
    if labels.len() != epochs {
        return Err(parse_err(
            labels_path,
            labels.len() + 1,
            format!("{} labels for {} whole epochs in {}", labels.len(), epochs, record_path.display()),
        ));
    }
    let mut record = SleepRecord {
        subject_id: subject_id.to_string(),
        hr,
        quality,
        labels,
    };
    record.truncate_to_epochs();
    Ok(record)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Ok(BufWriter::new(f))
}

pub fn save_signal(hr: &[f64], quality: &[u8], path: &Path) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut w = create(path)?;
    writeln!(w, "index,hr,quality").map_err(|e| Error::io(ctx(), e))?;
    for (i, (h, q)) in hr.iter().zip(quality).enumerate() {
        // `{}` on f64 prints the shortest string that parses back exactly
        writeln!(w, "{i},{h},{q}").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn save_labels(labels: &[Stage], path: &Path) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut w = create(path)?;
    writeln!(w, "epoch,stage").map_err(|e| Error::io(ctx(), e))?;
    for (i, s) in labels.iter().enumerate() {
        writeln!(w, "{i},{}", s.symbol()).map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn save_record(record: &SleepRecord, record_path: &Path, labels_path: &Path) -> Result<()> {
    record.validate()?;
    save_signal(&record.hr, &record.quality, record_path)?;
    save_labels(&record.labels, labels_path)
}
