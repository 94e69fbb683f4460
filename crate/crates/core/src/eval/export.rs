//! Hypnogram and attention-map files for external plotting.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::autodiff::{Tape, Tensor};
use crate::data::{PreparedRecord, Stage};
use crate::error::{Error, Result};
use crate::model::{Mode, Model, ModelInput};

/// Mean over heads of one encoder layer's attention, trimmed to the
/// record's epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub subject_id: String,
    /// `[epochs, epochs]`, row-stochastic.
    pub matrix: Tensor,
}

pub fn extract_attention(model: &Model, record: &PreparedRecord) -> Result<Vec<AttentionMap>> {
    let signals = Tensor::new(vec![1, 1, record.len()], record.signal.clone())?;
    let lengths = [record.len()];
    let mut tape = Tape::new();
    let out = model.forward(
        &mut tape,
        ModelInput {
            signals: &signals,
            lengths: &lengths,
        },
        &mut Mode::Infer,
    )?;
    let (padded, valid) = (out.layout.padded_len, out.layout.valid[0]);
    out.attention
        .iter()
        .enumerate()
        .map(|(layer, heads)| {
            let mut acc = vec![0.0; valid * valid];
            for per_record in heads {
                let a = tape.value(per_record[0]).data();
                for i in 0..valid {
                    for j in 0..valid {
                        acc[i * valid + j] += a[i * padded + j];
                    }
                }
            }
            let h = heads.len() as f64;
            acc.iter_mut().for_each(|v| *v /= h);
            Ok(AttentionMap {
                layer,
                subject_id: record.subject_id.clone(),
                matrix: Tensor::new(vec![valid, valid], acc)?,
            })
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Ok(BufWriter::new(f))
}

/// `row,col,value` triples, preceded by a `#` comment giving the layer,
/// subject and dimensions.
pub fn write_attention_csv(map: &AttentionMap, path: &Path) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let (r, c) = (map.matrix.shape()[0], map.matrix.shape()[1]);
    let mut w = create(path)?;
    writeln!(w, "# layer={} subject={} rows={r} cols={c}", map.layer, map.subject_id).map_err(|e| Error::io(ctx(), e))?;
    writeln!(w, "row,col,value").map_err(|e| Error::io(ctx(), e))?;
    for i in 0..r {
        for j in 0..c {
            writeln!(w, "{i},{j},{}", map.matrix.at(i, j)).map_err(|e| Error::io(ctx(), e))?;
        }
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

/// Reads an attention CSV back into a dense matrix.
pub fn read_attention_csv(path: &Path) -> Result<Tensor> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let parse = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: msg,
    };
    let lines = BufReader::new(f).lines().enumerate();
    let mut dims = None;
    let mut data = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if let Some(comment) = line.strip_prefix('#') {
            let field = |key: &str| {
                comment
                    .split_whitespace()
                    .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse::<usize>().ok())
            };
            dims = field("rows").zip(field("cols"));
            continue;
        }
        if line == "row,col,value" {
            continue;
        }
        let value = line
            .split(',')
            .nth(2)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| parse(i + 1, format!("bad attention row `{line}`")))?;
        data.push(value);
    }
    let (r, c) = dims.ok_or_else(|| parse(1, "missing `# rows=.. cols=..` comment".into()))?;
    Tensor::new(vec![r, c], data)
}

/// `epoch,pred,truth` rows; `truth` is blank when no labels are known.
pub fn export_hypnogram(pred: &[Stage], truth: Option<&[Stage]>, path: &Path) -> Result<()> {
    if let Some(t) = truth.filter(|t| t.len() != pred.len()) {
        return Err(Error::dim(format!("{} predictions but {} labels", pred.len(), t.len())));
    }
    let ctx = || format!("writing {}", path.display());
    let mut w = create(path)?;
    writeln!(w, "epoch,pred,truth").map_err(|e| Error::io(ctx(), e))?;
    for (i, p) in pred.iter().enumerate() {
        let t = truth.map_or(String::new(), |t| t[i].symbol().to_string());
        writeln!(w, "{i},{},{t}", p.symbol()).map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

/// Predicted and (if present) true stages of a hypnogram CSV.
pub fn load_hypnogram(path: &Path) -> Result<(Vec<Stage>, Option<Vec<Stage>>)> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: msg,
    };
    let header = rdr.headers().map_err(|e| parse(1, e.to_string()))?;
    if header.iter().ne(["epoch", "pred", "truth"]) {
        return Err(parse(1, "expected header `epoch,pred,truth`".into()));
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse(line, e.to_string()))?;
        pred.push(Stage::from_symbol(&rec[1]).ok_or_else(|| parse(line, format!("bad stage `{}`", &rec[1])))?);
        truth.push(if rec[2].is_empty() {
            None
        } else {
            Some(Stage::from_symbol(&rec[2]).ok_or_else(|| parse(line, format!("bad stage `{}`", &rec[2])))?)
        });
    }
    let truth = truth.iter().all(Option::is_some).then(|| truth.into_iter().flatten().collect());
    Ok((pred, truth))
}
