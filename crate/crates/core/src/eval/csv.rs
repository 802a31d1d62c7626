use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::binio::read_file;
use crate::error::{DtsError, Result};

/// One evaluation point of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub iter: usize,
    /// Per-class IoU; `None` for classes absent from both prediction and
    /// ground truth.
    pub ious: Vec<Option<f64>>,
    pub miou: f64,
    pub loss_g1: Option<f64>,
    pub loss_g2: Option<f64>,
    pub gamma_g1: Option<f64>,
    pub gamma_g2: Option<f64>,
    pub prob: Option<f64>,
}

pub fn csv_header(num_classes: usize) -> String {
    let mut h = String::from("iter,miou");
    for c in 0..num_classes {
        let _ = write!(h, ",iou_{c}");
    }
    h.push_str(",loss_g1,loss_g2,gamma_g1,gamma_g2,prob");
    h
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

fn parse_opt(s: &str) -> Option<Option<f64>> {
    match s {
        "nan" => Some(None),
        v => v.parse().ok().map(Some),
    }
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut line = format!("{},{:.6}", self.iter, self.miou);
        for &iou in &self.ious {
            line.push(',');
            line.push_str(&fmt_opt(iou));
        }
        for v in [
            self.loss_g1,
            self.loss_g2,
            self.gamma_g1,
            self.gamma_g2,
            self.prob,
        ] {
            line.push(',');
            line.push_str(&fmt_opt(v));
        }
        line
    }

    pub fn parse_csv(run_id: &str, num_classes: usize, line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != num_classes + 7 {
            return None;
        }
        let opts = f[1..]
            .iter()
            .map(|s| parse_opt(s))
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            run_id: run_id.to_string(),
            iter: f[0].parse().ok()?,
            miou: opts[0]?,
            ious: opts[1..=num_classes].to_vec(),
            loss_g1: opts[num_classes + 1],
            loss_g2: opts[num_classes + 2],
            gamma_g1: opts[num_classes + 3],
            gamma_g2: opts[num_classes + 4],
            prob: opts[num_classes + 5],
        })
    }
}

/// Append-only metrics CSV; rejects rows whose iteration does not increase.
#[derive(Debug)]
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    num_classes: usize,
    last_iter: Option<usize>,
}

impl MetricsWriter {
    /// Creates (truncating) `path` and writes the header.
    pub fn create(path: &Path, num_classes: usize) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| DtsError::io(path, e))?;
        writeln!(file, "{}", csv_header(num_classes)).map_err(|e| DtsError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            num_classes,
            last_iter: None,
        })
    }

    /// Reopens an existing CSV for appending.
    pub fn append(path: &Path) -> Result<Self> {
        let rows = read_metrics(path)?;
        let num_classes = rows.first().map(|r| r.ious.len());
        let text = String::from_utf8_lossy(&read_file(path)?).into_owned();
        let header = text.lines().next().unwrap_or_default();
        let num_classes = num_classes.unwrap_or_else(|| header.matches("iou_").count());
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| DtsError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            num_classes,
            last_iter: rows.last().map(|r| r.iter),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if row.ious.len() != self.num_classes {
            return Err(DtsError::dim(format!(
                "row has {} classes, file has {}",
                row.ious.len(),
                self.num_classes
            )));
        }
        if self.last_iter.is_some_and(|last| row.iter <= last) {
            return Err(DtsError::InvalidArgument(format!(
                "metrics row for iteration {} does not follow iteration {}",
                row.iter,
                self.last_iter.unwrap_or(0)
            )));
        }
        writeln!(self.file, "{}", row.to_csv()).map_err(|e| DtsError::io(&self.path, e))?;
        self.file.flush().map_err(|e| DtsError::io(&self.path, e))?;
        self.last_iter = Some(row.iter);
        Ok(())
    }
}

/// Reads a metrics CSV. The run id is the name of the containing directory.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| DtsError::Format {
        path: path.to_path_buf(),
        offset: 0,
        msg: "not UTF-8".into(),
    })?;
    let run_id = path
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| DtsError::Format {
        path: path.to_path_buf(),
        offset: 0,
        msg: "empty metrics file".into(),
    })?;
    let num_classes = header.matches(",iou_").count();
    if header != csv_header(num_classes) {
        return Err(DtsError::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("unexpected header `{header}`"),
        });
    }
    let mut offset = header.len() as u64 + 1;
    let mut rows = Vec::new();
    for line in lines {
        let row =
            MetricsRow::parse_csv(&run_id, num_classes, line).ok_or_else(|| DtsError::Format {
                path: path.to_path_buf(),
                offset,
                msg: format!("malformed row `{line}`"),
            })?;
        rows.push(row);
        offset += line.len() as u64 + 1;
    }
    Ok(rows)
}
