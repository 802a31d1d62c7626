use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{TrainerConfig, CONFIG_FILE};
use super::prob::ProbRecord;
use super::step::RunOutcome;
use crate::binio::{read_file, write_file};
use crate::error::{DtsError, Result};
use crate::eval::{MetricsRow, MetricsWriter};
use crate::segmodel::save_checkpoint;

pub const METRICS_FILE: &str = "metrics.csv";
pub const AUDIT_FILE: &str = "audit.csv";
pub const PROB_FILE: &str = "prob_log.csv";

/// Output directory of a run. Metrics rows are appended as they arrive;
/// logs and checkpoints are written by [`RunWriter::finish`].
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    metrics: MetricsWriter,
}

impl RunWriter {
    pub fn create(dir: &Path, config: &TrainerConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| DtsError::io(dir, e))?;
        config.save(&dir.join(CONFIG_FILE))?;
        let metrics = MetricsWriter::create(&dir.join(METRICS_FILE), config.arch.num_classes)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn row(&mut self, row: &MetricsRow) -> Result<()> {
        self.metrics.write(row)
    }

    /// Writes the audit and Prob logs and one checkpoint per network:
    /// `g{1,2}_{student,teacher}` plus `final`.
    pub fn finish(self, outcome: &RunOutcome) -> Result<()> {
        let mut audit = String::from("iter,group,slot,tag,source\n");
        for a in &outcome.audit {
            let _ = writeln!(
                audit,
                "{},{},{},{},{}",
                a.iter, a.group, a.slot, a.tag, a.source
            );
        }
        write_file(&self.dir.join(AUDIT_FILE), audit.as_bytes())?;
        let mut prob = String::from("iter,gamma_g2_teacher,gamma_g1_student,win\n");
        for r in outcome.prob.log() {
            let _ = writeln!(
                prob,
                "{},{},{},{}",
                r.iter, r.gamma_teacher2, r.gamma_student1, r.win as u8
            );
        }
        write_file(&self.dir.join(PROB_FILE), prob.as_bytes())?;
        for g in &outcome.groups {
            save_checkpoint(&g.student, &self.dir.join(format!("g{}_student", g.id)))?;
            save_checkpoint(&g.teacher, &self.dir.join(format!("g{}_teacher", g.id)))?;
        }
        save_checkpoint(&outcome.final_model, &self.dir.join("final"))
    }
}

/// Writes a finished run in one go.
pub fn write_run(outcome: &RunOutcome, config: &TrainerConfig, dir: &Path) -> Result<()> {
    let mut w = RunWriter::create(dir, config)?;
    for row in &outcome.metrics {
        w.row(row)?;
    }
    w.finish(outcome)
}

/// Reads the comparisons recorded in a run's Prob log.
pub fn read_prob_log(path: &Path) -> Result<Vec<ProbRecord>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (i, line) in text.lines().enumerate() {
        let bad = |msg: String| DtsError::Format {
            path: path.to_path_buf(),
            offset,
            msg,
        };
        if i == 0 {
            if line != "iter,gamma_g2_teacher,gamma_g1_student,win" {
                return Err(bad(format!("unexpected header `{line}`")));
            }
        } else {
            let f: Vec<&str> = line.split(',').collect();
            let parsed = (f.len() == 4)
                .then(|| {
                    Some(ProbRecord {
                        iter: f[0].parse().ok()?,
                        gamma_teacher2: f[1].parse().ok()?,
                        gamma_student1: f[2].parse().ok()?,
                        win: match f[3] {
                            "1" => true,
                            "0" => false,
                            _ => return None,
                        },
                    })
                })
                .flatten()
                .ok_or_else(|| bad(format!("malformed row `{line}`")))?;
            out.push(parsed);
        }
        offset += line.len() as u64 + 1;
    }
    if out.is_empty() && text.is_empty() {
        return Err(DtsError::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: "empty Prob log".into(),
        });
    }
    Ok(out)
}
