use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One logged point of a training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    /// Updates completed when the record was taken.
    pub iteration: u64,
    pub lr: f64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

pub const CSV_HEADER: &str = "iteration,lr,loss,val_psnr";

impl TrainLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    /// CSV with header `iteration,lr,loss,val_psnr`; a missing validation
    /// score is an empty field.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.records {
            let psnr = r.val_psnr.map(|p| format!("{p:.4}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{:.6e},{psnr}", r.iteration, r.lr, r.loss);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::Config(format!(
                "training log must start with {CSV_HEADER}"
            )));
        }
        let bad = |l: &str| Error::Config(format!("bad training log line {l:?}"));
        let records = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 4 {
                    return Err(bad(l));
                }
                Ok(LogRecord {
                    iteration: f[0].parse().map_err(|_| bad(l))?,
                    lr: f[1].parse().map_err(|_| bad(l))?,
                    loss: f[2].parse().map_err(|_| bad(l))?,
                    val_psnr: if f[3].is_empty() {
                        None
                    } else {
                        Some(f[3].parse().map_err(|_| bad(l))?)
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainLog { records })
    }
}
