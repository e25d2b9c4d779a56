use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy against clean labels on the test split.
    pub test_acc: f64,
    /// Mean normalized weight of clean members in groups mixing clean and
    /// noisy samples (attention in AFM, Beta draws in the mixup baselines);
    /// NaN when no such group occurred.
    pub mean_attn_clean: f64,
    pub mean_attn_noisy: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: [&str; 6] = [
    "epoch",
    "train_loss",
    "test_acc",
    "mean_attn_clean",
    "mean_attn_noisy",
    "lr",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.rows.last()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.last().map(|r| r.test_acc)
    }

    /// CSV with a header line, `.` decimals and LF endings.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        w.write_record(METRICS_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.test_acc.to_string(),
                r.mean_attn_clean.to_string(),
                r.mean_attn_noisy.to_string(),
                r.lr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a file written by [`MetricsLog::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map_err(|e| crate::error::Error::Format(format!("metrics column {i}: {e}")))
            };
            rows.push(EpochMetrics {
                epoch: f(0)? as usize,
                train_loss: f(1)?,
                test_acc: f(2)?,
                mean_attn_clean: f(3)?,
                mean_attn_noisy: f(4)?,
                lr: f(5)?,
            });
        }
        Ok(Self { rows })
    }
}
