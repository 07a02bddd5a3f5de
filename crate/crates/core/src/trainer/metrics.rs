use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::Arm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub perplexity: f64,
    pub positions: u64,
}

pub const METRICS_HEADER: &str =
    "epoch,step,arm,loss,accuracy,perplexity,epsilon_at_32,epsilon_min,tier0,tier_low,tier_high";

/// One row per epoch. Epsilon columns are empty for the no-DP arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: u64,
    pub step: u64,
    pub arm: Arm,
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
    pub epsilon_at_32: Option<f64>,
    pub epsilon_min: Option<f64>,
    pub tier0: u64,
    pub tier_low: u64,
    pub tier_high: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    /// Writes the CSV. `comment`, when given, becomes a single leading
    /// `# ...` line; it is the only place a timestamp may appear.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> io::Result<()> {
        let mut out = out;
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(METRICS_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.step.to_string(),
                r.arm.to_string(),
                r.loss.to_string(),
                r.accuracy.to_string(),
                r.perplexity.to_string(),
                opt(r.epsilon_at_32),
                opt(r.epsilon_min),
                r.tier0.to_string(),
                r.tier_low.to_string(),
                r.tier_high.to_string(),
            ])?;
        }
        w.flush()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
