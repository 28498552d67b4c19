//! Append-only training metrics and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::world_model::LossComponents;

pub const METRICS_HEADER: &str = "env_steps,eval_mean,eval_std,loss_total,loss_recon,loss_reward,loss_kl,loss_omega_est,loss_omega_head,omega_mse,wall_s";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub env_steps: usize,
    /// Mean undiscounted evaluation return.
    pub eval_mean: f64,
    /// Across-episode standard deviation of the evaluation return.
    pub eval_std: f64,
    pub loss: LossComponents,
    /// Mean squared error of the predicted omega during evaluation; NaN for
    /// variants without a prediction head.
    pub omega_mse: f64,
    pub wall_s: f64,
}

/// Formats floats with the shortest round-trip representation and `nan`
/// for missing values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let l = &self.loss;
        let fields = [
            self.eval_mean,
            self.eval_std,
            l.total,
            l.recon,
            l.reward,
            l.kl,
            l.omega_est,
            l.omega_head,
            self.omega_mse,
            self.wall_s,
        ];
        let mut s = self.env_steps.to_string();
        for f in fields {
            s.push(',');
            s.push_str(&fmt_f64(f));
        }
        s
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 11 {
            return Err(CoreError::Config(format!(
                "metrics row has {} columns, expected 11",
                cols.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            cols[i]
                .parse()
                .map_err(|_| CoreError::Config(format!("bad metrics value `{}`", cols[i])))
        };
        Ok(Self {
            env_steps: cols[0]
                .parse()
                .map_err(|_| CoreError::Config(format!("bad env_steps `{}`", cols[0])))?,
            eval_mean: f(1)?,
            eval_std: f(2)?,
            loss: LossComponents {
                total: f(3)?,
                recon: f(4)?,
                reward: f(5)?,
                kl: f(6)?,
                omega_est: f(7)?,
                omega_head: f(8)?,
            },
            omega_mse: f(9)?,
            wall_s: f(10)?,
        })
    }
}

/// Rows ordered by non-decreasing env steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(prev) = self.rows.last() {
            if row.env_steps < prev.env_steps {
                return Err(CoreError::Config(format!(
                    "metrics env_steps must not decrease ({} after {})",
                    row.env_steps, prev.env_steps
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.to_csv_line());
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(METRICS_HEADER) {
            return Err(CoreError::Config("not a metrics CSV (header mismatch)".into()));
        }
        let mut log = Self::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            log.push(MetricsRow::parse_csv_line(line)?)?;
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}
