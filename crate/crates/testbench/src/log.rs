//! Trajectory logs (CSV) and run metrics (JSON).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

/// Column-oriented numeric log with `#` comment lines above the header.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryLog {
    /// Standard columns `t, x.., u.., path_violation, terminal_violation, T,
    /// step_time_s` followed by `extra` columns.
    pub fn new(nx: usize, nu: usize, extra: &[&str]) -> Self {
        let mut header = vec!["t".to_string()];
        header.extend((0..nx).map(|i| format!("x{i}")));
        header.extend((0..nu).map(|i| format!("u{i}")));
        for name in ["path_violation", "terminal_violation", "T", "step_time_s"] {
            header.push(name.into());
        }
        header.extend(extra.iter().map(|s| s.to_string()));
        TrajectoryLog {
            comments: Vec::new(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for c in &self.comments {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for row in &self.rows {
            out.write_record(row.iter().map(|v| format_value(*v)))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, csv::Error> {
        let mut comments = Vec::new();
        let mut text = String::new();
        let mut r = r;
        r.read_to_string(&mut text)?;
        let mut body = String::new();
        for line in text.lines() {
            match line.strip_prefix('#') {
                Some(c) => comments.push(c.trim_start().to_string()),
                None => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let header = rd.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let row: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            rows.push(row.map_err(|e| {
                csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })?);
        }
        Ok(TrajectoryLog { comments, header, rows })
    }
}

/// Shortest representation that parses back to the same value.
fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub simulated_time: f64,
    /// Trapezoid quadrature of `l` along the logged closed loop, with the
    /// control held over each sampling interval, plus the terminal cost.
    pub j_int: f64,
    /// Largest `max(h, 0)` or `|g|` along the logged trajectory.
    pub max_constraint_violation: f64,
    /// `‖x_end − x_des‖∞`
    pub terminal_error: f64,
    pub step_time_mean_s: f64,
    pub step_time_max_s: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged_steps: usize,
    pub constraints_active: bool,
    pub flags: Vec<String>,
    pub extra: BTreeMap<String, f64>,
}

impl RunMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Output of a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub metrics: RunMetrics,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
            let mut log = TrajectoryLog::new(0, 0, &[]);
            log.header = (0..vals.len()).map(|i| format!("c{i}")).collect();
            log.comments.push("seed=3".into());
            log.push(vals.clone());
            let back = TrajectoryLog::read_csv(log.to_csv_string().as_bytes()).unwrap();
            prop_assert_eq!(back, log);
        }
    }

    #[test]
    fn standard_header() {
        let log = TrajectoryLog::new(2, 1, &["xhat0"]);
        assert_eq!(
            log.header,
            ["t", "x0", "x1", "u0", "path_violation", "terminal_violation", "T", "step_time_s", "xhat0"]
        );
    }
}
