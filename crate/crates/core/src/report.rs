//! Per-iteration solver traces.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row of a solver trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub sum_rate: f64,
    pub min_rate: f64,
    pub max_power_violation: f64,
}

/// Outcome of one solver run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveReport {
    pub iterations: Vec<IterationRecord>,
    /// Final per-user rates (nats per channel use).
    pub user_rates: Vec<f64>,
    pub converged: bool,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    pub fn final_sum_rate(&self) -> f64 {
        self.user_rates.iter().sum()
    }

    pub fn final_min_rate(&self) -> f64 {
        self.user_rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Writes the trace as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records(&self.iterations, out)
    }
}

/// Writes any serializable records as CSV with a header row.
pub fn write_records<T: Serialize, W: Write>(records: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads CSV records written by [`write_records`].
pub fn read_records<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trips_bit_exactly() {
        let report = SolveReport {
            iterations: vec![
                IterationRecord { iteration: 1, objective: 0.1 + 0.2, sum_rate: std::f64::consts::PI, min_rate: 1e-300, max_power_violation: 0.0 },
                IterationRecord { iteration: 2, objective: -1.0 / 3.0, sum_rate: 2.5, min_rate: 0.25, max_power_violation: 1e-17 },
            ],
            ..Default::default()
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iteration,objective,sum_rate,min_rate,max_power_violation\n"));
        let back: Vec<IterationRecord> = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, report.iterations);
    }
}
