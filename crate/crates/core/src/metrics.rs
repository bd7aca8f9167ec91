//! Evaluation metrics and the per-epoch training trace.

use std::io::{BufRead, Write};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fm::{self, FmModel, Task};

/// Root mean squared error.
pub fn rmse(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let sse: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(f, y)| (f - y) * (f - y))
        .sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// Fraction of exact matches between two +1/-1 sequences.
pub fn accuracy(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    if let Some(&bad) = predictions
        .iter()
        .chain(labels)
        .find(|&&v| v != 1.0 && v != -1.0)
    {
        return Err(Error::InvalidLabel(bad));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::invalid("metric over empty input"));
    }
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions, {} labels",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// RMSE for regression, accuracy for classification.
pub fn evaluate(model: &FmModel, ds: &Dataset) -> Result<f64> {
    let preds = ds
        .examples()
        .iter()
        .map(|x| fm::predict(model, x, ds.task()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = ds.labels().collect();
    match ds.task() {
        Task::Regression => rmse(&preds, &labels),
        Task::Classification => accuracy(&preds, &labels),
    }
}

/// One row per completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub objective: f64,
    pub elapsed_secs: f64,
    pub train_metric: f64,
    pub test_metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; epochs must continue the sequence 1, 2, ...
    pub fn push(&mut self, row: TraceRow) {
        assert_eq!(
            row.epoch,
            self.rows.len() + 1,
            "trace epochs must be consecutive"
        );
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

pub const TRACE_HEADER: &str = "epoch,objective,elapsed_secs,train_metric,test_metric";

/// Formats a real with 6 significant digits in the style of C's `%g`.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Writes the trace as CSV with LF line endings.
pub fn write_trace<W: Write>(trace: &TrainTrace, mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace.rows() {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            format_sig6(r.objective),
            format_sig6(r.elapsed_secs),
            format_sig6(r.train_metric),
            r.test_metric.map(format_sig6).unwrap_or_default()
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace<R: BufRead>(reader: R) -> Result<TrainTrace> {
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h == TRACE_HEADER => {}
        Some((_, Err(e))) => return Err(e.into()),
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing trace header".into(),
            })
        }
    }
    let mut trace = TrainTrace::new();
    for (n, line) in lines {
        let line = line?;
        let bad = |what: &str| Error::Parse {
            line: n + 1,
            msg: format!("bad {what} in {line:?}"),
        };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad("column count"));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        let epoch: usize = cols[0].parse().map_err(|_| bad("epoch"))?;
        if epoch != trace.len() + 1 {
            return Err(bad("epoch sequence"));
        }
        trace.push(TraceRow {
            epoch,
            objective: num(cols[1], "objective")?,
            elapsed_secs: num(cols[2], "elapsed_secs")?,
            train_metric: num(cols[3], "train_metric")?,
            test_metric: if cols[4].is_empty() {
                None
            } else {
                Some(num(cols[4], "test_metric")?)
            },
        });
    }
    Ok(trace)
}
