//! Per-slot workload series shared by generators, estimators and the simulator.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonnegative workload series, one value per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficTrace {
    slots: Vec<f64>,
    slot_duration: f64,
    origin_class: Option<u32>,
}

impl TrafficTrace {
    pub fn new(slots: Vec<f64>) -> Result<Self> {
        Self::with_duration(slots, 1.0)
    }

    pub fn with_duration(slots: Vec<f64>, slot_duration: f64) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::TraceTooShort {
                len: 0,
                required: 1,
            });
        }
        if !(slot_duration > 0.0 && slot_duration.is_finite()) {
            return Err(Error::invalid(
                "slot_duration",
                format!("must be > 0, got {slot_duration}"),
            ));
        }
        if let Some((i, v)) = slots
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::invalid(
                "slots",
                format!("slot {i} has value {v}, expected a finite value >= 0"),
            ));
        }
        Ok(TrafficTrace {
            slots,
            slot_duration,
            origin_class: None,
        })
    }

    pub fn with_class(mut self, class: u32) -> Self {
        self.origin_class = Some(class);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.slots
    }

    pub fn into_values(self) -> Vec<f64> {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot_duration(&self) -> f64 {
        self.slot_duration
    }

    pub fn origin_class(&self) -> Option<u32> {
        self.origin_class
    }

    pub fn mean(&self) -> f64 {
        self.slots.iter().sum::<f64>() / self.slots.len() as f64
    }

    /// Sub-trace over `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> Result<TrafficTrace> {
        if start >= end || end > self.slots.len() {
            return Err(Error::invalid(
                "window",
                format!("[{start}, {end}) is not inside 0..{}", self.slots.len()),
            ));
        }
        Ok(TrafficTrace {
            slots: self.slots[start..end].to_vec(),
            slot_duration: self.slot_duration,
            origin_class: self.origin_class,
        })
    }

    /// Writes `slot_index,value` rows under a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot_index", "value"])?;
        for (i, v) in self.slots.iter().enumerate() {
            w.write_record([i.to_string(), format_value(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<TrafficTrace> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = r.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "slot_index" || &headers[1] != "value" {
            return Err(Error::Parse {
                line: 1,
                reason: "expected header `slot_index,value`".into(),
            });
        }
        let mut slots = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = row + 2;
            let idx: usize =
                rec.get(0)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line,
                        reason: "bad slot_index".into(),
                    })?;
            if idx != slots.len() {
                return Err(Error::Parse {
                    line,
                    reason: format!("slot_index {idx} out of sequence"),
                });
            }
            let v: f64 = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line,
                    reason: "bad value".into(),
                })?;
            slots.push(v);
        }
        TrafficTrace::new(slots)
    }
}

/// Shortest round-trip representation, so CSV output is reproducible byte for byte.
pub(crate) fn format_value(v: f64) -> String {
    format!("{v:?}")
}
