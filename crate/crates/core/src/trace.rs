//! Multichannel sampled time series with CSV export.

use std::io::Write;

use crate::error::{ensure, Result};

/// Uniformly sampled multichannel trace. All channels share one time grid.
#[derive(Debug, Clone)]
pub struct Trace {
    sample_rate_hz: f64,
    channels: Vec<(String, Vec<f64>)>,
}

impl Trace {
    pub fn new(sample_rate_hz: f64) -> Result<Self> {
        ensure(
            sample_rate_hz.is_finite() && sample_rate_hz > 0.0,
            "sample_rate_hz",
            format!("must be finite and positive, got {sample_rate_hz}"),
        )?;
        Ok(Self {
            sample_rate_hz,
            channels: Vec::new(),
        })
    }

    /// Add a channel. All channels must have equal length.
    pub fn push_channel(&mut self, name: impl Into<String>, data: Vec<f64>) -> Result<()> {
        if let Some((_, first)) = self.channels.first() {
            ensure(
                data.len() == first.len(),
                "channel",
                format!(
                    "length mismatch: {} samples vs existing {}",
                    data.len(),
                    first.len()
                ),
            )?;
        }
        self.channels.push((name.into(), data));
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn time_step_s(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |(_, d)| d.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(n, _)| n.as_str())
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
    }

    /// Time of sample `i` in seconds.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate_hz
    }

    /// CSV export: header `time_s,<channels...>`, values with 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "time_s")?;
        for (name, _) in &self.channels {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{:.12e}", self.time(i))?;
            for (_, data) in &self.channels {
                write!(w, ",{:.12e}", data[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
