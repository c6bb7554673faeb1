//! Edge-inference efficiency metrics: FPS, average power, energy, and
//! group-normalized energy-delay product.
//!
//! Power traces come from a USB power meter export sampled at ~100 Hz.
//! Energy is integrated with the trapezoid rule over the actual
//! timestamps, which tolerates sampling jitter and agrees exactly with
//! mean-power x duration for constant traces; average power is the plain
//! sample mean, with a time-weighted variant available.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One power reading: seconds since trace start, milliwatts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub t_s: f64,
    pub p_mw: f64,
}

/// Timestamped power samples from one measurement source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub samples: Vec<PowerSample>,
    pub source: String,
}

impl PowerTrace {
    /// Validates strictly increasing timestamps and non-negative power.
    pub fn new(samples: Vec<PowerSample>, source: &str) -> Result<Self> {
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].t_s <= pair[0].t_s {
                return Err(Error::TimestampOrder {
                    row: i + 2,
                    t: pair[1].t_s,
                    prev: pair[0].t_s,
                });
            }
        }
        if let Some(bad) = samples.iter().position(|s| s.p_mw < 0.0) {
            return Err(Error::NegativePower {
                row: bad + 1,
                value: samples[bad].p_mw,
            });
        }
        Ok(Self {
            samples,
            source: source.to_string(),
        })
    }

    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t_s - a.t_s,
            _ => 0.0,
        }
    }
}

/// Column layout of a power CSV export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSchema {
    /// `time,power_mw`
    TimePower,
    /// `time,voltage_v,current_ma`; power is V * I (volts x milliamps = mW).
    TimeVoltageCurrent,
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn parse_cell(record: &csv::StringRecord, col: usize, row: usize, field: &'static str) -> Result<f64> {
    let token = record.get(col).unwrap_or("");
    token
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidNumber {
            line: row,
            field,
            token: token.to_string(),
        })
}

/// Detects the schema from a CSV header row.
pub fn detect_schema(csv_text: &str) -> Result<TraceSchema> {
    let mut reader = csv::ReaderBuilder::new().from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::TraceFormat {
        message: format!("cannot read header row: {e}"),
    })?;
    if find_column(headers, "power_mw").is_some() {
        Ok(TraceSchema::TimePower)
    } else if find_column(headers, "voltage_v").is_some() && find_column(headers, "current_ma").is_some()
    {
        Ok(TraceSchema::TimeVoltageCurrent)
    } else {
        Err(Error::TraceFormat {
            message: format!(
                "header row {:?} matches neither time,power_mw nor time,voltage_v,current_ma",
                headers.iter().collect::<Vec<_>>()
            ),
        })
    }
}

/// Parses a power CSV into a trace, auto-detecting the schema.
pub fn ingest_power_trace(csv_text: &str, source: &str) -> Result<PowerTrace> {
    let schema = detect_schema(csv_text)?;
    ingest_power_trace_with_schema(csv_text, schema, source)
}

/// Parses a power CSV with a known schema.
///
/// Timestamps are rebased so the first sample sits at t = 0. Row numbers
/// in errors are 1-based file lines (the header is line 1).
pub fn ingest_power_trace_with_schema(
    csv_text: &str,
    schema: TraceSchema,
    source: &str,
) -> Result<PowerTrace> {
    let mut reader = csv::ReaderBuilder::new().from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::TraceFormat {
            message: format!("cannot read header row: {e}"),
        })?
        .clone();

    let time_col = find_column(&headers, "time")
        .or_else(|| find_column(&headers, "time_s"))
        .ok_or_else(|| Error::TraceFormat {
            message: "missing time column".to_string(),
        })?;
    let value_cols = match schema {
        TraceSchema::TimePower => {
            let p = find_column(&headers, "power_mw").ok_or_else(|| Error::TraceFormat {
                message: "missing power_mw column".to_string(),
            })?;
            (p, None)
        }
        TraceSchema::TimeVoltageCurrent => {
            let v = find_column(&headers, "voltage_v").ok_or_else(|| Error::TraceFormat {
                message: "missing voltage_v column".to_string(),
            })?;
            let i = find_column(&headers, "current_ma").ok_or_else(|| Error::TraceFormat {
                message: "missing current_ma column".to_string(),
            })?;
            (v, Some(i))
        }
    };

    let mut samples = Vec::new();
    let mut prev_t: Option<f64> = None;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| Error::TraceFormat {
            message: format!("row {row}: {e}"),
        })?;
        let t = parse_cell(&record, time_col, row, "time")?;
        if let Some(prev) = prev_t {
            if t <= prev {
                return Err(Error::TimestampOrder { row, t, prev });
            }
        }
        prev_t = Some(t);
        let p_mw = match value_cols {
            (p_col, None) => parse_cell(&record, p_col, row, "power_mw")?,
            (v_col, Some(i_col)) => {
                let volts = parse_cell(&record, v_col, row, "voltage_v")?;
                let milliamps = parse_cell(&record, i_col, row, "current_ma")?;
                volts * milliamps
            }
        };
        if p_mw < 0.0 {
            return Err(Error::NegativePower { row, value: p_mw });
        }
        samples.push(PowerSample { t_s: t, p_mw });
    }

    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            found: samples.len(),
            need: 2,
        });
    }
    let t0 = samples[0].t_s;
    for s in &mut samples {
        s.t_s -= t0;
    }
    PowerTrace::new(samples, source)
}

/// Unweighted mean of the power samples, in milliwatts.
///
/// This mirrors how the meter readings are reported: samples averaged,
/// not time-weighted. See [`average_power_time_weighted`] for the variant.
pub fn average_power(trace: &PowerTrace) -> Result<f64> {
    if trace.samples.is_empty() {
        return Err(Error::InsufficientSamples { found: 0, need: 1 });
    }
    Ok(trace.samples.iter().map(|s| s.p_mw).sum::<f64>() / trace.samples.len() as f64)
}

/// Trapezoid-integrated mean power over the trace duration, in milliwatts.
pub fn average_power_time_weighted(trace: &PowerTrace) -> Result<f64> {
    let joules = energy(trace)?;
    let duration = trace.duration_s();
    if duration <= 0.0 {
        return Err(Error::TraceFormat {
            message: "zero duration".to_string(),
        });
    }
    Ok(joules * 1000.0 / duration)
}

/// Trapezoidal integral of power over time, converted mW*s -> J.
pub fn energy(trace: &PowerTrace) -> Result<f64> {
    if trace.samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            found: trace.samples.len(),
            need: 2,
        });
    }
    let mut millijoules = 0.0;
    for pair in trace.samples.windows(2) {
        let dt = pair[1].t_s - pair[0].t_s;
        millijoules += (pair[0].p_mw + pair[1].p_mw) / 2.0 * dt;
    }
    Ok(millijoules / 1000.0)
}

/// Trapezoid energy next to the mean-power x duration estimate.
///
/// The two agree exactly for constant power; the gap is a jitter/shape
/// diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDiagnostics {
    pub trapezoid_j: f64,
    pub mean_power_j: f64,
    pub difference_j: f64,
}

pub fn energy_diagnostics(trace: &PowerTrace) -> Result<EnergyDiagnostics> {
    let trapezoid_j = energy(trace)?;
    let mean_power_j = average_power(trace)? * trace.duration_s() / 1000.0;
    Ok(EnergyDiagnostics {
        trapezoid_j,
        mean_power_j,
        difference_j: trapezoid_j - mean_power_j,
    })
}

/// Images processed per second.
pub fn fps(n_images: u64, runtime_s: f64) -> Result<f64> {
    if n_images == 0 {
        return Err(Error::InvalidRun {
            message: "n_images must be >= 1".to_string(),
        });
    }
    if runtime_s <= 0.0 {
        return Err(Error::InvalidRun {
            message: format!("runtime {runtime_s} s must be positive"),
        });
    }
    Ok(n_images as f64 / runtime_s)
}

/// Timing log for one inference run, as written by the measurement harness.
///
/// Either an explicit measurement window or a precomputed duration. The
/// window is whatever the caller measured (with or without pre/post
/// processing); it is carried through as-is.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimingLog {
    Window {
        run_id: String,
        n_images: u64,
        start_ts: f64,
        end_ts: f64,
    },
    Duration {
        run_id: String,
        n_images: u64,
        runtime_s: f64,
    },
}

impl TimingLog {
    pub fn run_id(&self) -> &str {
        match self {
            TimingLog::Window { run_id, .. } | TimingLog::Duration { run_id, .. } => run_id,
        }
    }

    pub fn n_images(&self) -> u64 {
        match self {
            TimingLog::Window { n_images, .. } | TimingLog::Duration { n_images, .. } => *n_images,
        }
    }

    pub fn runtime_s(&self) -> Result<f64> {
        match self {
            TimingLog::Window { start_ts, end_ts, .. } => {
                let d = end_ts - start_ts;
                if d <= 0.0 {
                    return Err(Error::InvalidRun {
                        message: format!("window [{start_ts}, {end_ts}] has non-positive duration"),
                    });
                }
                Ok(d)
            }
            TimingLog::Duration { runtime_s, .. } => {
                if *runtime_s <= 0.0 {
                    return Err(Error::InvalidRun {
                        message: format!("runtime {runtime_s} s must be positive"),
                    });
                }
                Ok(*runtime_s)
            }
        }
    }
}

/// Derived metrics for one measured inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub n_images: u64,
    pub runtime_s: f64,
    pub avg_power_mw: f64,
    pub energy_j: f64,
    pub fps: f64,
}

impl RunMetrics {
    pub fn new(
        run_id: &str,
        n_images: u64,
        runtime_s: f64,
        avg_power_mw: f64,
        energy_j: f64,
    ) -> Result<Self> {
        let fps = fps(n_images, runtime_s)?;
        if energy_j < 0.0 {
            return Err(Error::InvalidRun {
                message: format!("energy {energy_j} J must be non-negative"),
            });
        }
        Ok(Self {
            run_id: run_id.to_string(),
            n_images,
            runtime_s,
            avg_power_mw,
            energy_j,
            fps,
        })
    }

    /// Combines a timing log with its power trace.
    pub fn from_measurements(timing: &TimingLog, trace: &PowerTrace) -> Result<Self> {
        let runtime_s = timing.runtime_s()?;
        Self::new(
            timing.run_id(),
            timing.n_images(),
            runtime_s,
            average_power(trace)?,
            energy(trace)?,
        )
    }

    /// Re-checks the invariants on records loaded from disk.
    pub fn validate(&self) -> Result<()> {
        if self.runtime_s <= 0.0 || self.n_images == 0 {
            return Err(Error::InvalidRun {
                message: format!(
                    "run '{}': runtime and image count must be positive",
                    self.run_id
                ),
            });
        }
        let expect = self.n_images as f64 / self.runtime_s;
        if (self.fps - expect).abs() > 1e-9 * expect.max(1.0) {
            return Err(Error::InvalidRun {
                message: format!(
                    "run '{}': fps {} inconsistent with {} images / {} s",
                    self.run_id, self.fps, self.n_images, self.runtime_s
                ),
            });
        }
        if self.energy_j < 0.0 {
            return Err(Error::InvalidRun {
                message: format!("run '{}': negative energy", self.run_id),
            });
        }
        Ok(())
    }
}

/// Normalized energy-delay product of one run against its group maxima.
pub fn edp(run: &RunMetrics, max_energy_j: f64, max_runtime_s: f64) -> Result<f64> {
    if run.energy_j <= 0.0 || run.runtime_s <= 0.0 {
        return Err(Error::InvalidRun {
            message: format!("run '{}': energy and runtime must be positive", run.run_id),
        });
    }
    if run.energy_j > max_energy_j {
        return Err(Error::RunExceedsMaximum {
            run_id: run.run_id.clone(),
            message: format!("energy {} J > max {} J", run.energy_j, max_energy_j),
        });
    }
    if run.runtime_s > max_runtime_s {
        return Err(Error::RunExceedsMaximum {
            run_id: run.run_id.clone(),
            message: format!("runtime {} s > max {} s", run.runtime_s, max_runtime_s),
        });
    }
    Ok((run.energy_j / max_energy_j) * (run.runtime_s / max_runtime_s))
}

/// One run inside an EDP comparison group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdpMember {
    pub run: RunMetrics,
    pub normalized_energy: f64,
    pub normalized_runtime: f64,
    pub edp: f64,
}

/// A set of runs normalized to their shared maxima.
///
/// EDP values only mean something relative to this declared group; the
/// same run can score differently in a different group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdpGroup {
    pub members: Vec<EdpMember>,
    pub max_energy_j: f64,
    pub max_runtime_s: f64,
}

/// Forms an EDP group: computes group maxima and each member's EDP.
pub fn edp_group(runs: &[RunMetrics]) -> Result<EdpGroup> {
    if runs.len() < 2 {
        return Err(Error::GroupTooSmall { found: runs.len() });
    }
    for run in runs {
        if run.energy_j <= 0.0 || run.runtime_s <= 0.0 {
            return Err(Error::InvalidRun {
                message: format!("run '{}': energy and runtime must be positive", run.run_id),
            });
        }
    }
    let max_energy_j = runs.iter().map(|r| r.energy_j).fold(f64::MIN, f64::max);
    let max_runtime_s = runs.iter().map(|r| r.runtime_s).fold(f64::MIN, f64::max);
    let members = runs
        .iter()
        .map(|run| {
            Ok(EdpMember {
                normalized_energy: run.energy_j / max_energy_j,
                normalized_runtime: run.runtime_s / max_runtime_s,
                edp: edp(run, max_energy_j, max_runtime_s)?,
                run: run.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdpGroup {
        members,
        max_energy_j,
        max_runtime_s,
    })
}

impl EdpGroup {
    /// Bar-chart-ready CSV: run_id, normalized_energy, normalized_runtime, edp.
    pub fn chart_csv(&self) -> String {
        let mut out = String::from("run_id,normalized_energy,normalized_runtime,edp\n");
        for m in &self.members {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.run.run_id, m.normalized_energy, m.normalized_runtime, m.edp
            ));
        }
        out
    }
}
