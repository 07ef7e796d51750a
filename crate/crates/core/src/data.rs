//! CSV ingestion, train-statistics normalization, and sliding windows.
//!
//! Each window ending at tick `t` yields two equal-length sub-sequences: the
//! context `C` over ticks `[t-w+1, t-p]` and the suspect `S` over
//! `[t-c+1, t]`, with `c = w - p`. They overlap on `c - p` ticks when
//! `p < c`; the suspect's trailing `p` ticks are the part the context never
//! sees.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// A multichannel series: `values` is row-major `[channels, ticks]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries<F> {
    pub values: Tensor<F>,
    /// Per-tick 0/1 anomaly labels; test sets only.
    pub labels: Option<Vec<u8>>,
}

impl<F: Scalar> TimeSeries<F> {
    pub fn new(values: Tensor<F>, labels: Option<Vec<u8>>) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::shape(
                "time series",
                "[channels, ticks]",
                format!("{:?}", values.shape()),
            ));
        }
        let ticks = values.shape()[1];
        if values.shape()[0] == 0 || ticks == 0 {
            return Err(Error::invalid("series", "needs at least one channel and one tick"));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite {
                context: "time series values".into(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != ticks {
                return Err(Error::shape("labels", format!("{ticks}"), format!("{}", l.len())));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::invalid("labels", "labels must be 0 or 1"));
            }
        }
        Ok(TimeSeries { values, labels })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn ticks(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn value(&self, channel: usize, tick: usize) -> F {
        self.values.at2(channel, tick)
    }
}

/// Window geometry: total length `w`, suspect offset `p`, and the derived
/// sub-sequence length `c = w - p` shared by context and suspect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub window: usize,
    pub suspect_offset: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(window: usize, suspect_offset: usize, stride: usize) -> Result<Self> {
        if suspect_offset < 1 || suspect_offset >= window {
            return Err(Error::invalid(
                "suspect_offset",
                format!("need 1 <= p < w, got p={suspect_offset}, w={window}"),
            ));
        }
        if stride < 1 {
            return Err(Error::invalid("stride", "stride must be >= 1"));
        }
        Ok(WindowSpec {
            window,
            suspect_offset,
            stride,
        })
    }

    /// Sub-sequence length `c = w - p`.
    pub fn sub_length(&self) -> usize {
        self.window - self.suspect_offset
    }
}

/// One training/scoring sample: equal-shape context and suspect matrices.
#[derive(Clone, Debug)]
pub struct WindowSample<F> {
    pub end_tick: usize,
    /// `[channels, c]` over ticks `[t-w+1, t-p]`.
    pub context: Tensor<F>,
    /// `[channels, c]` over ticks `[t-c+1, t]`.
    pub suspect: Tensor<F>,
}

/// Per-channel min/max captured from the training series.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats<F> {
    pub min: Vec<F>,
    pub max: Vec<F>,
}

/// Load a header-first CSV where rows are ticks and columns are channels;
/// with `has_labels`, the final column must be named `label` and hold 0/1.
pub fn load_csv<F: Scalar>(path: &Path, has_labels: bool) -> Result<TimeSeries<F>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: 0,
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let cols = headers.len();
    if has_labels {
        if cols < 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: 0,
                message: "need at least one value column plus the label column".into(),
            });
        }
        let last = headers.get(cols - 1).unwrap_or("");
        if last != "label" {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: 0,
                message: format!("final column must be named 'label', got '{last}'"),
            });
        }
    } else if cols < 1 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 0,
            message: "no columns".into(),
        });
    }
    let channels = if has_labels { cols - 1 } else { cols };

    let mut by_channel: Vec<Vec<F>> = vec![Vec::new(); channels];
    let mut labels: Vec<u8> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, counting the header line
        let record = record.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row,
            message: e.to_string(),
        })?;
        if record.len() != cols {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row,
                message: format!("expected {cols} cells, got {}", record.len()),
            });
        }
        for (ch, slot) in by_channel.iter_mut().enumerate() {
            let cell = record.get(ch).unwrap_or("");
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                row,
                message: format!("non-numeric cell '{cell}' in column {}", ch + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    row,
                    message: format!("non-finite value in column {}", ch + 1),
                });
            }
            slot.push(F::cast(v));
        }
        if has_labels {
            let cell = record.get(cols - 1).unwrap_or("");
            let label: i64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                row,
                message: format!("non-integer label '{cell}'"),
            })?;
            if label != 0 && label != 1 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    row,
                    message: format!("label {label} outside {{0,1}}"),
                });
            }
            labels.push(label as u8);
        }
    }
    let ticks = by_channel.first().map(Vec::len).unwrap_or(0);
    if ticks == 0 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 0,
            message: "no data rows".into(),
        });
    }
    let mut data = Vec::with_capacity(channels * ticks);
    for ch in by_channel {
        data.extend(ch);
    }
    TimeSeries::new(
        Tensor::from_vec(vec![channels, ticks], data)?,
        has_labels.then_some(labels),
    )
}

/// Write a series in the same format `load_csv` reads: header `c0..cN-1`
/// plus a trailing `label` column when labels are present.
pub fn write_csv<F: Scalar>(path: &Path, series: &TimeSeries<F>) -> Result<()> {
    let (n, t) = (series.channels(), series.ticks());
    let mut out = String::new();
    for ch in 0..n {
        if ch > 0 {
            out.push(',');
        }
        let _ = write!(out, "c{ch}");
    }
    if series.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for tick in 0..t {
        for ch in 0..n {
            if ch > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", series.value(ch, tick));
        }
        if let Some(l) = &series.labels {
            let _ = write!(out, ",{}", l[tick]);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Per-channel min/max of the training series.
pub fn fit_normalizer<F: Scalar>(train: &TimeSeries<F>) -> NormalizationStats<F> {
    let (n, t) = (train.channels(), train.ticks());
    let mut min = vec![F::infinity(); n];
    let mut max = vec![F::neg_infinity(); n];
    for ch in 0..n {
        for tick in 0..t {
            let v = train.value(ch, tick);
            if v < min[ch] {
                min[ch] = v;
            }
            if v > max[ch] {
                max[ch] = v;
            }
        }
    }
    NormalizationStats { min, max }
}

/// Map each channel by `(x - min)/(max - min)` with TRAIN statistics;
/// degenerate channels (max = min) map to constant 0. Test values are not
/// clipped, so they may leave `[0, 1]`.
pub fn apply_normalizer<F: Scalar>(
    stats: &NormalizationStats<F>,
    series: &TimeSeries<F>,
) -> Result<TimeSeries<F>> {
    let n = series.channels();
    if stats.min.len() != n {
        return Err(Error::shape(
            "normalizer",
            format!("{} channels", stats.min.len()),
            format!("{n}"),
        ));
    }
    let t = series.ticks();
    let mut data = Vec::with_capacity(n * t);
    for ch in 0..n {
        let span = stats.max[ch] - stats.min[ch];
        if span > F::zero() {
            for tick in 0..t {
                data.push((series.value(ch, tick) - stats.min[ch]) / span);
            }
        } else {
            data.extend(std::iter::repeat(F::zero()).take(t));
        }
    }
    TimeSeries::new(Tensor::from_vec(vec![n, t], data)?, series.labels.clone())
}

/// All windows of `series` under `spec`, ordered by end tick
/// `t in {w-1, w-1+stride, ..}`; count = floor((T-w)/stride) + 1.
pub fn make_windows<F: Scalar>(series: &TimeSeries<F>, spec: &WindowSpec) -> Result<Vec<WindowSample<F>>> {
    let (n, t_total) = (series.channels(), series.ticks());
    let w = spec.window;
    if t_total < w {
        return Err(Error::invalid(
            "series",
            format!("{t_total} ticks shorter than window {w}"),
        ));
    }
    let c = spec.sub_length();
    let p = spec.suspect_offset;
    let count = (t_total - w) / spec.stride + 1;
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let t = w - 1 + s * spec.stride;
        let ctx_start = t + 1 - w;
        let sus_start = t + 1 - c;
        let mut ctx = Vec::with_capacity(n * c);
        let mut sus = Vec::with_capacity(n * c);
        for ch in 0..n {
            for i in 0..c {
                ctx.push(series.value(ch, ctx_start + i));
            }
        }
        for ch in 0..n {
            for i in 0..c {
                sus.push(series.value(ch, sus_start + i));
            }
        }
        debug_assert_eq!(ctx_start + c - 1, t - p);
        out.push(WindowSample {
            end_tick: t,
            context: Tensor::from_vec(vec![n, c], ctx)?,
            suspect: Tensor::from_vec(vec![n, c], sus)?,
        });
    }
    Ok(out)
}
