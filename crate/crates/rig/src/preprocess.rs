//! Turning raw 1 Hz recordings into model windows.
//!
//! Temperature is smoothed with a trailing moving average and then
//! converted to a rate of change over a fixed span. Everything else is
//! trimmed so that all channels stay aligned with the rate series.

use htgnn_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RigError};
use crate::simulate::CaseRecording;
use htgnn_core::WindowSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Trailing moving-average length applied to temperature, samples.
    pub smoothing_window: usize,
    /// Span of the temperature rate, samples.
    pub rate_span: usize,
    /// Window length fed to the models, samples.
    pub window: usize,
    /// Step between consecutive windows, samples.
    pub stride: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            smoothing_window: 60,
            rate_span: 300,
            window: 30,
            stride: 1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_window == 0 || self.rate_span == 0 || self.window == 0 || self.stride == 0 {
            return Err(RigError::Format(format!("preprocessing lengths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Trailing mean over up to `window` samples; the first few outputs average
/// over what is available. A zero window is treated as one.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..x.len())
        .map(|i| {
            let part = &x[(i + 1).saturating_sub(window)..=i];
            part.iter().sum::<f64>() / part.len() as f64
        })
        .collect()
}

/// `r[t] = (x[t] - x[t - span]) / span` for every `t >= span`. Output has
/// `len - span` entries.
pub fn temperature_rate(x: &[f64], span: usize) -> Result<Vec<f64>> {
    if span == 0 || x.len() <= span {
        return Err(RigError::TooShort { len: x.len(), span });
    }
    Ok((span..x.len()).map(|t| (x[t] - x[t - span]) / span as f64).collect())
}

/// Root mean square over consecutive groups of `group` samples. A trailing
/// partial group is dropped.
pub fn rms_resample(hf: &[f64], group: usize) -> Vec<f64> {
    if group == 0 {
        return Vec::new();
    }
    hf.chunks_exact(group)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / group as f64).sqrt())
        .collect()
}

/// Aligned model-ready channels of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedCase {
    /// Temperature rate per sensor, deg C/s.
    pub temperature_rate: Vec<Vec<f64>>,
    pub vibration: Vec<Vec<f64>>,
    pub speed: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

impl ProcessedCase {
    pub fn len(&self) -> usize {
        self.speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }
}

/// Smooths, differentiates and aligns a recording. Output length is
/// `duration - rate_span`.
pub fn preprocess_case(rec: &CaseRecording, cfg: &PreprocessConfig) -> Result<ProcessedCase> {
    cfg.validate()?;
    let span = cfg.rate_span;
    let temperature_rate = rec
        .temperature
        .iter()
        .map(|row| temperature_rate(&moving_average(row, cfg.smoothing_window), span))
        .collect::<Result<Vec<_>>>()?;
    if rec.speed.len() <= span {
        return Err(RigError::TooShort { len: rec.speed.len(), span });
    }
    Ok(ProcessedCase {
        temperature_rate,
        vibration: rec.vibration.iter().map(|r| r[span..].to_vec()).collect(),
        speed: rec.speed[span..].to_vec(),
        fx: rec.fx[span..].to_vec(),
        fy: rec.fy[span..].to_vec(),
    })
}

/// Number of windows `window_slice` produces.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if window == 0 || stride == 0 || len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

fn block(rows: &[Vec<f64>], start: usize, window: usize) -> Result<Tensor> {
    let data: Vec<f64> = rows.iter().flat_map(|r| r[start..start + window].iter().copied()).collect();
    Ok(Tensor::new(vec![rows.len(), window], data)?)
}

/// Cuts aligned channels into windows. The target of a window is the load at
/// its last sample. Too-short cases yield no windows and a warning.
pub fn window_slice(
    case: &ProcessedCase,
    window: usize,
    stride: usize,
    case_id: usize,
    seen: bool,
) -> Result<Vec<WindowSample>> {
    let len = case.len();
    let aligned = case.temperature_rate.iter().chain(&case.vibration).all(|r| r.len() == len)
        && case.fx.len() == len
        && case.fy.len() == len;
    if !aligned {
        return Err(RigError::Format(format!("case {case_id}: channels are not aligned")));
    }
    let count = window_count(len, window, stride);
    if count == 0 {
        log::warn!("case {case_id}: {len} samples is shorter than the {window}-sample window");
        return Ok(Vec::new());
    }
    (0..count)
        .map(|k| {
            let start = k * stride;
            let end = start + window - 1;
            Ok(WindowSample {
                x_t: block(&case.temperature_rate, start, window)?,
                x_v: block(&case.vibration, start, window)?,
                w: Tensor::vector(case.speed[start..start + window].to_vec()),
                y: [case.fx[end], case.fy[end]],
                case_id,
                seen,
            })
        })
        .collect()
}
