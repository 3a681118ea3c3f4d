use crate::error::{Error, Result};

/// Trailing-window mean: element `t` is the mean of `series[t..t + window]`.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if window == 0 {
        return Err(Error::InvalidConfig("window must be at least 1".into()));
    }
    if window > series.len() {
        return Err(Error::WindowTooLarge {
            window,
            len: series.len(),
        });
    }
    if window == 1 {
        return Ok(series.to_vec());
    }
    let w = window as f64;
    Ok(series.windows(window).map(|win| win.iter().sum::<f64>() / w).collect())
}
