//! Reading external streams and EWMA standardisation.

use std::path::Path;

use nalgebra::DVector;

use crate::datagen::StreamRecord;
use crate::error::{BoneError, Result};

const VAR_FLOOR: f64 = 1e-12;

/// Online standardisation by exponentially weighted mean and variance with decay
/// `2^(-1/half_life)`. Weights are normalised, so a very long half-life approaches
/// an expanding-window standardisation. Output `t` uses only values before `t`:
/// `(y_t - m_{t-1}) / sqrt(v_{t-1})`. The first output is 0; the variance used at the
/// second step is the first squared deviation, floored at `1e-12`.
pub fn ewma_normalize(series: &[f64], half_life: f64) -> Result<Vec<f64>> {
    if !(half_life > 0.0) {
        return Err(BoneError::config(format!("half_life must be positive, got {half_life}")));
    }
    let decay = (-(half_life.recip()) * std::f64::consts::LN_2).exp();
    let mut out = Vec::with_capacity(series.len());
    // weighted mean and sum of squared deviations, updated in place
    let (mut sw, mut m, mut ss) = (0.0, 0.0, 0.0);
    for (t, &y) in series.iter().enumerate() {
        if t == 0 {
            out.push(0.0);
        } else {
            let v = if t == 1 { (y - m) * (y - m) } else { ss / sw };
            out.push((y - m) / v.max(VAR_FLOOR).sqrt());
        }
        sw = decay * sw + 1.0;
        let m_next = m + (y - m) / sw;
        ss = decay * ss + (y - m) * (y - m_next);
        m = m_next;
    }
    Ok(out)
}

/// Loads a numeric CSV with a header row: leading columns are features, the last
/// column is the target. With `half_life`, every column is EWMA-standardised.
pub fn read_csv_stream(path: &Path, half_life: Option<f64>) -> Result<Vec<StreamRecord>> {
    let csv_err = |source| BoneError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let width = reader.headers().map_err(csv_err)?.len();
    if width < 2 {
        return Err(BoneError::config(format!(
            "{}: need at least one feature column and a target column",
            path.display()
        )));
    }
    let mut columns = vec![Vec::new(); width];
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        for (j, field) in row.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                BoneError::config(format!("{}: row {}: `{field}` is not a number", path.display(), line + 2))
            })?;
            columns[j].push(v);
        }
    }
    if let Some(h) = half_life {
        for col in columns.iter_mut() {
            *col = ewma_normalize(col, h)?;
        }
    }
    let n = columns[0].len();
    Ok((0..n)
        .map(|t| StreamRecord {
            t,
            x: DVector::from_fn(width - 1, |j, _| columns[j][t]),
            y: DVector::from_element(1, columns[width - 1][t]),
            true_theta: None,
            is_changepoint: None,
            arm_probs: None,
        })
        .collect())
}
