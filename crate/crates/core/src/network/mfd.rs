use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::table::Table;

/// Underwood speed-accumulation relation `V(n) = vf * exp(-n / n_critical)`.
///
/// `n` is the raw vehicle accumulation of a region; any normalization by
/// region size is absorbed into `n_critical`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnderwoodMfd {
    /// Free-flow speed, m/s.
    pub vf: f64,
    /// Critical accumulation, vehicles.
    pub n_critical: f64,
}

impl UnderwoodMfd {
    pub fn new(vf: f64, n_critical: f64) -> Result<Self> {
        if !(vf.is_finite() && vf > 0.0) {
            return Err(Error::Invalid(format!(
                "MFD free-flow speed must be positive, got {vf}"
            )));
        }
        if !(n_critical.is_finite() && n_critical > 0.0) {
            return Err(Error::Invalid(format!(
                "MFD critical accumulation must be positive, got {n_critical}"
            )));
        }
        Ok(UnderwoodMfd { vf, n_critical })
    }

    /// Speed at accumulation `n`. Positive until `n / n_critical` passes about
    /// 745, where the exponential underflows to zero.
    #[inline]
    pub fn speed(&self, accumulation: f64) -> f64 {
        self.vf * (-accumulation / self.n_critical).exp()
    }
}

/// Fits an Underwood MFD by ordinary least squares on `ln v = ln vf - n / n_critical`.
pub fn calibrate_underwood(samples: &[(f64, f64)]) -> Result<UnderwoodMfd> {
    if samples.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 samples to calibrate, got {}",
            samples.len()
        )));
    }
    for (i, &(n, v)) in samples.iter().enumerate() {
        if !n.is_finite() || !v.is_finite() {
            return Err(Error::Invalid(format!("sample {i} is not finite: ({n}, {v})")));
        }
        if v <= 0.0 {
            return Err(Error::Invalid(format!(
                "sample {i} has non-positive speed {v}; the log model is undefined"
            )));
        }
    }
    let count = samples.len() as f64;
    let mean_n = samples.iter().map(|s| s.0).sum::<f64>() / count;
    let mean_y = samples.iter().map(|s| s.1.ln()).sum::<f64>() / count;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(n, v) in samples {
        let dx = n - mean_n;
        sxx += dx * dx;
        sxy += dx * (v.ln() - mean_y);
    }
    if sxx <= f64::EPSILON * mean_n.abs().max(1.0) {
        return Err(Error::SingularFit("all samples share the same accumulation".into()));
    }
    let slope = sxy / sxx;
    if slope >= 0.0 {
        return Err(Error::SingularFit(format!(
            "speed does not decrease with accumulation (fitted slope {slope})"
        )));
    }
    let intercept = mean_y - slope * mean_n;
    UnderwoodMfd::new(intercept.exp(), -1.0 / slope)
}

/// Reads `mfd.csv` (`region_id,vf_mps,n_critical`) keyed by region label.
pub fn read_mfd_csv(path: &Path) -> Result<HashMap<String, UnderwoodMfd>> {
    let table = Table::read(path)?;
    table.require(&["region_id", "vf_mps", "n_critical"])?;
    let mut out = HashMap::with_capacity(table.len());
    for row in table.rows() {
        let mfd =
            UnderwoodMfd::new(row.f64("vf_mps")?, row.f64("n_critical")?).map_err(|e| row.error(e.to_string()))?;
        if out.insert(row.str("region_id")?.to_string(), mfd).is_some() {
            return Err(row.error("duplicate region_id"));
        }
    }
    Ok(out)
}

/// Reads `(accumulation, speed)` samples grouped by region label from any CSV
/// with `region_id,accumulation_veh,speed_mps` columns, such as
/// `region_accumulation.csv`. Labels come back sorted.
pub fn read_mfd_samples(path: &Path) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let table = Table::read(path)?;
    table.require(&["region_id", "accumulation_veh", "speed_mps"])?;
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in table.rows() {
        let sample = (row.f64("accumulation_veh")?, row.f64("speed_mps")?);
        out.entry(row.str("region_id")?.to_string()).or_default().push(sample);
    }
    Ok(out)
}

pub fn write_mfd_csv<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, UnderwoodMfd)>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("region_id,vf_mps,n_critical\n");
    for (label, mfd) in rows {
        body.push_str(&format!("{label},{:.6},{:.6}\n", mfd.vf, mfd.n_critical));
    }
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
