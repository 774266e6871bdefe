use std::path::Path;

use serde_json::{json, Value};

use super::LinkVolumeRecord;
use crate::engine::Coordinates;
use crate::error::{Error, Result};
use crate::network::RoadNetwork;

/// Time-binned density and speed per link. `density[link][bin]`; NaN marks a
/// bin without data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkSeries {
    pub bin_s: f64,
    /// Start time of every bin.
    pub starts: Vec<f64>,
    pub density: Vec<Vec<f64>>,
    pub speed: Vec<Vec<f64>>,
}

/// Bins `link_volumes.csv` rows by their timestamp. Rows are stamped at the
/// end of their interval, so `t` falls in bin `(t - 1) / bin_s`.
pub fn series_from_volumes(net: &RoadNetwork, records: &[LinkVolumeRecord], bin_s: f64) -> Result<LinkSeries> {
    if !(bin_s > 0.0) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_s}")));
    }
    let max_t = records.iter().map(|r| r.t).max().unwrap_or(0);
    let n_bins = if records.is_empty() {
        0
    } else {
        ((max_t - 1).max(0) as f64 / bin_s).floor() as usize + 1
    };
    let n = net.link_count();
    let mut sum_d = vec![vec![0.0; n_bins]; n];
    let mut sum_v = vec![vec![0.0; n_bins]; n];
    let mut count = vec![vec![0u32; n_bins]; n];
    for r in records {
        let l = net
            .link_id(&r.link)
            .ok_or_else(|| Error::Invalid(format!("volume record names unknown link {:?}", r.link)))?;
        let b = ((r.t - 1).max(0) as f64 / bin_s).floor() as usize;
        sum_d[l.index()][b] += r.density;
        sum_v[l.index()][b] += net.link(l).equilibrium_speed(r.density);
        count[l.index()][b] += 1;
    }
    let avg = |sums: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        sums.into_iter()
            .zip(&count)
            .map(|(s, c)| {
                s.into_iter()
                    .zip(c)
                    .map(|(v, &k)| if k > 0 { v / k as f64 } else { f64::NAN })
                    .collect()
            })
            .collect()
    };
    Ok(LinkSeries {
        bin_s,
        starts: (0..n_bins).map(|i| i as f64 * bin_s).collect(),
        density: avg(sum_d),
        speed: avg(sum_v),
    })
}

fn number(x: f64) -> Value {
    if x.is_finite() {
        json!((x * 1e6).round() / 1e6)
    } else {
        Value::Null
    }
}

/// A feature collection with one LineString per link carrying the bins whose
/// start lies in `t_range` (all bins when `None`).
pub fn export_geojson(
    net: &RoadNetwork,
    coordinates: Coordinates,
    series: &LinkSeries,
    t_range: Option<(f64, f64)>,
) -> Result<Value> {
    for n in net.nodes() {
        if !n.has_position() {
            return Err(Error::Invalid(format!("node {:?} has no coordinates", n.label)));
        }
        if coordinates == Coordinates::Lonlat && (n.x.abs() > 180.0 || n.y.abs() > 90.0) {
            return Err(Error::Invalid(format!(
                "node {:?} is not a longitude/latitude pair",
                n.label
            )));
        }
    }
    let selected: Vec<usize> = series
        .starts
        .iter()
        .enumerate()
        .filter(|(_, &s)| t_range.is_none_or(|(a, b)| s >= a && s < b))
        .map(|(i, _)| i)
        .collect();
    let features: Vec<Value> = net
        .link_ids()
        .map(|l| {
            let link = net.link(l);
            let a = net.node(link.from);
            let b = net.node(link.to);
            let pick = |v: &Vec<Vec<f64>>| -> Vec<Value> {
                v.get(l.index())
                    .map(|row| {
                        selected
                            .iter()
                            .map(|&i| number(row.get(i).copied().unwrap_or(f64::NAN)))
                            .collect()
                    })
                    .unwrap_or_default()
            };
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[number(a.x), number(a.y)], [number(b.x), number(b.y)]],
                },
                "properties": {
                    "link_id": link.label,
                    "from_node": a.label,
                    "to_node": b.label,
                    "length_m": number(link.length_m),
                    "lanes": link.lanes,
                    "t_s": selected.iter().map(|&i| number(series.starts[i])).collect::<Vec<_>>(),
                    "density": pick(&series.density),
                    "speed_mps": pick(&series.speed),
                },
            })
        })
        .collect();
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

pub fn write_geojson(path: &Path, doc: &Value) -> Result<()> {
    let mut text = serde_json::to_string(doc).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
