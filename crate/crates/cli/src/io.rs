//! Long-format CSV ingestion and atomic output.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use opcov::{Curve, FunctionalDataset};
use serde::{Deserialize, Serialize};

/// Min-max map from observed times onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRescale {
    pub min: f64,
    pub max: f64,
}

impl TimeRescale {
    /// Values within rounding of the ends are snapped onto `[0, 1]`.
    pub fn to_unit(&self, t: f64) -> f64 {
        let u = (t - self.min) / (self.max - self.min);
        if (-1e-12..=1.0 + 1e-12).contains(&u) {
            u.clamp(0.0, 1.0)
        } else {
            u
        }
    }

    pub fn to_original(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

#[derive(Debug, Deserialize)]
struct LongRecord {
    curve_id: String,
    t: f64,
    y: f64,
}

/// Raw rows grouped by curve in order of first appearance.
pub struct LongData {
    pub ids: Vec<String>,
    pub times: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl LongData {
    pub fn time_range(&self) -> Option<(f64, f64)> {
        let mut it = self.times.iter().flatten().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t))))
    }

    /// Map times with `rescale` (when given) and build the dataset; times
    /// must then lie in `[0, 1]`.
    pub fn into_dataset(self, rescale: Option<&TimeRescale>) -> Result<FunctionalDataset> {
        let curves = self
            .ids
            .into_iter()
            .zip(self.times)
            .zip(self.values)
            .map(|((id, times), values)| {
                let times = match rescale {
                    Some(r) => times.iter().map(|&t| r.to_unit(t)).collect(),
                    None => times,
                };
                Curve::new(id, times, values).map_err(anyhow::Error::from)
            })
            .collect::<Result<Vec<_>>>()
            .context("time outside [0, 1]; pass --rescale-time to map the observed range onto it")?;
        Ok(FunctionalDataset::new(curves))
    }
}

/// Read `curve_id,t,y` rows. Every malformed row is reported with its line number.
pub fn read_long_csv(path: &Path) -> Result<LongData> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = reader.headers()?.clone();
    for col in ["curve_id", "t", "y"] {
        if !headers.iter().any(|h| h == col) {
            bail!("{}: header must contain curve_id,t,y (found {:?})", path.display(), headers.iter().collect::<Vec<_>>());
        }
    }

    let mut bad = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut data = LongData { ids: Vec::new(), times: Vec::new(), values: Vec::new() };
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                bad.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let rec: LongRecord = match row.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                bad.push(format!("line {line}: {e}"));
                continue;
            }
        };
        if !rec.t.is_finite() || !rec.y.is_finite() {
            bad.push(format!("line {line}: non-finite value"));
            continue;
        }
        let k = *index.entry(rec.curve_id.clone()).or_insert_with(|| {
            data.ids.push(rec.curve_id.clone());
            data.times.push(Vec::new());
            data.values.push(Vec::new());
            data.ids.len() - 1
        });
        data.times[k].push(rec.t);
        data.values[k].push(rec.y);
    }
    if !bad.is_empty() {
        bail!("{}: {} malformed row(s)\n  {}", path.display(), bad.len(), bad.join("\n  "));
    }
    if data.ids.is_empty() {
        bail!("{}: no observations", path.display());
    }
    Ok(data)
}

/// Write through a temporary file in the destination directory, then rename.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for r in rows {
            out.write_record(&r)?;
        }
        out.flush()?;
        Ok(())
    })
}

/// Points for `--points`: one number per line, `#` comments and a
/// non-numeric first line ignored.
pub fn read_points(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let s = line.split('#').next().unwrap_or("").trim().trim_end_matches(',');
        if s.is_empty() {
            continue;
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if i == 0 => {}
            _ => bail!("{}: line {}: not a number: {s:?}", path.display(), i + 1),
        }
    }
    if out.is_empty() {
        bail!("{}: no points", path.display());
    }
    Ok(out)
}

/// Shortest representation that parses back to the same double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
