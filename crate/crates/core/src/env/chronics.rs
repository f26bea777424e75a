use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::EnvError;
use crate::grid::GridSpec;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedOutage {
    pub line: usize,
    pub start: usize,
    pub duration: usize,
}

/// Time series replayed by an episode.
///
/// Row `t` holds the values in force at step `t`; the initial state uses row
/// 0, so an episode of `horizon` steps carries `horizon + 1` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chronics {
    pub name: String,
    pub dt_minutes: f64,
    /// `load_p[t][load]`, MW.
    pub load_p: Vec<Vec<f64>>,
    /// `gen_p_max[t][gen]`: available output for renewables, scheduled
    /// output for dispatchable units, MW.
    pub gen_p_max: Vec<Vec<f64>>,
    /// Relative standard deviation of forecast errors.
    pub forecast_noise: f64,
    pub planned_outages: Vec<PlannedOutage>,
}

impl Chronics {
    pub fn horizon(&self) -> usize {
        self.load_p.len().saturating_sub(1)
    }

    pub fn validate(&self, spec: &GridSpec) -> Result<(), EnvError> {
        let err = |m: String| Err(EnvError::Chronics(format!("{}: {m}", self.name)));
        if self.load_p.len() < 2 {
            return err("need at least two rows".into());
        }
        if self.gen_p_max.len() != self.load_p.len() {
            return err(format!("{} load rows but {} generator rows", self.load_p.len(), self.gen_p_max.len()));
        }
        if !(self.dt_minutes > 0.0) {
            return err("dt_minutes must be positive".into());
        }
        if !(self.forecast_noise >= 0.0 && self.forecast_noise.is_finite()) {
            return err("forecast noise must be >= 0".into());
        }
        for (t, (lr, gr)) in self.load_p.iter().zip(&self.gen_p_max).enumerate() {
            if lr.len() != spec.loads.len() {
                return err(format!("row {t}: {} load values for {} loads", lr.len(), spec.loads.len()));
            }
            if gr.len() != spec.generators.len() {
                return err(format!("row {t}: {} generator values for {} generators", gr.len(), spec.generators.len()));
            }
            if lr.iter().chain(gr).any(|v| !(v.is_finite() && *v >= 0.0)) {
                return err(format!("row {t}: values must be finite and non-negative"));
            }
        }
        for o in &self.planned_outages {
            if o.line >= spec.lines.len() {
                return err(format!("outage references unknown line {}", o.line));
            }
        }
        Ok(())
    }

    /// Read a chronics CSV with columns `load_<id>_p` and `gen_<id>_pmax`.
    pub fn from_csv(spec: &GridSpec, path: impl AsRef<Path>, dt_minutes: f64, forecast_noise: f64) -> Result<Self, EnvError> {
        let path = path.as_ref();
        let io = |e: &dyn std::fmt::Display| EnvError::Chronics(format!("{}: {e}", path.display()));
        let mut rdr = csv::Reader::from_path(path).map_err(|e| io(&e))?;
        let headers = rdr.headers().map_err(|e| io(&e))?.clone();
        let mut load_col = vec![None; spec.loads.len()];
        let mut gen_col = vec![None; spec.generators.len()];
        for (i, h) in headers.iter().enumerate() {
            let h = h.trim();
            if let Some(id) = h.strip_prefix("load_").and_then(|r| r.strip_suffix("_p")) {
                let id: usize = id.parse().map_err(|_| io(&format!("bad column {h}")))?;
                if id >= load_col.len() {
                    return Err(io(&format!("column {h} references unknown load")));
                }
                load_col[id] = Some(i);
            } else if let Some(id) = h.strip_prefix("gen_").and_then(|r| r.strip_suffix("_pmax")) {
                let id: usize = id.parse().map_err(|_| io(&format!("bad column {h}")))?;
                if id >= gen_col.len() {
                    return Err(io(&format!("column {h} references unknown generator")));
                }
                gen_col[id] = Some(i);
            }
        }
        let load_col: Vec<usize> =
            load_col.into_iter().enumerate().map(|(i, c)| c.ok_or_else(|| io(&format!("missing column load_{i}_p")))).collect::<Result<_, _>>()?;
        let gen_col: Vec<usize> =
            gen_col.into_iter().enumerate().map(|(i, c)| c.ok_or_else(|| io(&format!("missing column gen_{i}_pmax")))).collect::<Result<_, _>>()?;
        let mut load_p = Vec::new();
        let mut gen_p_max = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| io(&e))?;
            let num = |c: usize| -> Result<f64, EnvError> { rec.get(c).ok_or_else(|| io(&"short row"))?.trim().parse::<f64>().map_err(|e| io(&e)) };
            load_p.push(load_col.iter().map(|&c| num(c)).collect::<Result<Vec<_>, _>>()?);
            gen_p_max.push(gen_col.iter().map(|&c| num(c)).collect::<Result<Vec<_>, _>>()?);
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let outage_path = outage_path_for(path);
        let planned_outages = if outage_path.exists() { read_outages(&outage_path)? } else { Vec::new() };
        let ch = Chronics { name, dt_minutes, load_p, gen_p_max, forecast_noise, planned_outages };
        ch.validate(spec)?;
        Ok(ch)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EnvError> {
        let path = path.as_ref();
        let io = |e: &dyn std::fmt::Display| EnvError::Chronics(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
        let n_load = self.load_p.first().map_or(0, Vec::len);
        let n_gen = self.gen_p_max.first().map_or(0, Vec::len);
        let header: Vec<String> = (0..n_load).map(|i| format!("load_{i}_p")).chain((0..n_gen).map(|i| format!("gen_{i}_pmax"))).collect();
        w.write_record(&header).map_err(|e| io(&e))?;
        for (lr, gr) in self.load_p.iter().zip(&self.gen_p_max) {
            let row: Vec<String> = lr.iter().chain(gr).map(|v| format!("{v}")).collect();
            w.write_record(&row).map_err(|e| io(&e))?;
        }
        w.flush().map_err(|e| io(&e))?;
        if !self.planned_outages.is_empty() {
            let op = outage_path_for(path);
            let mut w = csv::Writer::from_path(&op).map_err(|e| io(&e))?;
            w.write_record(["line", "start", "duration"]).map_err(|e| io(&e))?;
            for o in &self.planned_outages {
                w.write_record(&[o.line.to_string(), o.start.to_string(), o.duration.to_string()]).map_err(|e| io(&e))?;
            }
            w.flush().map_err(|e| io(&e))?;
        }
        Ok(())
    }
}

fn outage_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_outages.csv"))
}

fn read_outages(path: &Path) -> Result<Vec<PlannedOutage>, EnvError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| EnvError::Chronics(format!("{}: {e}", path.display())))?;
    rdr.deserialize().map(|r| r.map_err(|e| EnvError::Chronics(format!("{}: {e}", path.display())))).collect()
}

/// Load every scenario CSV in a directory, sorted by file name. Files ending
/// in `_outages.csv` are picked up as outage tables of their scenario.
pub fn load_chronics_dir(spec: &GridSpec, dir: impl AsRef<Path>, dt_minutes: f64, forecast_noise: f64) -> Result<Vec<Chronics>, EnvError> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| EnvError::Chronics(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && !p.file_name().is_some_and(|n| n.to_string_lossy().ends_with("_outages.csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(EnvError::Chronics(format!("no scenario csv files in {}", dir.display())));
    }
    files.iter().map(|f| Chronics::from_csv(spec, f, dt_minutes, forecast_noise)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::testgrids::ring5;

    fn flat(spec: &GridSpec, rows: usize) -> Chronics {
        Chronics {
            name: "flat".into(),
            dt_minutes: 5.0,
            load_p: vec![vec![10.0; spec.loads.len()]; rows],
            gen_p_max: vec![vec![20.0; spec.generators.len()]; rows],
            forecast_noise: 0.0,
            planned_outages: vec![PlannedOutage { line: 2, start: 3, duration: 4 }],
        }
    }

    #[test]
    fn csv_round_trip_with_outages() {
        let g = ring5();
        let ch = flat(&g, 6);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s000.csv");
        ch.write_csv(&p).unwrap();
        let back = Chronics::from_csv(&g, &p, 5.0, 0.0).unwrap();
        assert_eq!(back.load_p, ch.load_p);
        assert_eq!(back.planned_outages, ch.planned_outages);
        let all = load_chronics_dir(&g, dir.path(), 5.0, 0.0).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].horizon(), 5);
    }

    #[test]
    fn wrong_load_count_is_rejected() {
        let g = ring5();
        let mut ch = flat(&g, 4);
        ch.load_p[2].pop();
        assert!(matches!(ch.validate(&g), Err(EnvError::Chronics(_))));
    }

    #[test]
    fn missing_column_is_rejected() {
        let g = ring5();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "load_0_p,load_1_p\n1,2\n3,4\n").unwrap();
        assert!(Chronics::from_csv(&g, &p, 5.0, 0.0).is_err());
    }
}
