//! Panel data model, CSV ingestion, and dependence diagnostics.
//!
//! A [`Panel`] holds an N x T value matrix with an observation mask, unit
//! labels, and time labels. Long CSV (`unit,time,value`, missing = absent row)
//! is the canonical storage format; wide CSV is accepted on ingest only.
//! Time labels are ordered numerically when every label parses as a number,
//! lexicographically otherwise, and writers emit that canonical order so that
//! load -> save -> load round-trips values and mask bit-exactly.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Input layout for [`load_panel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Columns `unit,time,value`; one row per observed cell.
    Long,
    /// One row per unit; header names the time grid.
    Wide,
}

/// Immutable panel of N units observed on a common time grid of length T.
#[derive(Clone, Debug)]
pub struct Panel {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
    balanced: bool,
}

/// Equality compares labels, the observation mask, and observed cells only;
/// fill values behind the mask never participate.
impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.unit_ids == other.unit_ids
            && self.time_ids == other.time_ids
            && self.mask == other.mask
            && self
                .mask
                .iter()
                .zip(self.values.iter().zip(other.values.iter()))
                .all(|(&seen, (a, b))| !seen || a == b)
    }
}

impl Panel {
    /// Builds a panel from parts, validating shape, label uniqueness,
    /// finiteness of observed cells, and the T_i >= 2 requirement.
    pub fn from_parts(
        mut values: DMatrix<f64>,
        mask: DMatrix<bool>,
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = values.shape();
        if mask.shape() != (n, t) {
            return Err(Error::input("values and mask dimensions differ"));
        }
        if unit_ids.len() != n || time_ids.len() != t {
            return Err(Error::input("label counts do not match matrix dimensions"));
        }
        if n == 0 || t == 0 {
            return Err(Error::input("panel must have at least one unit and one period"));
        }
        check_unique(&unit_ids, "unit")?;
        check_unique(&time_ids, "time")?;
        let mut balanced = true;
        for i in 0..n {
            let mut t_i = 0usize;
            for t_idx in 0..t {
                if mask[(i, t_idx)] {
                    t_i += 1;
                    if !values[(i, t_idx)].is_finite() {
                        return Err(Error::input(format!(
                            "non-finite value for unit '{}' at time '{}'",
                            unit_ids[i], time_ids[t_idx]
                        )));
                    }
                } else {
                    balanced = false;
                    // Canonical filler keeps unobserved cells inert.
                    values[(i, t_idx)] = f64::NAN;
                }
            }
            if t_i < 2 {
                return Err(Error::input(format!(
                    "unit '{}' has {} observation(s); at least 2 required",
                    unit_ids[i], t_i
                )));
            }
        }
        Ok(Panel {
            values,
            mask,
            unit_ids,
            time_ids,
            balanced,
        })
    }

    /// Balanced panel from a row-major slice with default labels
    /// (`u1..uN`, `1..T`).
    pub fn from_rows(n: usize, t: usize, row_major: &[f64]) -> Result<Self> {
        if row_major.len() != n * t {
            return Err(Error::input(format!(
                "expected {} values for a {n} x {t} panel, got {}",
                n * t,
                row_major.len()
            )));
        }
        Panel::from_matrix(DMatrix::from_row_slice(n, t, row_major))
    }

    /// Balanced panel from a matrix with default labels.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let (n, t) = values.shape();
        let mask = DMatrix::from_element(n, t, true);
        let unit_ids = (1..=n).map(|i| format!("u{i}")).collect();
        let time_ids = (1..=t).map(|t| t.to_string()).collect();
        Panel::from_parts(values, mask, unit_ids, time_ids)
    }

    pub fn n_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.values.ncols()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    /// Observed value at (unit, time), if any.
    pub fn value(&self, unit: usize, time: usize) -> Option<f64> {
        if self.mask[(unit, time)] {
            Some(self.values[(unit, time)])
        } else {
            None
        }
    }

    /// Number of observed periods for a unit.
    pub fn t_i(&self, unit: usize) -> usize {
        (0..self.n_times()).filter(|&t| self.mask[(unit, t)]).count()
    }

    /// Indices of observed periods for a unit, in time order.
    pub fn observed_times(&self, unit: usize) -> Vec<usize> {
        (0..self.n_times()).filter(|&t| self.mask[(unit, t)]).collect()
    }

    /// Mean of a unit's observed values.
    pub fn unit_mean(&self, unit: usize) -> f64 {
        let mut acc = 0.0;
        let mut k = 0usize;
        for t in 0..self.n_times() {
            if self.mask[(unit, t)] {
                acc += self.values[(unit, t)];
                k += 1;
            }
        }
        acc / k as f64
    }

    pub fn unit_means(&self) -> Vec<f64> {
        (0..self.n_units()).map(|i| self.unit_mean(i)).collect()
    }

    /// Mean of the unit means (equals the pooled mean when balanced).
    pub fn grand_mean(&self) -> f64 {
        let m = self.unit_means();
        m.iter().sum::<f64>() / m.len() as f64
    }

    /// Subtracts the cross-sectional mean of the observed units at each time.
    pub fn demean_cross_section(&self) -> Panel {
        let mut values = self.values.clone();
        for t in 0..self.n_times() {
            let mut acc = 0.0;
            let mut k = 0usize;
            for i in 0..self.n_units() {
                if self.mask[(i, t)] {
                    acc += self.values[(i, t)];
                    k += 1;
                }
            }
            if k > 0 {
                let mean = acc / k as f64;
                for i in 0..self.n_units() {
                    if self.mask[(i, t)] {
                        values[(i, t)] -= mean;
                    }
                }
            }
        }
        Panel {
            values,
            mask: self.mask.clone(),
            unit_ids: self.unit_ids.clone(),
            time_ids: self.time_ids.clone(),
            balanced: self.balanced,
        }
    }

    /// Sub-panel restricted to the given unit indices (e.g. one estimated
    /// group, for re-testing homogeneity within it).
    pub fn select_units(&self, units: &[usize]) -> Result<Panel> {
        if units.is_empty() {
            return Err(Error::input("cannot select an empty set of units"));
        }
        for &i in units {
            if i >= self.n_units() {
                return Err(Error::input(format!("unit index {i} out of range")));
            }
        }
        let n = units.len();
        let t = self.n_times();
        let values = DMatrix::from_fn(n, t, |r, c| self.values[(units[r], c)]);
        let mask = DMatrix::from_fn(n, t, |r, c| self.mask[(units[r], c)]);
        let unit_ids = units.iter().map(|&i| self.unit_ids[i].clone()).collect();
        Panel::from_parts(values, mask, unit_ids, self.time_ids.clone())
    }

    /// Reads the canonical long layout (`unit,time,value`).
    pub fn read_long_csv<R: Read>(reader: R) -> Result<Panel> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rd
            .headers()
            .map_err(|e| Error::parse("header", e.to_string()))?
            .clone();
        let expected = ["unit", "time", "value"];
        let got: Vec<String> = headers.iter().map(|h| h.trim().to_lowercase()).collect();
        if got != expected {
            return Err(Error::parse(
                "header",
                format!("expected columns unit,time,value; got {}", headers.as_slice()),
            ));
        }

        struct Cell {
            unit: String,
            time: String,
            value: f64,
            line: u64,
        }
        let mut cells: Vec<Cell> = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| {
                let line = e
                    .position()
                    .map(|p| p.line().to_string())
                    .unwrap_or_else(|| "?".into());
                Error::parse(format!("line {line}"), e.to_string())
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 3 {
                return Err(Error::parse(
                    format!("line {line}"),
                    format!("expected 3 fields, got {}", rec.len()),
                ));
            }
            let value: f64 = rec[2].trim().parse().map_err(|_| {
                Error::parse(
                    format!("line {line}"),
                    format!("non-numeric value '{}'", &rec[2]),
                )
            })?;
            cells.push(Cell {
                unit: rec[0].trim().to_string(),
                time: rec[1].trim().to_string(),
                value,
                line,
            });
        }
        if cells.is_empty() {
            return Err(Error::parse("input", "no data rows"));
        }

        let mut unit_ids: Vec<String> = Vec::new();
        let mut unit_index: HashMap<String, usize> = HashMap::new();
        for c in &cells {
            if !unit_index.contains_key(&c.unit) {
                unit_index.insert(c.unit.clone(), unit_ids.len());
                unit_ids.push(c.unit.clone());
            }
        }
        let mut time_ids: Vec<String> = cells.iter().map(|c| c.time.clone()).collect();
        time_ids.sort();
        time_ids.dedup();
        sort_time_labels(&mut time_ids);
        let time_index: HashMap<String, usize> = time_ids
            .iter()
            .enumerate()
            .map(|(k, v)| (v.clone(), k))
            .collect();

        let n = unit_ids.len();
        let t = time_ids.len();
        let mut values = DMatrix::from_element(n, t, f64::NAN);
        let mut mask = DMatrix::from_element(n, t, false);
        for c in &cells {
            let i = unit_index[&c.unit];
            let j = time_index[&c.time];
            if mask[(i, j)] {
                return Err(Error::parse(
                    format!("line {}", c.line),
                    format!("duplicate cell (unit '{}', time '{}')", c.unit, c.time),
                ));
            }
            values[(i, j)] = c.value;
            mask[(i, j)] = true;
        }
        Panel::from_parts(values, mask, unit_ids, time_ids)
    }

    /// Reads the wide layout: header `unit,<t1>,<t2>,...`; empty cell = missing.
    pub fn read_wide_csv<R: Read>(reader: R) -> Result<Panel> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let headers = rd
            .headers()
            .map_err(|e| Error::parse("header", e.to_string()))?
            .clone();
        if headers.len() < 2 || headers[0].trim().to_lowercase() != "unit" {
            return Err(Error::parse(
                "header",
                "wide layout requires a leading 'unit' column followed by time labels",
            ));
        }
        let time_ids: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
        check_unique(&time_ids, "time")?;

        let mut unit_ids: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| {
                let line = e
                    .position()
                    .map(|p| p.line().to_string())
                    .unwrap_or_else(|| "?".into());
                Error::parse(format!("line {line}"), e.to_string())
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            unit_ids.push(rec[0].trim().to_string());
            let mut row = Vec::with_capacity(time_ids.len());
            for (k, field) in rec.iter().enumerate().skip(1) {
                let field = field.trim();
                if field.is_empty() {
                    row.push(None);
                } else {
                    let v: f64 = field.parse().map_err(|_| {
                        Error::parse(
                            format!("line {line}, time '{}'", time_ids[k - 1]),
                            format!("non-numeric value '{field}'"),
                        )
                    })?;
                    row.push(Some(v));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::parse("input", "no data rows"));
        }
        let n = rows.len();
        let t = time_ids.len();
        let mut values = DMatrix::from_element(n, t, f64::NAN);
        let mut mask = DMatrix::from_element(n, t, false);
        for (i, row) in rows.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    values[(i, j)] = *v;
                    mask[(i, j)] = true;
                }
            }
        }
        Panel::from_parts(values, mask, unit_ids, time_ids)
    }

    /// Writes the canonical long layout, observed cells only, unit-major.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(writer);
        wr.write_record(["unit", "time", "value"])
            .map_err(|e| Error::parse("output", e.to_string()))?;
        for i in 0..self.n_units() {
            for t in 0..self.n_times() {
                if self.mask[(i, t)] {
                    // `{}` prints the shortest representation that reparses
                    // to the same f64, so round-trips are bit-exact.
                    wr.write_record([
                        self.unit_ids[i].as_str(),
                        self.time_ids[t].as_str(),
                        &format!("{}", self.values[(i, t)]),
                    ])
                    .map_err(|e| Error::parse("output", e.to_string()))?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Dependence diagnostics over a grid of thresholds.
    ///
    /// Correlations are Pearson, computed pairwise-complete (at least three
    /// common observations per pair). `p(tau)` is the fraction of
    /// lower-triangle pairs with |r| strictly above tau; `rho_bar` is the
    /// row-average of the full absolute correlation matrix including the
    /// diagonal. Values are used raw, without any detrending.
    pub fn dependence_summary(&self, tau_grid: &[f64]) -> Result<DependenceSummary> {
        let n = self.n_units();
        if n < 2 {
            return Err(Error::input("dependence summary requires at least 2 units"));
        }
        if self.n_times() < 3 {
            return Err(Error::input("dependence summary requires T >= 3"));
        }
        let mut abs_r = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                abs_r.push(self.pairwise_abs_correlation(i, j)?);
            }
        }
        let p_curve = tau_grid
            .iter()
            .map(|&tau| {
                let frac = abs_r.iter().filter(|&&r| r > tau).count() as f64
                    / abs_r.len() as f64;
                (tau, frac)
            })
            .collect();
        let rho_bar = (n as f64 + 2.0 * abs_r.iter().sum::<f64>()) / n as f64;
        Ok(DependenceSummary { p_curve, rho_bar })
    }

    fn pairwise_abs_correlation(&self, i: usize, j: usize) -> Result<f64> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for t in 0..self.n_times() {
            if self.mask[(i, t)] && self.mask[(j, t)] {
                xs.push(self.values[(i, t)]);
                ys.push(self.values[(j, t)]);
            }
        }
        if xs.len() < 3 {
            return Err(Error::input(format!(
                "units '{}' and '{}' share only {} observation(s); at least 3 required",
                self.unit_ids[i],
                self.unit_ids[j],
                xs.len()
            )));
        }
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        let mut sxy = 0.0;
        for k in 0..xs.len() {
            let dx = xs[k] - mx;
            let dy = ys[k] - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        if sxx == 0.0 {
            return Err(Error::input(format!(
                "unit '{}' is constant on the common sample with '{}'",
                self.unit_ids[i], self.unit_ids[j]
            )));
        }
        if syy == 0.0 {
            return Err(Error::input(format!(
                "unit '{}' is constant on the common sample with '{}'",
                self.unit_ids[j], self.unit_ids[i]
            )));
        }
        Ok((sxy / (sxx * syy).sqrt()).abs().min(1.0))
    }
}

/// Dependence diagnostics: the p(tau) exceedance curve and rho_bar.
#[derive(Clone, Debug, serde::Serialize)]
pub struct DependenceSummary {
    /// (tau, fraction of pairs with |r| > tau), in grid order.
    pub p_curve: Vec<(f64, f64)>,
    /// Average absolute correlation mass per unit; >= 1 by the diagonal.
    pub rho_bar: f64,
}

/// Loads a panel from a file in the given layout.
pub fn load_panel(path: &Path, layout: Layout) -> Result<Panel> {
    let file = std::fs::File::open(path)?;
    match layout {
        Layout::Long => Panel::read_long_csv(file),
        Layout::Wide => Panel::read_wide_csv(file),
    }
}

/// Saves a panel to a file in the canonical long layout.
pub fn save_panel(p: &Panel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    p.write_long_csv(file)
}

fn check_unique(labels: &[String], what: &str) -> Result<()> {
    let mut seen = HashMap::new();
    for l in labels {
        if l.is_empty() {
            return Err(Error::input(format!("empty {what} label")));
        }
        if seen.insert(l, ()).is_some() {
            return Err(Error::input(format!("duplicate {what} label '{l}'")));
        }
    }
    Ok(())
}

/// Numeric order when every label parses as a number (ties broken by the
/// label string), lexicographic otherwise.
fn sort_time_labels(labels: &mut [String]) {
    let parsed: Option<Vec<f64>> = labels.iter().map(|s| s.parse::<f64>().ok()).collect();
    match parsed {
        Some(nums) if nums.iter().all(|v| v.is_finite()) => {
            let mut keyed: Vec<(f64, String)> =
                nums.into_iter().zip(labels.iter().cloned()).collect();
            keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
            for (slot, (_, s)) in labels.iter_mut().zip(keyed) {
                *slot = s;
            }
        }
        _ => labels.sort(),
    }
}
