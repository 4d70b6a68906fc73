//! Balanced panel data, group assignments, and long-format CSV interchange.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Outcomes `y[i, t]` and covariates `x[k][i, t]` for `N` units observed over
/// the same `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedPanel {
    y: DMatrix<f64>,
    x: Vec<DMatrix<f64>>,
    unit_ids: Vec<String>,
    period_ids: Vec<String>,
    covariate_names: Vec<String>,
}

/// Orders period labels numerically when both parse as numbers, otherwise
/// lexicographically.
pub fn compare_period_labels(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
            x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b))
        }
        _ => a.cmp(b),
    }
}

impl BalancedPanel {
    pub fn new(
        y: DMatrix<f64>,
        x: Vec<DMatrix<f64>>,
        unit_ids: Vec<String>,
        period_ids: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = y.shape();
        if n == 0 || t == 0 {
            return Err(Error::InvalidParameter(
                "panel needs at least one unit and one period".into(),
            ));
        }
        for xk in &x {
            if xk.shape() != (n, t) {
                return Err(Error::DimensionMismatch {
                    expected: n * t,
                    got: xk.nrows() * xk.ncols(),
                });
            }
        }
        if unit_ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: unit_ids.len(),
            });
        }
        if period_ids.len() != t {
            return Err(Error::DimensionMismatch {
                expected: t,
                got: period_ids.len(),
            });
        }
        if covariate_names.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: covariate_names.len(),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for id in &unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate unit id {id:?}")));
            }
        }
        for w in period_ids.windows(2) {
            if compare_period_labels(&w[0], &w[1]) != Ordering::Less {
                return Err(Error::InvalidParameter(format!(
                    "period ids must be strictly increasing ({:?} then {:?})",
                    w[0], w[1]
                )));
            }
        }
        let check = |m: &DMatrix<f64>, column: &str| -> Result<()> {
            for i in 0..n {
                for s in 0..t {
                    if !m[(i, s)].is_finite() {
                        return Err(Error::NonFiniteValue {
                            column: column.to_string(),
                            unit: unit_ids[i].clone(),
                            period: period_ids[s].clone(),
                        });
                    }
                }
            }
            Ok(())
        };
        check(&y, "y")?;
        for (xk, name) in x.iter().zip(&covariate_names) {
            check(xk, name)?;
        }
        Ok(Self {
            y,
            x,
            unit_ids,
            period_ids,
            covariate_names,
        })
    }

    /// Panel with generated labels: units `"1".."N"`, periods `1..T`,
    /// covariates `x1..xd`.
    pub fn from_arrays(y: DMatrix<f64>, x: Vec<DMatrix<f64>>) -> Result<Self> {
        let (n, t) = y.shape();
        let d = x.len();
        Self::new(
            y,
            x,
            (1..=n).map(|i| i.to_string()).collect(),
            (1..=t).map(|s| s.to_string()).collect(),
            (1..=d).map(|k| format!("x{k}")).collect(),
        )
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.len()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self, k: usize) -> &DMatrix<f64> {
        &self.x[k]
    }

    pub fn covariates(&self) -> &[DMatrix<f64>] {
        &self.x
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn period_ids(&self) -> &[String] {
        &self.period_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// `r[i, t] = y[i, t] - x[i, t]' b`.
    pub fn residuals(&self, b: &[f64]) -> Result<DMatrix<f64>> {
        if b.len() != self.n_covariates() {
            return Err(Error::DimensionMismatch {
                expected: self.n_covariates(),
                got: b.len(),
            });
        }
        let (n, t) = self.y.shape();
        Ok(DMatrix::from_fn(n, t, |i, s| {
            let fit: f64 = self.x.iter().zip(b).map(|(xk, bk)| xk[(i, s)] * bk).sum();
            self.y[(i, s)] - fit
        }))
    }

    /// Sub-panel of the given units, in the given order.
    pub fn select_units(&self, units: &[usize]) -> BalancedPanel {
        let t = self.n_periods();
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(units.len(), t, |r, s| m[(units[r], s)]);
        BalancedPanel {
            y: pick(&self.y),
            x: self.x.iter().map(pick).collect(),
            unit_ids: units.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            period_ids: self.period_ids.clone(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Sub-panel of the periods in `first..first + len`.
    pub fn select_periods(&self, first: usize, len: usize) -> BalancedPanel {
        let n = self.n_units();
        let pick = |m: &DMatrix<f64>| m.columns(first, len).into_owned();
        debug_assert!(first + len <= self.n_periods() && n > 0);
        BalancedPanel {
            y: pick(&self.y),
            x: self.x.iter().map(pick).collect(),
            unit_ids: self.unit_ids.clone(),
            period_ids: self.period_ids[first..first + len].to_vec(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Same panel with the outcome replaced.
    pub fn with_outcome(&self, y: DMatrix<f64>) -> Result<BalancedPanel> {
        BalancedPanel::new(
            y,
            self.x.clone(),
            self.unit_ids.clone(),
            self.period_ids.clone(),
            self.covariate_names.clone(),
        )
    }

    /// Same panel with a covariate column inserted at `position`.
    pub fn with_covariate(
        &self,
        position: usize,
        name: &str,
        values: DMatrix<f64>,
    ) -> Result<BalancedPanel> {
        let mut x = self.x.clone();
        let mut names = self.covariate_names.clone();
        x.insert(position, values);
        names.insert(position, name.to_string());
        BalancedPanel::new(
            self.y.clone(),
            x,
            self.unit_ids.clone(),
            self.period_ids.clone(),
            names,
        )
    }

    /// Same panel without covariate `k`.
    pub fn without_covariate(&self, k: usize) -> BalancedPanel {
        let mut out = self.clone();
        out.x.remove(k);
        out.covariate_names.remove(k);
        out
    }
}

/// Column names in a long-format panel file.
#[derive(Debug, Clone)]
pub struct PanelSchema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    /// `None` takes every remaining column, in file order.
    pub covariates: Option<Vec<String>>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "y".into(),
            covariates: None,
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::SchemaMismatch(format!("missing column {name:?}")))
}

fn parse_value(raw: &str, column: &str, unit: &str, period: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        Error::SchemaMismatch(format!(
            "cannot parse {raw:?} as a number in column {column:?} (unit {unit:?}, period {period:?})"
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue {
            column: column.to_string(),
            unit: unit.to_string(),
            period: period.to_string(),
        });
    }
    Ok(v)
}

/// Reads a long-format panel (`unit,time,y,x1..xd` by default). Rows may come
/// in any order; exact duplicate rows are dropped, conflicting ones rejected.
pub fn read_panel_csv<R: Read>(reader: R, schema: &PanelSchema) -> Result<BalancedPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let unit_col = column_index(&headers, &schema.unit)?;
    let time_col = column_index(&headers, &schema.time)?;
    let y_col = column_index(&headers, &schema.outcome)?;
    let cov_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names
            .iter()
            .map(|n| column_index(&headers, n))
            .collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|c| ![unit_col, time_col, y_col].contains(c))
            .collect(),
    };
    let cov_names: Vec<String> = cov_cols.iter().map(|&c| headers[c].to_string()).collect();

    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut unit_ids: Vec<String> = Vec::new();
    let mut period_set: HashMap<String, ()> = HashMap::new();
    let mut cells: HashMap<(usize, String), (csv::StringRecord, Vec<f64>)> = HashMap::new();

    for record in rdr.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::SchemaMismatch(format!(
                "row has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let unit = record[unit_col].to_string();
        let period = record[time_col].to_string();
        let mut values = Vec::with_capacity(1 + cov_cols.len());
        values.push(parse_value(&record[y_col], &schema.outcome, &unit, &period)?);
        for (&c, name) in cov_cols.iter().zip(&cov_names) {
            values.push(parse_value(&record[c], name, &unit, &period)?);
        }
        let ui = *unit_index.entry(unit.clone()).or_insert_with(|| {
            unit_ids.push(unit.clone());
            unit_ids.len() - 1
        });
        period_set.insert(period.clone(), ());
        match cells.get(&(ui, period.clone())) {
            Some((prev, _)) if prev.as_byte_record() == record.as_byte_record() => {}
            Some(_) => return Err(Error::DuplicateConflict { unit, period }),
            None => {
                cells.insert((ui, period), (record, values));
            }
        }
    }
    if unit_ids.is_empty() {
        return Err(Error::SchemaMismatch("panel file has no rows".into()));
    }
    let mut period_ids: Vec<String> = period_set.into_keys().collect();
    period_ids.sort_by(|a, b| compare_period_labels(a, b));

    let (n, t, d) = (unit_ids.len(), period_ids.len(), cov_cols.len());
    let mut y = DMatrix::zeros(n, t);
    let mut x = vec![DMatrix::zeros(n, t); d];
    for (i, unit) in unit_ids.iter().enumerate() {
        for (s, period) in period_ids.iter().enumerate() {
            let (_, values) =
                cells
                    .get(&(i, period.clone()))
                    .ok_or_else(|| Error::MissingCell {
                        unit: unit.clone(),
                        period: period.clone(),
                    })?;
            y[(i, s)] = values[0];
            for k in 0..d {
                x[k][(i, s)] = values[1 + k];
            }
        }
    }
    BalancedPanel::new(y, x, unit_ids, period_ids, cov_names)
}

pub fn load_panel_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<BalancedPanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_panel_csv(file, schema)
}

/// Writes the panel in long format, unit-major. Numbers use the shortest
/// representation that parses back to the same `f64`.
pub fn write_panel_csv<W: Write>(panel: &BalancedPanel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
    header.extend(panel.covariate_names.iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..panel.n_units() {
        for s in 0..panel.n_periods() {
            let mut row = vec![
                panel.unit_ids[i].clone(),
                panel.period_ids[s].clone(),
                panel.y[(i, s)].to_string(),
            ];
            row.extend(panel.x.iter().map(|xk| xk[(i, s)].to_string()));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Group membership for every unit. Labels are zero-based here and written
/// one-based in files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    labels: Vec<usize>,
    n_groups: usize,
}

impl GroupAssignment {
    pub fn new(labels: Vec<usize>, n_groups: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&g| g >= n_groups) {
            return Err(Error::InvalidParameter(format!(
                "group label {bad} out of range for {n_groups} groups"
            )));
        }
        Ok(Self { labels, n_groups })
    }

    /// Number of groups taken as `max(label) + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let n_groups = labels.iter().max().map_or(0, |m| m + 1);
        Self { labels, n_groups }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_units(&self) -> usize {
        self.labels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups];
        for &g in &self.labels {
            sizes[g] += 1;
        }
        sizes
    }

    /// Relabels groups in order of first appearance, dropping unused labels.
    pub fn canonical(&self) -> GroupAssignment {
        let mut map: Vec<Option<usize>> = vec![None; self.n_groups];
        let mut next = 0;
        let labels = self
            .labels
            .iter()
            .map(|&g| {
                *map[g].get_or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        GroupAssignment {
            labels,
            n_groups: next,
        }
    }
}

/// Reads `unit,group` rows and aligns them with `unit_ids`. Group labels are
/// arbitrary strings, mapped to dense indices by first appearance.
pub fn read_groups_csv<R: Read>(reader: R, unit_ids: &[String]) -> Result<GroupAssignment> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::SchemaMismatch(
            "groups file needs a unit column and a group column".into(),
        ));
    }
    let mut by_unit: HashMap<String, String> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let unit = record[0].to_string();
        let group = record[1].to_string();
        if let Some(prev) = by_unit.insert(unit.clone(), group.clone()) {
            if prev != group {
                return Err(Error::DuplicateConflict {
                    unit,
                    period: "<group>".into(),
                });
            }
        }
    }
    let mut label_index: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(unit_ids.len());
    for unit in unit_ids {
        let g = by_unit
            .get(unit)
            .ok_or_else(|| Error::SchemaMismatch(format!("no group given for unit {unit:?}")))?;
        let idx = match label_index.iter().position(|l| l == g) {
            Some(p) => p,
            None => {
                label_index.push(g.clone());
                label_index.len() - 1
            }
        };
        labels.push(idx);
    }
    Ok(GroupAssignment::from_labels(labels))
}

pub fn write_groups_csv<W: Write>(
    groups: &GroupAssignment,
    unit_ids: &[String],
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["unit", "group"])?;
    for (unit, g) in unit_ids.iter().zip(groups.labels()) {
        wtr.write_record([unit.as_str(), &(g + 1).to_string()])?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Neumaier-compensated sum; result does not depend on platform FMA use.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "unit,time,y,x1\n\
        a,1,1.5,0.25\n\
        a,2,2.5,0.5\n\
        a,3,3.5,0.75\n\
        b,1,-1,1\n\
        b,2,-2,2\n\
        b,3,-3,3\n";

    fn read(s: &str) -> Result<BalancedPanel> {
        read_panel_csv(s.as_bytes(), &PanelSchema::default())
    }

    #[test]
    fn reads_small_panel() {
        let p = read(SMALL).unwrap();
        assert_eq!((p.n_units(), p.n_periods(), p.n_covariates()), (2, 3, 1));
        assert_eq!(p.y()[(0, 2)], 3.5);
        assert_eq!(p.x(0)[(1, 1)], 2.0);
        assert_eq!(p.unit_ids(), ["a", "b"]);
        assert_eq!(p.period_ids(), ["1", "2", "3"]);
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut lines: Vec<&str> = SMALL.lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let p = read(&shuffled).unwrap();
        // units in first-appearance order, periods sorted
        assert_eq!(p.unit_ids(), ["b", "a"]);
        assert_eq!(p.period_ids(), ["1", "2", "3"]);
        assert_eq!(p.y()[(1, 0)], 1.5);
    }

    #[test]
    fn periods_sort_numerically() {
        let text = "unit,time,y\nu,10,1\nu,9,2\nu,100,3\n";
        let p = read(text).unwrap();
        assert_eq!(p.period_ids(), ["9", "10", "100"]);
    }

    #[test]
    fn missing_row_is_an_error() {
        let text: String = SMALL
            .lines()
            .filter(|l| !l.starts_with("b,2"))
            .map(|l| format!("{l}\n"))
            .collect();
        match read(&text) {
            Err(Error::MissingCell { unit, period }) => {
                assert_eq!((unit.as_str(), period.as_str()), ("b", "2"))
            }
            other => panic!("expected MissingCell, got {other:?}"),
        }
    }

    #[test]
    fn nan_is_an_error() {
        let text = SMALL.replace("a,2,2.5", "a,2,NaN");
        assert!(matches!(read(&text), Err(Error::NonFiniteValue { .. })));
    }

    #[test]
    fn duplicates() {
        let exact = format!("{SMALL}a,1,1.5,0.25\n");
        assert_eq!(read(&exact).unwrap(), read(SMALL).unwrap());
        let conflict = format!("{SMALL}a,1,1.6,0.25\n");
        assert!(matches!(read(&conflict), Err(Error::DuplicateConflict { .. })));
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(
            read("id,time,y\n1,1,1\n"),
            Err(Error::SchemaMismatch(_))
        ));
        assert!(matches!(
            read("unit,time,y\n1,1,abc\n"),
            Err(Error::SchemaMismatch(_))
        ));
        let schema = PanelSchema {
            covariates: Some(vec!["x9".into()]),
            ..PanelSchema::default()
        };
        assert!(matches!(
            read_panel_csv(SMALL.as_bytes(), &schema),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn residuals_zero_covariates_and_exact_fit() {
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let p = BalancedPanel::from_arrays(y.clone(), vec![DMatrix::zeros(1, 2)]).unwrap();
        assert_eq!(p.residuals(&[3.7]).unwrap(), y);

        let x1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x2 = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.0]);
        let beta = [2.0, -4.0];
        let y = &x1 * beta[0] + &x2 * beta[1];
        let p = BalancedPanel::from_arrays(y, vec![x1, x2]).unwrap();
        assert_eq!(p.residuals(&beta).unwrap(), DMatrix::zeros(2, 2));
        assert!(matches!(
            p.residuals(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constructor_validates() {
        let y = DMatrix::zeros(2, 2);
        assert!(BalancedPanel::new(
            y.clone(),
            vec![],
            vec!["a".into(), "a".into()],
            vec!["1".into(), "2".into()],
            vec![]
        )
        .is_err());
        assert!(BalancedPanel::new(
            y.clone(),
            vec![],
            vec!["a".into(), "b".into()],
            vec!["2".into(), "1".into()],
            vec![]
        )
        .is_err());
        let mut bad = y;
        bad[(1, 1)] = f64::INFINITY;
        assert!(matches!(
            BalancedPanel::from_arrays(bad, vec![]),
            Err(Error::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn groups_round_trip() {
        let ids: Vec<String> = ["u1", "u2", "u3"].iter().map(|s| s.to_string()).collect();
        let g = GroupAssignment::new(vec![1, 0, 1], 2).unwrap();
        let mut buf = Vec::new();
        write_groups_csv(&g, &ids, &mut buf).unwrap();
        let back = read_groups_csv(buf.as_slice(), &ids).unwrap();
        // labels are re-indexed by first appearance
        assert_eq!(back.labels(), [0, 1, 0]);
        assert_eq!(back, g.canonical());
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }
}
