//! Tabular output of time series and sweeps as CSV or JSON.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::{MoleculeSweep, SweepResult};
use crate::exact::ObservableSeries;
use crate::gdtwa::WignerMomentSeries;
use crate::observables::PhysicalSeries;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Real(f64),
}

impl Cell {
    /// Integers verbatim, reals with 12 significant digits.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) if v.is_finite() => format!("{v:.11e}"),
            Cell::Real(v) if v.is_nan() => "nan".into(),
            Cell::Real(v) if *v > 0.0 => "inf".into(),
            Cell::Real(_) => "-inf".into(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<Cell>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// JSON object with one array per column. Non-finite reals become null.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, name) in self.columns.iter().enumerate() {
            let values = self
                .rows
                .iter()
                .map(|r| match r[k] {
                    Cell::Int(v) => serde_json::Value::from(v),
                    Cell::Real(v) => serde_json::Number::from_f64(v)
                        .map(serde_json::Value::Number)
                        .unwrap_or(serde_json::Value::Null),
                })
                .collect();
            map.insert(name.clone(), serde_json::Value::Array(values));
        }
        serde_json::Value::Object(map)
    }
}

fn population_columns(n_molecules: usize) -> Vec<String> {
    (0..n_molecules)
        .flat_map(|m| (1..=3).map(move |i| format!("P{i}_m{m}")))
        .collect()
}

/// Columns `t, photon_mean, photon_sq_mean`, then `P1..P3` per molecule.
pub fn exact_table(s: &ObservableSeries) -> Table {
    let mut cols: Vec<String> = ["t", "photon_mean", "photon_sq_mean"]
        .map(String::from)
        .to_vec();
    cols.extend(population_columns(s.populations.len()));
    let mut t = Table::new(cols);
    for k in 0..s.len() {
        let mut row: Vec<Cell> = vec![
            s.times[k].into(),
            s.photon_mean[k].into(),
            s.photon_sq_mean[k].into(),
        ];
        for p in &s.populations {
            row.extend(p.iter().map(|v| Cell::from(v[k])));
        }
        t.push(row);
    }
    t
}

/// Raw Wigner moments followed by the derived physical columns.
pub fn gdtwa_table(w: &WignerMomentSeries, s: &PhysicalSeries) -> Table {
    let mut cols: Vec<String> = [
        "t",
        "re_alpha",
        "im_alpha",
        "m_abs2",
        "m_abs4",
        "photon_mean",
        "photon_var",
        "photon_stderr",
    ]
    .map(String::from)
    .to_vec();
    cols.extend(population_columns(s.populations.len()));
    let mut t = Table::new(cols);
    for k in 0..w.len() {
        let mut row: Vec<Cell> = vec![
            w.times[k].into(),
            w.m_alpha[k].re.into(),
            w.m_alpha[k].im.into(),
            w.m_abs2[k].into(),
            w.m_abs4[k].into(),
            s.photon_mean[k].into(),
            s.photon_var[k].into(),
            s.photon_stderr[k].into(),
        ];
        for p in &s.populations {
            row.extend(p.iter().map(|v| Cell::from(v[k])));
        }
        t.push(row);
    }
    t
}

/// Columns `P, N_L, N_R, photon_ss, photon_var_ss, dP`, then the standard
/// error of `photon_ss`.
pub fn sweep_table(s: &SweepResult) -> Table {
    let cols = ["P", "N_L", "N_R", "photon_ss", "photon_var_ss", "dP", "photon_stderr"];
    let mut t = Table::new(cols.map(String::from).to_vec());
    for k in 0..s.excess_grid.len() {
        t.push(vec![
            s.excess_grid[k].into(),
            s.n_left[k].into(),
            s.n_right[k].into(),
            s.photon_ss[k].into(),
            s.photon_var_ss[k].into(),
            s.uncertainty.get(k).copied().unwrap_or(f64::NAN).into(),
            s.photon_stderr[k].into(),
        ]);
    }
    t
}

pub fn molecule_sweep_table(s: &MoleculeSweep) -> Table {
    let cols = ["N_L", "photon_ss", "photon_var_ss", "photon_stderr"];
    let mut t = Table::new(cols.map(String::from).to_vec());
    for k in 0..s.n_left.len() {
        t.push(vec![
            s.n_left[k].into(),
            s.photon_ss[k].into(),
            s.photon_var_ss[k].into(),
            s.photon_stderr[k].into(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(Cell::Real(1.0 / 3.0).render(), "3.33333333333e-1");
        assert_eq!(Cell::Real(-2.5e7).render(), "-2.50000000000e7");
        assert_eq!(Cell::Int(12).render(), "12");
        assert_eq!(Cell::Real(f64::INFINITY).render(), "inf");
    }

    #[test]
    fn csv_and_json_share_columns() {
        let mut t = Table::new(vec!["a".into(), "b".into()]);
        t.push(vec![Cell::Int(1), Cell::Real(0.5)]);
        t.push(vec![Cell::Int(2), Cell::Real(f64::NAN)]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "a,b\n1,5.00000000000e-1\n2,nan\n"
        );
        let j = t.to_json();
        assert_eq!(j["a"], serde_json::json!([1, 2]));
        assert_eq!(j["b"], serde_json::json!([0.5, null]));
    }

    #[test]
    fn sweep_columns() {
        let s = SweepResult {
            excess_grid: vec![-1.0, 0.0, 1.0],
            n_left: vec![2, 1, 0],
            n_right: vec![0, 1, 2],
            photon_ss: vec![1.0, 2.0, 3.0],
            photon_var_ss: vec![1.0; 3],
            photon_stderr: vec![0.0; 3],
            uncertainty: vec![1.0; 3],
            n_total: 2,
            eta: 4.0,
        };
        let t = sweep_table(&s);
        assert_eq!(t.columns[..3], ["P", "N_L", "N_R"]);
        assert_eq!(t.column("N_R").unwrap()[2], Cell::Int(2));
    }
}
