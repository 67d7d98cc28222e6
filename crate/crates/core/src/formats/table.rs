//! Rectangular result tables written as CSV or as a JSON array of objects.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::FormatError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    /// Shortest text that parses back to the same value.
    fn to_csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) if x.is_nan() => "NaN".into(),
            Cell::Num(x) => format!("{x:?}"),
            Cell::Text(s) => s.clone(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            // non-finite numbers have no JSON form
            Cell::Num(x) => serde_json::Number::from_f64(*x).map(Value::Number).unwrap_or(Value::Null),
            Cell::Text(s) => Value::from(s.as_str()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Num(x) => Some(*x),
            Cell::Text(s) => s.parse().ok(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().filter_map(|r| r.get(i)).collect())
    }

    pub fn check_rectangular(&self) -> Result<(), FormatError> {
        let expected = self.columns.len();
        match self.rows.iter().position(|r| r.len() != expected) {
            Some(row) => Err(FormatError::RaggedRows { row, expected, got: self.rows[row].len() }),
            None => Ok(()),
        }
    }

    pub fn to_csv_string(&self) -> Result<String, FormatError> {
        self.check_rectangular()?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let ser = |e: csv::Error| FormatError::Serialize(e.to_string());
        w.write_record(&self.columns).map_err(ser)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::to_csv)).map_err(ser)?;
        }
        let bytes = w.into_inner().map_err(|e| FormatError::Serialize(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| FormatError::Serialize(e.to_string()))
    }

    pub fn to_json_value(&self) -> Result<Value, FormatError> {
        self.check_rectangular()?;
        Ok(Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let obj: Map<String, Value> = self.columns.iter().cloned().zip(r.iter().map(Cell::to_json)).collect();
                    Value::Object(obj)
                })
                .collect(),
        ))
    }
}

pub fn export_table(table: &Table, path: impl AsRef<Path>, format: TableFormat) -> Result<(), FormatError> {
    let path = path.as_ref();
    let text = match format {
        TableFormat::Csv => table.to_csv_string()?,
        TableFormat::Json => {
            let mut s = serde_json::to_string_pretty(&table.to_json_value()?).map_err(|e| FormatError::Serialize(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| FormatError::io(path, e))
}

/// Reads a CSV written by [`export_table`]; integers and floats are recovered
/// as numbers, anything else as text.
pub fn read_csv_table(path: impl AsRef<Path>) -> Result<Table, FormatError> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => FormatError::io(path, io),
        other => FormatError::Serialize(format!("{other:?}")),
    })?;
    let columns: Vec<String> = r.headers().map_err(|e| FormatError::Serialize(e.to_string()))?.iter().map(String::from).collect();
    let mut table = Table::new(columns);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| FormatError::Serialize(e.to_string()))?;
        if rec.len() != table.columns.len() {
            return Err(FormatError::RaggedRows { row: i, expected: table.columns.len(), got: rec.len() });
        }
        table.push(
            rec.iter()
                .map(|s| {
                    if let Ok(i) = s.parse::<i64>() {
                        Cell::Int(i)
                    } else if let Ok(x) = s.parse::<f64>() {
                        Cell::Num(x)
                    } else {
                        Cell::Text(s.to_string())
                    }
                })
                .collect(),
        );
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_is_three_lines() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec![1.5.into(), "x".into()]);
        t.push(vec![2usize.into(), "y,z".into()]);
        let s = t.to_csv_string().unwrap();
        assert_eq!(s, "a,b\n1.5,x\n2,\"y,z\"\n");
        assert_eq!(s.lines().count(), 3);
    }

    #[test]
    fn small_numbers_reparse_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let vals = [1e-6, 1.0 / 3.0, -2.5e-300, 123_456_789.123_456_79];
        let mut t = Table::new(["v"]);
        for v in vals {
            t.push(vec![v.into()]);
        }
        let p = dir.path().join("t.csv");
        export_table(&t, &p, TableFormat::Csv).unwrap();
        let back = read_csv_table(&p).unwrap();
        for (v, c) in vals.iter().zip(back.rows.iter()) {
            let got = c[0].as_f64().unwrap();
            assert!(((got - v) / v).abs() <= 1e-12);
        }
    }

    #[test]
    fn ragged_rejected() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec![1.0.into()]);
        assert!(matches!(t.to_csv_string(), Err(FormatError::RaggedRows { row: 0, expected: 2, got: 1 })));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(export_table(&t, dir.path().join("x.json"), TableFormat::Json), Err(FormatError::RaggedRows { .. })));
    }

    #[test]
    fn json_is_array_of_objects() {
        let mut t = Table::new(["freq", "label"]);
        t.push(vec![12.0.into(), "Oz".into()]);
        let v = t.to_json_value().unwrap();
        assert_eq!(v, serde_json::json!([{"freq": 12.0, "label": "Oz"}]));
    }
}
