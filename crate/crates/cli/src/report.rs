//! Output artifacts: CSV tables and `report.json` check records.

use std::fmt::Write as _;

use serde::Serialize;

/// One row of `report.json`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: Threshold,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(untagged)]
pub enum Threshold {
    Value(f64),
    Band([f64; 2]),
}

impl Check {
    /// Passes when `statistic <= threshold`.
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold: Threshold::Value(threshold),
            pass: statistic <= threshold,
        }
    }

    /// Passes when `statistic < threshold`.
    pub fn below(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold: Threshold::Value(threshold),
            pass: statistic < threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold: Threshold::Value(threshold),
            pass: statistic >= threshold,
        }
    }

    pub fn within(name: impl Into<String>, statistic: f64, low: f64, high: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold: Threshold::Band([low, high]),
            pass: statistic >= low && statistic <= high,
        }
    }
}

/// CSV text with a mandatory header; floats use the shortest round-trip form.
#[derive(Debug, Clone)]
pub struct Table {
    text: String,
    width: usize,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let cols: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        Self {
            text: cols.join(",") + "\n",
            width: cols.len(),
        }
    }

    pub fn row(&mut self, values: &[Cell]) {
        debug_assert_eq!(values.len(), self.width);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match v {
                Cell::F(x) => write!(self.text, "{x:?}"),
                Cell::U(n) => write!(self.text, "{n}"),
            }
            .expect("write to string");
        }
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Cell {
    F(f64),
    U(usize),
}

/// Header names `prefix1..prefixd`.
pub fn indexed(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.row(&[Cell::U(3), Cell::F(0.1)]);
        assert_eq!(t.into_string(), "a,b\n3,0.1\n");
    }

    #[test]
    fn check_json_shape() {
        let c = Check::within("slope", -0.7, -0.95, -0.45);
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["threshold"], serde_json::json!([-0.95, -0.45]));
        assert_eq!(v["pass"], true);
        assert!(!Check::below("r", 1.0, 1.0).pass);
        assert!(Check::at_most("r", 1.0, 1.0).pass);
    }
}
