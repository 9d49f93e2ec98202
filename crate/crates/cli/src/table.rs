//! Fixed-format CSV output: 17 significant digits, `.` decimals, `\n` endings.

use std::fmt::Write as _;
use std::path::Path;

/// A CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Uint(u64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Uint(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Uint(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Scientific notation with 17 significant digits; non-finite values as
/// `NaN`, `inf`, `-inf`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::Int(v) => write!(out, "{v}").unwrap(),
            Cell::Uint(v) => write!(out, "{v}").unwrap(),
            Cell::Float(v) => out.push_str(&format_float(*v)),
            Cell::Text(v) => out.push_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn header(&self) -> &[&'static str] {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Panics if the row width differs from the header.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (k, cell) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                cell.render(&mut out);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, f64::MIN_POSITIVE, f64::MAX] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(f64::NAN), "NaN");
        assert_eq!(format_float(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn render_layout() {
        let mut t = Table::new(&["step", "seed", "x"]);
        t.push(vec![0usize.into(), 7u64.into(), 1.5.into()]);
        t.push(vec![1usize.into(), 7u64.into(), Cell::Text("noisy".into())]);
        assert_eq!(t.render(), "step,seed,x\n0,7,1.5000000000000000e0\n1,7,noisy\n");
        assert_eq!(t.len(), 2);
    }

    proptest::proptest! {
        #[test]
        fn any_finite_float_round_trips(bits in proptest::prelude::any::<u64>()) {
            let v = f64::from_bits(bits);
            proptest::prop_assume!(v.is_finite());
            let s = format_float(v);
            proptest::prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
            proptest::prop_assert!(!s.contains(','));
        }
    }

    #[test]
    #[should_panic]
    fn ragged_row_panics() {
        Table::new(&["a", "b"]).push(vec![1usize.into()]);
    }
}
