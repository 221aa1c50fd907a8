//! Tabular output: CSV at full precision, human text at 6 significant
//! digits.

use std::fmt::Write as _;

/// `x` with 6 significant digits. Fixed notation for magnitudes in
/// `[1e-4, 1e6)`, scientific otherwise.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("scientific format") + 1..]
        .parse()
        .expect("integer exponent");
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        sci
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn full(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Text(x.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Num(x) => full(*x),
                Cell::Text(s) => s.clone(),
            }))
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }

    /// Aligned text rendering with numbers at 6 significant digits.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        Cell::Num(x) => fmt6(*x),
                        Cell::Text(s) => s.clone(),
                    })
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..self.header.len())
            .map(|j| cells.iter().map(|r| r[j].len()).chain([self.header[j].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, items: &[String]| {
            let parts: Vec<String> = items.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            let _ = writeln!(out, "  {}", parts.join("  ").trim_end());
        };
        line(&mut out, &self.header);
        for r in &cells {
            line(&mut out, r);
        }
        out
    }
}

/// Parses CSV text produced by [`Table::to_csv`] back into header and rows.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), csv::Error> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(2.28395), "2.28395");
        assert_eq!(fmt6(-2.351), "-2.35100");
        assert_eq!(fmt6(28.9824), "28.9824");
        assert_eq!(fmt6(13.6156), "13.6156");
        assert_eq!(fmt6(9.999996), "10.0000");
        assert_eq!(fmt6(99.5e-9), "9.95000e-8");
        assert_eq!(fmt6(123456789.0), "1.23457e8");
        assert_eq!(fmt6(0.0), "0");
    }

    #[test]
    fn csv_round_trips_bit_exact() {
        let mut t = Table::new(["a", "b"]);
        let values = [0.1 + 0.2, -2.351e-9, 1.0 / 3.0, 13.615_6, 3e20, 7.0];
        for v in values {
            t.push(vec![Cell::Num(v), "x,y".into()]);
        }
        let text = t.to_csv();
        assert!(!text.contains('\r'));
        let (header, rows) = read_csv(&text).unwrap();
        assert_eq!(header, ["a", "b"]);
        for (row, v) in rows.iter().zip(values) {
            assert_eq!(row[0].parse::<f64>().unwrap().to_bits(), v.to_bits());
            assert_eq!(row[1], "x,y");
        }
        assert_eq!(full(-3.552713678800501e-15), "-3.552713678800501e-15");
        assert_eq!(full(7.0), "7");
    }
}
