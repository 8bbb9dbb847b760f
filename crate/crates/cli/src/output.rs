//! Result files: CSV tables, binary state dumps and the run manifest.
//!
//! State dump layout, all little-endian:
//!
//! ```text
//! b"LRLD"  u32 version  u64 count  u64 rows  u64 cols
//! count x { f64 t_normalized, rows*cols x (f64 re, f64 im) in row-major order }
//! ```

use std::io::{self, BufRead, Read, Write};

use lrlindblad::{CMatrix64, C64};

pub const DUMP_MAGIC: &[u8; 4] = b"LRLD";
pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Real(f64),
    Int(u64),
    Missing,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Real(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Real)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        CsvTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<Cell>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let mut line = String::new();
            for (j, cell) in row.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                match *cell {
                    Cell::Real(x) if !x.is_finite() => {
                        return Err(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("non-finite value in column {}", self.columns[j]),
                        ))
                    }
                    Cell::Real(x) => line.push_str(&format!("{x:.16e}")),
                    Cell::Int(k) => line.push_str(&k.to_string()),
                    Cell::Missing => {}
                }
            }
            writeln!(w, "{line}")?;
        }
        w.flush()
    }

    pub fn read<B: BufRead>(r: B) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty csv".into()))??;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let row = line
                .split(',')
                .map(|f| {
                    if f.is_empty() {
                        Ok(Cell::Missing)
                    } else if f.bytes().all(|b| b.is_ascii_digit()) {
                        f.parse().map(Cell::Int).map_err(|e| bad(format!("row {i}: {e}")))
                    } else {
                        f.parse().map(Cell::Real).map_err(|e| bad(format!("row {i}: {e}")))
                    }
                })
                .collect::<io::Result<Vec<Cell>>>()?;
            if row.len() != columns.len() {
                return Err(bad(format!("row {i} has {} fields, header has {}", row.len(), columns.len())));
            }
            rows.push(row);
        }
        Ok(CsvTable { columns, rows })
    }
}

pub fn write_dump<W: Write>(mut w: W, records: &[(f64, &CMatrix64)]) -> io::Result<()> {
    let (rows, cols) = records.first().map_or((0, 0), |(_, m)| m.shape());
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    for x in [records.len(), rows, cols] {
        w.write_all(&(x as u64).to_le_bytes())?;
    }
    for (t, m) in records {
        if m.shape() != (rows, cols) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "records differ in shape"));
        }
        w.write_all(&t.to_le_bytes())?;
        for i in 0..rows {
            for j in 0..cols {
                let z = m[(i, j)];
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

pub fn read_dump<R: Read>(mut r: R) -> io::Result<Vec<(f64, CMatrix64)>> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(bad("not a state dump"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != DUMP_VERSION {
        return Err(bad("unsupported dump version"));
    }
    let mut b8 = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> io::Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let count = next_u64(&mut r)? as usize;
    let rows = next_u64(&mut r)? as usize;
    let cols = next_u64(&mut r)? as usize;
    let next_f64 = |r: &mut R| -> io::Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let t = next_f64(&mut r)?;
        let mut m = CMatrix64::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let re = next_f64(&mut r)?;
                let im = next_f64(&mut r)?;
                m[(i, j)] = C64::new(re, im);
            }
        }
        out.push((t, m));
    }
    Ok(out)
}

pub fn manifest(config_hash: &str, seed: u64, mode: &str) -> String {
    format!("config_hash = {config_hash}\nseed = {seed}\nversion = {}\nmode = {mode}\n", env!("CARGO_PKG_VERSION"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cell() -> impl Strategy<Value = Cell> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Cell::Real),
            (-1e3f64..1e3).prop_map(Cell::Real),
            any::<u64>().prop_map(Cell::Int),
            Just(Cell::Missing),
        ]
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in proptest::collection::vec(proptest::collection::vec(cell(), 3), 0..20)) {
            let mut t = CsvTable::new(&["t_normalized", "pe", "rank_m"]);
            for r in rows {
                t.push(r);
            }
            let mut buf = Vec::new();
            t.write(&mut buf).unwrap();
            let back = CsvTable::read(buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn csv_text_shape() {
        let mut t = CsvTable::new(&["t_normalized", "rank_m", "err_lr"]);
        t.push(vec![Cell::Real(0.5), Cell::Int(4), Cell::Missing]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t_normalized,rank_m,err_lr\n5.0000000000000000e-1,4,\n");
        let mut nan = CsvTable::new(&["x"]);
        nan.push(vec![Cell::Real(f64::NAN)]);
        assert!(nan.write(Vec::new()).is_err());
    }

    #[test]
    fn dump_round_trip_and_layout() {
        let a = CMatrix64::from_fn(2, 3, |i, j| C64::new(i as f64 + 0.25, -(j as f64)));
        let b = &a * C64::new(0.0, 1.0);
        let mut buf = Vec::new();
        write_dump(&mut buf, &[(0.0, &a), (0.5, &b)]).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 24 + 2 * (8 + 6 * 16));
        assert_eq!(&buf[..4], b"LRLD");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        // First entry of the second row follows the first row.
        let first_row2 = 32 + 8 + 3 * 16;
        assert_eq!(f64::from_le_bytes(buf[first_row2..first_row2 + 8].try_into().unwrap()), 1.25);
        let back = read_dump(buf.as_slice()).unwrap();
        assert_eq!(back, vec![(0.0, a), (0.5, b)]);
        assert!(read_dump(&b"LRLX\0\0\0\0"[..]).is_err());
    }
}
