//! Dataset file formats.
//!
//! CSV: a header line `# grid: n1 lo1 hi1 ; n2 lo2 hi2 ; ... ; components: c`
//! followed by one grid sample per row (lexicographic grid order), each row
//! holding the `c` component values.
//!
//! Binary: magic `WFSD`, u32 version (1), u32 axis count, per axis
//! (u64 n, f64 lo, f64 hi), u64 components, then the values as f64.
//! Everything is little-endian.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Grid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WFSD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.csv` selects CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

pub fn write_dataset(d: &Dataset, path: &Path, format: Format) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(d, &mut w)?,
        Format::Binary => write_binary(d, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    let mut r = BufReader::new(file);
    match format {
        Format::Csv => read_csv(&mut r),
        Format::Binary => read_binary(&mut r),
    }
}

pub fn write_csv(d: &Dataset, w: &mut impl Write) -> Result<()> {
    let axes: Vec<String> = d.grid().axes().iter().map(|a| format!("{} {} {}", a.n, a.lo, a.hi)).collect();
    writeln!(w, "# grid: {} ; components: {}", axes.join(" ; "), d.components())?;
    for row in d.values().chunks(d.components()) {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

fn parse_header(line: &str) -> Result<(Grid, usize)> {
    let body = line
        .trim()
        .strip_prefix("# grid:")
        .ok_or_else(|| Error::Format("csv header must start with `# grid:`".into()))?;
    let parts: Vec<&str> = body.split(';').map(str::trim).collect();
    let (last, axis_parts) = parts.split_last().ok_or_else(|| Error::Format("empty csv header".into()))?;
    let components: usize = last
        .strip_prefix("components:")
        .ok_or_else(|| Error::Format("csv header must end with `components: c`".into()))?
        .trim()
        .parse()
        .map_err(|e| Error::Format(format!("bad component count: {e}")))?;
    let mut axes = Vec::new();
    for p in axis_parts {
        let f: Vec<&str> = p.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("axis descriptor `{p}` needs `n lo hi`")));
        }
        let n = f[0].parse().map_err(|e| Error::Format(format!("bad axis length `{}`: {e}", f[0])))?;
        let lo = f[1].parse().map_err(|e| Error::Format(format!("bad axis lo `{}`: {e}", f[1])))?;
        let hi = f[2].parse().map_err(|e| Error::Format(format!("bad axis hi `{}`: {e}", f[2])))?;
        axes.push((n, lo, hi));
    }
    Ok((Grid::new(&axes)?, components))
}

pub fn read_csv(r: &mut impl BufRead) -> Result<Dataset> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty csv file".into()))??;
    let (grid, components) = parse_header(&header)?;
    let mut values = Vec::with_capacity(grid.len() * components);
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != components {
            return Err(Error::Format(format!(
                "row {row} has {} columns, expected {components}",
                fields.len()
            )));
        }
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|e| Error::Format(format!("row {row}: bad number `{f}`: {e}")))?;
            values.push(v);
        }
    }
    Dataset::new(grid, components, values)
}

pub fn write_binary(d: &Dataset, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d.grid().ndim() as u32).to_le_bytes())?;
    for a in d.grid().axes() {
        w.write_all(&(a.n as u64).to_le_bytes())?;
        w.write_all(&a.lo.to_le_bytes())?;
        w.write_all(&a.hi.to_le_bytes())?;
    }
    w.write_all(&(d.components() as u64).to_le_bytes())?;
    for v in d.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated binary dataset".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_binary(r: &mut impl Read) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("missing WFSD magic bytes".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported binary version {version}")));
    }
    let naxes = read_u32(r)? as usize;
    if naxes == 0 || naxes > 16 {
        return Err(Error::Format(format!("implausible axis count {naxes}")));
    }
    let mut axes = Vec::with_capacity(naxes);
    for _ in 0..naxes {
        let n = read_u64(r)? as usize;
        let lo = read_f64(r)?;
        let hi = read_f64(r)?;
        axes.push((n, lo, hi));
    }
    let components = read_u64(r)? as usize;
    let grid = Grid::new(&axes)?;
    let total = grid
        .len()
        .checked_mul(components)
        .ok_or_else(|| Error::Format("dataset size overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != total * 8 {
        return Err(Error::Shape(format!("expected {total} values, file holds {} bytes", bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Dataset::new(grid, components, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use std::io::Cursor;

    fn sample() -> Dataset {
        let g = Grid::new(&[(3, 0.0, 1.0), (4, -1.0, 2.5)]).unwrap();
        Dataset::from_fn(g, 1, |x| vec![(x[0] * 7.3).sin() + x[1] / 3.0]).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let d = sample();
        let mut buf = Vec::new();
        write_binary(&d, &mut buf).unwrap();
        let back = read_binary(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_round_trip_of_pi() {
        let g = Grid::new(&[(2, 0.0, 1.0)]).unwrap();
        let d = Dataset::new(g, 1, vec![PI, -PI / 7.0]).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(&mut Cursor::new(buf)).unwrap();
        assert!(((back.values()[0] - PI) / PI).abs() <= 1e-15);
        assert_eq!(back, d);
    }

    #[test]
    fn csv_wrong_column_count() {
        let text = "# grid: 2 0 1 ; components: 2\n1.0,2.0\n3.0\n";
        let err = read_csv(&mut Cursor::new(text)).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn csv_malformed_header() {
        assert!(read_csv(&mut Cursor::new("grid 2 0 1\n1\n2\n")).is_err());
        assert!(read_csv(&mut Cursor::new("# grid: 2 0 ; components: 1\n1\n2\n")).is_err());
    }

    #[test]
    fn csv_shape_and_finite_checks() {
        assert!(matches!(
            read_csv(&mut Cursor::new("# grid: 3 0 1 ; components: 1\n1\n2\n")),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            read_csv(&mut Cursor::new("# grid: 2 0 1 ; components: 1\n1\nNaN\n")),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn binary_rejects_bad_magic_and_truncation() {
        let d = sample();
        let mut buf = Vec::new();
        write_binary(&d, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_binary(&mut Cursor::new(bad)).is_err());
        buf.truncate(buf.len() - 3);
        assert!(read_binary(&mut Cursor::new(buf)).is_err());
    }

    #[test]
    fn file_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample();
        for (name, fmt) in [("a.csv", Format::Csv), ("a.wfsd", Format::Binary)] {
            let p = dir.path().join(name);
            assert_eq!(Format::from_path(&p), fmt);
            write_dataset(&d, &p, fmt).unwrap();
            assert_eq!(read_dataset(&p, fmt).unwrap(), d);
        }
    }
}
