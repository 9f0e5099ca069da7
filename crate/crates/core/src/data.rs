//! CSV ingestion: a header row followed by numeric columns. The outcome and
//! treatment are picked by name; every other column becomes a control.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::regression::Dataset;

/// A dataset read from CSV together with the control column names.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub data: Dataset,
    pub controls: Vec<String>,
}

pub fn read_csv_path(path: &Path, outcome: &str, treatment: &str) -> Result<CsvData> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(file, outcome, treatment)
}

pub fn read_csv<R: Read>(input: R, outcome: &str, treatment: &str) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Input(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("column `{name}` not found; header is {}", header.join(","))))
    };
    let iy = find(outcome)?;
    let id = find(treatment)?;
    if iy == id {
        return Err(Error::Input("outcome and treatment must be different columns".into()));
    }
    let control_idx: Vec<usize> = (0..header.len()).filter(|&j| j != iy && j != id).collect();

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut x = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Input(format!("row {row}: {e}")))?;
        let cell = |j: usize| -> Result<f64> {
            let raw = record.get(j).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Input(format!("row {row}, column `{}`: `{raw}` is not a finite number", header[j]))),
            }
        };
        y.push(cell(iy)?);
        d.push(cell(id)?);
        for &j in &control_idx {
            x.push(cell(j)?);
        }
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 data rows, found {n}")));
    }
    let p = control_idx.len();
    let xm = DMatrix::from_row_slice(n, p, &x);
    let data = Dataset::new(DVector::from_vec(y), DVector::from_vec(d), xm)?;
    Ok(CsvData { data, controls: control_idx.into_iter().map(|j| header[j].clone()).collect() })
}

/// Writes a dataset as CSV with columns y, d, x1..xp.
pub fn write_csv<W: std::io::Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut head = vec!["y".to_string(), "d".to_string()];
    head.extend((1..=data.p()).map(|j| format!("x{j}")));
    w.write_record(&head).map_err(io)?;
    for i in 0..data.n() {
        let mut rec = vec![data.y[i].to_string(), data.d[i].to_string()];
        rec.extend(data.x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_columns_by_name() {
        let src = "a,y,d,b\n1,2,0,3\n4,5,1,6\n";
        let c = read_csv(src.as_bytes(), "y", "d").unwrap();
        assert_eq!(c.controls, vec!["a", "b"]);
        assert_eq!(c.data.x[(1, 1)], 6.0);
        assert_eq!(c.data.y[1], 5.0);
    }

    #[test]
    fn reports_bad_cell() {
        let src = "y,d,x\n1,0,2\n1,1,oops\n";
        let msg = read_csv(src.as_bytes(), "y", "d").unwrap_err().to_string();
        assert!(msg.contains("row 2") && msg.contains("`x`"), "{msg}");
        assert!(matches!(read_csv(src.as_bytes(), "y", "t"), Err(Error::Input(_))));
    }
}
