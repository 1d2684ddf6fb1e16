//! CSV input and output.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use countvb::ModelSpec;

/// Columns of a count-response data set selected by a model spec.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub y: Vec<u64>,
    /// One vector per predictor, in model order.
    pub x: Vec<Vec<f64>>,
    pub groups: Option<Vec<String>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn record(&self, i: usize) -> countvb::RawRecord {
        countvb::RawRecord {
            x: self.x.iter().map(|col| col[i]).collect(),
            group: self.groups.as_ref().map(|g| g[i].clone()),
        }
    }

    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            y: self.y[..n].to_vec(),
            x: self.x.iter().map(|c| c[..n].to_vec()).collect(),
            groups: self.groups.as_ref().map(|g| g[..n].to_vec()),
        }
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))
}

/// Default model for a file: response `y`, every other column a predictor
/// with a smooth of `k` basis functions.
pub fn default_spec(path: &Path, k: usize) -> Result<ModelSpec> {
    let headers = reader(path)?.headers()?.clone();
    if !headers.iter().any(|h| h == "y") {
        bail!(
            "{}: no column named 'y'; pass --config to name the response",
            path.display()
        );
    }
    let predictors: Vec<&str> = headers.iter().filter(|h| *h != "y").collect();
    Ok(ModelSpec::additive(&predictors, k))
}

fn parse_count(s: &str) -> Option<u64> {
    s.parse::<u64>().ok().or_else(|| {
        let v: f64 = s.parse().ok()?;
        (v >= 0.0 && v.fract() == 0.0 && v < u64::MAX as f64).then_some(v as u64)
    })
}

pub fn read_dataset(path: &Path, spec: &ModelSpec) -> Result<Dataset> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{}: missing column '{name}'", path.display()))
    };
    let y_col = column(&spec.response)?;
    let x_cols = spec
        .predictors
        .iter()
        .map(|p| column(p))
        .collect::<Result<Vec<_>>>()?;
    let g_col = spec.group.as_deref().map(column).transpose()?;

    let mut data = Dataset {
        y: Vec::new(),
        x: vec![Vec::new(); x_cols.len()],
        groups: g_col.map(|_| Vec::new()),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow!("{}: line {line}: {e}", path.display())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |j: usize| rec.get(j).unwrap_or("");
        let y = parse_count(field(y_col)).ok_or_else(|| {
            anyhow!(
                "{}: line {line}: response '{}' is not a non-negative integer",
                path.display(),
                field(y_col)
            )
        })?;
        data.y.push(y);
        for (col, &j) in data.x.iter_mut().zip(&x_cols) {
            let v: f64 = field(j)
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    anyhow!(
                        "{}: line {line}: '{}' is not a finite number",
                        path.display(),
                        field(j)
                    )
                })?;
            col.push(v);
        }
        if let (Some(g), Some(j)) = (data.groups.as_mut(), g_col) {
            g.push(field(j).to_string());
        }
    }
    if data.y.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(data)
}

/// 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_rows<W: Write>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_integral_floats_only() {
        assert_eq!(parse_count("3"), Some(3));
        assert_eq!(parse_count("3.0"), Some(3));
        assert_eq!(parse_count("3.5"), None);
        assert_eq!(parse_count("-1"), None);
        assert_eq!(parse_count("x"), None);
    }

    #[test]
    fn numbers_carry_seventeen_digits() {
        let s = num(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn bad_row_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "y,x1\n1,0.5\n2,oops\n").unwrap();
        let spec = default_spec(&path, 5).unwrap();
        let err = read_dataset(&path, &spec).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }
}
