//! Column-oriented view of the numeric CSV logs.

use std::path::Path;

pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, String> {
        let mut r = csv::Reader::from_path(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let headers: Vec<String> = r
            .headers()
            .map_err(|e| format!("{}: {e}", path.display()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
            for (c, field) in columns.iter_mut().zip(rec.iter()) {
                let v = field
                    .parse()
                    .map_err(|_| format!("{} row {}: '{field}' is not a number", path.display(), line + 2))?;
                c.push(v);
            }
        }
        Ok(Self { headers, columns })
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64], String> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| format!("missing column '{name}'"))
    }

    /// Columns whose header starts with `prefix`, in file order.
    pub fn columns_with_prefix(&self, prefix: &str) -> Vec<(&str, &[f64])> {
        self.headers
            .iter()
            .zip(&self.columns)
            .filter(|(h, _)| h.starts_with(prefix))
            .map(|(h, c)| (h.as_str(), c.as_slice()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_columns_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "t,w_1_1,w_2_1\n0,1.5,2\n0.001,-1e-3,3\n").unwrap();
        let t = Table::read(&p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.column("w_1_1").unwrap(), &[1.5, -1e-3]);
        assert_eq!(t.columns_with_prefix("w_").len(), 2);
        assert!(t.column("x").is_err());
    }

    #[test]
    fn rejects_non_numeric_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "t\nabc\n").unwrap();
        assert!(Table::read(&p).is_err());
    }
}
