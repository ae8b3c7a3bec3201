use std::path::{Path, PathBuf};

use memometer::{Dataset, ValueRange};

use crate::Failure;

/// CIFAR-10 batches when every path ends in `.bin`, otherwise one raw
/// `.f32` tensor with its `.json` sidecar.
pub fn load_dataset(paths: &[PathBuf], range: ValueRange) -> Result<Dataset, Failure> {
    if paths.is_empty() {
        return Err(Failure::Config("no dataset paths given".into()));
    }
    for p in paths {
        if !p.exists() {
            return Err(Failure::Data(format!("dataset not found: {}", p.display())));
        }
    }
    let is_bin = |p: &PathBuf| p.extension().is_some_and(|e| e == "bin");
    let loaded = if paths.iter().all(is_bin) {
        Dataset::load_cifar10(paths, range)
    } else if let [single] = paths {
        Dataset::load_raw_pair(single)
    } else {
        return Err(Failure::Data(
            "give either CIFAR-10 .bin batches or a single raw .f32 tensor".into(),
        ));
    };
    loaded.map_err(|e| {
        let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
        Failure::Data(format!("{}: {e}", names.join(", ")))
    })
}

/// Float formatting for every numeric CSV field: shortest round-trip form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// RFC-4180 CSV from a header and rows.
pub fn csv_bytes<R, F>(header: &[&str], rows: R) -> Vec<u8>
where
    R: IntoIterator<Item = Vec<F>>,
    F: AsRef<[u8]>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// A parsed growth CSV: ids and the `log_l_<step>` columns.
pub struct GrowthTable {
    pub ids: Vec<String>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl GrowthTable {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let data_err = |msg: String| Failure::Data(format!("{}: {msg}", path.display()));
        if !path.exists() {
            return Err(Failure::Data(format!("file not found: {}", path.display())));
        }
        let mut r = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
        let header = r.headers().map_err(|e| data_err(e.to_string()))?.clone();
        if header.get(0) != Some("id") {
            return Err(data_err("first column must be `id`".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| data_err(e.to_string()))?;
            ids.push(rec[0].to_string());
            for (j, col) in values.iter_mut().enumerate() {
                let field = rec.get(j + 1).unwrap_or("");
                let v: f64 = field
                    .parse()
                    .map_err(|_| data_err(format!("row {}: {:?} is not a number", line + 1, field)))?;
                col.push(v);
            }
        }
        Ok(Self {
            ids,
            columns: names.into_iter().zip(values).collect(),
        })
    }

    /// The named column, or the last `log_l_*` column.
    pub fn column(&self, name: Option<&str>) -> Result<(&str, &[f64]), Failure> {
        let found = match name {
            Some(n) => self.columns.iter().find(|(c, _)| c == n),
            None => self.columns.iter().rev().find(|(c, _)| c.starts_with("log_l_")),
        };
        found.map(|(c, v)| (c.as_str(), v.as_slice())).ok_or_else(|| {
            Failure::Data(match name {
                Some(n) => format!("no column {n:?}"),
                None => "no log_l_* column".into(),
            })
        })
    }
}
