use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{FuseError, Result};

/// Scores of `N` images under `M` metrics, plus an optional held-out MOS
/// column that only the evaluator may read.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    dataset_name: String,
    image_ids: Vec<String>,
    metric_names: Vec<String>,
    /// Row-major `N × M`.
    scores: Vec<f64>,
    mos: Option<Vec<f64>>,
}

/// Read-only view of a [`ScoreTable`] without the MOS column. This is the
/// only thing the trainer accepts.
#[derive(Debug, Clone, Copy)]
pub struct ScoreView<'a> {
    dataset_name: &'a str,
    image_ids: &'a [String],
    metric_names: &'a [String],
    scores: &'a [f64],
}

impl ScoreTable {
    pub fn new(
        dataset_name: impl Into<String>,
        image_ids: Vec<String>,
        metric_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        mos: Option<Vec<f64>>,
    ) -> Result<Self> {
        let m = metric_names.len();
        if m == 0 {
            return Err(FuseError::Data("score table needs at least one metric".into()));
        }
        if rows.len() != image_ids.len() {
            return Err(FuseError::Shape { expected: image_ids.len(), actual: rows.len() });
        }
        let mut scores = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(FuseError::Shape { expected: m, actual: row.len() });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(FuseError::Data(format!("non-finite score at row {i}, metric {j}")));
            }
            scores.extend(row);
        }
        let table = ScoreTable { dataset_name: dataset_name.into(), image_ids, metric_names, scores, mos };
        table.check_unique()?;
        if let Some(mos) = &table.mos {
            if mos.len() != table.image_ids.len() {
                return Err(FuseError::Shape { expected: table.image_ids.len(), actual: mos.len() });
            }
            if mos.iter().any(|v| !v.is_finite()) {
                return Err(FuseError::Data("non-finite mos value".into()));
            }
        }
        Ok(table)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in &self.image_ids {
            if !seen.insert(id.as_str()) {
                return Err(FuseError::Data(format!("duplicate image_id `{id}`")));
            }
        }
        let mut seen = HashSet::new();
        for name in &self.metric_names {
            if !seen.insert(name.as_str()) {
                return Err(FuseError::Data(format!("duplicate metric column `{name}`")));
            }
        }
        Ok(())
    }

    pub fn view(&self) -> ScoreView<'_> {
        ScoreView {
            dataset_name: &self.dataset_name,
            image_ids: &self.image_ids,
            metric_names: &self.metric_names,
            scores: &self.scores,
        }
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn set_dataset_name(&mut self, name: impl Into<String>) {
        self.dataset_name = name.into();
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn n_metrics(&self) -> usize {
        self.metric_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.view().row(i)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.view().column(j)
    }

    pub fn mos(&self) -> Option<&[f64]> {
        self.mos.as_deref()
    }

    pub fn without_mos(&self) -> ScoreTable {
        ScoreTable { mos: None, ..self.clone() }
    }

    pub fn with_mos(mut self, mos: Option<Vec<f64>>) -> Result<Self> {
        self.mos = None;
        let rows = (0..self.n_images()).map(|i| self.row(i).to_vec()).collect();
        ScoreTable::new(self.dataset_name, self.image_ids, self.metric_names, rows, mos)
    }

    /// Columns reordered (and possibly subset) to match `names`.
    pub fn select_metrics(&self, names: &[String]) -> Result<ScoreTable> {
        let idx: Vec<usize> = names
            .iter()
            .map(|want| {
                self.metric_names
                    .iter()
                    .position(|n| n == want)
                    .ok_or_else(|| FuseError::Data(format!("missing metric column `{want}`")))
            })
            .collect::<Result<_>>()?;
        let rows = (0..self.n_images())
            .map(|i| {
                let r = self.row(i);
                idx.iter().map(|&j| r[j]).collect()
            })
            .collect();
        ScoreTable::new(
            self.dataset_name.clone(),
            self.image_ids.clone(),
            names.to_vec(),
            rows,
            self.mos.clone(),
        )
    }

    /// Appends a metric column.
    pub fn with_metric(&self, name: impl Into<String>, values: &[f64]) -> Result<ScoreTable> {
        if values.len() != self.n_images() {
            return Err(FuseError::Shape { expected: self.n_images(), actual: values.len() });
        }
        let mut names = self.metric_names.clone();
        names.push(name.into());
        let rows = (0..self.n_images())
            .map(|i| {
                let mut r = self.row(i).to_vec();
                r.push(values[i]);
                r
            })
            .collect();
        ScoreTable::new(self.dataset_name.clone(), self.image_ids.clone(), names, rows, self.mos.clone())
    }

    /// Stacks tables that share a metric set (matched by name, in the first
    /// table's order). Image ids are qualified as `<dataset>:<id>`.
    pub fn concat(tables: &[ScoreTable]) -> Result<ScoreTable> {
        let first = tables
            .first()
            .ok_or_else(|| FuseError::Data("no score tables to combine".into()))?;
        if tables.len() == 1 {
            return Ok(first.clone());
        }
        let names = first.metric_names.clone();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut mos = Some(Vec::new());
        for t in tables {
            if t.n_metrics() != names.len() {
                return Err(FuseError::Data(format!(
                    "dataset `{}` has {} metrics, expected {}",
                    t.dataset_name,
                    t.n_metrics(),
                    names.len()
                )));
            }
            let t = t.select_metrics(&names)?;
            for i in 0..t.n_images() {
                ids.push(format!("{}:{}", t.dataset_name, t.image_ids[i]));
                rows.push(t.row(i).to_vec());
            }
            match (&mut mos, t.mos()) {
                (Some(acc), Some(m)) => acc.extend_from_slice(m),
                _ => mos = None,
            }
        }
        let name = tables.iter().map(|t| t.dataset_name.as_str()).collect::<Vec<_>>().join("+");
        ScoreTable::new(name, ids, names, rows, mos)
    }
}

impl<'a> ScoreView<'a> {
    pub fn dataset_name(&self) -> &'a str {
        self.dataset_name
    }

    pub fn image_ids(&self) -> &'a [String] {
        self.image_ids
    }

    pub fn metric_names(&self) -> &'a [String] {
        self.metric_names
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn n_metrics(&self) -> usize {
        self.metric_names.len()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        let m = self.n_metrics();
        &self.scores[i * m..(i + 1) * m]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_images()).map(|i| self.row(i)[j]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_metrics()).map(|j| self.column(j)).collect()
    }
}

/// Reads `image_id[,mos],<metric>...`. Lines starting with `#` are comments.
pub fn load_csv(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| FuseError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scores".into());
    read_csv(file, &name, &path.display().to_string())
}

/// [`load_csv`] over any reader; `source` names the input in error messages.
pub fn read_csv<R: Read>(reader: R, dataset_name: &str, source: &str) -> Result<ScoreTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(false)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| FuseError::format(source, e.to_string()))?,
        None => return Err(FuseError::format(source, "missing header row")),
    };
    let cols: Vec<String> = header.iter().map(str::to_string).collect();
    if cols.first().map(String::as_str) != Some("image_id") {
        return Err(FuseError::format(source, "header must start with `image_id`"));
    }
    let has_mos = cols.get(1).map(String::as_str) == Some("mos");
    let first_metric = if has_mos { 2 } else { 1 };
    let metric_names = cols[first_metric..].to_vec();
    if metric_names.is_empty() {
        return Err(FuseError::format(source, "header names no metric columns"));
    }

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut mos = Vec::new();
    for (line, rec) in records.enumerate() {
        let row_no = line + 1;
        let rec = rec.map_err(|e| FuseError::format(source, e.to_string()))?;
        if rec.len() != cols.len() {
            return Err(FuseError::format(
                source,
                format!("row {row_no}: expected {} fields, found {}", cols.len(), rec.len()),
            ));
        }
        let parse = |col: usize| -> Result<f64> {
            let cell = &rec[col];
            cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                FuseError::format(
                    source,
                    format!("row {row_no}, column {} (`{}`): not a number: `{cell}`", col + 1, cols[col]),
                )
            })
        };
        ids.push(rec[0].to_string());
        if has_mos {
            mos.push(parse(1)?);
        }
        rows.push((first_metric..cols.len()).map(parse).collect::<Result<Vec<_>>>()?);
    }
    ScoreTable::new(dataset_name, ids, metric_names, rows, has_mos.then_some(mos))
}

/// Writes a table in the [`load_csv`] layout. Every number is written with
/// shortest round-trip precision.
pub fn write_csv<W: Write>(table: &ScoreTable, writer: W, comment: Option<&str>) -> Result<()> {
    let mut writer = writer;
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(writer, "# {line}").map_err(|e| FuseError::io("<csv>", e))?;
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| FuseError::format("<csv>", e.to_string());
    let mut header = vec!["image_id".to_string()];
    if table.mos().is_some() {
        header.push("mos".into());
    }
    header.extend(table.metric_names().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..table.n_images() {
        let mut rec = vec![table.image_ids()[i].clone()];
        if let Some(mos) = table.mos() {
            rec.push(mos[i].to_string());
        }
        rec.extend(table.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| FuseError::io("<csv>", e))
}

pub fn save_csv(table: &ScoreTable, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| FuseError::io(path, e))?;
    write_csv(table, std::io::BufWriter::new(file), comment)
}
