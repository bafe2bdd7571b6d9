//! Dataset directories, embedding files and sweep reports.
//!
//! A dataset directory holds comma-separated tables with a header row:
//!
//! | file               | columns                                   | required |
//! |--------------------|-------------------------------------------|----------|
//! | `regions.csv`      | `region_id,name`                          | yes      |
//! | `adjacency.csv`    | `region_a,region_b`                       | yes      |
//! | `trips.csv`        | `origin_id,dest_id,count`                 | yes      |
//! | `poi.csv`          | `region_id,category,count`                | yes      |
//! | `demographics.csv` | `region_id,attribute,bin_index,population`| no       |
//! | `labels.csv`       | `region_id,task,value`                    | no       |
//!
//! Region ids are `0..n`. Repeated trip, POI and demographic rows are
//! summed. An empty label value (or `NA`) marks the region as unlabelled.
//! Labels named `crime_count` and `population` are folded into one `crime`
//! rate per 10,000 residents.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::path::Path;

use csv::StringRecord;
use regionvec_core::data::{Dataset, RegionSet};
use regionvec_core::downstream::EvalReport;
use regionvec_core::Matrix;

use crate::error::{Error, Result};

pub const CRIME_COUNT: &str = "crime_count";
pub const POPULATION: &str = "population";
pub const CRIME: &str = "crime";
const CRIME_PER: f64 = 10_000.0;

struct Table {
    file: String,
    rows: Vec<(u64, StringRecord)>,
}

fn read_table(path: &Path, header: &[&str]) -> Result<Table> {
    let file = path
        .file_name()
        .map_or_else(String::new, |f| f.to_string_lossy().into_owned());
    let handle = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(handle);
    let malformed = |line: u64, message: String| Error::Malformed {
        file: file.clone(),
        line,
        message,
    };
    let found = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(malformed(
            1,
            format!("expected header `{}`", header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record));
    }
    Ok(Table { file, rows })
}

fn open_table(dir: &Path, name: &'static str, header: &[&str]) -> Result<Option<Table>> {
    let path = dir.join(format!("{name}.csv"));
    if !path.is_file() {
        return Ok(None);
    }
    read_table(&path, header).map(Some)
}

impl Table {
    fn malformed(&self, line: u64, message: String) -> Error {
        Error::Malformed {
            file: self.file.clone(),
            line,
            message,
        }
    }

    fn id(&self, line: u64, field: &str, n: usize) -> Result<usize> {
        let id: u64 = field.parse().map_err(|_| {
            self.malformed(
                line,
                format!("region id `{field}` is not a nonnegative integer"),
            )
        })?;
        if id >= n as u64 {
            return Err(Error::UnknownRegion {
                file: self.file.clone(),
                line,
                id,
            });
        }
        Ok(id as usize)
    }

    fn number(&self, line: u64, field: &str, what: &str) -> Result<f64> {
        field
            .parse()
            .map_err(|_| self.malformed(line, format!("{what} `{field}` is not a number")))
    }
}

fn load_regions(table: &Table) -> Result<RegionSet> {
    let n = table.rows.len();
    let mut names: Vec<Option<Option<String>>> = vec![None; n];
    for (line, row) in &table.rows {
        let id: usize = row[0].parse().ok().filter(|&id| id < n).ok_or_else(|| {
            table.malformed(*line, format!("region id `{}` is outside 0..{n}", &row[0]))
        })?;
        if names[id].is_some() {
            return Err(table.malformed(*line, format!("duplicate region id {id}")));
        }
        names[id] = Some((!row[1].is_empty()).then(|| row[1].to_string()));
    }
    Ok(RegionSet::new(
        names.into_iter().map(Option::flatten).collect(),
    )?)
}

/// Reads a dataset directory; see the module docs for the layout.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let required = |name: &'static str, header: &[&str]| {
        open_table(dir, name, header)?.ok_or(Error::MissingFile(name))
    };
    let regions = load_regions(&required("regions", &["region_id", "name"])?)?;
    let n = regions.len();

    let table = required("adjacency", &["region_a", "region_b"])?;
    let mut adjacency = BTreeSet::new();
    for (line, row) in &table.rows {
        let (a, b) = (table.id(*line, &row[0], n)?, table.id(*line, &row[1], n)?);
        adjacency.insert((a.min(b), a.max(b)));
    }

    let table = required("trips", &["origin_id", "dest_id", "count"])?;
    let mut trips = Matrix::zeros(n, n);
    for (line, row) in &table.rows {
        let (o, d) = (table.id(*line, &row[0], n)?, table.id(*line, &row[1], n)?);
        trips[(o, d)] += table.number(*line, &row[2], "count")?;
    }

    let table = required("poi", &["region_id", "category", "count"])?;
    let categories: Vec<String> = table
        .rows
        .iter()
        .map(|(_, r)| r[1].to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut poi_counts = Matrix::zeros(n, categories.len());
    for (line, row) in &table.rows {
        let i = table.id(*line, &row[0], n)?;
        let c = categories
            .binary_search_by(|k| k.as_str().cmp(&row[1]))
            .expect("collected above");
        poi_counts[(i, c)] += table.number(*line, &row[2], "count")?;
    }

    let mut demographics = BTreeMap::new();
    if let Some(table) = open_table(
        dir,
        "demographics",
        &["region_id", "attribute", "bin_index", "population"],
    )? {
        let mut cells: BTreeMap<String, Vec<(usize, usize, f64)>> = BTreeMap::new();
        for (line, row) in &table.rows {
            let i = table.id(*line, &row[0], n)?;
            let bin: usize = row[2].parse().map_err(|_| {
                table.malformed(
                    *line,
                    format!("bin index `{}` is not a nonnegative integer", &row[2]),
                )
            })?;
            let pop = table.number(*line, &row[3], "population")?;
            cells
                .entry(row[1].to_string())
                .or_default()
                .push((i, bin, pop));
        }
        for (attr, entries) in cells {
            let bins = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
            let mut m = Matrix::zeros(n, bins);
            for (i, b, pop) in entries {
                m[(i, b)] += pop;
            }
            demographics.insert(attr, m);
        }
    }

    let mut labels: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    if let Some(table) = open_table(dir, "labels", &["region_id", "task", "value"])? {
        for (line, row) in &table.rows {
            let i = table.id(*line, &row[0], n)?;
            let value = match &row[2] {
                "" | "NA" => None,
                v => Some(table.number(*line, v, "label value")?),
            };
            let slot = &mut labels
                .entry(row[1].to_string())
                .or_insert_with(|| vec![None; n])[i];
            if slot.is_some() {
                return Err(
                    table.malformed(*line, format!("duplicate {} label for region {i}", &row[1]))
                );
            }
            *slot = value;
        }
        derive_crime_rate(&mut labels)?;
    }

    Ok(Dataset {
        regions,
        adjacency,
        poi_categories: categories,
        poi_counts,
        trips,
        demographics,
        labels,
    })
}

/// Replaces `crime_count` and `population` labels by a `crime` rate.
fn derive_crime_rate(labels: &mut BTreeMap<String, Vec<Option<f64>>>) -> Result<()> {
    if !labels.contains_key(CRIME_COUNT) || !labels.contains_key(POPULATION) {
        return Ok(());
    }
    if labels.contains_key(CRIME) {
        return Err(regionvec_core::Error::InvalidDataset(format!(
            "labels give both {CRIME} and {CRIME_COUNT}/{POPULATION}"
        ))
        .into());
    }
    let counts = labels.remove(CRIME_COUNT).expect("checked");
    let population = labels.remove(POPULATION).expect("checked");
    let rate = counts
        .iter()
        .zip(&population)
        .map(|(c, p)| match (c, p) {
            (Some(c), Some(p)) if *p > 0.0 => Some(c / p * CRIME_PER),
            _ => None,
        })
        .collect();
    labels.insert(CRIME.to_string(), rate);
    Ok(())
}

fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let fail = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `d` in the directory layout [`load_dataset`] reads. Zero trips
/// are omitted; every other table is written in full, in id order.
pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    create_dir(dir)?;
    let n = d.n();
    write_table(
        &dir.join("regions.csv"),
        &["region_id", "name"],
        (0..n).map(|i| vec![i.to_string(), d.regions.name(i).unwrap_or("").to_string()]),
    )?;
    write_table(
        &dir.join("adjacency.csv"),
        &["region_a", "region_b"],
        d.adjacency
            .iter()
            .map(|(a, b)| vec![a.to_string(), b.to_string()]),
    )?;
    write_table(
        &dir.join("trips.csv"),
        &["origin_id", "dest_id", "count"],
        (0..n).flat_map(|i| {
            (0..n)
                .filter(move |&j| d.trips[(i, j)] != 0.0)
                .map(move |j| vec![i.to_string(), j.to_string(), d.trips[(i, j)].to_string()])
        }),
    )?;
    write_table(
        &dir.join("poi.csv"),
        &["region_id", "category", "count"],
        (0..n).flat_map(|i| {
            d.poi_categories.iter().enumerate().map(move |(c, name)| {
                vec![
                    i.to_string(),
                    name.clone(),
                    d.poi_counts[(i, c)].to_string(),
                ]
            })
        }),
    )?;
    if !d.demographics.is_empty() {
        let mut rows = Vec::new();
        for i in 0..n {
            for (attr, m) in &d.demographics {
                for b in 0..m.cols() {
                    rows.push(vec![
                        i.to_string(),
                        attr.clone(),
                        b.to_string(),
                        m[(i, b)].to_string(),
                    ]);
                }
            }
        }
        write_table(
            &dir.join("demographics.csv"),
            &["region_id", "attribute", "bin_index", "population"],
            rows,
        )?;
    }
    if !d.labels.is_empty() {
        let mut rows = Vec::new();
        for i in 0..n {
            for (task, values) in &d.labels {
                let value = values[i].map_or_else(String::new, |v| v.to_string());
                rows.push(vec![i.to_string(), task.clone(), value]);
            }
        }
        write_table(
            &dir.join("labels.csv"),
            &["region_id", "task", "value"],
            rows,
        )?;
    }
    Ok(())
}

/// `latents.csv`: region_id,factor,value.
pub fn write_latents(dir: &Path, latents: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    create_dir(dir)?;
    let n = latents.values().map(Vec::len).max().unwrap_or(0);
    let rows = (0..n).flat_map(|i| {
        latents
            .iter()
            .map(move |(factor, values)| vec![i.to_string(), factor.clone(), values[i].to_string()])
    });
    write_table(
        &dir.join("latents.csv"),
        &["region_id", "factor", "value"],
        rows,
    )
}

pub fn read_latents(dir: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let table = read_table(&dir.join("latents.csv"), &["region_id", "factor", "value"])?;
    let mut cells: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for (line, row) in &table.rows {
        let i = table.id(*line, &row[0], usize::MAX)?;
        let v = table.number(*line, &row[2], "value")?;
        cells.entry(row[1].to_string()).or_default().insert(i, v);
    }
    Ok(cells
        .into_iter()
        .map(|(k, v)| (k, v.into_values().collect()))
        .collect())
}

/// Header `region_id,e0,…,e{d−1}`, one row per region. Values use the
/// shortest decimal form that parses back to the same `f64`.
pub fn write_embeddings(path: &Path, e: &Matrix) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut header = vec!["region_id".to_string()];
    header.extend((0..e.cols()).map(|j| format!("e{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        path,
        &header,
        (0..e.rows()).map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(e.row(i).iter().map(f64::to_string));
            row
        }),
    )
}

pub fn read_embeddings(path: &Path) -> Result<Matrix> {
    let handle = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(handle);
    let file = path.display().to_string();
    let header = reader
        .headers()
        .map_err(|e| Error::Malformed {
            file: file.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let d = header.len().saturating_sub(1);
    let expected = std::iter::once("region_id".to_string()).chain((0..d).map(|j| format!("e{j}")));
    if d == 0 || header.iter().ne(expected) {
        return Err(Error::Malformed {
            file,
            line: 1,
            message: "expected header `region_id,e0,...`".into(),
        });
    }
    let table = Table {
        file,
        rows: reader
            .records()
            .map(|r| {
                let r = r.map_err(|e| Error::Malformed {
                    file: path.display().to_string(),
                    line: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                })?;
                Ok((r.position().map_or(0, |p| p.line()), r))
            })
            .collect::<Result<_>>()?,
    };
    let n = table.rows.len();
    let mut out: Vec<Option<Vec<f64>>> = vec![None; n];
    for (line, row) in &table.rows {
        let i = table.id(*line, &row[0], n)?;
        if out[i].is_some() {
            return Err(table.malformed(*line, format!("duplicate region id {i}")));
        }
        out[i] = Some(
            (1..=d)
                .map(|j| table.number(*line, &row[j], "embedding value"))
                .collect::<Result<_>>()?,
        );
    }
    let rows: Vec<Vec<f64>> = out
        .into_iter()
        .map(|r| r.expect("n distinct ids below n"))
        .collect();
    Ok(Matrix::from_rows(&rows)?)
}

/// Pretty-printed JSON array of report rows.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
