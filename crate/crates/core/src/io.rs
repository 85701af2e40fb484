//! File formats: dataset and network CSVs, JSON documents, training logs and
//! run manifests. Every write goes through [`write_atomic`].

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dag::WeightedGraph;
use crate::error::{NotmadError, Result};
use crate::notmad::EpochRecord;
use crate::sem::Dataset;

pub const NETWORK_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NotmadError + '_ {
    move |source| NotmadError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| NotmadError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| NotmadError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Shortest text that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| NotmadError::invalid(format!("csv buffer: {e}")))
}

/// Writes `x_0..x_{p-1}, c_0..c_{m-1}[, group]`, one row per sample.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv_writer();
    let mut header: Vec<String> = (0..data.p()).map(|j| format!("x_{j}")).collect();
    header.extend((0..data.m()).map(|j| format!("c_{j}")));
    if data.groups().is_some() {
        header.push("group".into());
    }
    let csv_err = |e: csv::Error| NotmadError::invalid(format!("csv write: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.x().row(i).iter().map(|&v| fmt_f64(v)).collect();
        rec.extend(data.c().row(i).iter().map(|&v| fmt_f64(v)));
        if let Some(g) = data.groups() {
            rec.push(g[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    write_atomic(path, &csv_bytes(w)?)
}

struct Layout {
    p: usize,
    m: usize,
    group: Option<usize>,
    x_cols: Vec<usize>,
    c_cols: Vec<usize>,
}

fn parse_header(path: &Path, header: &csv::StringRecord, require_x: bool) -> Result<Layout> {
    let bad = |message: String| NotmadError::Format { path: path.display().to_string(), message };
    let mut x_cols = Vec::new();
    let mut c_cols = Vec::new();
    let mut group = None;
    for (col, name) in header.iter().enumerate() {
        let name = name.trim();
        if let Some(idx) = name.strip_prefix("x_") {
            let idx: usize = idx.parse().map_err(|_| bad(format!("bad column name {name:?}")))?;
            if idx != x_cols.len() || !c_cols.is_empty() || group.is_some() {
                return Err(bad(format!("column {name:?} out of order")));
            }
            x_cols.push(col);
        } else if let Some(idx) = name.strip_prefix("c_") {
            let idx: usize = idx.parse().map_err(|_| bad(format!("bad column name {name:?}")))?;
            if idx != c_cols.len() || group.is_some() {
                return Err(bad(format!("column {name:?} out of order")));
            }
            c_cols.push(col);
        } else if name == "group" {
            if group.is_some() {
                return Err(bad("duplicate group column".into()));
            }
            group = Some(col);
        } else {
            return Err(bad(format!("unexpected column {name:?}")));
        }
    }
    if require_x && x_cols.is_empty() {
        return Err(bad("header has no x_ columns".into()));
    }
    Ok(Layout { p: x_cols.len(), m: c_cols.len(), group, x_cols, c_cols })
}

fn read_table(path: &Path, require_x: bool) -> Result<(Array2<f64>, Array2<f64>, Option<Vec<usize>>)> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| NotmadError::Format { path: path.display().to_string(), message: e.to_string() })?
        .clone();
    let layout = parse_header(path, &header, require_x)?;
    let mut xs = Vec::new();
    let mut cs = Vec::new();
    let mut groups = Vec::new();
    let mut n = 0;
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| NotmadError::Parse {
            path: path.display().to_string(),
            row,
            column: "-".into(),
            message: e.to_string(),
        })?;
        let cell = |col: usize| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("").trim();
            let err = |message: String| NotmadError::Parse {
                path: path.display().to_string(),
                row,
                column: header[col].to_string(),
                message,
            };
            let v: f64 = raw.parse().map_err(|_| err(format!("not a number: {raw:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value {raw:?}")));
            }
            Ok(v)
        };
        for &col in &layout.x_cols {
            xs.push(cell(col)?);
        }
        for &col in &layout.c_cols {
            cs.push(cell(col)?);
        }
        if let Some(col) = layout.group {
            let raw = rec.get(col).unwrap_or("").trim();
            groups.push(raw.parse::<usize>().map_err(|_| NotmadError::Parse {
                path: path.display().to_string(),
                row,
                column: "group".into(),
                message: format!("not a group label: {raw:?}"),
            })?);
        }
        n += 1;
    }
    let x = Array2::from_shape_vec((n, layout.p), xs).expect("row-major fill");
    let c = Array2::from_shape_vec((n, layout.m), cs).expect("row-major fill");
    Ok((x, c, layout.group.map(|_| groups)))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (x, c, groups) = read_table(path, true)?;
    Dataset::new(x, c, groups)
}

/// Context columns of a CSV laid out like a dataset. `x_` columns and the
/// group column are optional and ignored.
pub fn load_contexts(path: &Path) -> Result<Array2<f64>> {
    Ok(read_table(path, false)?.1)
}

/// Network CSV: a `#notmad-network,version=1,p=<p>` line followed by `p` rows.
pub fn write_network(path: &Path, w: &WeightedGraph) -> Result<()> {
    let mut out = format!("#notmad-network,version={NETWORK_FORMAT_VERSION},p={}\n", w.p());
    for row in w.weights().rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_network(path: &Path) -> Result<WeightedGraph> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |message: String| NotmadError::Format { path: path.display().to_string(), message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 3 || fields[0] != "#notmad-network" {
        return Err(bad(format!("bad header {header:?}")));
    }
    let version: u32 = fields[1]
        .strip_prefix("version=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(format!("bad version field {:?}", fields[1])))?;
    if version != NETWORK_FORMAT_VERSION {
        return Err(bad(format!("unsupported network format version {version}")));
    }
    let p: usize = fields[2]
        .strip_prefix("p=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(format!("bad p field {:?}", fields[2])))?;
    let mut values = Vec::with_capacity(p * p);
    let mut rows = 0;
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != p {
            return Err(bad(format!("row {} has {} entries, expected {p}", i + 1, cells.len())));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| NotmadError::Parse {
                path: path.display().to_string(),
                row: i + 1,
                column: j.to_string(),
                message: format!("not a number: {cell:?}"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != p {
        return Err(bad(format!("expected {p} rows, found {rows}")));
    }
    WeightedGraph::new(Array2::from_shape_vec((p, p), values).expect("p*p values"))
}

/// Training log with header `epoch,pred_loss,mean_h,arch_l1,arch_h`.
pub fn write_training_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,pred_loss,mean_h,arch_l1,arch_h\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            fmt_f64(r.pred_loss),
            fmt_f64(r.mean_h),
            fmt_f64(r.arch_l1),
            fmt_f64(r.arch_h)
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// A file referenced by a manifest together with its content digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self { path: path.display().to_string(), sha256: file_digest(path)? })
    }
}

/// Frozen record of one CLI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, FileRecord>,
    pub outputs: BTreeMap<String, FileRecord>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.to_string(), FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.outputs.insert(name.to_string(), FileRecord::of(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}
