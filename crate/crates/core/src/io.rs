//! Result persistence and run manifests.
//!
//! Numeric tables are CSV with a `#` comment preamble naming the format
//! version and the unit convention; values carry 17 significant digits so
//! they reload bit-identically. Keys additionally have a binary container
//! that stores the samples at full precision together with their metadata.
//!
//! An output directory has a single writer: [`write_results`] takes a lock
//! file, writes every artifact, records its SHA-256 in `manifest.json` and
//! removes everything it wrote if any step fails.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{DefaultedField, LoadedConfig, UNITS};
use crate::disorder::{CorrelationSpec, KeyProfile};
use crate::error::{Error, Result};
use crate::grid::{SpaceTimeGrid, TimeGrid};
use crate::harness::{BruteForceReport, HeatmapTable, KeyTestReport, ShiftSweep};
use crate::propagation::SimResult;
use crate::protocol::FieldSchedule;

pub const CSV_FORMAT: &str = "dmem-csv/1";
pub const MANIFEST_FORMAT: &str = "dmem-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".dmem.lock";
const KEY_MAGIC: &[u8; 8] = b"DMEMKEY\0";
const KEY_VERSION: u32 = 1;

/// Column-major numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn format_value(x: f64) -> String {
    // 17 significant digits; non-finite values spell out as `NaN`/`inf`.
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn write_table(w: impl Write, table: &Table) -> Result<()> {
    let mut w = BufWriter::new(w);
    let io = |e| Error::io("writing table", e);
    writeln!(w, "# {CSV_FORMAT}").map_err(io)?;
    writeln!(w, "# units: {UNITS}").map_err(io)?;
    let mut csv = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Format {
        context: "csv".into(),
        reason: e.to_string(),
    };
    csv.write_record(&table.columns).map_err(csv_err)?;
    for row in &table.rows {
        csv.write_record(row.iter().map(|&x| format_value(x)))
            .map_err(csv_err)?;
    }
    csv.flush().map_err(io)
}

pub fn read_table(r: impl Read) -> Result<Table> {
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(r));
    let bad = |reason: String| Error::Format {
        context: "csv table".into(),
        reason,
    };
    let columns: Vec<String> = csv
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("`{f}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != columns.len() {
            return Err(bad(format!("row has {} fields, header {}", row.len(), columns.len())));
        }
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

/// Time, input and output envelopes.
pub fn trace_table(result: &SimResult) -> Table {
    let mut t = Table::new(&["t", "input_re", "input_im", "output_re", "output_im"]);
    for (n, (i, o)) in result.input.iter().zip(&result.output).enumerate() {
        t.push(vec![result.time.time(n), i.re, i.im, o.re, o.im]);
    }
    t
}

/// Recorded coherences, one row per cell and snapshot.
pub fn snapshot_table(result: &SimResult, spacing: f64) -> Table {
    let with_41 = result.snapshots.iter().any(|s| s.rho41().is_some());
    let mut cols = vec!["t", "z", "rho21_re", "rho21_im", "rho31_re", "rho31_im"];
    if with_41 {
        cols.extend(["rho41_re", "rho41_im"]);
    }
    let mut t = Table::new(&cols);
    for s in &result.snapshots {
        let r21 = s.rho21();
        let r31 = s.rho31();
        let r41 = s.rho41();
        for j in 0..r21.len() {
            let mut row = vec![
                s.t,
                (j as f64 + 0.5) * spacing,
                r21[j].re,
                r21[j].im,
                r31[j].re,
                r31[j].im,
            ];
            if let Some(r41) = &r41 {
                row.extend([r41[j].re, r41[j].im]);
            }
            t.push(row);
        }
    }
    t
}

/// Gate values of each schedule on the time grid (right limits).
pub fn schedule_table(schedules: &[FieldSchedule], grid: &TimeGrid) -> Table {
    let names: Vec<String> = (0..schedules.len()).map(|i| format!("gate_{i}")).collect();
    let mut cols = vec!["t"];
    cols.extend(names.iter().map(String::as_str));
    let mut t = Table::new(&cols);
    for n in 0..grid.len() {
        let time = grid.time(n);
        let mut row = vec![time];
        row.extend(schedules.iter().map(|s| s.gate.value(time)));
        t.push(row);
    }
    t
}

pub fn key_table(key: &KeyProfile) -> Table {
    let mut t = Table::new(&["z", "value"]);
    for (j, &v) in key.samples.iter().enumerate() {
        t.push(vec![(j as f64 + 0.5) * key.spacing, v]);
    }
    t
}

pub fn heatmap_table(table: &HeatmapTable) -> Table {
    let mut t = Table::new(&[
        "optical_depth",
        "strength",
        "coverage",
        "mean_fidelity",
        "fidelity_se",
        "mean_efficiency",
        "efficiency_se",
        "completed",
        "failures",
    ]);
    for c in &table.cells {
        t.push(vec![
            c.optical_depth,
            c.strength,
            c.coverage,
            c.mean_fidelity,
            c.fidelity_se,
            c.mean_efficiency,
            c.efficiency_se,
            c.completed as f64,
            c.failures as f64,
        ]);
    }
    t
}

pub fn shift_table(sweep: &ShiftSweep) -> Table {
    let mut t = Table::new(&["correlation_length", "delta", "delta_over_sigma", "mean", "std_error"]);
    for c in &sweep.curves {
        for p in &c.points {
            t.push(vec![
                c.correlation_length,
                p.delta,
                p.delta / c.correlation_length,
                p.mean,
                p.std_error,
            ]);
        }
    }
    t
}

pub fn brute_force_table(report: &BruteForceReport) -> Table {
    let mut t = Table::new(&["attempt", "normalized_se"]);
    for (k, &v) in report.normalized.iter().enumerate() {
        t.push(vec![k as f64, v]);
    }
    t
}

/// Input and every attempted retrieval on one time axis.
pub fn keytest_table(report: &KeyTestReport) -> Table {
    let mut names = vec!["t".to_string(), "input_re".into(), "input_im".into()];
    for tr in &report.traces {
        names.push(format!("{}_re", tr.name));
        names.push(format!("{}_im", tr.name));
    }
    let cols: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut t = Table::new(&cols);
    for (n, input) in report.input.iter().enumerate() {
        let mut row = vec![report.time.time(n), input.re, input.im];
        for tr in &report.traces {
            row.extend([tr.output[n].re, tr.output[n].im]);
        }
        t.push(row);
    }
    t
}

/// Metadata stored in front of the samples of a binary key file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyHeader {
    pub seed: Option<u64>,
    pub spec: Option<CorrelationSpec>,
    /// `alpha`, in L.
    pub master_length: f64,
    pub section_offset: f64,
    pub spacing: f64,
    pub cells: usize,
}

/// Binary key container: magic, version, JSON header, little-endian samples.
pub fn write_key_binary(mut w: impl Write, key: &KeyProfile) -> Result<()> {
    let header = KeyHeader {
        seed: key.seed,
        spec: key.spec,
        master_length: key.master_length,
        section_offset: key.section_offset,
        spacing: key.spacing,
        cells: key.samples.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format {
        context: "key header".into(),
        reason: e.to_string(),
    })?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * key.samples.len());
    buf.extend_from_slice(KEY_MAGIC);
    buf.extend_from_slice(&KEY_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in &key.samples {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io("writing key", e))
}

pub fn read_key_binary(mut r: impl Read) -> Result<KeyProfile> {
    let bad = |reason: &str| Error::Format {
        context: "key container".into(),
        reason: reason.into(),
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("reading key", e))?;
    if bytes.len() < 16 || &bytes[..8] != KEY_MAGIC {
        return Err(bad("not a key file"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    if word(8) != KEY_VERSION {
        return Err(bad("unsupported version"));
    }
    let header_end = 16 + word(12) as usize;
    let header: KeyHeader = bytes
        .get(16..header_end)
        .ok_or_else(|| bad("truncated header"))
        .and_then(|h| serde_json::from_slice(h).map_err(|e| bad(&e.to_string())))?;
    let body = &bytes[header_end..];
    if body.len() != 8 * header.cells {
        return Err(bad("sample count does not match header"));
    }
    Ok(KeyProfile {
        samples: body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        spacing: header.spacing,
        master_length: header.master_length,
        section_offset: header.section_offset,
        seed: header.seed,
        spec: header.spec,
    })
}

/// Reads a `(z, value)` key table. Seed and statistics are not part of the
/// CSV form and come back empty.
pub fn read_key_csv(r: impl Read) -> Result<KeyProfile> {
    let t = read_table(r)?;
    let (Some(z), Some(samples)) = (t.column("z"), t.column("value")) else {
        return Err(Error::Format {
            context: "key table".into(),
            reason: "needs columns `z` and `value`".into(),
        });
    };
    let spacing = match z.as_slice() {
        [a, b, ..] => b - a,
        [a] => 2.0 * a,
        [] => {
            return Err(Error::Format {
                context: "key table".into(),
                reason: "empty".into(),
            })
        }
    };
    Ok(KeyProfile {
        master_length: spacing * samples.len() as f64,
        samples,
        spacing,
        section_offset: 0.0,
        seed: None,
        spec: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub length: f64,
    pub cells: usize,
    pub dz: f64,
    pub dt: f64,
    pub steps: usize,
    pub t_end: f64,
}

impl From<&SpaceTimeGrid> for GridSummary {
    fn from(g: &SpaceTimeGrid) -> Self {
        Self {
            length: g.z.length,
            cells: g.z.cells,
            dz: g.z.spacing(),
            dt: g.t.dt,
            steps: g.t.steps,
            t_end: g.t.t_end(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
    /// Keys are secrets; the manifest flags them so they can be protected.
    pub secret: bool,
}

/// Everything needed to rerun and verify a set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub units: String,
    pub code_version: String,
    pub command: String,
    pub config_path: String,
    pub config_hash: String,
    /// The resolved config with every default written out.
    pub config: Value,
    pub defaults: Vec<DefaultedField>,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub grid: Option<GridSummary>,
    pub threads: Option<usize>,
    pub wall_time_s: f64,
    pub files: Vec<FileRecord>,
}

/// Context of a run that goes into its manifest.
pub struct RunInfo<'a> {
    pub command: &'a str,
    pub config: &'a LoadedConfig,
    pub seeds: Vec<u64>,
    pub grid: Option<SpaceTimeGrid>,
    pub threads: Option<usize>,
    pub wall_time: Duration,
}

/// One file of a result set.
pub enum Artifact<'a> {
    Table {
        name: &'a str,
        table: Table,
    },
    Json {
        name: &'a str,
        value: Value,
    },
    /// Written both as CSV (`name.csv`) and binary container (`name.key`).
    Key {
        name: &'a str,
        key: &'a KeyProfile,
    },
}

pub fn json_artifact<'a>(name: &'a str, value: &impl Serialize) -> Result<Artifact<'a>> {
    Ok(Artifact::Json {
        name,
        value: serde_json::to_value(value).map_err(|e| Error::Format {
            context: name.into(),
            reason: e.to_string(),
        })?,
    })
}

/// Writer that owns an output directory until [`OutputDir::commit`]; dropping
/// it earlier deletes whatever it wrote.
struct OutputDir {
    dir: PathBuf,
    created: bool,
    written: Vec<PathBuf>,
    records: Vec<FileRecord>,
    committed: bool,
}

impl OutputDir {
    fn open(dir: &Path) -> Result<Self> {
        let created = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let lock = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| Error::io(format!("locking {} (is another run writing here?)", dir.display()), e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created,
            written: Vec::new(),
            records: Vec::new(),
            committed: false,
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8], secret: bool) -> Result<()> {
        let path = self.dir.join(name);
        if self.written.contains(&path) {
            return Err(Error::invalid("artifact", format!("`{name}` written twice")));
        }
        self.written.push(path.clone());
        let mut f = File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(bytes)
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        self.records.push(FileRecord {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
            secret,
        });
        Ok(())
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
        let _ = fs::remove_file(self.dir.join(LOCK_FILE));
        if !self.committed && self.created {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn to_json_bytes(value: &impl Serialize, context: &str) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format {
        context: context.into(),
        reason: e.to_string(),
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `artifacts` and a manifest into `dir`. Either everything is written
/// or nothing is left behind.
pub fn write_results(dir: &Path, info: &RunInfo<'_>, artifacts: &[Artifact<'_>]) -> Result<RunManifest> {
    let mut out = OutputDir::open(dir)?;
    for a in artifacts {
        match a {
            Artifact::Table { name, table } => {
                let mut bytes = Vec::new();
                write_table(&mut bytes, table)?;
                out.put(&format!("{name}.csv"), &bytes, false)?;
            }
            Artifact::Json { name, value } => {
                out.put(&format!("{name}.json"), &to_json_bytes(value, name)?, false)?;
            }
            Artifact::Key { name, key } => {
                let mut bytes = Vec::new();
                write_table(&mut bytes, &key_table(key))?;
                out.put(&format!("{name}.csv"), &bytes, true)?;
                let mut bytes = Vec::new();
                write_key_binary(&mut bytes, key)?;
                out.put(&format!("{name}.key"), &bytes, true)?;
            }
        }
    }
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        units: UNITS.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        command: info.command.into(),
        config_path: info.config.path.display().to_string(),
        config_hash: info.config.hash.clone(),
        config: info.config.resolved.clone(),
        defaults: info.config.defaults.clone(),
        master_seed: info.config.run.master_seed(),
        seeds: info.seeds.clone(),
        grid: info.grid.as_ref().map(GridSummary::from),
        threads: info.threads,
        wall_time_s: info.wall_time.as_secs_f64(),
        files: out.records.clone(),
    };
    out.put(MANIFEST_FILE, &to_json_bytes(&manifest, MANIFEST_FILE)?, false)?;
    out.commit();
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        context: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Names of files whose content no longer matches the manifest.
pub fn verify_checksums(dir: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for f in &manifest.files {
        let path = dir.join(&f.name);
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if hex::encode(Sha256::digest(&bytes)) != f.sha256 {
            bad.push(f.name.clone());
        }
    }
    Ok(bad)
}
