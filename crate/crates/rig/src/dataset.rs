//! On-disk layout of simulated datasets.
//!
//! A dataset directory holds `manifest.csv`, `layout.csv` and one
//! `case_NNN.csv` per operating condition. Case files have the columns
//! `timestamp`, one per temperature sensor, one per vibration sensor,
//! `speed`, `F_x`, `F_y`. Window files (the preprocessed form) have
//! `case_id, seen, F_x, F_y` followed by every window value, named
//! `<sensor>@<k>` and `speed@<k>`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! reading a file back gives bit-identical values.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use htgnn_core::hetgraph::{MetaType, RigLayout};
use htgnn_core::WindowSample;
use htgnn_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::conditions::OperatingCondition;
use crate::error::{Result, RigError};
use crate::simulate::{CaseRecording, Simulator};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LAYOUT_FILE: &str = "layout.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseRole {
    /// Condition available for training; its later windows are tested.
    Seen,
    /// Condition held out of training entirely.
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: usize,
    #[serde(rename = "F_x")]
    pub fx: f64,
    #[serde(rename = "F_y")]
    pub fy: f64,
    pub speed: f64,
    pub duration: usize,
    pub split: CaseRole,
}

impl ManifestEntry {
    pub fn condition(&self) -> OperatingCondition {
        OperatingCondition {
            fx: self.fx,
            fy: self.fy,
            speed: self.speed,
        }
    }
}

pub fn case_file_name(case_id: usize) -> String {
    format!("case_{case_id:03}.csv")
}

fn sensor_ids(layout: &RigLayout, meta: MetaType) -> Vec<String> {
    layout.ordered(meta).into_iter().map(|n| n.id).collect()
}

/// Simulates every condition with its own random stream. Case `i` uses
/// stream `i` of `seed`.
pub fn simulate_all(
    sim: &Simulator,
    conditions: &[OperatingCondition],
    duration: usize,
    seed: u64,
) -> Result<Vec<CaseRecording>> {
    conditions
        .iter()
        .enumerate()
        .map(|(i, c)| sim.simulate_case(c, duration, seed, i))
        .collect()
}

pub fn write_case_csv<W: Write>(writer: W, rec: &CaseRecording, layout: &RigLayout) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(sensor_ids(layout, MetaType::T));
    header.extend(sensor_ids(layout, MetaType::V));
    header.extend(["speed", "F_x", "F_y"].map(String::from));
    if header.len() != 4 + rec.temperature.len() + rec.vibration.len() {
        return Err(RigError::Format("recording does not match the layout".into()));
    }
    w.write_record(&header)?;
    for t in 0..rec.duration {
        let mut row = vec![t.to_string()];
        row.extend(rec.temperature.iter().chain(&rec.vibration).map(|r| r[t].to_string()));
        row.extend([rec.speed[t], rec.fx[t], rec.fy[t]].map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse(field: &str, what: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| RigError::Format(format!("{what}: cannot parse {field:?}")))
}

pub fn read_case_csv<R: Read>(reader: R, layout: &RigLayout, condition: OperatingCondition) -> Result<CaseRecording> {
    let mut r = csv::Reader::from_reader(reader);
    let t_ids = sensor_ids(layout, MetaType::T);
    let v_ids = sensor_ids(layout, MetaType::V);
    let mut expected = vec!["timestamp"];
    expected.extend(t_ids.iter().map(String::as_str));
    expected.extend(v_ids.iter().map(String::as_str));
    expected.extend(["speed", "F_x", "F_y"]);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != expected {
        return Err(RigError::Format(format!("unexpected case header {header:?}")));
    }
    let (n_t, n_v) = (t_ids.len(), v_ids.len());
    let mut temperature = vec![Vec::new(); n_t];
    let mut vibration = vec![Vec::new(); n_v];
    let (mut speed, mut fx, mut fy) = (Vec::new(), Vec::new(), Vec::new());
    for (t, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.get(0) != Some(t.to_string().as_str()) {
            return Err(RigError::Format(format!("timestamp of row {t} is out of sequence")));
        }
        let col = |i: usize| parse(&rec[i], expected[i]);
        for (k, row) in temperature.iter_mut().enumerate() {
            row.push(col(1 + k)?);
        }
        for (k, row) in vibration.iter_mut().enumerate() {
            row.push(col(1 + n_t + k)?);
        }
        speed.push(col(1 + n_t + n_v)?);
        fx.push(col(2 + n_t + n_v)?);
        fy.push(col(3 + n_t + n_v)?);
    }
    Ok(CaseRecording {
        condition,
        duration: speed.len(),
        temperature,
        vibration,
        speed,
        fx,
        fy,
    })
}

pub fn write_manifest<W: Write>(writer: W, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestEntry>> {
    let entries: Vec<ManifestEntry> = csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    for (i, e) in entries.iter().enumerate() {
        if e.case_id != i {
            return Err(RigError::Format(format!("manifest row {i} has case id {}", e.case_id)));
        }
    }
    Ok(entries)
}

/// A dataset held in memory together with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: RigLayout,
    pub manifest: Vec<ManifestEntry>,
    pub cases: Vec<CaseRecording>,
}

impl Dataset {
    /// Pairs recordings with manifest rows; `unseen` lists held-out case ids.
    pub fn new(layout: RigLayout, cases: Vec<CaseRecording>, unseen: &[usize]) -> Self {
        let manifest = cases
            .iter()
            .enumerate()
            .map(|(i, c)| ManifestEntry {
                case_id: i,
                fx: c.condition.fx,
                fy: c.condition.fy,
                speed: c.condition.speed,
                duration: c.duration,
                split: if unseen.contains(&i) { CaseRole::Unseen } else { CaseRole::Seen },
            })
            .collect();
        Self { layout, manifest, cases }
    }

    /// Writes the dataset into `dir`, creating it if needed. Returns the
    /// paths written.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join(LAYOUT_FILE);
        self.layout.write_csv(File::create(&path)?)?;
        written.push(path);
        let path = dir.join(MANIFEST_FILE);
        write_manifest(File::create(&path)?, &self.manifest)?;
        written.push(path);
        for (i, case) in self.cases.iter().enumerate() {
            let path = dir.join(case_file_name(i));
            write_case_csv(std::io::BufWriter::new(File::create(&path)?), case, &self.layout)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let layout = RigLayout::from_csv(File::open(dir.join(LAYOUT_FILE))?)?;
        let manifest = read_manifest(File::open(dir.join(MANIFEST_FILE))?)?;
        let cases = manifest
            .iter()
            .map(|e| {
                let file = File::open(dir.join(case_file_name(e.case_id)))?;
                let rec = read_case_csv(std::io::BufReader::new(file), &layout, e.condition())?;
                if rec.duration != e.duration {
                    return Err(RigError::Format(format!(
                        "case {} has {} rows, manifest says {}",
                        e.case_id, rec.duration, e.duration
                    )));
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layout, manifest, cases })
    }

    pub fn unseen_ids(&self) -> Vec<usize> {
        self.manifest.iter().filter(|e| e.split == CaseRole::Unseen).map(|e| e.case_id).collect()
    }
}

fn window_header(layout: &RigLayout, window: usize) -> Vec<String> {
    let mut h: Vec<String> = ["case_id", "seen", "F_x", "F_y"].map(String::from).to_vec();
    let ids = sensor_ids(layout, MetaType::T)
        .into_iter()
        .chain(sensor_ids(layout, MetaType::V))
        .chain(std::iter::once("speed".to_string()));
    for id in ids {
        h.extend((0..window).map(|k| format!("{id}@{k}")));
    }
    h
}

pub fn write_windows_csv<W: Write>(writer: W, windows: &[WindowSample], layout: &RigLayout, window: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(window_header(layout, window))?;
    let (n_t, n_v) = (layout.ordered(MetaType::T).len(), layout.ordered(MetaType::V).len());
    for s in windows {
        s.validate(n_t, n_v, window)?;
        let mut row = vec![s.case_id.to_string(), u8::from(s.seen).to_string(), s.y[0].to_string(), s.y[1].to_string()];
        row.extend(
            s.x_t.data().iter().chain(s.x_v.data()).chain(s.w.data()).map(|v| v.to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads windows written by [`write_windows_csv`]. The window length is
/// recovered from the header.
pub fn read_windows_csv<R: Read>(reader: R, layout: &RigLayout) -> Result<(usize, Vec<WindowSample>)> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let (n_t, n_v) = (layout.ordered(MetaType::T).len(), layout.ordered(MetaType::V).len());
    let rows = n_t + n_v + 1;
    let values = header.len().saturating_sub(4);
    if values == 0 || !values.is_multiple_of(rows) {
        return Err(RigError::Format(format!("window header has {} columns", header.len())));
    }
    let window = values / rows;
    if header != window_header(layout, window) {
        return Err(RigError::Format("window header does not match the layout".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let case_id = rec[0]
            .parse()
            .map_err(|_| RigError::Format(format!("bad case id {:?}", &rec[0])))?;
        let seen = match &rec[1] {
            "0" => false,
            "1" => true,
            other => return Err(RigError::Format(format!("bad seen flag {other:?}"))),
        };
        let vals = (4..rec.len()).map(|i| parse(&rec[i], &header[i])).collect::<Result<Vec<f64>>>()?;
        let (t, rest) = vals.split_at(n_t * window);
        let (v, w) = rest.split_at(n_v * window);
        out.push(WindowSample {
            x_t: Tensor::new(vec![n_t, window], t.to_vec())?,
            x_v: Tensor::new(vec![n_v, window], v.to_vec())?,
            w: Tensor::vector(w.to_vec()),
            y: [parse(&rec[2], "F_x")?, parse(&rec[3], "F_y")?],
            case_id,
            seen,
        });
    }
    Ok((window, out))
}
