//! On-disk formats: trajectory CSVs with a JSON manifest, and JSON files for
//! models, mixtures and worst-case results. Matrices are stored row-major as
//! arrays of rows.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use drefc_core::koopman::{DictionarySpec, KoopmanModel};
use drefc_core::sfr::{Dataset, DatasetSpec, Disturbance, SfrParams, Trajectory};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub params: SfrParams,
    pub spec: DatasetSpec,
    pub disturbances: Vec<Disturbance>,
    pub noise_seeds: Vec<u64>,
    pub files: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajRow {
    time: f64,
    freq_dev: f64,
    true_freq_dev: f64,
    injected_power: f64,
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for i in 0..traj.len() {
        w.serialize(TrajRow {
            time: traj.times[i],
            freq_dev: traj.freq_dev[i],
            true_freq_dev: traj.true_freq_dev[i],
            injected_power: traj.injected_power[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path, noise_seed: u64) -> Result<Trajectory> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut t = Trajectory {
        times: Vec::new(),
        freq_dev: Vec::new(),
        injected_power: Vec::new(),
        noise_seed,
        true_freq_dev: Vec::new(),
    };
    for row in r.deserialize() {
        let row: TrajRow = row.with_context(|| format!("reading {}", path.display()))?;
        t.times.push(row.time);
        t.freq_dev.push(row.freq_dev);
        t.true_freq_dev.push(row.true_freq_dev);
        t.injected_power.push(row.injected_power);
    }
    Ok(t)
}

/// Writes `traj_NNNN.csv` files and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(ds.trajectories.len());
    for (i, traj) in ds.trajectories.iter().enumerate() {
        let name = format!("traj_{i:04}.csv");
        write_trajectory_csv(&dir.join(&name), traj)?;
        files.push(name);
    }
    let manifest = Manifest {
        params: ds.params.clone(),
        spec: ds.spec.clone(),
        disturbances: ds.disturbances.clone(),
        noise_seeds: ds.trajectories.iter().map(|t| t.noise_seed).collect(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    ensure!(
        manifest.files.len() == manifest.noise_seeds.len()
            && manifest.files.len() == manifest.disturbances.len(),
        "manifest lists {} files, {} seeds and {} disturbances",
        manifest.files.len(),
        manifest.noise_seeds.len(),
        manifest.disturbances.len()
    );
    let trajectories = manifest
        .files
        .iter()
        .zip(&manifest.noise_seeds)
        .map(|(f, &s)| read_trajectory_csv(&dir.join(f), s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        params: manifest.params,
        spec: manifest.spec,
        disturbances: manifest.disturbances,
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub dict: DictionarySpec,
    pub training_residual: f64,
    pub sample_dt: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        bail!("{what} has rows of different lengths");
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<&KoopmanModel> for ModelFile {
    fn from(m: &KoopmanModel) -> Self {
        Self {
            a: rows(&m.a),
            b: rows(&m.b),
            c: m.c.iter().copied().collect(),
            dict: m.dict.clone(),
            training_residual: m.training_residual,
            sample_dt: m.sample_dt,
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<KoopmanModel> {
        let mut model = KoopmanModel::from_parts(
            from_rows(&self.a, "A")?,
            from_rows(&self.b, "B")?,
            self.dict,
            self.sample_dt,
        )?;
        ensure!(
            self.c.len() == model.lift_dim(),
            "C has length {}, lift has {}",
            self.c.len(),
            model.lift_dim()
        );
        model.c = DVector::from_vec(self.c);
        model.training_residual = self.training_residual;
        Ok(model)
    }
}

pub fn write_model(path: &Path, model: &KoopmanModel) -> Result<()> {
    write_json(path, &ModelFile::from(model))
}

pub fn read_model(path: &Path) -> Result<KoopmanModel> {
    read_json::<ModelFile>(path)?.into_model()
}

/// Reads a sample file: a JSON array of numbers, or a CSV whose first
/// column holds the values (a non-numeric header row is skipped).
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        return read_json(path);
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let Some(field) = rec.get(0) else { continue };
        match field.trim().parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => bail!("{}: row {}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
