//! Run directories: manifest, free-energy trace and parameter snapshots.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::em::RunLogger;
use crate::error::{Error, Result};
use crate::io::array::{load_array, save_array};
use crate::linalg::DenseMatrix;
use crate::model::Model;

pub const FREE_ENERGY_FILE: &str = "free_energy.csv";
pub const FREE_ENERGY_HEADER: &str = "iteration,free_energy,seconds";

/// Parameter sets at or above this many floats are checkpointed every
/// [`SPARSE_CHECKPOINT_EVERY`] iterations instead of every iteration.
pub const LARGE_PARAMS: usize = 1_000_000;
pub const SPARSE_CHECKPOINT_EVERY: usize = 10;

#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn open(path: &Path) -> Result<Self> {
        if !path.is_dir() {
            return Err(Error::data(format!("run directory {} does not exist", path.display())));
        }
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file_name(tag: &str, param: &str) -> String {
        format!("{tag}.{param}.prsp")
    }

    /// Writes each array as `TAG.NAME.prsp`; returns name → file name.
    pub fn save_params(&self, tag: &str, arrays: &BTreeMap<String, DenseMatrix>) -> Result<BTreeMap<String, String>> {
        let mut files = BTreeMap::new();
        for (name, m) in arrays {
            let file = Self::file_name(tag, name);
            save_array(&self.path.join(&file), m)?;
            files.insert(name.clone(), file);
        }
        Ok(files)
    }

    pub fn load_params(&self, files: &BTreeMap<String, String>) -> Result<BTreeMap<String, DenseMatrix>> {
        files
            .iter()
            .map(|(name, file)| Ok((name.clone(), load_array(&self.path.join(file))?)))
            .collect()
    }
}

/// Reads `iteration,free_energy,seconds` rows.
pub fn read_free_energy(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Streams the trace to CSV and snapshots parameters into a [`RunDir`].
pub struct RunDirLogger<'a, M: Model> {
    model: &'a M,
    dir: &'a RunDir,
    trace: BufWriter<File>,
    checkpoint_every: Option<usize>,
    checkpoint_files: BTreeMap<String, String>,
}

impl<'a, M: Model> RunDirLogger<'a, M> {
    pub fn new(model: &'a M, dir: &'a RunDir) -> Result<Self> {
        let path = dir.path().join(FREE_ENERGY_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut trace = BufWriter::new(file);
        writeln!(trace, "{FREE_ENERGY_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            model,
            dir,
            trace,
            checkpoint_every: None,
            checkpoint_files: BTreeMap::new(),
        })
    }

    pub fn checkpoint_files(&self) -> &BTreeMap<String, String> {
        &self.checkpoint_files
    }

    fn every(&mut self, arrays: &BTreeMap<String, DenseMatrix>) -> usize {
        *self.checkpoint_every.get_or_insert_with(|| {
            let floats: usize = arrays.values().map(|m| m.data().len()).sum();
            if floats < LARGE_PARAMS {
                1
            } else {
                SPARSE_CHECKPOINT_EVERY
            }
        })
    }
}

impl<M: Model> RunLogger<M::Params> for RunDirLogger<'_, M> {
    fn iteration(&mut self, iteration: usize, free_energy: f64, seconds: f64, params: &M::Params) -> Result<()> {
        let path = self.dir.path().join(FREE_ENERGY_FILE);
        // `{}` on f64 prints the shortest string that parses back to the same value
        writeln!(self.trace, "{iteration},{free_energy},{seconds}")
            .and_then(|_| self.trace.flush())
            .map_err(|e| Error::io(&path, e))?;
        let arrays = self.model.params_to_arrays(params);
        if (iteration + 1).is_multiple_of(self.every(&arrays)) {
            self.checkpoint_files = self.dir.save_params("checkpoint", &arrays)?;
        }
        Ok(())
    }

    fn abort(&mut self, _iteration: usize, params: &M::Params, reason: &str) -> Result<()> {
        log::error!("aborting run: {reason}");
        self.dir.save_params("abort", &self.model.params_to_arrays(params))?;
        self.trace.flush().map_err(|e| Error::io(self.dir.path(), e))
    }
}
