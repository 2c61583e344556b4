//! Empirical sweeps with a resumable checkpoint log.
//!
//! Every completed cell is appended to the checkpoint as one JSON line. On a
//! rerun with the same configuration hash those cells are loaded instead of
//! retrained. Appends go through a single writer thread.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::PathBuf;
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GridMeta, PhaseGrid};
use crate::error::{invalid, Error, Result};
use crate::fmt::round_sig;
use crate::quadratic::ImportanceVector;
use crate::toy_models::{train_cell, InputDistribution, ModelSpec, TrainConfig};

pub(crate) fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of everything that determines the cell values of a sweep.
pub fn config_hash(template: &ModelSpec, importance_axis: &[f64], sparsity_axis: &[f64], config: &TrainConfig) -> String {
    hash_json(&(
        "empirical",
        template.family(),
        template.nonlinearity(),
        template.n(),
        template.d(),
        importance_axis,
        sparsity_axis,
        config,
    ))
}

/// Rectangle of cell indices: importance indices × sparsity indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFilter {
    pub importance: Range<usize>,
    pub sparsity: Range<usize>,
}

impl CellFilter {
    pub fn contains(&self, iv: usize, ip: usize) -> bool {
        self.importance.contains(&iv) && self.sparsity.contains(&ip)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Worker threads; all available cores when unset.
    pub jobs: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    /// Train only these cells; the rest stay empty. Seeds still derive from
    /// the full-grid cell index.
    pub only: Option<CellFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub config_hash: String,
    pub cell: usize,
    #[serde(rename = "V")]
    pub v: f64,
    pub p: f64,
    pub c1: Option<f64>,
    pub final_loss: Option<f64>,
    pub seed: Option<u64>,
    pub error: Option<String>,
}

fn load_checkpoint(path: &PathBuf, hash: &str) -> Result<HashMap<usize, CheckpointRecord>> {
    let mut done = HashMap::new();
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(e.into()),
    };
    for line in BufReader::new(file).lines() {
        let line = line?;
        // A torn final line from an interrupted run is skipped.
        let Ok(rec) = serde_json::from_str::<CheckpointRecord>(&line) else {
            continue;
        };
        if rec.config_hash == hash {
            done.insert(rec.cell, rec);
        }
    }
    Ok(done)
}

/// Open the log for appending, terminating a torn final line first.
fn open_for_append(path: &PathBuf) -> Result<std::fs::File> {
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    let len = file.metadata()?.len();
    if len > 0 {
        let mut last = [0u8; 1];
        file.seek(SeekFrom::End(-1))?;
        file.read_exact(&mut last)?;
        if last[0] != b'\n' {
            file.write_all(b"\n")?;
        }
    }
    Ok(file)
}

/// Train one model per cell and record the measured `C_1`.
///
/// `template` fixes the family, nonlinearity, `N` and `D`; its importances
/// are replaced by `(V, 1, …, 1)` in each cell. Cell `c` uses seeds
/// `config.seed + 1000·c + restart`, so any subset of cells reproduces the
/// values of a full sweep. A cell whose restarts all diverge is marked
/// `diverged` and the sweep continues.
pub fn empirical_phase_grid(
    template: &ModelSpec,
    importance_axis: &[f64],
    sparsity_axis: &[f64],
    config: &TrainConfig,
    options: &SweepOptions,
) -> Result<PhaseGrid> {
    let hash = config_hash(template, importance_axis, sparsity_axis, config);
    let meta = GridMeta {
        n: template.n(),
        d: template.d(),
        family: template.family(),
        nonlinearity: template.nonlinearity(),
        config_hash: hash.clone(),
    };
    let mut grid = PhaseGrid::empty(importance_axis.to_vec(), sparsity_axis.to_vec(), meta)?;
    let done = match &options.checkpoint {
        Some(path) => load_checkpoint(path, &hash)?,
        None => HashMap::new(),
    };

    let todo: Vec<(usize, f64, f64)> = sparsity_axis
        .iter()
        .enumerate()
        .flat_map(|(ip, &p)| importance_axis.iter().enumerate().map(move |(iv, &v)| (iv, ip, v, p)))
        .filter(|&(iv, ip, _, _)| options.only.as_ref().is_none_or(|f| f.contains(iv, ip)))
        .map(|(iv, ip, v, p)| (ip * importance_axis.len() + iv, v, p))
        .filter(|(cell, _, _)| !done.contains_key(cell))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.unwrap_or(0))
        .build()
        .map_err(|e| invalid(format!("could not start worker pool: {e}")))?;

    let (tx, rx) = mpsc::channel::<CheckpointRecord>();
    let writer_path = options.checkpoint.clone();
    let writer = std::thread::spawn(move || -> Result<Vec<CheckpointRecord>> {
        let mut file = match &writer_path {
            Some(p) => Some(open_for_append(p)?),
            None => None,
        };
        let mut records = Vec::new();
        for rec in rx {
            if let Some(f) = file.as_mut() {
                let mut line = serde_json::to_string(&rec)?;
                line.push('\n');
                f.write_all(line.as_bytes())?;
                f.flush()?;
            }
            records.push(rec);
        }
        Ok(records)
    });

    let run = pool.install(|| {
        todo.par_iter().try_for_each_with(tx, |tx, &(cell, v, p)| -> Result<()> {
            let spec = template.with_importances(ImportanceVector::one_varied(template.n(), v)?)?;
            let dist = InputDistribution::new(p)?;
            let rec = match train_cell(&spec, &dist, config, cell) {
                Ok(r) => CheckpointRecord {
                    config_hash: hash.clone(),
                    cell,
                    v,
                    p,
                    c1: Some(round_sig(r.capacity[0])),
                    final_loss: Some(r.final_loss),
                    seed: Some(r.seed),
                    error: None,
                },
                Err(e @ Error::Diverged { .. }) => CheckpointRecord {
                    config_hash: hash.clone(),
                    cell,
                    v,
                    p,
                    c1: None,
                    final_loss: None,
                    seed: None,
                    error: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            tx.send(rec).map_err(|_| invalid("checkpoint writer stopped"))?;
            Ok(())
        })
    });
    let written = writer.join().map_err(|_| invalid("checkpoint writer panicked"))??;
    run?;

    for rec in done.into_values().chain(written) {
        let cell = grid.cell_mut(rec.cell);
        cell.c1_empirical = rec.c1.map(|c| c.clamp(0.0, 1.0));
        cell.diverged = rec.error.is_some();
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_lab::Channel;
    use crate::toy_models::{ModelFamily, Nonlinearity};

    fn template() -> ModelSpec {
        ModelSpec::new(
            ModelFamily::Regression,
            Nonlinearity::Quadratic,
            3,
            ImportanceVector::uniform(6).unwrap(),
        )
        .unwrap()
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            steps: 300,
            batch: 64,
            learning_rate: 1e-2,
            restarts: 2,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    const V: [f64; 3] = [0.3, 1.0, 3.0];
    const P: [f64; 2] = [0.05, 0.5];

    #[test]
    fn sub_rectangle_matches_full_sweep() {
        let full = empirical_phase_grid(&template(), &V, &P, &tiny(), &SweepOptions::default()).unwrap();
        let only = CellFilter {
            importance: 1..3,
            sparsity: 1..2,
        };
        let part = empirical_phase_grid(
            &template(),
            &V,
            &P,
            &tiny(),
            &SweepOptions {
                jobs: Some(2),
                only: Some(only.clone()),
                ..SweepOptions::default()
            },
        )
        .unwrap();
        for ip in 0..P.len() {
            for iv in 0..V.len() {
                let got = part.cell(iv, ip).c1_empirical;
                if only.contains(iv, ip) {
                    assert_eq!(got, full.cell(iv, ip).c1_empirical);
                } else {
                    assert_eq!(got, None);
                }
            }
        }
        assert!(full.has_channel(Channel::Empirical));
    }

    #[test]
    fn resume_skips_completed_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.jsonl");
        let opts = SweepOptions {
            jobs: Some(2),
            checkpoint: Some(path.clone()),
            only: Some(CellFilter {
                importance: 0..2,
                sparsity: 0..1,
            }),
        };
        let first = empirical_phase_grid(&template(), &V, &P, &tiny(), &opts).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);

        // Simulate an interrupted append, then finish the whole grid.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"config_hash\":\"trunc").unwrap();
        drop(f);
        let resumed = empirical_phase_grid(
            &template(),
            &V,
            &P,
            &tiny(),
            &SweepOptions {
                only: None,
                ..opts.clone()
            },
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let valid = text
            .lines()
            .filter(|l| serde_json::from_str::<CheckpointRecord>(l).is_ok())
            .count();
        assert_eq!(valid, V.len() * P.len());
        assert_eq!(resumed.cell(0, 0).c1_empirical, first.cell(0, 0).c1_empirical);
        let fresh = empirical_phase_grid(&template(), &V, &P, &tiny(), &SweepOptions::default()).unwrap();
        assert_eq!(resumed.cells(), fresh.cells());

        // A different configuration ignores the existing records.
        let other = TrainConfig { seed: 12, ..tiny() };
        assert_ne!(
            config_hash(&template(), &V, &P, &other),
            config_hash(&template(), &V, &P, &tiny())
        );
    }

    #[test]
    fn divergence_is_recorded_in_cell() {
        let cfg = TrainConfig {
            init_std: Some(1e200),
            restarts: 1,
            ..tiny()
        };
        let g = empirical_phase_grid(&template(), &[1.0], &[0.5], &cfg, &SweepOptions::default()).unwrap();
        assert!(g.cell(0, 0).diverged);
        assert_eq!(g.cell(0, 0).c1_empirical, None);
    }
}
