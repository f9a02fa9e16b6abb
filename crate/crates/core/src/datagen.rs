//! Source sampling, trajectory datasets, and training-pair packaging.
//!
//! A dataset is a list of coarse trajectories (states `u^1..u^{n_steps+1}`
//! plus per-interval coarse loads) for a list of sources, labeled either
//! `Simulation` (computational geometry) or `Observation` (perturbed "true"
//! geometry). Training pairs map `x = (u^n, b_T^n)` to `y = u^{n+1}`; the
//! three networks differ only in where the targets come from, which is what
//! [`mix_datasets`] arranges. Inputs always come from the simulation model.
//!
//! On-disk format (one directory per dataset): `metadata.json`,
//! `trajectories.csv` (`sample, step, dof_0..`; step is the 1-based time
//! level), `loads.csv` (`sample, step, dof_0..`; step is the 1-based
//! interval), and the training pairs as `pairs.csv` / `pairs.bin` with
//! column order `[x | y | sample | step]`. Floats are written in shortest
//! round-trip decimal form, so read → write is bit-exact.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FracError, Result};
use crate::fine::{Rect, Source};
use crate::mesh::Geometry;
use crate::nlmc::CoarseModel;
use crate::seed::rng_for;

/// Where a trajectory (or a pair's target) comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLabel {
    Simulation,
    Observation,
}

/// Provenance of one training pair's target vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLabel {
    Sim,
    Obs,
    /// By-region mixtures: the target vector itself mixes both datasets.
    Mixed,
}

/// One source's coarse trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub source: Source,
    /// States u^1..u^{n_steps+1}.
    pub states: Vec<Vec<f64>>,
    /// Coarse loads per interval (the source encoding for the networks).
    pub loads: Vec<Vec<f64>>,
}

/// A labeled collection of coarse trajectories sharing one geometry.
#[derive(Clone, Debug)]
pub struct TrajectoryDataset {
    pub label: DatasetLabel,
    pub geometry_hash: String,
    pub n: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub samples: Vec<TrajectorySample>,
}

/// One supervised pair for the surrogate networks.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    /// Input: u^step of the simulation model followed by the coarse load.
    pub x: Vec<f64>,
    /// Target: u^{step+1} from the dataset the policy selected.
    pub y: Vec<f64>,
    pub label: TargetLabel,
    pub sample: usize,
    /// 1-based time level of the input state.
    pub step: usize,
}

/// Sample `count` two-well sources: +magnitude on one uniformly random
/// block, −magnitude on a distinct one. Balanced exactly on equal-area
/// blocks because the source acts on the matrix continuum only.
pub fn sample_two_well_sources(
    geo: &Geometry,
    count: usize,
    magnitude: f64,
    master_seed: u64,
) -> Vec<Source> {
    assert!(geo.n_blocks() >= 2, "need at least two blocks");
    let mut rng = rng_for(master_seed, "sources/two-well");
    let n_blocks = geo.n_blocks();
    (0..count)
        .map(|_| {
            let plus = rng.gen_range(0..n_blocks);
            let minus = loop {
                let b = rng.gen_range(0..n_blocks);
                if b != plus {
                    break b;
                }
            };
            Source::TwoWell {
                block_plus: plus,
                block_minus: minus,
                magnitude,
            }
        })
        .collect()
}

/// Sample `count` fixed-location random-rate sources
/// `±magnitude·[(sin αx)² + (sin βy)²]` with α, β ~ U[0, rate_max] redrawn
/// for every time interval of every sample.
pub fn sample_sin_well_sources(
    count: usize,
    n_steps: usize,
    magnitude: f64,
    rate_max: f64,
    injection: Rect,
    production: Rect,
    master_seed: u64,
) -> Vec<Source> {
    let mut rng = rng_for(master_seed, "sources/sin-well");
    (0..count)
        .map(|_| {
            let mut alphas = Vec::with_capacity(n_steps);
            let mut betas = Vec::with_capacity(n_steps);
            for _ in 0..n_steps {
                alphas.push(rng.gen_range(0.0..rate_max));
                betas.push(rng.gen_range(0.0..rate_max));
            }
            Source::SinWells {
                magnitude,
                alphas,
                betas,
                injection,
                production,
            }
        })
        .collect()
}

/// Seeded random train/test split of source indices `0..m`. Returns
/// (train, test), each ascending; sizes are `m − test_count` / `test_count`.
pub fn split_sources(m: usize, test_count: usize, master_seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(test_count <= m, "test split larger than source count");
    let mut rng = rng_for(master_seed, "split");
    let mut ids: Vec<usize> = (0..m).collect();
    // Fisher–Yates shuffle.
    for i in (1..m).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let mut test: Vec<usize> = ids[..test_count].to_vec();
    let mut train: Vec<usize> = ids[test_count..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Run the upscaled model for every source and package the trajectories.
pub fn generate_dataset(
    geo: &Geometry,
    model: &CoarseModel,
    sources: &[Source],
    label: DatasetLabel,
) -> Result<TrajectoryDataset> {
    let mut samples = Vec::with_capacity(sources.len());
    for (i, src) in sources.iter().enumerate() {
        let traj = model.run(geo, src, None).map_err(|e| {
            FracError::Other(format!("sample {i}: {e}"))
        })?;
        samples.push(TrajectorySample {
            source: src.clone(),
            states: traj.states,
            loads: traj.loads,
        });
    }
    Ok(TrajectoryDataset {
        label,
        geometry_hash: model.geometry_hash.clone(),
        n: model.n,
        n_steps: model.n_steps,
        dt: model.dt,
        samples,
    })
}

/// Cut (input level, target level = input + 1) pairs for the 1-based input
/// levels in `steps`, restricted to `source_ids` (pass all ids for the full
/// set). The input vector is the state followed by that interval's load.
pub fn make_pairs(
    ds: &TrajectoryDataset,
    source_ids: &[usize],
    steps: std::ops::RangeInclusive<usize>,
) -> Vec<TrainingPair> {
    let (lo, hi) = (*steps.start(), *steps.end());
    assert!(lo >= 1 && hi <= ds.n_steps, "step range outside trajectory");
    let label = match ds.label {
        DatasetLabel::Simulation => TargetLabel::Sim,
        DatasetLabel::Observation => TargetLabel::Obs,
    };
    let mut pairs = Vec::with_capacity(source_ids.len() * (hi - lo + 1));
    for &sid in source_ids {
        let s = &ds.samples[sid];
        for step in lo..=hi {
            let mut x = s.states[step - 1].clone();
            x.extend_from_slice(&s.loads[step - 1]);
            pairs.push(TrainingPair {
                x,
                y: s.states[step].clone(),
                label,
                sample: sid,
                step,
            });
        }
    }
    pairs
}

/// How observation targets are blended into a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum MixPolicy {
    /// Targets of a seeded random `fraction` of sources come from the
    /// observation dataset, the rest from simulation.
    BySample { fraction: f64 },
    /// Every target vector's DOFs homed in the left half of the domain
    /// (block center x < lx/2) come from observation data, the right half
    /// from simulation.
    ByRegion,
}

/// Blend simulation and observation pairs into one training set. Inputs are
/// always the simulation inputs; the policy decides where targets come
/// from. Both pair lists must be cut from the same sources and steps in the
/// same order.
pub fn mix_datasets(
    sim: &[TrainingPair],
    obs: &[TrainingPair],
    policy: &MixPolicy,
    geo: &Geometry,
    master_seed: u64,
) -> Result<Vec<TrainingPair>> {
    if sim.len() != obs.len() {
        return Err(FracError::InvalidConfig(format!(
            "mismatched pair lists: {} simulation vs {} observation pairs",
            sim.len(),
            obs.len()
        )));
    }
    for (a, b) in sim.iter().zip(obs) {
        if a.sample != b.sample || a.step != b.step {
            return Err(FracError::InvalidConfig(format!(
                "pair lists misaligned at sample {}/{} step {}/{}",
                a.sample, b.sample, a.step, b.step
            )));
        }
    }
    match policy {
        MixPolicy::BySample { fraction } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(FracError::InvalidConfig(format!(
                    "mix fraction must be within [0, 1], got {fraction}"
                )));
            }
            let mut sources: Vec<usize> = sim.iter().map(|p| p.sample).collect();
            sources.sort_unstable();
            sources.dedup();
            let n_obs = (fraction * sources.len() as f64).round() as usize;
            let mut rng = rng_for(master_seed, "mix/by-sample");
            let mut shuffled = sources.clone();
            for i in (1..shuffled.len()).rev() {
                let j = rng.gen_range(0..=i);
                shuffled.swap(i, j);
            }
            let obs_sources: std::collections::BTreeSet<usize> =
                shuffled[..n_obs].iter().copied().collect();
            Ok(sim
                .iter()
                .zip(obs)
                .map(|(s, o)| {
                    let from_obs = obs_sources.contains(&s.sample);
                    TrainingPair {
                        x: s.x.clone(),
                        y: if from_obs { o.y.clone() } else { s.y.clone() },
                        label: if from_obs {
                            TargetLabel::Obs
                        } else {
                            TargetLabel::Sim
                        },
                        sample: s.sample,
                        step: s.step,
                    }
                })
                .collect())
        }
        MixPolicy::ByRegion => {
            let half = geo.spec.lx * 0.5;
            let (_, hx) = {
                let (bx, _) = geo.spec.block_h();
                (0.0, bx)
            };
            // A DOF is "observation side" when its home block's center lies
            // in the left half of the domain.
            let from_obs: Vec<bool> = (0..geo.index.n)
                .map(|d| {
                    let (_, c) = geo.block_rc(geo.index.dof_block[d]);
                    (c as f64 + 0.5) * hx < half
                })
                .collect();
            Ok(sim
                .iter()
                .zip(obs)
                .map(|(s, o)| {
                    let y: Vec<f64> = from_obs
                        .iter()
                        .zip(o.y.iter().zip(&s.y))
                        .map(|(&obs_side, (oy, sy))| if obs_side { *oy } else { *sy })
                        .collect();
                    TrainingPair {
                        x: s.x.clone(),
                        y,
                        label: TargetLabel::Mixed,
                        sample: s.sample,
                        step: s.step,
                    }
                })
                .collect())
        }
    }
}

fn fmt_row(values: &[f64]) -> String {
    let mut out = String::new();
    for v in values {
        out.push(',');
        out.push_str(&format!("{v}"));
    }
    out
}

/// Serialize a dataset directory: metadata, trajectories, loads, and the
/// training pairs for `pair_steps`.
pub fn write_dataset(
    ds: &TrajectoryDataset,
    pair_steps: std::ops::RangeInclusive<usize>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FracError::io(dir.display().to_string(), e))?;
    let meta = serde_json::json!({
        "label": ds.label,
        "geometry_hash": ds.geometry_hash,
        "n": ds.n,
        "n_steps": ds.n_steps,
        "dt": ds.dt,
        "n_samples": ds.samples.len(),
        "pair_steps": [*pair_steps.start(), *pair_steps.end()],
        "sources": ds.samples.iter().map(|s| &s.source).collect::<Vec<_>>(),
    });
    let meta_path = dir.join("metadata.json");
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("metadata serializes"),
    )
    .map_err(|e| FracError::io(meta_path.display().to_string(), e))?;

    let header: String = (0..ds.n).map(|d| format!(",dof_{d}")).collect();
    let mut traj = format!("sample,step{header}\n");
    let mut loads = format!("sample,step{header}\n");
    for (sid, s) in ds.samples.iter().enumerate() {
        for (lvl, state) in s.states.iter().enumerate() {
            traj.push_str(&format!("{sid},{}{}\n", lvl + 1, fmt_row(state)));
        }
        for (j, load) in s.loads.iter().enumerate() {
            loads.push_str(&format!("{sid},{}{}\n", j + 1, fmt_row(load)));
        }
    }
    let tp = dir.join("trajectories.csv");
    std::fs::write(&tp, traj).map_err(|e| FracError::io(tp.display().to_string(), e))?;
    let lp = dir.join("loads.csv");
    std::fs::write(&lp, loads).map_err(|e| FracError::io(lp.display().to_string(), e))?;

    let all_ids: Vec<usize> = (0..ds.samples.len()).collect();
    let pairs = make_pairs(ds, &all_ids, pair_steps);
    write_pairs_csv(&pairs, dir.join("pairs.csv").as_path())?;
    write_pairs_bin(&pairs, dir.join("pairs.bin").as_path())?;
    Ok(())
}

/// CSV pair table: `x_0.., y_0.., sample, step` per row.
pub fn write_pairs_csv(pairs: &[TrainingPair], path: &Path) -> Result<()> {
    let mut text = String::new();
    if let Some(p0) = pairs.first() {
        for i in 0..p0.x.len() {
            text.push_str(&format!("x_{i},"));
        }
        for i in 0..p0.y.len() {
            text.push_str(&format!("y_{i},"));
        }
        text.push_str("sample,step\n");
    } else {
        text.push_str("sample,step\n");
    }
    for p in pairs {
        for v in &p.x {
            text.push_str(&format!("{v},"));
        }
        for v in &p.y {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{},{}\n", p.sample, p.step));
    }
    std::fs::write(path, text).map_err(|e| FracError::io(path.display().to_string(), e))
}

const PAIRS_MAGIC: &[u8; 8] = b"FFPAIRS1";

fn label_code(l: TargetLabel) -> u8 {
    match l {
        TargetLabel::Sim => 0,
        TargetLabel::Obs => 1,
        TargetLabel::Mixed => 2,
    }
}

fn label_from_code(c: u8, path: &Path) -> Result<TargetLabel> {
    match c {
        0 => Ok(TargetLabel::Sim),
        1 => Ok(TargetLabel::Obs),
        2 => Ok(TargetLabel::Mixed),
        _ => Err(FracError::MalformedFile {
            path: path.display().to_string(),
            detail: format!("unknown target label code {c}"),
        }),
    }
}

/// Compact binary pair table. Layout: magic, then u64 LE counts
/// (n_pairs, x_dim, y_dim), then per pair x (f64 LE), y (f64 LE),
/// sample (u64), step (u64), label (u8: 0 sim, 1 obs, 2 mixed).
pub fn write_pairs_bin(pairs: &[TrainingPair], path: &Path) -> Result<()> {
    let x_dim = pairs.first().map_or(0, |p| p.x.len());
    let y_dim = pairs.first().map_or(0, |p| p.y.len());
    let mut buf: Vec<u8> = Vec::with_capacity(32 + pairs.len() * (8 * (x_dim + y_dim) + 17));
    buf.extend_from_slice(PAIRS_MAGIC);
    buf.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(x_dim as u64).to_le_bytes());
    buf.extend_from_slice(&(y_dim as u64).to_le_bytes());
    for p in pairs {
        assert_eq!(p.x.len(), x_dim, "ragged pair table");
        assert_eq!(p.y.len(), y_dim, "ragged pair table");
        for v in &p.x {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &p.y {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(p.sample as u64).to_le_bytes());
        buf.extend_from_slice(&(p.step as u64).to_le_bytes());
        buf.push(label_code(p.label));
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| FracError::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| FracError::io(path.display().to_string(), e))
}

pub fn read_pairs_bin(path: &Path) -> Result<Vec<TrainingPair>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| FracError::io(path.display().to_string(), e))?;
    let bad = |detail: &str| FracError::MalformedFile {
        path: path.display().to_string(),
        detail: detail.into(),
    };
    if buf.len() < 32 || &buf[..8] != PAIRS_MAGIC {
        return Err(bad("missing pair-table magic"));
    }
    let u64_at = |off: usize| u64::from_le_bytes(buf[off..off + 8].try_into().unwrap()) as usize;
    let (n_pairs, x_dim, y_dim) = (u64_at(8), u64_at(16), u64_at(24));
    let rec = 8 * (x_dim + y_dim) + 17;
    if buf.len() != 32 + n_pairs * rec {
        return Err(bad("truncated pair table"));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut off = 32;
    let f64_at = |off: usize| f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
    for _ in 0..n_pairs {
        let mut x = Vec::with_capacity(x_dim);
        for i in 0..x_dim {
            x.push(f64_at(off + 8 * i));
        }
        off += 8 * x_dim;
        let mut y = Vec::with_capacity(y_dim);
        for i in 0..y_dim {
            y.push(f64_at(off + 8 * i));
        }
        off += 8 * y_dim;
        let sample = u64_at(off);
        let step = u64_at(off + 8);
        let label = label_from_code(buf[off + 16], path)?;
        off += 17;
        pairs.push(TrainingPair {
            x,
            y,
            label,
            sample,
            step,
        });
    }
    Ok(pairs)
}

/// Metadata fields needed to reload a dataset directory.
#[derive(Debug, Deserialize)]
struct DatasetMeta {
    label: DatasetLabel,
    geometry_hash: String,
    n: usize,
    n_steps: usize,
    dt: f64,
    n_samples: usize,
    sources: Vec<Source>,
}

fn parse_state_csv(path: &Path, n: usize) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FracError::io(path.display().to_string(), e))?;
    let bad = |line: usize, detail: String| FracError::MalformedFile {
        path: path.display().to_string(),
        detail: format!("line {}: {detail}", line + 1),
    };
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            continue; // header
        }
        let mut fields = line.split(',');
        let sample: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(ln, "bad sample id".into()))?;
        let step: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(ln, "bad step index".into()))?;
        let vals: Vec<f64> = fields
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(ln, format!("bad float: {e}")))?;
        if vals.len() != n {
            return Err(bad(ln, format!("expected {n} values, got {}", vals.len())));
        }
        rows.push((sample, step, vals));
    }
    Ok(rows)
}

/// Reload a dataset directory written by [`write_dataset`]. Round-trips
/// every floating-point value exactly.
pub fn read_dataset(dir: &Path) -> Result<TrajectoryDataset> {
    let meta_path = dir.join("metadata.json");
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| FracError::io(meta_path.display().to_string(), e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_text).map_err(|e| FracError::MalformedFile {
            path: meta_path.display().to_string(),
            detail: e.to_string(),
        })?;
    let states = parse_state_csv(dir.join("trajectories.csv").as_path(), meta.n)?;
    let loads = parse_state_csv(dir.join("loads.csv").as_path(), meta.n)?;
    let mut samples: Vec<TrajectorySample> = meta
        .sources
        .into_iter()
        .map(|source| TrajectorySample {
            source,
            states: Vec::new(),
            loads: Vec::new(),
        })
        .collect();
    if samples.len() != meta.n_samples {
        return Err(FracError::MalformedFile {
            path: meta_path.display().to_string(),
            detail: "n_samples disagrees with source list".into(),
        });
    }
    let check = |sid: usize, step: usize, max_step: usize, expect: usize, what: &str| -> Result<()> {
        if sid >= meta.n_samples || step != expect || step > max_step {
            return Err(FracError::MalformedFile {
                path: dir.display().to_string(),
                detail: format!("{what} rows out of order at sample {sid}, step {step}"),
            });
        }
        Ok(())
    };
    for (sample, step, vals) in states {
        check(
            sample,
            step,
            meta.n_steps + 1,
            samples[sample].states.len() + 1,
            "trajectory",
        )?;
        samples[sample].states.push(vals);
    }
    for (sample, step, vals) in loads {
        check(
            sample,
            step,
            meta.n_steps,
            samples[sample].loads.len() + 1,
            "load",
        )?;
        samples[sample].loads.push(vals);
    }
    for (sid, s) in samples.iter().enumerate() {
        if s.states.len() != meta.n_steps + 1 || s.loads.len() != meta.n_steps {
            return Err(FracError::MalformedFile {
                path: dir.display().to_string(),
                detail: format!("sample {sid} has incomplete rows"),
            });
        }
    }
    Ok(TrajectoryDataset {
        label: meta.label,
        geometry_hash: meta.geometry_hash,
        n: meta.n,
        n_steps: meta.n_steps,
        dt: meta.dt,
        samples,
    })
}
