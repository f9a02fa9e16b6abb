//! End-to-end experiment pipelines: configuration, staged execution
//! (generate → train → evaluate), error reports, and ordering checks.
//!
//! A run writes everything under `out_dir`:
//!
//! ```text
//! status.json                     running / incomplete / complete + stage
//! geometry_sim.json, geometry_obs.json
//! coarse_sim/, coarse_obs/        exported coarse systems (T, A_T, M_T)
//! dataset_sim/, dataset_obs/      trajectory datasets + training pairs
//! model_{o,m,s}.bin               trained networks
//! loss_history_{o,m,s}.csv        per-epoch training loss
//! predictions_{o,m,s}.csv         one-step test predictions
//! rollout_{o,m,s}.csv             rollout final states (when enabled)
//! errors_per_sample.csv           long-format per-step test errors
//! rollout_errors.csv              final-time rollout errors (when enabled)
//! report.json                     the ErrorReport
//! ```
//!
//! The three networks share one architecture and optimizer setup and
//! differ only in targets: `o` trains on observation targets, `s` on
//! simulation targets, `m` on the configured mixture. Inputs are always
//! simulation states. Evaluation always scores against observation states
//! on the held-out test sources.
//!
//! Every random choice (source sampling, the train/test split, mixture
//! selection, weight init, batch shuffling) derives from `master_seed`
//! through tagged subseeds, so a full run is a pure function of its config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{
    self, generate_dataset, make_pairs, mix_datasets, read_dataset, split_sources, write_dataset,
    DatasetLabel, MixPolicy, TrainingPair, TrajectoryDataset,
};
use crate::error::{FracError, Result};
use crate::fine::{Mobility, Rect, Source};
use crate::mesh::{build_geometry, read_spec, write_spec, Geometry, GeometrySpec};
use crate::net::{
    build_influence_mask, load_model, rollout, save_model, train, write_loss_history,
    InfluenceMask, LossKind, SurrogateNet, TrainConfig,
};
use crate::nlmc::{export_coarse_system, CoarseModel};
use crate::seed::subseed;

/// A geometry given inline or as a path to a geometry JSON file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySource {
    Path(String),
    Inline(GeometrySpec),
}

impl GeometrySource {
    pub fn resolve(&self) -> Result<GeometrySpec> {
        match self {
            GeometrySource::Inline(spec) => Ok(spec.clone()),
            GeometrySource::Path(p) => read_spec(Path::new(p)),
        }
    }
}

/// Source sampler configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerConfig {
    /// ±magnitude on two distinct uniformly random blocks per sample.
    TwoWell { count: usize, magnitude: f64 },
    /// Fixed injection/production cells with per-step random rates.
    SinWells {
        count: usize,
        magnitude: f64,
        rate_max: f64,
        injection: Rect,
        production: Rect,
    },
}

impl SamplerConfig {
    pub fn count(&self) -> usize {
        match self {
            SamplerConfig::TwoWell { count, .. } | SamplerConfig::SinWells { count, .. } => *count,
        }
    }

    pub fn sample(&self, geo: &Geometry, n_steps: usize, master_seed: u64) -> Vec<Source> {
        match self {
            SamplerConfig::TwoWell { count, magnitude } => {
                datagen::sample_two_well_sources(geo, *count, *magnitude, master_seed)
            }
            SamplerConfig::SinWells {
                count,
                magnitude,
                rate_max,
                injection,
                production,
            } => datagen::sample_sin_well_sources(
                *count,
                n_steps,
                *magnitude,
                *rate_max,
                *injection,
                *production,
                master_seed,
            ),
        }
    }
}

/// Objective for the mixture network `m`. Weighted scales are divided by
/// the training-pair count at train time, so `w1_scale = 2, w2_scale = 1`
/// means "observation residuals count twice".
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Standard,
    WeightedScaled { w1_scale: f64, w2_scale: f64 },
}

impl LossSpec {
    pub fn to_loss_kind(&self, n_pairs: usize) -> LossKind {
        match *self {
            LossSpec::Standard => LossKind::Standard,
            LossSpec::WeightedScaled { w1_scale, w2_scale } => LossKind::Weighted {
                w1: w1_scale / n_pairs as f64,
                w2: w2_scale / n_pairs as f64,
            },
        }
    }
}

/// Full experiment description; see the module docs for the run layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub example_id: u8,
    pub sim_geometry: GeometrySource,
    pub obs_geometry: GeometrySource,
    pub mobility: Mobility,
    /// Oversampling width (in coarse blocks) for the basis construction.
    pub oversampling_k: usize,
    pub n_steps: usize,
    pub total_time: f64,
    pub sampler: SamplerConfig,
    /// Held-out source count; the rest train.
    pub n_test: usize,
    /// 1-based input time levels cut into training pairs, inclusive.
    pub pair_steps: [usize; 2],
    /// How network `m`'s targets blend observation into simulation data.
    pub mix: MixPolicy,
    /// Hidden-layer widths (input/output widths come from the geometry).
    pub hidden: Vec<usize>,
    /// Optimizer setup shared by all three networks; `seed` and `loss` are
    /// overridden per network (tagged subseeds of `master_seed`; `o`/`s`
    /// use the standard loss, `m` uses `mixture_loss`).
    pub train: TrainConfig,
    pub mixture_loss: LossSpec,
    /// Region-of-influence mask radius; `null` trains full networks.
    pub mask_radius: Option<usize>,
    /// Evaluate the multi-step rollout protocol as well.
    pub rollout: bool,
    pub out_dir: String,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FracError::InvalidConfig(msg));
        if !(1..=3).contains(&self.example_id) {
            return bad(format!("example_id must be 1..3, got {}", self.example_id));
        }
        let count = self.sampler.count();
        if count == 0 || self.n_test == 0 || self.n_test >= count {
            return bad(format!(
                "need 0 < n_test < source count, got {} of {count}",
                self.n_test
            ));
        }
        let [lo, hi] = self.pair_steps;
        if lo < 1 || lo > hi || hi > self.n_steps {
            return bad(format!(
                "pair_steps [{lo}, {hi}] must satisfy 1 ≤ lo ≤ hi ≤ n_steps = {}",
                self.n_steps
            ));
        }
        if self.n_steps == 0 || !(self.total_time > 0.0) {
            return bad("need n_steps ≥ 1 and total_time > 0".into());
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return bad(format!("hidden widths must be positive, got {:?}", self.hidden));
        }
        self.mobility.validate()?;
        self.train.validate()?;
        for (name, g) in [("sim", &self.sim_geometry), ("obs", &self.obs_geometry)] {
            if let GeometrySource::Path(p) = g {
                if !Path::new(p).exists() {
                    return bad(format!("{name} geometry file {p} does not exist"));
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FracError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| FracError::MalformedFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| FracError::io(path.display().to_string(), e))
    }

    fn out(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }
}

/// 100·‖pred − reference‖₂ / ‖reference‖₂.
pub fn relative_error(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(FracError::DimensionMismatch {
            context: "relative error".into(),
            expected: reference.len(),
            got: pred.len(),
        });
    }
    let ref_norm = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(ref_norm > 0.0) {
        return Err(FracError::InvalidConfig(
            "relative error against a zero reference vector".into(),
        ));
    }
    let diff = pred
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * diff / ref_norm)
}

/// One network's test errors (percent).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkErrors {
    /// per_step[i][j]: error of test sample i at evaluation step j.
    pub per_step: Vec<Vec<f64>>,
    /// Mean over steps, one entry per test sample.
    pub per_sample: Vec<f64>,
    /// Mean of `per_sample`.
    pub mean: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RolloutErrors {
    /// Time level the rollout lands on (= last pair step + 1).
    pub final_level: usize,
    /// Per-network final-state error per test sample, plus its mean.
    pub per_sample: BTreeMap<String, Vec<f64>>,
    pub means: BTreeMap<String, f64>,
}

/// Everything the evaluation stage measured.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorReport {
    pub example_id: u8,
    /// Coarse dimension.
    pub n: usize,
    pub test_samples: Vec<usize>,
    /// Target time levels of the one-step evaluations (input level + 1).
    pub eval_levels: Vec<usize>,
    /// Keys "o", "m", "s".
    pub networks: BTreeMap<String, NetworkErrors>,
    pub rollout: Option<RolloutErrors>,
}

impl ErrorReport {
    pub fn read(path: &Path) -> Result<ErrorReport> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FracError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| FracError::MalformedFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

/// Result of the ordering check `mean(o) ≤ slack·mean(m) ≤ slack²·mean(s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct OrderingVerdict {
    pub o_le_m: bool,
    pub m_le_s: bool,
}

impl OrderingVerdict {
    pub fn holds(&self) -> bool {
        self.o_le_m && self.m_le_s
    }
}

/// Check the observation ≤ mixture ≤ simulation error ordering with a
/// multiplicative slack on each inequality (default 1.1).
pub fn compare_networks(report: &ErrorReport, slack: f64) -> Result<OrderingVerdict> {
    let mean = |k: &str| -> Result<f64> {
        report
            .networks
            .get(k)
            .map(|n| n.mean)
            .ok_or_else(|| FracError::InvalidConfig(format!("report lacks network {k}")))
    };
    let (o, m, s) = (mean("o")?, mean("m")?, mean("s")?);
    Ok(OrderingVerdict {
        o_le_m: o <= slack * m,
        m_le_s: m <= slack * s,
    })
}

#[derive(Serialize)]
struct Status<'a> {
    state: &'a str,
    stage: &'a str,
}

fn write_status(dir: &Path, state: &str, stage: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FracError::io(dir.display().to_string(), e))?;
    let path = dir.join("status.json");
    let text = serde_json::to_string_pretty(&Status { state, stage }).expect("status serializes");
    std::fs::write(&path, text).map_err(|e| FracError::io(path.display().to_string(), e))
}

fn tag_stage<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        FracError::Other(msg) if msg.starts_with('[') => FracError::Other(msg),
        e => FracError::Other(format!("[{stage}] {e}")),
    })
}

fn seed_of(master: u64, tag: &str) -> u64 {
    let bytes = subseed(master, tag);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

const NETS: [&str; 3] = ["o", "m", "s"];

/// Build both geometries and coarse models, sample sources, run the
/// upscaled model over them, and write geometries, coarse-system exports,
/// and both dataset directories.
pub fn stage_generate(config: &ExperimentConfig) -> Result<()> {
    let out = config.out();
    write_status(&out, "running", "generate")?;
    let inner = || -> Result<()> {
        config.validate()?;
        let spec_s = config.sim_geometry.resolve()?;
        let spec_o = config.obs_geometry.resolve()?;
        let geo_s = build_geometry(&spec_s)?;
        let geo_o = build_geometry(&spec_o)?;
        if geo_s.index.n != geo_o.index.n {
            return Err(FracError::InvalidConfig(format!(
                "geometries disagree on coarse dimension: {} vs {}",
                geo_s.index.n, geo_o.index.n
            )));
        }
        write_spec(&spec_s, &out.join("geometry_sim.json"))?;
        write_spec(&spec_o, &out.join("geometry_obs.json"))?;

        let model_s = CoarseModel::build(
            &geo_s,
            config.oversampling_k,
            &config.mobility,
            config.n_steps,
            config.total_time,
        )?;
        let model_o = CoarseModel::build(
            &geo_o,
            config.oversampling_k,
            &config.mobility,
            config.n_steps,
            config.total_time,
        )?;
        export_coarse_system(&model_s, &geo_s, &out.join("coarse_sim"))?;
        export_coarse_system(&model_o, &geo_o, &out.join("coarse_obs"))?;

        let sources = config
            .sampler
            .sample(&geo_s, config.n_steps, config.master_seed);
        let ds_sim = generate_dataset(&geo_s, &model_s, &sources, DatasetLabel::Simulation)?;
        let ds_obs = generate_dataset(&geo_o, &model_o, &sources, DatasetLabel::Observation)?;
        let [lo, hi] = config.pair_steps;
        write_dataset(&ds_sim, lo..=hi, &out.join("dataset_sim"))?;
        write_dataset(&ds_obs, lo..=hi, &out.join("dataset_obs"))?;
        Ok(())
    };
    let r = tag_stage("generate", inner());
    if r.is_err() {
        write_status(&out, "incomplete", "generate")?;
    }
    r
}

fn load_datasets(config: &ExperimentConfig) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
    let out = config.out();
    let ds_sim = read_dataset(&out.join("dataset_sim"))?;
    let ds_obs = read_dataset(&out.join("dataset_obs"))?;
    for (ds, want) in [
        (&ds_sim, DatasetLabel::Simulation),
        (&ds_obs, DatasetLabel::Observation),
    ] {
        if ds.label != want {
            return Err(FracError::InvalidConfig(format!(
                "dataset label mismatch: expected {want:?}, found {:?}",
                ds.label
            )));
        }
    }
    if ds_sim.n != ds_obs.n
        || ds_sim.n_steps != ds_obs.n_steps
        || ds_sim.samples.len() != ds_obs.samples.len()
    {
        return Err(FracError::InvalidConfig(
            "simulation and observation datasets disagree on shape".into(),
        ));
    }
    if ds_sim.samples.len() != config.sampler.count() {
        return Err(FracError::InvalidConfig(format!(
            "dataset holds {} samples but the config expects {}",
            ds_sim.samples.len(),
            config.sampler.count()
        )));
    }
    Ok((ds_sim, ds_obs))
}

/// The three networks' training sets: observation-targeted, mixed, and
/// simulation-targeted pairs over the training sources.
fn training_sets(
    config: &ExperimentConfig,
    ds_sim: &TrajectoryDataset,
    ds_obs: &TrajectoryDataset,
    geo: &Geometry,
    train_ids: &[usize],
) -> Result<[Vec<TrainingPair>; 3]> {
    let [lo, hi] = config.pair_steps;
    let sim = make_pairs(ds_sim, train_ids, lo..=hi);
    let obs = make_pairs(ds_obs, train_ids, lo..=hi);
    let all_obs = mix_datasets(
        &sim,
        &obs,
        &MixPolicy::BySample { fraction: 1.0 },
        geo,
        config.master_seed,
    )?;
    let mixed = mix_datasets(&sim, &obs, &config.mix, geo, config.master_seed)?;
    Ok([all_obs, mixed, sim])
}

/// Train the three networks from the on-disk datasets; writes models and
/// loss histories.
pub fn stage_train(config: &ExperimentConfig) -> Result<()> {
    let out = config.out();
    write_status(&out, "running", "train")?;
    let inner = || -> Result<()> {
        config.validate()?;
        let (ds_sim, ds_obs) = load_datasets(config)?;
        let spec = read_spec(&out.join("geometry_sim.json"))?;
        let geo = build_geometry(&spec)?;
        let (train_ids, _) = split_sources(
            ds_sim.samples.len(),
            config.n_test,
            config.master_seed,
        );
        let sets = training_sets(config, &ds_sim, &ds_obs, &geo, &train_ids)?;

        let n = ds_sim.n;
        let mut dims = Vec::with_capacity(config.hidden.len() + 2);
        dims.push(2 * n);
        dims.extend_from_slice(&config.hidden);
        dims.push(n);
        let mask: Option<InfluenceMask> = match config.mask_radius {
            Some(r) => Some(build_influence_mask(&geo, r, &dims)?),
            None => None,
        };

        for (name, pairs) in NETS.iter().zip(&sets) {
            let mut cfg = config.train.clone();
            cfg.seed = seed_of(config.master_seed, &format!("train/{name}"));
            cfg.loss = if *name == "m" {
                config.mixture_loss.to_loss_kind(pairs.len())
            } else {
                LossKind::Standard
            };
            let (net, history) =
                tag_stage(&format!("train/{name}"), train(pairs, &dims, &cfg, mask.as_ref()))?;
            save_model(
                &net,
                config.mask_radius,
                Some(cfg.seed),
                Some(&cfg),
                &out.join(format!("model_{name}.bin")),
            )?;
            write_loss_history(&history, &out.join(format!("loss_history_{name}.csv")))?;
        }
        Ok(())
    };
    let r = tag_stage("train", inner());
    if r.is_err() {
        write_status(&out, "incomplete", "train")?;
    }
    r
}

fn write_states_csv(
    path: &Path,
    n: usize,
    rows: &[(usize, usize, Vec<f64>)],
) -> Result<()> {
    let mut text = String::from("sample,level");
    for d in 0..n {
        text.push_str(&format!(",dof_{d}"));
    }
    text.push('\n');
    for (sample, level, vals) in rows {
        text.push_str(&format!("{sample},{level}"));
        for v in vals {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| FracError::io(path.display().to_string(), e))
}

/// One-step (and optionally rollout) evaluation of the stored models on the
/// held-out test sources, against observation states. Writes prediction
/// CSVs, error CSVs, and `report.json`.
pub fn stage_evaluate(config: &ExperimentConfig) -> Result<ErrorReport> {
    let out = config.out();
    write_status(&out, "running", "evaluate")?;
    let inner = || -> Result<ErrorReport> {
        config.validate()?;
        let (ds_sim, ds_obs) = load_datasets(config)?;
        let n = ds_sim.n;
        let (_, test_ids) = split_sources(
            ds_sim.samples.len(),
            config.n_test,
            config.master_seed,
        );
        let nets: Vec<SurrogateNet> = NETS
            .iter()
            .map(|name| load_model(&out.join(format!("model_{name}.bin"))))
            .collect::<Result<_>>()?;
        let [lo, hi] = config.pair_steps;
        let eval_levels: Vec<usize> = (lo..=hi).map(|s| s + 1).collect();

        let mut networks = BTreeMap::new();
        for (name, net) in NETS.iter().zip(&nets) {
            let mut per_step = Vec::with_capacity(test_ids.len());
            let mut per_sample = Vec::with_capacity(test_ids.len());
            let mut pred_rows = Vec::new();
            for &sid in &test_ids {
                let sim = &ds_sim.samples[sid];
                let obs = &ds_obs.samples[sid];
                let mut errs = Vec::with_capacity(eval_levels.len());
                for step in lo..=hi {
                    let mut x = sim.states[step - 1].clone();
                    x.extend_from_slice(&sim.loads[step - 1]);
                    let pred = net.predict(&x)?;
                    errs.push(relative_error(&pred, &obs.states[step])?);
                    pred_rows.push((sid, step + 1, pred));
                }
                per_sample.push(errs.iter().sum::<f64>() / errs.len() as f64);
                per_step.push(errs);
            }
            let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
            write_states_csv(&out.join(format!("predictions_{name}.csv")), n, &pred_rows)?;
            networks.insert(
                name.to_string(),
                NetworkErrors {
                    per_step,
                    per_sample,
                    mean,
                },
            );
        }

        let rollout_errors = if config.rollout {
            // Protocol: advance with the simulation net for all but the
            // last step, apply each network once at the end, and score the
            // final state against the observation trajectory.
            let final_level = hi + 1;
            let n_s = &nets[2];
            let mut per_sample = BTreeMap::new();
            let mut means = BTreeMap::new();
            for (name, net) in NETS.iter().zip(&nets) {
                let mut errs = Vec::with_capacity(test_ids.len());
                let mut final_rows = Vec::new();
                for &sid in &test_ids {
                    let sim = &ds_sim.samples[sid];
                    let obs = &ds_obs.samples[sid];
                    let mut chain: Vec<&SurrogateNet> = vec![n_s; hi - lo];
                    chain.push(net);
                    let sources: Vec<Vec<f64>> =
                        (lo..=hi).map(|s| sim.loads[s - 1].clone()).collect();
                    let states = rollout(&chain, &sim.states[lo - 1], &sources)?;
                    let final_state = states.last().unwrap().clone();
                    errs.push(relative_error(&final_state, &obs.states[hi])?);
                    final_rows.push((sid, final_level, final_state));
                }
                let mean = errs.iter().sum::<f64>() / errs.len() as f64;
                write_states_csv(&out.join(format!("rollout_{name}.csv")), n, &final_rows)?;
                per_sample.insert(name.to_string(), errs);
                means.insert(name.to_string(), mean);
            }
            Some(RolloutErrors {
                final_level,
                per_sample,
                means,
            })
        } else {
            None
        };

        let report = ErrorReport {
            example_id: config.example_id,
            n,
            test_samples: test_ids.clone(),
            eval_levels,
            networks,
            rollout: rollout_errors,
        };

        let mut csv = String::from("net,sample,target_level,error_percent\n");
        for (name, ne) in &report.networks {
            for (i, &sid) in report.test_samples.iter().enumerate() {
                for (j, &lvl) in report.eval_levels.iter().enumerate() {
                    csv.push_str(&format!("{name},{sid},{lvl},{}\n", ne.per_step[i][j]));
                }
            }
        }
        let csv_path = out.join("errors_per_sample.csv");
        std::fs::write(&csv_path, csv)
            .map_err(|e| FracError::io(csv_path.display().to_string(), e))?;

        if let Some(ro) = &report.rollout {
            let mut csv = String::from("net,sample,final_level,error_percent\n");
            for (name, errs) in &ro.per_sample {
                for (i, &sid) in report.test_samples.iter().enumerate() {
                    csv.push_str(&format!("{name},{sid},{},{}\n", ro.final_level, errs[i]));
                }
            }
            let path = out.join("rollout_errors.csv");
            std::fs::write(&path, csv)
                .map_err(|e| FracError::io(path.display().to_string(), e))?;
        }

        let report_path = out.join("report.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&report_path, text)
            .map_err(|e| FracError::io(report_path.display().to_string(), e))?;
        Ok(report)
    };
    let r = tag_stage("evaluate", inner());
    if r.is_err() {
        write_status(&out, "incomplete", "evaluate")?;
    }
    r
}

/// Run the full pipeline: generate, train, evaluate. Returns the report
/// and leaves `status.json` at `complete` (or `incomplete` + stage).
pub fn run_example(config: &ExperimentConfig) -> Result<ErrorReport> {
    stage_generate(config)?;
    stage_train(config)?;
    let report = stage_evaluate(config)?;
    write_status(&config.out(), "complete", "done")?;
    Ok(report)
}

fn parse_states_csv(path: &Path) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FracError::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let bad = || FracError::MalformedFile {
            path: path.display().to_string(),
            detail: format!("line {}", ln + 1),
        };
        let sample = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let level = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let vals = fields
            .map(|s| s.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((sample, level, vals));
    }
    Ok(rows)
}

/// Recompute every error in `report.json` from the stored predictions and
/// the observation dataset; returns the largest absolute discrepancy
/// (percent points). Flags missing rows as malformed.
pub fn verify_report(out_dir: &Path) -> Result<f64> {
    let report = ErrorReport::read(&out_dir.join("report.json"))?;
    let ds_obs = read_dataset(&out_dir.join("dataset_obs"))?;
    let mut worst = 0.0f64;
    let recompute = |sid: usize, level: usize, pred: &[f64]| -> Result<f64> {
        relative_error(pred, &ds_obs.samples[sid].states[level - 1])
    };
    for (name, ne) in &report.networks {
        let rows = parse_states_csv(&out_dir.join(format!("predictions_{name}.csv")))?;
        for (i, &sid) in report.test_samples.iter().enumerate() {
            for (j, &lvl) in report.eval_levels.iter().enumerate() {
                let pred = rows
                    .iter()
                    .find(|(s, l, _)| *s == sid && *l == lvl)
                    .map(|(_, _, v)| v)
                    .ok_or_else(|| FracError::MalformedFile {
                        path: out_dir.join(format!("predictions_{name}.csv")).display().to_string(),
                        detail: format!("no row for sample {sid} level {lvl}"),
                    })?;
                worst = worst.max((ne.per_step[i][j] - recompute(sid, lvl, pred)?).abs());
            }
            // Aggregates must re-derive from the stored entries.
            let mean_steps =
                ne.per_step[i].iter().sum::<f64>() / ne.per_step[i].len() as f64;
            worst = worst.max((mean_steps - ne.per_sample[i]).abs());
        }
        let mean = ne.per_sample.iter().sum::<f64>() / ne.per_sample.len() as f64;
        worst = worst.max((mean - ne.mean).abs());
    }
    if let Some(ro) = &report.rollout {
        for (name, errs) in &ro.per_sample {
            let rows = parse_states_csv(&out_dir.join(format!("rollout_{name}.csv")))?;
            for (i, &sid) in report.test_samples.iter().enumerate() {
                let pred = rows
                    .iter()
                    .find(|(s, l, _)| *s == sid && *l == ro.final_level)
                    .map(|(_, _, v)| v)
                    .ok_or_else(|| FracError::MalformedFile {
                        path: out_dir.join(format!("rollout_{name}.csv")).display().to_string(),
                        detail: format!("no row for sample {sid}"),
                    })?;
                worst = worst.max((errs[i] - recompute(sid, ro.final_level, pred)?).abs());
            }
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            worst = worst.max((mean - ro.means[name]).abs());
        }
    }
    Ok(worst)
}

/// The default fracture layout: one long horizontal fracture low in the
/// domain, a vertical one upper-right, and a short vertical one near the
/// injection corner that the observation variant shifts up by one coarse
/// block. The shift changes connectivity: only the shifted position
/// crosses the long fracture, so the variants differ in whether the
/// injection region feeds the domain-spanning conduit. The movable
/// fracture lies entirely in the x < 1/2 half, so the by-region
/// mixture's observed side covers the whole region where the two
/// geometries disagree.
fn default_fractures(kappa_f: f64, shifted: bool) -> Vec<crate::mesh::FractureSpec> {
    use crate::mesh::FractureSpec;
    let (y0, y1) = if shifted { (0.15, 0.3) } else { (0.05, 0.2) };
    vec![
        FractureSpec {
            x0: 0.1,
            y0: 0.25,
            x1: 0.9,
            y1: 0.25,
            aperture: 0.01,
            permeability: kappa_f,
        },
        FractureSpec {
            x0: 0.75,
            y0: 0.5,
            x1: 0.75,
            y1: 0.9,
            aperture: 0.01,
            permeability: kappa_f,
        },
        FractureSpec {
            x0: 0.15,
            y0,
            x1: 0.15,
            y1,
            aperture: 0.01,
            permeability: kappa_f,
        },
    ]
}

/// 10×10 coarse blocks, 10×10 fine cells each, on the unit square.
pub fn default_geometry(kappa_f: f64, shifted: bool) -> GeometrySpec {
    GeometrySpec::unit_square(10, 10, 10).with_fractures(default_fractures(kappa_f, shifted))
}

fn base_config(example_id: u8, out_dir: &str, master_seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        example_id,
        sim_geometry: GeometrySource::Inline(default_geometry(1000.0, false)),
        obs_geometry: GeometrySource::Inline(default_geometry(1000.0, true)),
        mobility: Mobility::Constant { value: 1.0 },
        oversampling_k: 2,
        n_steps: 10,
        total_time: 0.01,
        sampler: SamplerConfig::TwoWell {
            count: 300,
            magnitude: 1.0,
        },
        n_test: 10,
        pair_steps: [1, 9],
        mix: MixPolicy::BySample { fraction: 0.5 },
        hidden: vec![256; 6],
        train: TrainConfig::default(),
        mixture_loss: LossSpec::WeightedScaled {
            w1_scale: 2.0,
            w2_scale: 1.0,
        },
        mask_radius: None,
        rollout: false,
        out_dir: out_dir.to_string(),
        master_seed,
    }
}

/// Example 1: constant mobility, random two-well sources, by-sample
/// mixture, full networks. The observation geometry has the lower-left
/// fracture one block lower.
pub fn example1_config(out_dir: &str, master_seed: u64) -> ExperimentConfig {
    base_config(1, out_dir, master_seed)
}

/// Example 1 variant with radius-1 region-of-influence masks.
pub fn example1_roi_config(out_dir: &str, master_seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        mask_radius: Some(1),
        ..base_config(1, out_dir, master_seed)
    }
}

fn sin_sampler(count: usize) -> SamplerConfig {
    SamplerConfig::SinWells {
        count,
        magnitude: 10.0,
        rate_max: 10.0 * std::f64::consts::PI,
        injection: Rect {
            x0: 0.0,
            y0: 0.0,
            x1: 0.1,
            y1: 0.1,
        },
        production: Rect {
            x0: 0.9,
            y0: 0.9,
            x1: 1.0,
            y1: 1.0,
        },
    }
}

/// Example 2: expanding-front mobility, per-step random corner wells,
/// by-region mixture, and the multi-step rollout protocol.
pub fn example2_config(out_dir: &str, master_seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        total_time: 1.0,
        sampler: sin_sampler(500),
        mobility: Mobility::Front {
            speed: 1.3,
            radius0: 0.1,
            center: [0.05, 0.05],
        },
        mix: MixPolicy::ByRegion,
        // By-region targets carry mixed labels, which the weighted loss
        // cannot attribute; the mixture net trains on the standard loss.
        mixture_loss: LossSpec::Standard,
        rollout: true,
        ..base_config(2, out_dir, master_seed)
    }
}

/// Example 3: both datasets use the shifted fracture layout; only the
/// fracture permeability differs (computational 10 vs observed 1000).
/// Sources and mobility as in Example 2, by-sample mixture.
pub fn example3_config(out_dir: &str, master_seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        sim_geometry: GeometrySource::Inline(default_geometry(10.0, true)),
        obs_geometry: GeometrySource::Inline(default_geometry(1000.0, true)),
        total_time: 1.0,
        sampler: sin_sampler(500),
        mobility: Mobility::Front {
            speed: 1.3,
            radius0: 0.1,
            center: [0.05, 0.05],
        },
        mix: MixPolicy::BySample { fraction: 0.5 },
        ..base_config(3, out_dir, master_seed)
    }
}
