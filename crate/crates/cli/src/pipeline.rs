//! Pipeline stages over one run directory.
//!
//! Layout under the run directory:
//!
//! ```text
//! config.effective.toml  manifest.json
//! data/seed{s}/          {name}.jsonl, {name}.meta.json, stamp.json
//! train/seed{s}/         step*.ckpt, theta0.ckpt, checkpoints.json, losses.csv, train.json
//! scores/                {method}_seed{s}.json, {method}_seed{s}_trajectory.csv
//! ground_truth/{mode}/seed{s}/  records.json, without_{name}.ckpt
//! eval/                  report.json, correlations.csv, standardized.csv
//! sweep/                 cells.csv, trajectories.csv, cells/*.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use tda_core::attribution::{untrac, untrac_inv, Attribution, InfluenceScore, UnlearnConfig};
use tda_core::baselines::{baseline_attribution, load_snapshots, BaselineMethod, HifConfig};
use tda_core::checkpoint::{self, write_atomic, CheckpointEntry, CheckpointSet, Header};
use tda_core::data::{build_size_suite, build_suite, read_dataset, write_dataset, Dataset, MixtureSampler, Vocab};
use tda_core::groundtruth::{ground_truth, GroundTruthRecord};
use tda_core::params::ParamVector;
use tda_core::stats::{correlation_report, standardize, CorrelationReport, ScoreTable};
use tda_core::training::{run, RemovalMode, TrainState};
use tda_core::FeedForwardLm;

use crate::config::{ExperimentConfig, Method, SuiteChoice};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunManifest, StageRecord, StageStatus};

/// Written next to each generated data directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataStamp {
    pub config_hash: String,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: String,
}

/// Summary of a finished training run; its presence marks the run complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub mean_loss_first: f64,
    pub mean_loss_last: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub unlearning_runs: usize,
    pub ascent_steps: usize,
    pub wall_clock_s: f64,
    pub scores: Vec<InfluenceScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub config_hash: String,
    pub seed: u64,
    pub mode: RemovalMode,
    pub records: Vec<GroundTruthRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizedRow {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub mode: RemovalMode,
    pub seeds: Vec<u64>,
    pub train_datasets: Vec<String>,
    pub correlations: Vec<CorrelationReport>,
    /// Scores standardized across training datasets, averaged over runs and subsets.
    pub standardized: Vec<StandardizedRow>,
}

/// Everything one seed's attribution needs.
pub struct SeedInputs {
    pub seed: u64,
    pub model: FeedForwardLm,
    pub theta0: ParamVector<f64>,
    pub checkpoints: CheckpointSet,
    pub train: Vec<Dataset>,
    pub tests: Vec<Dataset>,
}

pub struct Runner {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub dir: PathBuf,
    pub parallel: usize,
    pub force: bool,
    manifest: RunManifest,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Parse { path: path.into(), detail: e.to_string() })
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| CliError::Parse { path: path.into(), detail: e.to_string() })
}

pub(crate) fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Parse { path: path.into(), detail: e.to_string() }
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

impl Runner {
    pub fn new(cfg: ExperimentConfig, parallel: usize, force: bool) -> CliResult<Self> {
        cfg.validate()?;
        if parallel == 0 {
            return Err(CliError::Usage("--parallel must be at least 1".into()));
        }
        let hash = cfg.hash();
        let dir = cfg.run_dir();
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        write_atomic(&dir.join("config.effective.toml"), cfg.to_toml().as_bytes())?;
        let manifest = RunManifest::open(&dir.join("manifest.json"), &hash)?;
        info!("run directory {}", dir.display());
        Ok(Runner { cfg, hash, dir, parallel, force, manifest })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn data_dir(&self, seed: u64) -> PathBuf {
        self.dir.join("data").join(format!("seed{seed}"))
    }

    pub fn train_dir(&self, seed: u64) -> PathBuf {
        self.dir.join("train").join(format!("seed{seed}"))
    }

    pub fn score_path(&self, method: Method, seed: u64) -> PathBuf {
        self.dir.join("scores").join(format!("{}_seed{seed}.json", method.name()))
    }

    pub fn trajectory_path(&self, method: Method, seed: u64) -> PathBuf {
        self.dir.join("scores").join(format!("{}_seed{seed}_trajectory.csv", method.name()))
    }

    pub fn gt_dir(&self, mode: RemovalMode, seed: u64) -> PathBuf {
        self.dir.join("ground_truth").join(mode.name()).join(format!("seed{seed}"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.dir.join("eval")
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.dir.join("sweep")
    }

    fn up_to_date(&self, stage: &str) -> bool {
        if self.force || !self.manifest.is_complete(stage) {
            return false;
        }
        let rec = self.manifest.records.iter().rev().find(|r| r.stage == stage).expect("complete stage has a record");
        rec.artifacts.iter().all(|a| self.dir.join(a).exists())
    }

    /// Runs `f` unless the manifest already has `stage` completed with its
    /// artifacts in place, and records the outcome either way.
    pub(crate) fn stage(&mut self, stage: &str, f: impl FnOnce(&Runner) -> CliResult<Vec<PathBuf>>) -> CliResult<()> {
        if self.up_to_date(stage) {
            info!("{stage}: up to date");
            return Ok(());
        }
        info!("{stage}: running");
        let start = Instant::now();
        let out = f(self);
        let wall_clock_s = start.elapsed().as_secs_f64();
        let (status, artifacts, detail) = match &out {
            Ok(paths) => {
                let rel = paths.iter().map(|p| p.strip_prefix(&self.dir).unwrap_or(p).to_path_buf()).collect();
                (StageStatus::Completed, rel, None)
            }
            Err(e) => (StageStatus::Failed, Vec::new(), Some(e.to_string())),
        };
        self.manifest.append(StageRecord { stage: stage.into(), status, artifacts, wall_clock_s, detail })?;
        match out {
            Ok(_) => {
                info!("{stage}: done in {wall_clock_s:.1}s");
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Parameter file whose header records the config hash and seed.
    fn save_stamped(&self, path: &Path, model: &FeedForwardLm, params: &ParamVector<f64>, seed: u64) -> tda_core::Result<()> {
        let header = Header {
            config: model.config().clone(),
            layout: params.layout().as_ref().clone(),
            payload_len: params.len(),
            meta: serde_json::json!({ "config_hash": self.hash, "seed": seed }),
        };
        checkpoint::save_raw(path, &header, params.values())
    }

    fn check_hash(&self, path: &Path, found: &str) -> CliResult<()> {
        if found != self.hash {
            return Err(CliError::HashMismatch { path: path.into(), found: found.into(), expected: self.hash.clone() });
        }
        Ok(())
    }

    // ---- gen-data ----

    pub fn gen_data(&mut self) -> CliResult<()> {
        for seed in self.cfg.seeds.clone() {
            self.stage(&format!("gen-data/seed{seed}"), |r| r.gen_data_one(seed))?;
        }
        Ok(())
    }

    fn gen_data_one(&self, seed: u64) -> CliResult<Vec<PathBuf>> {
        let vocab = Vocab::standard();
        let d = &self.cfg.data;
        let (train, test) = match d.suite {
            SuiteChoice::A | SuiteChoice::B => {
                let s = build_suite(d.suite.kind().expect("fixed suite"), d.n_per_dataset, seed)?;
                (s.train, s.test)
            }
            SuiteChoice::Size => {
                let s = build_size_suite(&d.size_weights, d.size_total, seed)?;
                (s.train, s.test)
            }
            SuiteChoice::Files => {
                let p = d.paths.as_ref().expect("validated");
                let read = |name: &str| {
                    read_dataset(&p.dir, name, &vocab).map_err(|e| match e {
                        tda_core::Error::Io { path, .. } => CliError::missing("data", &path, "check data.paths"),
                        other => other.into(),
                    })
                };
                let train = p.train.iter().map(|n| read(n)).collect::<CliResult<Vec<_>>>()?;
                (train, read(&p.test)?)
            }
        };
        let dir = self.data_dir(seed);
        let mut out = Vec::new();
        for ds in train.iter().chain(std::iter::once(&test)) {
            ds.validate(&vocab)?;
            write_dataset(&dir, ds, &vocab)?;
            out.push(tda_core::data::dataset_path(&dir, &ds.name));
        }
        let stamp = DataStamp {
            config_hash: self.hash.clone(),
            seed,
            train: train.iter().map(|d| d.name.clone()).collect(),
            test: test.name.clone(),
        };
        let sp = dir.join("stamp.json");
        write_json(&sp, &stamp)?;
        out.push(sp);
        Ok(out)
    }

    /// Training datasets and the full test set of one seed.
    pub fn load_data(&self, seed: u64) -> CliResult<(Vec<Dataset>, Dataset)> {
        let dir = self.data_dir(seed);
        let sp = dir.join("stamp.json");
        if !sp.exists() {
            return Err(CliError::missing("gen-data", &sp, "run `tda gen-data` first"));
        }
        let stamp: DataStamp = read_json(&sp)?;
        self.check_hash(&sp, &stamp.config_hash)?;
        let vocab = Vocab::standard();
        let train = stamp.train.iter().map(|n| read_dataset(&dir, n, &vocab)).collect::<tda_core::Result<Vec<_>>>()?;
        let test = read_dataset(&dir, &stamp.test, &vocab)?;
        Ok((train, test))
    }

    /// The evaluation subsets of a test set.
    pub fn test_subsets(&self, test: &Dataset) -> CliResult<Vec<Dataset>> {
        match self.cfg.eval.subsets {
            1 => Ok(vec![test.clone()]),
            k => Ok(test.split(k, self.cfg.eval.split_seed)?),
        }
    }

    // ---- train ----

    pub fn train(&mut self) -> CliResult<()> {
        for seed in self.cfg.seeds.clone() {
            self.stage(&format!("train/seed{seed}"), |r| r.train_one(seed))?;
        }
        Ok(())
    }

    fn train_one(&self, seed: u64) -> CliResult<Vec<PathBuf>> {
        let (train, _) = self.load_data(seed)?;
        let model = FeedForwardLm::new(self.cfg.model_for(seed))?;
        let tc = self.cfg.train_for(seed);
        let datasets: Vec<Arc<Dataset>> = train.into_iter().map(Arc::new).collect();
        let weights = tc.mixture.resolve(&datasets)?;
        let mut sampler = MixtureSampler::new(datasets, &weights, tc.seed)?;

        let dir = self.train_dir(seed);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let state_path = dir.join("state.ckpt");
        let partial = dir.join("losses.partial.json");
        let (mut state, prior) = if !self.force && state_path.exists() {
            let state = TrainState::load(&state_path, &model)?;
            let mut prior: Vec<f64> = read_json(&partial)?;
            if prior.len() < state.step {
                return Err(CliError::Parse { path: partial, detail: "fewer losses than completed steps".into() });
            }
            // a kill between the loss file and the state file leaves extra entries
            prior.truncate(state.step);
            info!("resuming seed {seed} from step {}", state.step);
            (state, prior)
        } else {
            (TrainState::fresh(model.init_params(), tc.optimizer.family), Vec::new())
        };

        let ckpt_name = |step: usize| format!("step{step:07}.ckpt");
        let taken = run(&model, &mut state, &mut sampler, &tc, tc.steps, &mut |s, l| {
            self.save_stamped(&dir.join(ckpt_name(s.step)), &model, &s.params, seed)?;
            let mut all = prior.clone();
            all.extend_from_slice(l);
            write_json(&partial, &all).map_err(|e| tda_core::Error::State(e.to_string()))?;
            s.save(&state_path, &model)
        })?;
        let mut losses = prior;
        losses.extend(taken);

        let lr = tc.optimizer.learning_rate;
        let entries: Vec<CheckpointEntry> = (1..=tc.steps)
            .filter(|&k| tc.saves_at(k, tc.steps))
            .map(|step| CheckpointEntry { step, learning_rate: lr, path: ckpt_name(step).into() })
            .collect();
        let final_path = dir.join("theta0.ckpt");
        self.save_stamped(&final_path, &model, &state.params, seed)?;
        let set = CheckpointSet::new(entries, "theta0.ckpt".into());
        let manifest_path = dir.join("checkpoints.json");
        set.write_manifest(&manifest_path)?;

        let loss_path = dir.join("losses.csv");
        let mut w = csv_writer(&loss_path)?;
        w.write_record(["config_hash", "seed", "step", "loss"]).map_err(csv_err(&loss_path))?;
        for (i, l) in losses.iter().enumerate() {
            w.write_record([self.hash.clone(), seed.to_string(), (i + 1).to_string(), format!("{l:e}")])
                .map_err(csv_err(&loss_path))?;
        }
        w.flush().map_err(|e| CliError::io(&loss_path, e))?;

        let k = losses.len().min(10);
        let summary = TrainSummary {
            config_hash: self.hash.clone(),
            seed,
            steps: tc.steps,
            mean_loss_first: mean(&losses[..k]),
            mean_loss_last: mean(&losses[losses.len() - k..]),
        };
        let summary_path = dir.join("train.json");
        write_json(&summary_path, &summary)?;
        let _ = fs::remove_file(&partial);
        let _ = fs::remove_file(&state_path);
        let mut out: Vec<PathBuf> = set.entries.iter().map(|e| dir.join(&e.path)).collect();
        out.extend([final_path, manifest_path, loss_path, summary_path]);
        Ok(out)
    }

    /// Trained parameters and checkpoints of one seed.
    pub fn load_trained(&self, seed: u64, model: &FeedForwardLm) -> CliResult<(CheckpointSet, ParamVector<f64>)> {
        let dir = self.train_dir(seed);
        let sp = dir.join("train.json");
        if !sp.exists() {
            return Err(CliError::missing("train", &sp, "run `tda train` first"));
        }
        let summary: TrainSummary = read_json(&sp)?;
        self.check_hash(&sp, &summary.config_hash)?;
        let set = CheckpointSet::read_manifest(&dir.join("checkpoints.json"))?;
        let (cfg, theta0) = set.load_final()?;
        if &cfg != model.config() {
            return Err(CliError::Parse { path: dir, detail: "trained model config differs from the run config".into() });
        }
        Ok((set, theta0))
    }

    pub fn seed_inputs(&self, seed: u64) -> CliResult<SeedInputs> {
        let (train, test) = self.load_data(seed)?;
        let tests = self.test_subsets(&test)?;
        let model = FeedForwardLm::new(self.cfg.model_for(seed))?;
        let (checkpoints, theta0) = self.load_trained(seed, &model)?;
        Ok(SeedInputs { seed, model, theta0, checkpoints, train, tests })
    }

    // ---- attribute ----

    pub fn attribute(&mut self, methods: &[Method]) -> CliResult<()> {
        for seed in self.cfg.seeds.clone() {
            for &m in methods {
                self.stage(&format!("attribute/{}/seed{seed}", m.name()), |r| r.attribute_one(m, seed))?;
            }
        }
        Ok(())
    }

    /// Scores of one method on one seed, with the config hash filled in.
    pub fn run_method(&self, method: Method, inputs: &SeedInputs, unlearn: Option<&UnlearnConfig>) -> CliResult<Attribution> {
        let seed = inputs.seed;
        let SeedInputs { model, theta0, train, tests, .. } = inputs;
        let mut att = match method {
            Method::Untrac | Method::UntracInv => {
                let base = match method {
                    Method::Untrac => &self.cfg.unlearn.untrac,
                    _ => &self.cfg.unlearn.untrac_inv,
                };
                let cfg = UnlearnConfig { seed, ..unlearn.unwrap_or(base).clone() };
                if method == Method::Untrac {
                    untrac(model, theta0, train, tests, &cfg)?
                } else {
                    untrac_inv(model, theta0, train, tests, &cfg)?
                }
            }
            Method::Baseline(b) => {
                let snapshots = match b {
                    BaselineMethod::TracIn => load_snapshots(&inputs.checkpoints)?,
                    _ => Vec::new(),
                };
                let hif = HifConfig { seed, ..self.cfg.baselines.hif.clone() };
                baseline_attribution(b, model, theta0, &snapshots, train, tests, &self.cfg.baselines.gradient, &hif, seed)?
            }
        };
        for s in &mut att.scores {
            s.method = method.name().into();
            s.config_hash = self.hash.clone();
        }
        Ok(att)
    }

    fn attribute_one(&self, method: Method, seed: u64) -> CliResult<Vec<PathBuf>> {
        let inputs = self.seed_inputs(seed)?;
        let start = Instant::now();
        let att = self.run_method(method, &inputs, None)?;
        for s in att.scores.iter().filter(|s| s.diverged_at.is_some()) {
            warn!("{method} diverged while unlearning {} (test {})", s.train_dataset, s.test_dataset);
        }
        let file = ScoreFile {
            config_hash: self.hash.clone(),
            seed,
            method: method.name().into(),
            unlearning_runs: att.unlearning_runs,
            ascent_steps: att.ascent_steps,
            wall_clock_s: start.elapsed().as_secs_f64(),
            scores: att.scores,
        };
        let path = self.score_path(method, seed);
        write_json(&path, &file)?;
        let tpath = self.trajectory_path(method, seed);
        let mut w = csv_writer(&tpath)?;
        w.write_record(["config_hash", "seed", "method", "train_dataset", "test_dataset", "epoch", "step", "cumulative_influence"])
            .map_err(csv_err(&tpath))?;
        for s in &file.scores {
            for p in &s.trajectory {
                w.write_record([
                    self.hash.clone(),
                    seed.to_string(),
                    file.method.clone(),
                    s.train_dataset.clone(),
                    s.test_dataset.clone(),
                    p.epoch.to_string(),
                    p.step.to_string(),
                    format!("{:e}", p.cumulative_influence),
                ])
                .map_err(csv_err(&tpath))?;
            }
        }
        w.flush().map_err(|e| CliError::io(&tpath, e))?;
        Ok(vec![path, tpath])
    }

    pub fn load_scores(&self, method: Method, seed: u64) -> CliResult<ScoreFile> {
        let path = self.score_path(method, seed);
        if !path.exists() {
            return Err(CliError::missing("attribute", &path, &format!("run `tda attribute --method {method}` first")));
        }
        let file: ScoreFile = read_json(&path)?;
        self.check_hash(&path, &file.config_hash)?;
        if file.seed != seed {
            return Err(CliError::Parse { path, detail: format!("holds seed {}, expected {seed}", file.seed) });
        }
        Ok(file)
    }

    // ---- ground-truth ----

    pub fn ground_truth(&mut self) -> CliResult<()> {
        if !self.cfg.ground_truth.enabled {
            return Err(CliError::Usage("ground_truth.enabled is false in this config".into()));
        }
        for seed in self.cfg.seeds.clone() {
            for mode in self.cfg.ground_truth.modes.clone() {
                self.stage(&format!("ground-truth/{}/seed{seed}", mode.name()), |r| r.ground_truth_one(mode, seed))?;
            }
        }
        Ok(())
    }

    fn ground_truth_one(&self, mode: RemovalMode, seed: u64) -> CliResult<Vec<PathBuf>> {
        let inputs = self.seed_inputs(seed)?;
        let init = inputs.model.init_params();
        let datasets: Vec<Arc<Dataset>> = inputs.train.iter().cloned().map(Arc::new).collect();
        let tc = self.cfg.train_for(seed);
        let gt = &self.cfg.ground_truth;
        let cfs =
            ground_truth(&inputs.model, &init, &inputs.theta0, &datasets, &inputs.tests, &tc, mode, gt.eval_batch_size, self.parallel)?;
        let dir = self.gt_dir(mode, seed);
        let mut out = Vec::new();
        let mut records = Vec::new();
        for cf in cfs {
            let mut rec = cf.record;
            rec.config_hash = self.hash.clone();
            if gt.save_checkpoints {
                let name = format!("without_{}.ckpt", file_safe(&rec.excluded));
                let p = dir.join(&name);
                self.save_stamped(&p, &inputs.model, &cf.params, seed)?;
                rec.checkpoint = Some(name.into());
                out.push(p);
            }
            records.push(rec);
        }
        let path = dir.join("records.json");
        write_json(&path, &GroundTruthFile { config_hash: self.hash.clone(), seed, mode, records })?;
        out.push(path);
        Ok(out)
    }

    pub fn load_ground_truth(&self, mode: RemovalMode, seed: u64) -> CliResult<GroundTruthFile> {
        let path = self.gt_dir(mode, seed).join("records.json");
        if !path.exists() {
            return Err(CliError::missing("ground-truth", &path, "run `tda ground-truth` first"));
        }
        let file: GroundTruthFile = read_json(&path)?;
        self.check_hash(&path, &file.config_hash)?;
        for r in &file.records {
            self.check_hash(&path, &r.config_hash)?;
        }
        Ok(file)
    }

    // ---- evaluate ----

    pub fn evaluate(&mut self) -> CliResult<EvalReport> {
        let mut report = None;
        self.stage("evaluate", |r| {
            let (rep, paths) = r.evaluate_inner()?;
            report = Some(rep);
            Ok(paths)
        })?;
        match report {
            Some(r) => Ok(r),
            None => read_json(&self.eval_dir().join("report.json")),
        }
    }

    fn evaluate_inner(&self) -> CliResult<(EvalReport, Vec<PathBuf>)> {
        let mode = self.cfg.primary_mode();
        let mut train_names: Option<Vec<String>> = None;
        let mut truths = Vec::new();
        let mut extra_truths: Vec<(RemovalMode, Vec<ScoreTable>)> =
            self.cfg.ground_truth.modes[1..].iter().map(|&m| (m, Vec::new())).collect();
        let mut subset_names = Vec::new();
        for &seed in &self.cfg.seeds {
            let (train, test) = self.load_data(seed)?;
            let names: Vec<String> = train.iter().map(|d| d.name.clone()).collect();
            if train_names.as_ref().is_some_and(|t| t != &names) {
                return Err(CliError::Parse { path: self.data_dir(seed), detail: "training datasets differ between seeds".into() });
            }
            let tests: Vec<String> = self.test_subsets(&test)?.into_iter().map(|d| d.name).collect();
            truths.push(truth_table(&self.load_ground_truth(mode, seed)?, &names, &tests, &self.gt_dir(mode, seed))?);
            for (m, t) in &mut extra_truths {
                t.push(truth_table(&self.load_ground_truth(*m, seed)?, &names, &tests, &self.gt_dir(*m, seed))?);
            }
            train_names = Some(names);
            subset_names.push(tests);
        }
        let train_names = train_names.expect("at least one seed");

        let mut correlations = Vec::new();
        let mut standardized = Vec::new();
        for &method in &self.cfg.methods {
            let mut runs = Vec::new();
            for (i, &seed) in self.cfg.seeds.iter().enumerate() {
                let file = self.load_scores(method, seed)?;
                let table = score_table(&file.scores, &train_names, &subset_names[i], &self.score_path(method, seed))?;
                runs.push((table, truths[i].clone()));
            }
            for &metric in &self.cfg.eval.metrics {
                correlations.push(correlation_report(method.name(), &runs, metric)?);
            }
            let tables: Vec<ScoreTable> = runs.into_iter().map(|(m, _)| m).collect();
            standardized.push(StandardizedRow { label: method.name().into(), values: standardized_mean(&tables)? });
        }
        standardized.push(StandardizedRow { label: "ground_truth".into(), values: standardized_mean(&truths)? });
        for (m, t) in &extra_truths {
            standardized.push(StandardizedRow { label: format!("ground_truth_{}", m.name()), values: standardized_mean(t)? });
        }

        let report = EvalReport {
            config_hash: self.hash.clone(),
            mode,
            seeds: self.cfg.seeds.clone(),
            train_datasets: train_names.clone(),
            correlations,
            standardized,
        };
        let dir = self.eval_dir();
        let rp = dir.join("report.json");
        write_json(&rp, &report)?;

        let cp = dir.join("correlations.csv");
        let mut w = csv_writer(&cp)?;
        w.write_record(["method", "metric", "mean", "std", "n_runs", "n_subsets", "config_hash"]).map_err(csv_err(&cp))?;
        for c in &report.correlations {
            w.write_record([
                c.method.clone(),
                c.metric.name().into(),
                format!("{:.6}", c.mean),
                format!("{:.6}", c.std),
                c.n_runs.to_string(),
                c.n_subsets.to_string(),
                self.hash.clone(),
            ])
            .map_err(csv_err(&cp))?;
        }
        w.flush().map_err(|e| CliError::io(&cp, e))?;

        let sp = dir.join("standardized.csv");
        let mut w = csv_writer(&sp)?;
        let mut header = vec!["row".to_string()];
        header.extend(train_names.iter().cloned());
        w.write_record(&header).map_err(csv_err(&sp))?;
        for row in &report.standardized {
            let mut rec = vec![row.label.clone()];
            rec.extend(row.values.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(csv_err(&sp))?;
        }
        w.flush().map_err(|e| CliError::io(&sp, e))?;
        Ok((report, vec![rp, cp, sp]))
    }
}

/// Method scores arranged `[subset][train dataset]`.
pub fn score_table(scores: &[InfluenceScore], train: &[String], tests: &[String], path: &Path) -> CliResult<ScoreTable> {
    tests
        .iter()
        .map(|t| {
            train
                .iter()
                .map(|z| {
                    scores
                        .iter()
                        .find(|s| &s.train_dataset == z && &s.test_dataset == t)
                        .map(|s| s.value)
                        .ok_or_else(|| CliError::Parse { path: path.into(), detail: format!("no score for ({z}, {t})") })
                })
                .collect()
        })
        .collect()
}

/// Ground-truth influence arranged `[subset][train dataset]`.
pub fn truth_table(file: &GroundTruthFile, train: &[String], tests: &[String], path: &Path) -> CliResult<ScoreTable> {
    tests
        .iter()
        .map(|t| {
            train
                .iter()
                .map(|z| {
                    file.records
                        .iter()
                        .find(|r| &r.excluded == z)
                        .and_then(|r| r.influence.iter().find(|(name, _)| name == t))
                        .map(|(_, v)| *v)
                        .ok_or_else(|| CliError::Parse { path: path.into(), detail: format!("no ground truth for ({z}, {t})") })
                })
                .collect()
        })
        .collect()
}

/// Standardizes every subset row, then averages the rows of all tables.
pub fn standardized_mean(tables: &[ScoreTable]) -> CliResult<Vec<f64>> {
    let rows: Vec<Vec<f64>> = tables.iter().flatten().map(|r| standardize(r)).collect::<tda_core::Result<_>>()?;
    let n = rows.first().map_or(0, Vec::len);
    Ok((0..n).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect())
}
