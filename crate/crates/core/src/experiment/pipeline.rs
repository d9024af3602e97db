//! The end-to-end experiment: data, dense training, IMP, the variant runs
//! and every landscape analysis, written to an artifact directory with a
//! manifest after each stage.
//!
//! Stages run in order and are recorded in `progress.json`; re-opening the
//! same directory with the same configuration skips completed stages and
//! reloads their checkpoints.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Role};
use super::config::ExperimentConfig;
use super::plot::emit_plots;
use super::report::{ArtifactDir, Cell, Csv, Manifest, PROGRESS};
use crate::data::{analysis_subset, Dataset};
use crate::error::{Error, Result};
use crate::landscape::{
    barrier_height, basin_cutoff, geometry, interpolate_losses, inverse_volume, log_volume,
    mc_radius_profile, surface_grid, taylor_prune_estimate, top_k_eigenvalues_partial, DiagonalMode,
    Radius,
};
use crate::model::{accuracy_on, loss_on, LossContext, ParamVector};
use crate::numerics::RngStream;
use crate::pruning::{
    imp_run_with, imp_step, magnitude_mask, one_shot_run, project, random_pruned_run, sparsity,
    ImpRun, LevelArtifacts, Mask, PruneTarget, Strategy,
};
use crate::trainer::TrainRecord;

pub const STAGES: [&str; 13] = [
    "data", "dense", "imp", "variants", "eigen", "radius", "interp", "surface", "geometry",
    "taylor", "postprune", "summary", "plots",
];

pub const VARIANTS: [&str; 5] = [
    "one_shot",
    "fine_tune",
    "random_reinit",
    "random_prune_1",
    "random_prune_2",
];

const ANALYSIS_STREAM: u64 = 12;
const EIGEN_STREAM: u64 = 20;
const RADIUS_STREAM: u64 = 21;
const TAYLOR_STREAM: u64 = 22;
const RPN1_STREAM: u64 = 30;
const RPN2_STREAM: u64 = 31;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Progress {
    config_fingerprint: String,
    completed: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: usize,
    pub active: usize,
    pub active_prunable: usize,
    pub sparsity: f64,
    pub prunable_density: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub name: String,
    pub level: usize,
    pub active: usize,
    pub active_prunable: usize,
    pub sparsity: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VPrimeRow {
    pub point: String,
    /// Checkpoints providing the parameters and the mask (space).
    pub params: String,
    pub mask: String,
    pub k: usize,
    pub vprime: f64,
    pub n_eigenvalues: usize,
    pub lanczos_iters: usize,
    pub restarts: usize,
    /// Fewer than `k` positive eigenvalues exist above the breakdown
    /// tolerance; `vprime` sums over the ones found.
    pub partial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub name: String,
    pub params: String,
    pub mask: String,
    pub cutoff: f64,
    pub center_loss: f64,
    pub mean: f64,
    pub censored: usize,
    pub n_directions: usize,
    pub log_volume: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierRow {
    pub from: String,
    pub to: String,
    pub height: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostPrune {
    pub level: usize,
    pub base_loss: f64,
    pub magnitude_loss: f64,
    pub random_loss: f64,
}

impl PostPrune {
    pub fn magnitude_increase(&self) -> f64 {
        self.magnitude_loss - self.base_loss
    }

    pub fn random_increase(&self) -> f64 {
        self.random_loss - self.base_loss
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorRow {
    pub kind: String,
    pub removed: usize,
    pub predicted: f64,
    pub actual: f64,
}

/// Headline numbers of one run, gathered from the stage outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub levels: Vec<LevelRow>,
    pub variants: Vec<VariantRow>,
    pub eigen: Vec<VPrimeRow>,
    pub radius: Vec<ProfileRow>,
    pub successive_barriers: Vec<BarrierRow>,
    pub variant_barriers: Vec<BarrierRow>,
    pub postprune: Option<PostPrune>,
    pub taylor: Vec<TaylorRow>,
}

impl Summary {
    pub fn vprime(&self, point: &str) -> Option<f64> {
        self.eigen.iter().find(|r| r.point == point).map(|r| r.vprime)
    }

    pub fn profile(&self, name: &str) -> Option<&ProfileRow> {
        self.radius.iter().find(|r| r.name == name)
    }

    pub fn variant(&self, name: &str) -> Option<&VariantRow> {
        self.variants.iter().find(|r| r.name == name)
    }

    pub fn variant_barrier(&self, name: &str) -> Option<&BarrierRow> {
        self.variant_barriers.iter().find(|r| r.to == ckpt_path(&name_of_variant(name)))
    }
}

pub fn level_name(level: usize) -> String {
    format!("level_{level:02}")
}

pub fn name_of_variant(v: &str) -> String {
    format!("variant_{v}")
}

fn ckpt_path(name: &str) -> String {
    format!("checkpoints/{name}.ckpt")
}

/// A point of interest: parameters, the mask defining its space, and the
/// checkpoints they come from.
struct Point {
    name: String,
    params: ParamVector,
    mask: Mask,
    params_src: String,
    mask_src: String,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    out: ArtifactDir,
    progress: Progress,
    train_set: Dataset,
    test_set: Dataset,
    train: LossContext,
    test: LossContext,
    analysis: LossContext,
    run: Option<ImpRun>,
    variants: BTreeMap<String, LevelArtifacts>,
}

impl Pipeline {
    /// Opens (or resumes) the run in `out`. Relative dataset paths resolve
    /// against `data_base`.
    pub fn open(cfg: ExperimentConfig, out: &Path, data_base: &Path) -> Result<Self> {
        cfg.validate()?;
        let dir = ArtifactDir::create(out)?;
        let fingerprint = cfg.fingerprint();
        let progress = if dir.exists(PROGRESS) {
            let p: Progress = dir.read_json(PROGRESS)?;
            if p.config_fingerprint != fingerprint {
                return Err(Error::Config(format!(
                    "{} holds a run with a different configuration",
                    out.display()
                )));
            }
            p
        } else {
            Progress {
                config_fingerprint: fingerprint,
                completed: Vec::new(),
            }
        };
        let (train_set, test_set) = cfg.dataset.load(cfg.seed, data_base)?;
        let spec = &cfg.network;
        let train = LossContext::new(spec, &train_set.full())?;
        let test = LossContext::new(spec, &test_set.full())?;
        let analysis = LossContext::new(
            spec,
            &analysis_subset(&train_set, RngStream::new(cfg.seed, ANALYSIS_STREAM)),
        )?;
        dir.write("config.json", (cfg.canonical_json() + "\n").as_bytes())?;
        Ok(Pipeline {
            cfg,
            out: dir,
            progress,
            train_set,
            test_set,
            train,
            test,
            analysis,
            run: None,
            variants: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        self.out.root()
    }

    pub fn is_complete(&self, stage: &str) -> bool {
        self.progress.completed.iter().any(|s| s == stage)
    }

    fn finish_stage(&mut self, stage: &str, started: Instant) -> Result<()> {
        if !self.is_complete(stage) {
            self.progress.completed.push(stage.to_string());
        }
        self.out.write_json(PROGRESS, &self.progress)?;
        self.write_manifest()?;
        log::info!("stage {stage} done in {:.1}s", started.elapsed().as_secs_f64());
        Ok(())
    }

    pub fn write_manifest(&self) -> Result<Manifest> {
        let m = self
            .out
            .manifest(&self.progress.config_fingerprint, &self.progress.completed)?;
        self.out.write_json(super::report::MANIFEST, &m)?;
        Ok(m)
    }

    /// Runs every stage not yet completed and returns the final manifest.
    pub fn run_all(&mut self) -> Result<Manifest> {
        self.data()?;
        self.imp()?;
        if self.final_level() >= 1 {
            self.all_variants()?;
        }
        if self.cfg.analysis.enabled {
            self.eigen()?;
            if self.final_level() >= 1 {
                self.radius()?;
                self.interp()?;
                self.surface()?;
                self.geometry()?;
                self.taylor()?;
                self.postprune()?;
            }
        }
        self.summary()?;
        self.plots()?;
        self.write_manifest()
    }

    pub fn data(&mut self) -> Result<()> {
        if self.is_complete("data") {
            return Ok(());
        }
        let t = Instant::now();
        self.out
            .write("data/train.csv", self.train_set.to_csv_string().as_bytes())?;
        self.out
            .write("data/test.csv", self.test_set.to_csv_string().as_bytes())?;
        self.finish_stage("data", t)
    }

    fn meta(&self, level: usize, step: usize, w: &ParamVector, m: &Mask) -> Result<CheckpointMeta> {
        Ok(CheckpointMeta {
            level,
            step,
            seed: self.cfg.seed,
            train_loss: loss_on(&self.train, w, m)?,
            test_accuracy: accuracy_on(&self.test, w, m)?,
        })
    }

    fn save(&self, name: &str, role: Role, meta: CheckpointMeta, w: &ParamVector, m: &Mask) -> Result<()> {
        let cp = Checkpoint::new(&self.cfg.network, role, meta, w.clone(), m.clone())?;
        save_checkpoint(&self.out.path(&ckpt_path(name)), &cp)
    }

    fn load(&self, name: &str) -> Result<Checkpoint> {
        let rel = ckpt_path(name);
        if !self.out.exists(&rel) {
            return Err(Error::MissingArtifact {
                name: rel.clone(),
                dir: self.out.root().to_path_buf(),
                expected: vec![rel],
            });
        }
        let cp = load_checkpoint(&self.out.path(&rel))?;
        if cp.header.spec != self.cfg.network {
            return Err(Error::Config(format!("{rel} was written for a different network")));
        }
        Ok(cp)
    }

    fn write_record(&self, name: &str, record: &TrainRecord) -> Result<()> {
        let mut csv = Csv::new(&["epoch", "train_loss", "test_acc", "lr"]);
        for i in 0..record.epochs.len() {
            csv.row(&[
                Cell::U(record.epochs[i]),
                Cell::F(record.train_loss[i]),
                Cell::F(record.test_accuracy[i]),
                Cell::F(record.lr[i]),
            ]);
        }
        self.out.write_csv(&format!("train/{name}.csv"), &csv)
    }

    fn save_level(&self, l: &LevelArtifacts) -> Result<()> {
        let name = level_name(l.level);
        let meta = self.meta(l.level, l.record.steps, &l.solution, &l.mask)?;
        self.save(&name, Role::Minimum, meta, &l.solution, &l.mask)?;
        self.write_record(&name, &l.record)
    }

    fn level_from_disk(&self, level: usize, init: &ParamVector, rewind: &ParamVector) -> Result<LevelArtifacts> {
        let cp = self.load(&level_name(level))?;
        let start = if level == 0 {
            init.clone()
        } else {
            project(rewind, &cp.mask)?
        };
        Ok(LevelArtifacts {
            level,
            start,
            solution: cp.params,
            mask: cp.mask,
            record: TrainRecord::default(),
        })
    }

    /// Dense training: initialization, rewind point and level 0.
    pub fn dense(&mut self) -> Result<()> {
        if self.run.is_some() {
            return Ok(());
        }
        if self.is_complete("dense") {
            let init = self.load("init")?.params;
            let rewind = self.load("rewind_point")?.params;
            let mut levels = vec![self.level_from_disk(0, &init, &rewind)?];
            let mut l = 1;
            while self.out.exists(&ckpt_path(&level_name(l))) && l <= self.cfg.pruning.levels {
                levels.push(self.level_from_disk(l, &init, &rewind)?);
                l += 1;
            }
            self.run = Some(ImpRun {
                init,
                rewind_point: rewind,
                levels,
            });
            return Ok(());
        }
        let t = Instant::now();
        let hp = self.cfg.hyperparams();
        let run = crate::pruning::dense_run(&self.train, &self.test, &hp)?;
        let dense = self.cfg.network.dense_mask();
        let meta = self.meta(0, 0, &run.init, &dense)?;
        self.save("init", Role::Init, meta, &run.init, &dense)?;
        let meta = self.meta(0, hp.rewind_step, &run.rewind_point, &dense)?;
        self.save("rewind_point", Role::RewindPoint, meta, &run.rewind_point, &dense)?;
        self.save_level(&run.levels[0])?;
        self.run = Some(run);
        self.finish_stage("dense", t)
    }

    fn run_ref(&self) -> &ImpRun {
        self.run.as_ref().expect("dense stage ran")
    }

    pub fn final_level(&self) -> usize {
        self.cfg.pruning.levels
    }

    /// IMP with weight rewinding up to the configured level.
    pub fn imp(&mut self) -> Result<()> {
        self.dense()?;
        if self.is_complete("imp") {
            return Ok(());
        }
        let t = Instant::now();
        let cfg = self.cfg.imp_config(Strategy::WeightRewind);
        let resume = self.run.take();
        let this = &*self;
        let run = imp_run_with(&this.train, &this.test, &cfg, resume, |l| this.save_level(l))?;
        self.run = Some(run);
        let mut csv = Csv::new(&[
            "level", "active", "active_prunable", "sparsity", "prunable_density", "train_loss", "test_acc",
        ]);
        for r in self.level_rows()? {
            csv.row(&[
                Cell::U(r.level),
                Cell::U(r.active),
                Cell::U(r.active_prunable),
                Cell::F(r.sparsity),
                Cell::F(r.prunable_density),
                Cell::F(r.train_loss),
                Cell::F(r.test_accuracy),
            ]);
        }
        self.out.write_csv("levels.csv", &csv)?;
        self.finish_stage("imp", t)
    }

    fn level_rows(&self) -> Result<Vec<LevelRow>> {
        (0..=self.final_level())
            .map(|l| {
                let cp = self.load(&level_name(l))?;
                Ok(LevelRow {
                    level: l,
                    active: cp.mask.active_count(),
                    active_prunable: cp.mask.active_prunable_count(),
                    sparsity: sparsity(&cp.mask),
                    prunable_density: cp.mask.prunable_density(),
                    train_loss: cp.header.train_loss,
                    test_accuracy: cp.header.test_accuracy,
                })
            })
            .collect()
    }

    fn level(&self, l: usize) -> &LevelArtifacts {
        &self.run_ref().levels[l]
    }

    fn compute_variant(&self, name: &str) -> Result<LevelArtifacts> {
        let top = self.final_level();
        if top == 0 {
            return Err(Error::Precondition("variants need at least one pruning level".into()));
        }
        let run = self.run_ref();
        let (dense, prev, last) = (self.level(0), self.level(top - 1), self.level(top));
        let hp = self.cfg.hyperparams();
        let to_final = PruneTarget::ActivePrunable(last.mask.active_prunable_count());
        let seed = self.cfg.seed;
        let (train, test) = (&self.train, &self.test);
        match name {
            "one_shot" => one_shot_run(train, test, dense, &run.rewind_point, to_final, &hp, top),
            "fine_tune" => imp_step(train, test, &self.cfg.imp_config(Strategy::FineTune), &run.rewind_point, prev),
            "random_reinit" => imp_step(
                train,
                test,
                &self.cfg.imp_config(Strategy::RandomReinit),
                &run.rewind_point,
                prev,
            ),
            "random_prune_1" => random_pruned_run(
                train,
                test,
                prev,
                &run.rewind_point,
                PruneTarget::Fraction(self.cfg.pruning.prune_fraction_per_round),
                &hp,
                RngStream::new(seed, RPN1_STREAM),
                top,
            ),
            "random_prune_2" => random_pruned_run(
                train,
                test,
                dense,
                &run.rewind_point,
                to_final,
                &hp,
                RngStream::new(seed, RPN2_STREAM),
                top,
            ),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected one of {}",
                VARIANTS.join(", ")
            ))),
        }
    }

    /// Runs (or reloads) one variant.
    pub fn variant(&mut self, name: &str) -> Result<()> {
        self.imp()?;
        if self.variants.contains_key(name) {
            return Ok(());
        }
        let file = name_of_variant(name);
        let art = if self.out.exists(&ckpt_path(&file)) {
            let cp = self.load(&file)?;
            LevelArtifacts {
                level: cp.header.level,
                start: cp.params.clone(),
                solution: cp.params,
                mask: cp.mask,
                record: TrainRecord::default(),
            }
        } else {
            let art = self.compute_variant(name)?;
            self.save_variant(name, &art)?;
            art
        };
        self.variants.insert(name.to_string(), art);
        Ok(())
    }

    fn save_variant(&self, name: &str, art: &LevelArtifacts) -> Result<()> {
        let file = name_of_variant(name);
        let meta = self.meta(art.level, art.record.steps, &art.solution, &art.mask)?;
        self.save(&file, Role::Variant(name.into()), meta, &art.solution, &art.mask)?;
        self.write_record(&file, &art.record)
    }

    pub fn all_variants(&mut self) -> Result<()> {
        self.imp()?;
        let t = Instant::now();
        let missing: Vec<&str> = VARIANTS
            .iter()
            .copied()
            .filter(|v| !self.out.exists(&ckpt_path(&name_of_variant(v))))
            .collect();
        let computed = missing
            .par_iter()
            .map(|&v| {
                let art = self.compute_variant(v)?;
                self.save_variant(v, &art)?;
                Ok((v, art))
            })
            .collect::<Result<Vec<_>>>()?;
        for (v, art) in computed {
            self.variants.insert(v.to_string(), art);
        }
        for v in VARIANTS {
            self.variant(v)?;
        }
        let mut csv = Csv::new(&[
            "name", "level", "active", "active_prunable", "sparsity", "train_loss", "test_acc",
        ]);
        for r in self.variant_rows()? {
            csv.row(&[
                Cell::S(&r.name),
                Cell::U(r.level),
                Cell::U(r.active),
                Cell::U(r.active_prunable),
                Cell::F(r.sparsity),
                Cell::F(r.train_loss),
                Cell::F(r.test_accuracy),
            ]);
        }
        self.out.write_csv("variants.csv", &csv)?;
        if self.is_complete("variants") {
            return Ok(());
        }
        self.finish_stage("variants", t)
    }

    fn variant_rows(&self) -> Result<Vec<VariantRow>> {
        VARIANTS
            .iter()
            .map(|v| {
                let cp = self.load(&name_of_variant(v))?;
                Ok(VariantRow {
                    name: v.to_string(),
                    level: cp.header.level,
                    active: cp.mask.active_count(),
                    active_prunable: cp.mask.active_prunable_count(),
                    sparsity: sparsity(&cp.mask),
                    train_loss: cp.header.train_loss,
                    test_accuracy: cp.header.test_accuracy,
                })
            })
            .collect()
    }

    fn require_variants(&mut self) -> Result<()> {
        for v in VARIANTS {
            if !self.variants.contains_key(v) {
                if !self.out.exists(&ckpt_path(&name_of_variant(v))) {
                    let expected = VARIANTS.iter().map(|v| ckpt_path(&name_of_variant(v))).collect();
                    return Err(Error::MissingArtifact {
                        name: ckpt_path(&name_of_variant(v)),
                        dir: self.out.root().to_path_buf(),
                        expected,
                    });
                }
                self.variant(v)?;
            }
        }
        Ok(())
    }

    fn level_point(&self, l: usize) -> Point {
        let a = self.level(l);
        Point {
            name: level_name(l),
            params: a.solution.clone(),
            mask: a.mask.clone(),
            params_src: ckpt_path(&level_name(l)),
            mask_src: ckpt_path(&level_name(l)),
        }
    }

    /// Level `l - 1` solution projected onto level `l`'s mask.
    fn projected_point(&self, l: usize) -> Result<Point> {
        let mask = self.level(l).mask.clone();
        Ok(Point {
            name: format!("pr_{l:02}"),
            params: project(&self.level(l - 1).solution, &mask)?,
            mask,
            params_src: ckpt_path(&level_name(l - 1)),
            mask_src: ckpt_path(&level_name(l)),
        })
    }

    /// Level `l` solution in level `l - 1`'s (denser) space.
    fn reverse_projected_point(&self, l: usize) -> Result<Point> {
        let mask = self.level(l - 1).mask.clone();
        Ok(Point {
            name: format!("rpr_{l:02}"),
            params: project(&self.level(l).solution, &mask)?,
            mask,
            params_src: ckpt_path(&level_name(l)),
            mask_src: ckpt_path(&level_name(l - 1)),
        })
    }

    fn variant_point(&self, v: &str) -> Point {
        let a = &self.variants[v];
        let file = ckpt_path(&name_of_variant(v));
        Point {
            name: name_of_variant(v),
            params: a.solution.clone(),
            mask: a.mask.clone(),
            params_src: file.clone(),
            mask_src: file,
        }
    }

    fn begin_analysis(&mut self, stage: &str, needs_variants: bool) -> Result<bool> {
        self.imp()?;
        if self.is_complete(stage) {
            return Ok(false);
        }
        if needs_variants {
            self.require_variants()?;
        }
        Ok(true)
    }

    /// Top-k Hessian eigenvalues and V′(k) at every level, projection,
    /// reverse projection and variant.
    pub fn eigen(&mut self) -> Result<()> {
        let top = self.final_level();
        if !self.begin_analysis("eigen", top >= 1)? {
            return Ok(());
        }
        let t = Instant::now();
        let mut points: Vec<Point> = (0..=top).map(|l| self.level_point(l)).collect();
        for l in 1..=top {
            points.push(self.projected_point(l)?);
        }
        for l in 1..=top {
            points.push(self.reverse_projected_point(l)?);
        }
        if top >= 1 {
            points.extend(VARIANTS.iter().map(|v| self.variant_point(v)));
        }
        let k = self.cfg.analysis.k;
        let base = RngStream::new(self.cfg.seed, EIGEN_STREAM);
        let reports = points
            .par_iter()
            .enumerate()
            .map(|(i, p)| top_k_eigenvalues_partial(&self.analysis, &p.params, &p.mask, k, base.child(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut table = Csv::new(&[
            "point", "params", "mask", "k", "vprime", "n_eigenvalues", "lanczos_iters", "restarts", "partial",
        ]);
        let mut rows = Vec::new();
        for (p, r) in points.iter().zip(&reports) {
            let mut csv = Csv::new(&["index", "eigenvalue"]);
            for (i, &l) in r.eigenvalues.iter().enumerate() {
                csv.row(&[Cell::U(i), Cell::F(l)]);
            }
            self.out.write_csv(&format!("eigen/{}.csv", p.name), &csv)?;
            let row = VPrimeRow {
                point: p.name.clone(),
                params: p.params_src.clone(),
                mask: p.mask_src.clone(),
                k,
                vprime: inverse_volume(&r.eigenvalues, k)?,
                n_eigenvalues: r.eigenvalues.len(),
                lanczos_iters: r.lanczos_iters,
                restarts: r.restarts,
                partial: r.exhausted,
            };
            if row.partial {
                log::warn!("{}: only {} of {k} positive eigenvalues", p.name, row.n_eigenvalues);
            }
            table.row(&[
                Cell::S(&row.point),
                Cell::S(&row.params),
                Cell::S(&row.mask),
                Cell::U(k),
                Cell::F(row.vprime),
                Cell::U(row.n_eigenvalues),
                Cell::U(row.lanczos_iters),
                Cell::U(row.restarts),
                Cell::B(row.partial),
            ]);
            rows.push(row);
        }
        self.out.write_csv("eigen/vprime.csv", &table)?;
        self.out.write_json("eigen/summary.json", &rows)?;
        self.finish_stage("eigen", t)
    }

    /// Basin radii around the final solution and the projected previous
    /// solution, and around the previous solution and the reverse-projected
    /// final solution.
    pub fn radius(&mut self) -> Result<()> {
        if !self.begin_analysis("radius", false)? {
            return Ok(());
        }
        let t = Instant::now();
        let top = self.final_level();
        let pairs = [
            (self.level_point(top), self.projected_point(top)?),
            (self.level_point(top - 1), self.reverse_projected_point(top)?),
        ];
        let a = &self.cfg.analysis;
        let mut rows = Vec::new();
        for (i, (p, q)) in pairs.iter().enumerate() {
            let lp = loss_on(&self.analysis, &p.params, &p.mask)?;
            let lq = loss_on(&self.analysis, &q.params, &q.mask)?;
            let cutoff = basin_cutoff(lp, lq);
            // Both members of a pair share their directions.
            let rng = RngStream::new(self.cfg.seed, RADIUS_STREAM).child(i as u64);
            for pt in [p, q] {
                let prof = mc_radius_profile(&self.analysis, &pt.params, &pt.mask, a.n_directions, cutoff, rng)?;
                let mut csv = Csv::new(&["direction", "radius", "censored"]);
                for (d, r) in prof.radii.iter().enumerate() {
                    match r {
                        Radius::Found(x) => csv.row(&[Cell::U(d), Cell::F(*x), Cell::B(false)]),
                        Radius::Censored => csv.row(&[Cell::U(d), Cell::S(""), Cell::B(true)]),
                    }
                }
                self.out.write_csv(&format!("radius/{}.csv", pt.name), &csv)?;
                rows.push(ProfileRow {
                    name: pt.name.clone(),
                    params: pt.params_src.clone(),
                    mask: pt.mask_src.clone(),
                    cutoff,
                    center_loss: prof.center_loss,
                    mean: prof.mean,
                    censored: prof.censored,
                    n_directions: prof.n_directions,
                    log_volume: log_volume(&prof, pt.mask.active_count())?,
                });
            }
        }
        self.out.write_json("radius/summary.json", &rows)?;
        self.finish_stage("radius", t)
    }

    fn curve(&self, rel: &str, p: &ParamVector, q: &ParamVector) -> Result<(f64, f64)> {
        let dense = self.cfg.network.dense_mask();
        let c = interpolate_losses(&self.analysis, p, q, &dense, self.cfg.analysis.n_points)?;
        let mut csv = Csv::new(&["alpha", "loss"]);
        for (a, l) in c.alphas.iter().zip(&c.losses) {
            csv.row(&[Cell::F(*a), Cell::F(*l)]);
        }
        self.out.write_csv(rel, &csv)?;
        let b = barrier_height(&c);
        Ok((b.height, b.alpha))
    }

    /// Straight-line loss profiles between successive IMP solutions and
    /// between each variant and the solution it was derived from.
    pub fn interp(&mut self) -> Result<()> {
        if !self.begin_analysis("interp", true)? {
            return Ok(());
        }
        let t = Instant::now();
        let top = self.final_level();
        let mut successive = Vec::new();
        for l in 1..=top {
            let rel = format!("interp/imp_{:02}_{:02}.csv", l - 1, l);
            let (height, alpha) = self.curve(&rel, &self.level(l - 1).solution, &self.level(l).solution)?;
            successive.push(BarrierRow {
                from: ckpt_path(&level_name(l - 1)),
                to: ckpt_path(&level_name(l)),
                height,
                alpha,
            });
        }
        let mut variants = Vec::new();
        for v in VARIANTS {
            let base = match v {
                "one_shot" | "random_prune_2" => 0,
                _ => top - 1,
            };
            let rel = format!("interp/{}.csv", name_of_variant(v));
            let (height, alpha) = self.curve(&rel, &self.level(base).solution, &self.variants[v].solution)?;
            variants.push(BarrierRow {
                from: ckpt_path(&level_name(base)),
                to: ckpt_path(&name_of_variant(v)),
                height,
                alpha,
            });
        }
        let mut csv = Csv::new(&["from", "to", "height", "alpha"]);
        for b in successive.iter().chain(&variants) {
            csv.row(&[Cell::S(&b.from), Cell::S(&b.to), Cell::F(b.height), Cell::F(b.alpha)]);
        }
        self.out.write_csv("interp/barriers.csv", &csv)?;
        self.out.write_json("interp/summary.json", &(successive, variants))?;
        self.finish_stage("interp", t)
    }

    /// Loss over the plane through the dense solution, the final IMP
    /// solution and the random-reinit variant.
    pub fn surface(&mut self) -> Result<()> {
        if !self.begin_analysis("surface", true)? {
            return Ok(());
        }
        let t = Instant::now();
        let top = self.final_level();
        let a = &self.cfg.analysis;
        let ripn = &self.variants["random_reinit"].solution;
        let mut names = vec![level_name(0), level_name(top), name_of_variant("random_reinit")];
        let mut extras = Vec::new();
        for l in 1..top {
            names.push(level_name(l));
            extras.push(self.level(l).solution.clone());
        }
        for v in VARIANTS.iter().filter(|&&v| v != "random_reinit") {
            names.push(name_of_variant(v));
            extras.push(self.variants[*v].solution.clone());
        }
        let dense = self.cfg.network.dense_mask();
        let g = surface_grid(
            &self.analysis,
            [&self.level(0).solution, &self.level(top).solution, ripn],
            &extras,
            &dense,
            a.grid_rows,
            a.grid_cols,
            a.margin,
            a.plot_cap,
        )?;
        let mut csv = Csv::new(&["row", "col", "x", "y", "loss", "clipped"]);
        for (i, c) in g.cells.iter().enumerate() {
            csv.row(&[
                Cell::U(i / g.cols),
                Cell::U(i % g.cols),
                Cell::F(c.x),
                Cell::F(c.y),
                Cell::F(c.loss),
                Cell::B(c.clipped),
            ]);
        }
        self.out.write_csv("surface/grid.csv", &csv)?;
        let mut pts = Csv::new(&["point", "checkpoint", "x", "y", "residual", "loss"]);
        let anchors = [&self.level(0).solution, &self.level(top).solution, ripn];
        for (i, (name, p)) in names.iter().zip(&g.points).enumerate() {
            let w = if i < 3 { anchors[i] } else { &extras[i - 3] };
            let l = loss_on(&self.analysis, w, &dense)?;
            pts.row(&[
                Cell::S(name),
                Cell::S(&ckpt_path(name)),
                Cell::F(p.x),
                Cell::F(p.y),
                Cell::F(p.residual),
                Cell::F(l),
            ]);
        }
        self.out.write_csv("surface/points.csv", &pts)?;
        self.finish_stage("surface", t)
    }

    /// Euclidean distances and cosine similarities between points of
    /// interest, and distances to the projected rewind point.
    pub fn geometry(&mut self) -> Result<()> {
        if !self.begin_analysis("geometry", true)? {
            return Ok(());
        }
        let t = Instant::now();
        let top = self.final_level();
        let mut csv = Csv::new(&["a", "b", "euclidean", "cosine"]);
        for i in 0..=top {
            for j in 0..=top {
                let g = geometry(&self.level(i).solution, &self.level(j).solution)?;
                csv.row(&[
                    Cell::S(&ckpt_path(&level_name(i))),
                    Cell::S(&ckpt_path(&level_name(j))),
                    Cell::F(g.euclidean),
                    Cell::F(g.cosine),
                ]);
            }
        }
        self.out.write_csv("geometry/imp.csv", &csv)?;
        let mut csv = Csv::new(&["variant", "reference", "euclidean", "cosine"]);
        for v in VARIANTS {
            for r in [0, top - 1, top] {
                let g = geometry(&self.variants[v].solution, &self.level(r).solution)?;
                csv.row(&[
                    Cell::S(&ckpt_path(&name_of_variant(v))),
                    Cell::S(&ckpt_path(&level_name(r))),
                    Cell::F(g.euclidean),
                    Cell::F(g.cosine),
                ]);
            }
        }
        self.out.write_csv("geometry/variants.csv", &csv)?;
        let rewind = &self.run_ref().rewind_point;
        let mut csv = Csv::new(&["level", "solution_to_rewind", "projected_previous_to_rewind"]);
        for l in 1..=top {
            let m = &self.level(l).mask;
            let pr_rewind = project(rewind, m)?;
            let a = self.level(l).solution.sub(&pr_rewind)?.norm();
            let b = project(&self.level(l - 1).solution, m)?.sub(&pr_rewind)?.norm();
            csv.row(&[Cell::U(l), Cell::F(a), Cell::F(b)]);
        }
        self.out.write_csv("geometry/rewind_distance.csv", &csv)?;
        self.finish_stage("geometry", t)
    }

    /// Second-order estimate against the actual loss change when pruning
    /// the smallest versus the largest active weights of the final solution.
    pub fn taylor(&mut self) -> Result<()> {
        if !self.begin_analysis("taylor", false)? {
            return Ok(());
        }
        let t = Instant::now();
        let rows = self.taylor_rows()?;
        let mut csv = Csv::new(&["kind", "removed", "predicted", "actual", "abs_error"]);
        for r in &rows {
            csv.row(&[
                Cell::S(&r.kind),
                Cell::U(r.removed),
                Cell::F(r.predicted),
                Cell::F(r.actual),
                Cell::F((r.predicted - r.actual).abs()),
            ]);
        }
        self.out.write_csv("taylor.csv", &csv)?;
        self.finish_stage("taylor", t)
    }

    fn taylor_rows(&self) -> Result<Vec<TaylorRow>> {
        let top = self.final_level();
        let l = self.level(top);
        let (w, m) = (&l.solution, &l.mask);
        let f = self.cfg.analysis.taylor_fraction;
        let small = magnitude_mask(w, m, f)?;
        let removed = m.active_count() - small.active_count();
        let mut active: Vec<usize> = (0..m.len()).filter(|&i| m.bits()[i] && m.prunable()[i]).collect();
        active.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
        let mut bits = m.bits().to_vec();
        for &i in active.iter().take(removed) {
            bits[i] = false;
        }
        let large = m.with_bits(bits)?;
        let mode = DiagonalMode::Hutchinson {
            probes: self.cfg.analysis.probes,
        };
        let rng = RngStream::new(self.cfg.seed, TAYLOR_STREAM);
        let mut rows = Vec::new();
        for (kind, after) in [("smallest", &small), ("largest", &large)] {
            let est = taylor_prune_estimate(&self.analysis, w, m, after, mode, rng)?;
            rows.push(TaylorRow {
                kind: kind.into(),
                removed,
                predicted: est.predicted,
                actual: est.actual,
            });
        }
        Ok(rows)
    }

    /// Loss right after pruning the previous solution by magnitude versus
    /// at random, before any retraining.
    pub fn postprune(&mut self) -> Result<()> {
        if !self.begin_analysis("postprune", true)? {
            return Ok(());
        }
        let t = Instant::now();
        let top = self.final_level();
        let prev = self.level(top - 1);
        let ctx = &self.analysis;
        let p = PostPrune {
            level: top,
            base_loss: loss_on(ctx, &prev.solution, &prev.mask)?,
            magnitude_loss: loss_on(ctx, &prev.solution, &self.level(top).mask)?,
            random_loss: loss_on(ctx, &prev.solution, &self.variants["random_prune_1"].mask)?,
        };
        let mut csv = Csv::new(&["pruning", "mask", "loss_before", "loss_after", "increase"]);
        for (kind, mask, after) in [
            ("magnitude", ckpt_path(&level_name(top)), p.magnitude_loss),
            ("random", ckpt_path(&name_of_variant("random_prune_1")), p.random_loss),
        ] {
            csv.row(&[
                Cell::S(kind),
                Cell::S(&mask),
                Cell::F(p.base_loss),
                Cell::F(after),
                Cell::F(after - p.base_loss),
            ]);
        }
        self.out.write_csv("postprune.csv", &csv)?;
        self.out.write_json("postprune.json", &p)?;
        self.finish_stage("postprune", t)
    }

    fn read_opt<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<Option<T>> {
        if self.out.exists(rel) {
            self.out.read_json(rel).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn summary(&mut self) -> Result<Summary> {
        self.imp()?;
        let t = Instant::now();
        let variants = if VARIANTS
            .iter()
            .all(|v| self.out.exists(&ckpt_path(&name_of_variant(v))))
        {
            self.variant_rows()?
        } else {
            Vec::new()
        };
        let (successive_barriers, variant_barriers) = self
            .read_opt::<(Vec<BarrierRow>, Vec<BarrierRow>)>("interp/summary.json")?
            .unwrap_or_default();
        let taylor = if self.out.exists("taylor.csv") {
            let (_, rows) = super::report::read_csv(&self.out.path("taylor.csv"))?;
            rows.iter()
                .map(|r| {
                    Ok(TaylorRow {
                        kind: r[0].clone(),
                        removed: r[1].parse().map_err(|_| Error::Parse {
                            location: "taylor.csv".into(),
                            message: "bad count".into(),
                        })?,
                        predicted: super::report::parse_f64(&r[2], "taylor.csv")?,
                        actual: super::report::parse_f64(&r[3], "taylor.csv")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let s = Summary {
            seed: self.cfg.seed,
            levels: self.level_rows()?,
            variants,
            eigen: self.read_opt("eigen/summary.json")?.unwrap_or_default(),
            radius: self.read_opt("radius/summary.json")?.unwrap_or_default(),
            successive_barriers,
            variant_barriers,
            postprune: self.read_opt("postprune.json")?,
            taylor,
        };
        self.out.write_json("summary.json", &s)?;
        self.finish_stage("summary", t)?;
        Ok(s)
    }

    pub fn plots(&mut self) -> Result<()> {
        let t = Instant::now();
        self.write_manifest()?;
        emit_plots(self.out.root())?;
        self.finish_stage("plots", t)
    }
}

/// Opens `out` and runs every stage.
pub fn run_pipeline(cfg: ExperimentConfig, out: &Path, data_base: &Path) -> Result<Manifest> {
    let started = Instant::now();
    let mut p = Pipeline::open(cfg, out, data_base)?;
    let m = p.run_all()?;
    log::info!("pipeline finished in {:.1}s", started.elapsed().as_secs_f64());
    Ok(m)
}

/// Reads a run's `summary.json`.
pub fn load_summary(dir: &Path) -> Result<Summary> {
    ArtifactDir::create(dir)?.read_json("summary.json")
}
