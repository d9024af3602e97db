//! Masks, magnitude and random pruning, projections between levels, and the
//! iterative pruning driver with its retraining strategies.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{apply_mask, init_params, LossContext, ParamVector};
use crate::numerics::RngStream;
use crate::trainer::{train, Hyperparams, RunOptions, TrainOutcome, TrainRecord};

/// Stream id of the dense initialization.
pub const INIT_STREAM: u64 = 1;
/// Data-order stream of IMP level `L` is `LEVEL_DATA_STREAM + L`.
pub const LEVEL_DATA_STREAM: u64 = 100;

/// Binary keep-mask aligned with the parameter layout. Coordinates that are
/// not prunable (biases) are always kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
    prunable: Vec<bool>,
}

impl Mask {
    /// All-ones mask with every coordinate prunable.
    pub fn dense(len: usize) -> Self {
        Mask {
            bits: vec![true; len],
            prunable: vec![true; len],
        }
    }

    /// Every coordinate prunable.
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let prunable = vec![true; bits.len()];
        Mask { bits, prunable }
    }

    pub fn dense_with_prunable(prunable: Vec<bool>) -> Self {
        Mask {
            bits: vec![true; prunable.len()],
            prunable,
        }
    }

    pub fn with_prunable(bits: Vec<bool>, prunable: Vec<bool>) -> Result<Self> {
        check_len(prunable.len(), bits.len())?;
        if let Some(i) = (0..bits.len()).find(|&i| !prunable[i] && !bits[i]) {
            return Err(Error::Precondition(format!(
                "coordinate {i} is not prunable but the mask removes it"
            )));
        }
        Ok(Mask { bits, prunable })
    }

    /// Same prunable layout, new bits.
    pub fn with_bits(&self, bits: Vec<bool>) -> Result<Self> {
        Mask::with_prunable(bits, self.prunable.clone())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn prunable(&self) -> &[bool] {
        &self.prunable
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn prunable_count(&self) -> usize {
        self.prunable.iter().filter(|&&b| b).count()
    }

    pub fn active_prunable_count(&self) -> usize {
        self.bits
            .iter()
            .zip(&self.prunable)
            .filter(|&(&b, &p)| b && p)
            .count()
    }

    /// Kept fraction of the prunable coordinates.
    pub fn prunable_density(&self) -> f64 {
        match self.prunable_count() {
            0 => 1.0,
            n => self.active_prunable_count() as f64 / n as f64,
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.len() == other.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn active_prunable(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.bits[i] && self.prunable[i])
            .collect()
    }

    fn removing(&self, idx: impl IntoIterator<Item = usize>) -> Mask {
        let mut bits = self.bits.clone();
        for i in idx {
            bits[i] = false;
        }
        Mask {
            bits,
            prunable: self.prunable.clone(),
        }
    }
}

/// Fraction of zeros over the whole vector.
pub fn sparsity(m: &Mask) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    (m.len() - m.active_count()) as f64 / m.len() as f64
}

/// Number of coordinates one round removes from `active`.
pub fn prune_count(active: usize, fraction: f64) -> usize {
    (fraction * active as f64).floor() as usize
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("prune fraction must be in (0, 1), got {fraction}")))
    }
}

fn exhausted_check(current: &Mask) -> Result<Vec<usize>> {
    let active = current.active_prunable();
    if active.len() < 2 {
        return Err(Error::Exhausted {
            active: active.len(),
        });
    }
    Ok(active)
}

fn smallest_first(w: &[f64], idx: &mut [usize]) {
    idx.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
}

/// Global magnitude pruning: removes the `⌊fraction · active⌋` active
/// prunable coordinates with the smallest `|w|`, lower index first on ties.
pub fn magnitude_mask(w: &ParamVector, current: &Mask, fraction: f64) -> Result<Mask> {
    check_fraction(fraction)?;
    let active = exhausted_check(current)?;
    magnitude_mask_count(w, current, prune_count(active.len(), fraction))
}

/// Global magnitude pruning of exactly `remove` coordinates.
pub fn magnitude_mask_count(w: &ParamVector, current: &Mask, remove: usize) -> Result<Mask> {
    check_len(current.len(), w.len())?;
    let mut active = exhausted_check(current)?;
    if remove >= active.len() {
        return Err(Error::Exhausted {
            active: active.len(),
        });
    }
    smallest_first(w.as_slice(), &mut active);
    Ok(current.removing(active.into_iter().take(remove)))
}

/// Magnitude pruning applied within each layer separately; `layer_of` maps
/// every coordinate to its layer.
pub fn magnitude_mask_per_layer(
    w: &ParamVector,
    current: &Mask,
    fraction: f64,
    layer_of: &[usize],
) -> Result<Mask> {
    check_fraction(fraction)?;
    check_len(current.len(), w.len())?;
    check_len(current.len(), layer_of.len())?;
    let active = exhausted_check(current)?;
    let layers = layer_of.iter().max().map_or(0, |m| m + 1);
    let mut removed = Vec::new();
    for l in 0..layers {
        let mut idx: Vec<usize> = active.iter().copied().filter(|&i| layer_of[i] == l).collect();
        let k = prune_count(idx.len(), fraction);
        smallest_first(w.as_slice(), &mut idx);
        removed.extend(idx.into_iter().take(k));
    }
    Ok(current.removing(removed))
}

/// Uniformly random pruning of `⌊fraction · active⌋` active prunable
/// coordinates.
pub fn random_mask(current: &Mask, fraction: f64, rng: RngStream) -> Result<Mask> {
    check_fraction(fraction)?;
    let active = exhausted_check(current)?;
    random_mask_count(current, prune_count(active.len(), fraction), rng)
}

pub fn random_mask_count(current: &Mask, remove: usize, rng: RngStream) -> Result<Mask> {
    let active = exhausted_check(current)?;
    if remove >= active.len() {
        return Err(Error::Exhausted {
            active: active.len(),
        });
    }
    let picked = index::sample(&mut rng.rng(), active.len(), remove);
    Ok(current.removing(picked.into_iter().map(|j| active[j])))
}

/// `target ⊙ w`. Onto a sparser mask this is the projection of a solution,
/// onto a denser one the reverse projection.
pub fn project(w: &ParamVector, target: &Mask) -> Result<ParamVector> {
    apply_mask(w, target)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    WeightRewind,
    LrRewind,
    FineTune,
    RandomReinit,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::WeightRewind => "weight_rewind",
            Strategy::LrRewind => "lr_rewind",
            Strategy::FineTune => "fine_tune",
            Strategy::RandomReinit => "random_reinit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpConfig {
    pub levels: usize,
    pub prune_fraction_per_round: f64,
    pub strategy: Strategy,
    pub hp: Hyperparams,
    pub ft_lr: f64,
    pub ft_epochs: usize,
    /// Rank magnitudes within each layer instead of globally.
    #[serde(default)]
    pub per_layer: bool,
}

impl Default for ImpConfig {
    fn default() -> Self {
        ImpConfig {
            levels: 10,
            prune_fraction_per_round: 0.2,
            strategy: Strategy::WeightRewind,
            hp: Hyperparams::default(),
            ft_lr: 0.001,
            ft_epochs: 40,
            per_layer: false,
        }
    }
}

impl ImpConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if !(self.prune_fraction_per_round > 0.0 && self.prune_fraction_per_round < 1.0) {
            return Err(Error::Config(format!(
                "prune_fraction_per_round must be in (0, 1), got {}",
                self.prune_fraction_per_round
            )));
        }
        if !(self.ft_lr > 0.0 && self.ft_lr.is_finite()) || self.ft_epochs == 0 {
            return Err(Error::Config("ft_lr and ft_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// The trained solution at one pruning level.
#[derive(Clone, Debug)]
pub struct LevelArtifacts {
    pub level: usize,
    pub mask: Mask,
    /// Where retraining started (the initialization for level 0).
    pub start: ParamVector,
    pub solution: ParamVector,
    pub record: TrainRecord,
}

/// A full IMP run: the dense initialization, the early-training rewind
/// point and one artifact per level.
#[derive(Clone, Debug)]
pub struct ImpRun {
    pub init: ParamVector,
    pub rewind_point: ParamVector,
    pub levels: Vec<LevelArtifacts>,
}

fn tag_level(e: Error, level: usize) -> Error {
    match e {
        Error::Divergence { step, loss, .. } => Error::Divergence {
            level: Some(level),
            step,
            loss,
        },
        e => e,
    }
}

fn retrain(
    ctx: &LossContext,
    test: &LossContext,
    start: &ParamVector,
    mask: &Mask,
    hp: &Hyperparams,
    opts: &RunOptions,
    level: usize,
) -> Result<TrainOutcome> {
    train(ctx, test, start, mask, hp, opts).map_err(|e| tag_level(e, level))
}

/// Dense training from the seeded initialization (level 0).
pub fn dense_run(ctx: &LossContext, test: &LossContext, hp: &Hyperparams) -> Result<ImpRun> {
    let spec = ctx.spec();
    let init = init_params(spec, RngStream::new(hp.seed, INIT_STREAM));
    let mask = spec.dense_mask();
    let opts = RunOptions {
        data_stream: LEVEL_DATA_STREAM,
        ..RunOptions::default()
    };
    let out = retrain(ctx, test, &init, &mask, hp, &opts, 0)?;
    Ok(ImpRun {
        init: init.clone(),
        rewind_point: out.rewind,
        levels: vec![LevelArtifacts {
            level: 0,
            mask,
            start: init,
            solution: out.final_params,
            record: out.record,
        }],
    })
}

/// Prunes `prev` one round under `cfg` and retrains with `cfg.strategy`.
pub fn imp_step(
    ctx: &LossContext,
    test: &LossContext,
    cfg: &ImpConfig,
    rewind_point: &ParamVector,
    prev: &LevelArtifacts,
) -> Result<LevelArtifacts> {
    let level = prev.level + 1;
    let mask = if cfg.per_layer {
        magnitude_mask_per_layer(
            &prev.solution,
            &prev.mask,
            cfg.prune_fraction_per_round,
            &ctx.spec().layer_of(),
        )?
    } else {
        magnitude_mask(&prev.solution, &prev.mask, cfg.prune_fraction_per_round)?
    };
    let hp = &cfg.hp;
    let mut opts = RunOptions {
        data_stream: LEVEL_DATA_STREAM + level as u64,
        ..RunOptions::default()
    };
    let start = match cfg.strategy {
        Strategy::WeightRewind => {
            opts.schedule_offset = hp.rewind_step;
            project(rewind_point, &mask)?
        }
        Strategy::LrRewind => {
            opts.schedule_offset = hp.rewind_step;
            project(&prev.solution, &mask)?
        }
        Strategy::FineTune => {
            opts.constant_lr = Some((cfg.ft_lr, cfg.ft_epochs));
            project(&prev.solution, &mask)?
        }
        Strategy::RandomReinit => {
            let fresh = init_params(
                ctx.spec(),
                RngStream::new(hp.seed, INIT_STREAM).child(level as u64),
            );
            project(&fresh, &mask)?
        }
    };
    let out = retrain(ctx, test, &start, &mask, hp, &opts, level)?;
    Ok(LevelArtifacts {
        level,
        mask,
        start,
        solution: out.final_params,
        record: out.record,
    })
}

/// Iterative magnitude pruning: dense training followed by `cfg.levels`
/// prune-and-retrain rounds.
pub fn imp_run(ctx: &LossContext, test: &LossContext, cfg: &ImpConfig) -> Result<ImpRun> {
    imp_run_with(ctx, test, cfg, None, |_| Ok(()))
}

/// Like [`imp_run`], continuing from a partial run if given and calling
/// `on_level` after every completed level (including a fresh level 0).
pub fn imp_run_with(
    ctx: &LossContext,
    test: &LossContext,
    cfg: &ImpConfig,
    resume: Option<ImpRun>,
    mut on_level: impl FnMut(&LevelArtifacts) -> Result<()>,
) -> Result<ImpRun> {
    cfg.validate()?;
    let mut run = match resume {
        Some(r) if !r.levels.is_empty() => r,
        _ => {
            let r = dense_run(ctx, test, &cfg.hp)?;
            on_level(&r.levels[0])?;
            r
        }
    };
    while run.levels.len() <= cfg.levels {
        let prev = run.levels.last().expect("run has a dense level");
        let next = imp_step(ctx, test, cfg, &run.rewind_point, prev)?;
        log::info!(
            "level {} done: sparsity {:.4}, final train loss {:.4e}",
            next.level,
            sparsity(&next.mask),
            next.record.train_loss.last().copied().unwrap_or(f64::NAN)
        );
        on_level(&next)?;
        run.levels.push(next);
    }
    Ok(run)
}

/// How much a single-shot variant prunes from its source mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PruneTarget {
    /// Remove `⌊fraction · active⌋` prunable coordinates.
    Fraction(f64),
    /// Prune down to exactly this many active prunable coordinates.
    ActivePrunable(usize),
}

impl PruneTarget {
    fn removals(self, current: &Mask) -> Result<usize> {
        let active = current.active_prunable_count();
        match self {
            PruneTarget::Fraction(f) => {
                check_fraction(f)?;
                Ok(prune_count(active, f))
            }
            PruneTarget::ActivePrunable(n) if n < active => Ok(active - n),
            PruneTarget::ActivePrunable(n) => Err(Error::Domain(format!(
                "target of {n} active coordinates is not below the current {active}"
            ))),
        }
    }
}

/// Weight-rewind retraining of a freshly pruned mask.
fn rewind_retrain(
    ctx: &LossContext,
    test: &LossContext,
    mask: Mask,
    rewind_point: &ParamVector,
    hp: &Hyperparams,
    data_stream: u64,
    level: usize,
) -> Result<LevelArtifacts> {
    let start = project(rewind_point, &mask)?;
    let opts = RunOptions {
        schedule_offset: hp.rewind_step,
        data_stream,
        ..RunOptions::default()
    };
    let out = retrain(ctx, test, &start, &mask, hp, &opts, level)?;
    Ok(LevelArtifacts {
        level,
        mask,
        start,
        solution: out.final_params,
        record: out.record,
    })
}

/// One-shot pruning: a single magnitude cut of the dense solution, then
/// weight-rewind retraining. `level` labels the result.
pub fn one_shot_run(
    ctx: &LossContext,
    test: &LossContext,
    dense: &LevelArtifacts,
    rewind_point: &ParamVector,
    target: PruneTarget,
    hp: &Hyperparams,
    level: usize,
) -> Result<LevelArtifacts> {
    let remove = target.removals(&dense.mask)?;
    let mask = magnitude_mask_count(&dense.solution, &dense.mask, remove)?;
    rewind_retrain(ctx, test, mask, rewind_point, hp, LEVEL_DATA_STREAM + 1000 + level as u64, level)
}

/// Random pruning of `source`'s mask, then weight-rewind retraining.
/// Pruning 20% from level 9 or straight to the final count from level 0
/// are both expressed through `source` and `target`.
#[allow(clippy::too_many_arguments)]
pub fn random_pruned_run(
    ctx: &LossContext,
    test: &LossContext,
    source: &LevelArtifacts,
    rewind_point: &ParamVector,
    target: PruneTarget,
    hp: &Hyperparams,
    rng: RngStream,
    level: usize,
) -> Result<LevelArtifacts> {
    let remove = target.removals(&source.mask)?;
    let mask = random_mask_count(&source.mask, remove, rng)?;
    rewind_retrain(
        ctx,
        test,
        mask,
        rewind_point,
        hp,
        LEVEL_DATA_STREAM + 2000 + source.level as u64,
        level,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_spirals;
    use crate::model::NetworkSpec;
    use crate::numerics::DenseVector;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    fn dv(v: &[f64]) -> DenseVector {
        DenseVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sparsity_counts_zeros() {
        assert_eq!(sparsity(&Mask::dense(4)), 0.0);
        assert_eq!(sparsity(&Mask::from_bits(bits(&[1, 0, 1, 0]))), 0.5);
    }

    #[test]
    fn ten_rounds_density() {
        let mut m = Mask::dense(100_000);
        let w = DenseVector::new((0..100_000).map(|i| i as f64).collect()).unwrap();
        for _ in 0..10 {
            m = magnitude_mask(&w, &m, 0.2).unwrap();
        }
        assert!((m.prunable_density() - 0.8f64.powi(10)).abs() < 1e-4);
    }

    #[test]
    fn magnitude_examples() {
        let m = magnitude_mask(&dv(&[0.5, -0.1, 0.3, -0.7]), &Mask::dense(4), 0.25).unwrap();
        assert_eq!(m.bits(), bits(&[1, 0, 1, 1]));
        let m = magnitude_mask(&dv(&[0.2, -0.2, 0.9, 0.9]), &Mask::dense(4), 0.25).unwrap();
        assert_eq!(m.bits(), bits(&[0, 1, 1, 1]));
    }

    #[test]
    fn floor_rule_on_a_thousand_weights() {
        // Independent integer iteration of the removal rule.
        let mut expected = vec![1000usize];
        for _ in 0..10 {
            let a = *expected.last().unwrap();
            expected.push(a - a * 2 / 10);
        }
        assert_eq!(expected, [1000, 800, 640, 512, 410, 328, 263, 211, 169, 136, 109]);

        let w = DenseVector::new((0..1000).map(|i| ((i * 7919) % 1000) as f64 + 0.5).collect()).unwrap();
        let mut m = Mask::dense(1000);
        let mut seen = vec![m.active_count()];
        for _ in 0..10 {
            m = magnitude_mask(&w, &m, 0.2).unwrap();
            seen.push(m.active_count());
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn biases_are_never_pruned() {
        let prunable = bits(&[1, 1, 0, 1]);
        let m = Mask::dense_with_prunable(prunable);
        let m = magnitude_mask(&dv(&[1.0, 2.0, 0.0, 3.0]), &m, 0.5).unwrap();
        assert_eq!(m.bits(), bits(&[0, 1, 1, 1]));
        assert!(Mask::with_prunable(bits(&[1, 0]), bits(&[1, 0])).is_err());
    }

    #[test]
    fn exhausted_masks() {
        let m = Mask::from_bits(bits(&[1, 0, 0]));
        assert!(matches!(
            magnitude_mask(&dv(&[1.0, 0.0, 0.0]), &m, 0.5),
            Err(Error::Exhausted { active: 1 })
        ));
        assert!(matches!(random_mask(&m, 0.5, RngStream::new(0, 0)), Err(Error::Exhausted { .. })));
        assert!(magnitude_mask(&dv(&[1.0, 2.0]), &Mask::dense(2), 1.0).is_err());
    }

    #[test]
    fn random_mask_count_and_determinism() {
        let m = Mask::dense(10);
        let a = random_mask(&m, 0.5, RngStream::new(3, 9)).unwrap();
        let b = random_mask(&m, 0.5, RngStream::new(3, 9)).unwrap();
        assert_eq!(a.active_count(), 5);
        assert_eq!(a, b);
        let c = random_mask(&a, 0.5, RngStream::new(4, 0)).unwrap();
        assert!(c.is_subset_of(&a));
    }

    #[test]
    fn projection() {
        let w = dv(&[1.0, 2.0, 3.0]);
        let t = Mask::from_bits(bits(&[1, 0, 1]));
        assert_eq!(project(&w, &t).unwrap().as_slice(), &[1.0, 0.0, 3.0]);
        assert_eq!(project(&w, &Mask::dense(3)).unwrap(), w);
        assert!(project(&w, &Mask::dense(2)).is_err());
    }

    #[test]
    fn per_layer_prunes_each_layer() {
        let w = dv(&[1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]);
        let layer_of = [0, 0, 0, 0, 1, 1, 1, 1];
        let m = magnitude_mask_per_layer(&w, &Mask::dense(8), 0.25, &layer_of).unwrap();
        assert_eq!(m.bits(), bits(&[0, 1, 1, 1, 0, 1, 1, 1]));
        let g = magnitude_mask(&w, &Mask::dense(8), 0.25).unwrap();
        assert_eq!(g.bits(), bits(&[0, 0, 1, 1, 1, 1, 1, 1]));
    }

    #[test]
    fn prune_targets() {
        let m = Mask::dense(10);
        assert_eq!(PruneTarget::Fraction(0.2).removals(&m).unwrap(), 2);
        assert_eq!(PruneTarget::ActivePrunable(3).removals(&m).unwrap(), 7);
        assert!(PruneTarget::ActivePrunable(10).removals(&m).is_err());
    }

    fn tiny_setup() -> (LossContext, LossContext) {
        let spec = NetworkSpec::new(vec![2, 8, 3]).unwrap();
        let train = gen_spirals(20, 3, 0.1, RngStream::new(1, 0)).unwrap();
        let test = gen_spirals(10, 3, 0.1, RngStream::new(1, 1)).unwrap();
        (
            LossContext::new(&spec, &train.full()).unwrap(),
            LossContext::new(&spec, &test.full()).unwrap(),
        )
    }

    fn tiny_cfg(strategy: Strategy, levels: usize) -> ImpConfig {
        ImpConfig {
            levels,
            strategy,
            hp: Hyperparams {
                epochs: 4,
                batch_size: 16,
                decay_epochs: vec![2],
                rewind_step: 3,
                seed: 5,
                ..Hyperparams::default()
            },
            ft_epochs: 2,
            ..ImpConfig::default()
        }
    }

    #[test]
    fn zero_levels_is_a_dense_run() {
        let (ctx, test) = tiny_setup();
        let run = imp_run(&ctx, &test, &tiny_cfg(Strategy::WeightRewind, 0)).unwrap();
        assert_eq!(run.levels.len(), 1);
        assert_eq!(sparsity(&run.levels[0].mask), 0.0);
    }

    #[test]
    fn every_strategy_keeps_masks_nested_and_solutions_masked() {
        let (ctx, test) = tiny_setup();
        for s in [
            Strategy::WeightRewind,
            Strategy::LrRewind,
            Strategy::FineTune,
            Strategy::RandomReinit,
        ] {
            let run = imp_run(&ctx, &test, &tiny_cfg(s, 3)).unwrap();
            assert_eq!(run.levels.len(), 4);
            for pair in run.levels.windows(2) {
                assert!(pair[1].mask.is_subset_of(&pair[0].mask));
                assert!(sparsity(&pair[1].mask) > sparsity(&pair[0].mask));
            }
            for l in &run.levels {
                assert_eq!(apply_mask(&l.solution, &l.mask).unwrap(), l.solution);
            }
            if s == Strategy::WeightRewind {
                for l in &run.levels[1..] {
                    for (i, &on) in l.mask.bits().iter().enumerate() {
                        if on {
                            assert_eq!(l.start[i], run.rewind_point[i]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn one_shot_at_one_round_matches_magnitude_mask() {
        let (ctx, test) = tiny_setup();
        let cfg = tiny_cfg(Strategy::WeightRewind, 1);
        let run = imp_run(&ctx, &test, &cfg).unwrap();
        let dense = &run.levels[0];
        let os = one_shot_run(&ctx, &test, dense, &run.rewind_point, PruneTarget::Fraction(0.2), &cfg.hp, 1)
            .unwrap();
        assert_eq!(os.mask, run.levels[1].mask);
        let rp = random_pruned_run(
            &ctx,
            &test,
            dense,
            &run.rewind_point,
            PruneTarget::ActivePrunable(run.levels[1].mask.active_prunable_count()),
            &cfg.hp,
            RngStream::new(7, 7),
            1,
        )
        .unwrap();
        assert_eq!(rp.mask.active_count(), run.levels[1].mask.active_count());
    }

    proptest! {
        #[test]
        fn magnitude_mask_is_scale_invariant(
            w in proptest::collection::vec(-5.0f64..5.0, 4..40),
            c in 0.01f64..100.0,
        ) {
            let v = DenseVector::new(w.clone()).unwrap();
            let s = v.scale(c);
            let m = Mask::dense(w.len());
            prop_assert_eq!(magnitude_mask(&v, &m, 0.3).unwrap(), magnitude_mask(&s, &m, 0.3).unwrap());
        }

        #[test]
        fn pruned_set_is_within_active_set(seed in any::<u64>(), f in 0.05f64..0.95) {
            let m = random_mask(&Mask::dense(50), 0.5, RngStream::new(seed, 0)).unwrap();
            let r = random_mask(&m, f, RngStream::new(seed, 1)).unwrap();
            prop_assert!(r.is_subset_of(&m));
            prop_assert_eq!(r.active_count(), 25 - prune_count(25, f));
        }
    }
}
