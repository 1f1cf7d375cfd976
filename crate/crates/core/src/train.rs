//! The training loop.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::model::CamoModel;
use crate::nn::{Adam, Mode, ParamKind, ParamStore};
use crate::objective::LossBreakdown;
use crate::taxonomy::AttributeTaxonomy;
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const STEP_LOG_FILE: &str = "train_log.jsonl";
pub const EPOCH_LOG_FILE: &str = "epochs.jsonl";

/// One line of the step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub mask: f64,
    pub fix: f64,
    pub attr: f64,
    pub consist: f64,
    pub total: f64,
    pub config_hash: String,
}

/// One line of the epoch log: mean breakdown over the epoch's steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub mask: f64,
    pub fix: f64,
    pub attr: f64,
    pub consist: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    /// Parameter and activation precision.
    pub dtype: DType,
}

impl TrainOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            dtype: DType::F32,
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub history: Vec<LossBreakdown>,
}

/// Splits shuffled indices into batches of `size`; a trailing batch of one
/// joins the previous batch because batch statistics need two samples.
pub fn make_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

struct Logs {
    steps: BufWriter<File>,
    epochs: BufWriter<File>,
}

impl Logs {
    fn create(dir: &Path) -> Result<Self> {
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            Ok(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
        };
        Ok(Self {
            steps: open(STEP_LOG_FILE)?,
            epochs: open(EPOCH_LOG_FILE)?,
        })
    }

    fn line<T: Serialize>(w: &mut BufWriter<File>, dir: &Path, rec: &T) -> Result<()> {
        serde_json::to_writer(&mut *w, rec)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(dir, e))
    }
}

fn mean_breakdown(rows: &[LossBreakdown]) -> LossBreakdown {
    let n = rows.len().max(1) as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| rows.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        mask: sum(|b| b.mask),
        fix: sum(|b| b.fix),
        attr: sum(|b| b.attr),
        consist: sum(|b| b.consist),
        total: sum(|b| b.total),
    }
}

fn metrics_of(b: &LossBreakdown) -> BTreeMap<String, f64> {
    [("mask", b.mask), ("fix", b.fix), ("attr", b.attr), ("consist", b.consist), ("total", b.total)]
        .into_iter()
        .map(|(k, v)| (format!("train_{k}"), v))
        .collect()
}

/// Copies of everything training mutates, taken before a step.
struct Snapshot {
    values: Vec<(String, Tensor)>,
    adam: Adam,
    epoch: usize,
    step: u64,
    metrics: Option<LossBreakdown>,
}

impl Snapshot {
    fn take(store: &ParamStore, adam: &Adam, epoch: usize, step: u64, metrics: Option<LossBreakdown>) -> Result<Self> {
        let values = store
            .all()
            .into_iter()
            .filter(|(n, _)| store.kind(n) != Some(ParamKind::Frozen))
            .map(|(n, v)| Ok((n, v.as_tensor().copy()?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            values,
            adam: adam.clone(),
            epoch,
            step,
            metrics,
        })
    }

    fn restore(&self, store: &ParamStore) -> Result<()> {
        self.values.iter().try_for_each(|(n, t)| store.set(n, t))
    }
}

/// Trains from scratch on `manifest` and writes the step log, the epoch log
/// and `checkpoint.ckpt` into `opts.out_dir`.
///
/// A non-finite loss stops training: the last parameters whose loss was
/// finite are saved as the checkpoint and the error names the offending term.
pub fn train(cfg: &TrainConfig, manifest: &DatasetManifest, taxonomy: &AttributeTaxonomy, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::Empty("training manifest"));
    }
    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let hash = cfg.hash();

    let store = ParamStore::new(opts.dtype, cfg.seed);
    let model = CamoModel::new(&store, &cfg.model(), true)?;
    let trainable = store.trainable();
    let mut adam = Adam::new(cfg.adam);
    let mode = Mode::train(cfg.seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let hflip = cfg.hflip && !model.uses_feature_files();
    if cfg.hflip && !hflip {
        log::warn!("horizontal flips are disabled when training on precomputed features");
    }
    let grid = cfg.backbone.grid();

    let mut logs = Logs::create(dir)?;
    let mut history = Vec::new();
    let mut step: u64 = 0;
    let mut epoch_done = 0;
    let mut last_epoch_mean = None;
    let mut last_good: Option<Snapshot> = None;
    let n = manifest.len();

    'epochs: for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut rows = Vec::new();
        for idx in make_batches(&order, cfg.batch_size) {
            let entries: Vec<&ManifestEntry> = idx.iter().map(|&i| &manifest.entries[i]).collect();
            let flips: Vec<bool> = entries.iter().map(|_| hflip && rng.gen_bool(0.5)).collect();
            let samples = batch::load_samples(&model, manifest, &entries, &flips)?;
            let feats = batch::features(&model, manifest, &entries, &samples, opts.dtype)?;
            let targets = batch::targets(&samples, grid, opts.dtype)?;
            let snap = Snapshot::take(&store, &adam, epoch_done, step, last_epoch_mean)?;
            let out = model.forward_visual(feats, &mode)?;
            let losses = match model.losses(&out, &targets, &cfg.loss_weights) {
                Ok(l) => l,
                Err(e @ Error::NonFinite { .. }) => {
                    // The current parameters produced the bad loss; fall back to
                    // the last state whose loss was finite.
                    let good = last_good.take().unwrap_or(snap);
                    good.restore(&store)?;
                    let metrics = good.metrics.as_ref().map(metrics_of).unwrap_or_default();
                    Checkpoint::capture(&store, &good.adam, cfg, taxonomy, good.epoch, good.step, metrics)?.save(&ckpt_path)?;
                    log::error!("non-finite loss at step {}; kept the parameters from step {}", step + 1, good.step);
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            last_good = Some(snap);
            let grads = losses.total.backward()?;
            adam.step(&trainable, &grads, lr)?;
            step += 1;
            let b = losses.breakdown;
            Logs::line(
                &mut logs.steps,
                dir,
                &StepRecord {
                    step,
                    epoch,
                    lr,
                    mask: b.mask,
                    fix: b.fix,
                    attr: b.attr,
                    consist: b.consist,
                    total: b.total,
                    config_hash: hash.clone(),
                },
            )?;
            history.push(b);
            rows.push(b);
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
        }
        let m = mean_breakdown(&rows);
        Logs::line(
            &mut logs.epochs,
            dir,
            &EpochRecord {
                epoch,
                steps: rows.len(),
                lr,
                mask: m.mask,
                fix: m.fix,
                attr: m.attr,
                consist: m.consist,
                total: m.total,
            },
        )?;
        log::info!("epoch {epoch}: total {:.5} (mask {:.5}, fix {:.5}, attr {:.6})", m.total, m.mask, m.fix, m.attr);
        epoch_done = epoch;
        last_epoch_mean = Some(m);
        if cfg.max_steps.is_some_and(|ms| step >= ms) {
            break 'epochs;
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch < cfg.epochs {
            Checkpoint::capture(&store, &adam, cfg, taxonomy, epoch, step, metrics_of(&m))?.save(&ckpt_path)?;
        }
    }

    let metrics = last_epoch_mean.as_ref().map(metrics_of).unwrap_or_default();
    let checkpoint = Checkpoint::capture(&store, &adam, cfg, taxonomy, epoch_done, step, metrics)?;
    checkpoint.save(&ckpt_path)?;
    Ok(TrainOutcome {
        checkpoint,
        checkpoint_path: ckpt_path,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_leftover_joins_previous_batch() {
        let order: Vec<usize> = (0..9).collect();
        let b = make_batches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = make_batches(&order[..6], 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 2]);
        assert_eq!(make_batches(&order[..1], 4), vec![vec![0]]);
    }
}
