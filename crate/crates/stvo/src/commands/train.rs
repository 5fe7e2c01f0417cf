use std::path::PathBuf;

use stvo_core::data::{
    compute_norm_stats, sample_clips, split_train_val, DataError, NormStats, SequenceRecord,
};
use stvo_core::model::{ModelConfig, ParameterSet};
use stvo_core::training::{train, EpochRecord, TrainingError};

use super::{write_file, Context, WallClock};
use crate::checkpoint::{self, Checkpoint};
use crate::engine::ThreadedEngine;
use crate::error::CliError;
use crate::report::loss_table;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LOSS_TABLE: &str = "loss.txt";

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub loss_table: PathBuf,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

/// Normalization statistics; components with zero spread fall back to unit
/// scale with a warning instead of failing.
pub fn lenient_stats(
    ctx: &Context,
    sequences: &[SequenceRecord],
    num_frames: usize,
) -> Result<NormStats, CliError> {
    match compute_norm_stats(sequences, num_frames) {
        Ok(s) => Ok(s),
        Err(DataError::DegenerateStd { stats, .. }) => {
            let (stats, fixed) = stats.with_unit_fallback();
            ctx.progress(format!(
                "warning: zero standard deviation in {fixed:?}; using unit scale"
            ));
            Ok(stats)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn load_training_sequences(
    ctx: &Context,
    model: &ModelConfig,
) -> Result<Vec<SequenceRecord>, CliError> {
    let layout = ctx.layout()?;
    let mut out = Vec::new();
    for id in &ctx.config.data.train_sequences {
        let seq = layout.load_sequence(id, model.height, model.width)?;
        if seq.ground_truth.is_none() {
            return Err(CliError::data(format!(
                "training sequence {id} has no pose file at {}",
                layout.poses_path(id).display()
            )));
        }
        out.push(seq);
    }
    if out.is_empty() {
        return Err(CliError::usage("no training sequences configured"));
    }
    Ok(out)
}

pub fn run(ctx: &Context) -> Result<TrainSummary, CliError> {
    let model = ctx.config.model_config();
    let tc = ctx.config.train_config();
    let sequences = load_training_sequences(ctx, &model)?;
    let stats = lenient_stats(ctx, &sequences, model.num_frames)?;

    let mut samples = Vec::new();
    for seq in &sequences {
        samples.extend(sample_clips(seq, &model, &stats)?);
    }
    let (train_set, val_set) = split_train_val(samples, ctx.config.data.val_fraction, tc.seed);
    ctx.progress(format!(
        "training on {} clips, validating on {}",
        train_set.len(),
        val_set.len()
    ));

    let out = ctx.output_dir().to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let best_path = out.join(BEST_CHECKPOINT);
    let last_path = out.join(LAST_CHECKPOINT);
    let table_path = out.join(LOSS_TABLE);
    write_file(&out.join("config.toml"), &ctx.config.to_toml())?;

    let params = ParameterSet::<f32>::init(&model, tc.seed)?;
    let engine = ThreadedEngine {
        threads: ctx.threads(),
    };
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut observer = |rec: &EpochRecord, p: &ParameterSet<f32>, improved: bool| {
        history.push(rec.clone());
        let val = rec
            .val_loss
            .map_or_else(|| "NA".into(), |v| format!("{v:.6e}"));
        ctx.progress(format!(
            "epoch {} train {:.6e} val {} ({:.1}s){}",
            rec.epoch,
            rec.train_loss,
            val,
            rec.seconds,
            if improved { " *" } else { "" }
        ));
        let fail = |e: CliError| TrainingError::Observer(e.to_string());
        std::fs::write(&table_path, loss_table(&history))
            .map_err(|e| fail(CliError::io(&table_path, e)))?;
        if improved {
            let ckpt = Checkpoint {
                config: model.clone(),
                stats: stats.clone(),
                params: p.clone(),
                epoch: Some(rec.epoch),
            };
            checkpoint::save(&best_path, &ckpt).map_err(|e| fail(e.into()))?;
        }
        Ok(())
    };
    let outcome = train(
        params,
        &model,
        &train_set,
        &val_set,
        &tc,
        &engine,
        &WallClock::default(),
        &mut observer,
    )?;

    let last = Checkpoint {
        config: model.clone(),
        stats,
        params: outcome.last,
        epoch: outcome.log.epochs.last().map(|r| r.epoch),
    };
    checkpoint::save(&last_path, &last)?;
    write_file(&table_path, &loss_table(&outcome.log.epochs))?;
    Ok(TrainSummary {
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        loss_table: table_path,
        epochs: outcome.log.epochs,
        best_epoch: outcome.log.best_epoch,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
    })
}
