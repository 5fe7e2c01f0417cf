use std::path::PathBuf;

use stvo_core::evaluation::evaluate;

use super::{file_label, or_default, write_file, Context};
use crate::error::CliError;
use crate::kitti;
use crate::report::{MetricsDocument, MetricsRow};

#[derive(Debug, Clone)]
pub struct EvalArgs {
    /// Predicted trajectories in KITTI format.
    pub predictions: Vec<PathBuf>,
    /// Ground truth, one file per prediction in the same order.
    pub ground_truth: Vec<PathBuf>,
    /// Similarity-align each prediction before scoring.
    pub align: bool,
    /// Defaults to `<output dir>/eval`.
    pub output_dir: Option<PathBuf>,
}

pub fn run(ctx: &Context, args: &EvalArgs) -> Result<MetricsDocument, CliError> {
    if args.predictions.is_empty() {
        return Err(CliError::usage("no prediction files given"));
    }
    if args.predictions.len() != args.ground_truth.len() {
        return Err(CliError::usage(format!(
            "{} prediction files but {} ground-truth files",
            args.predictions.len(),
            args.ground_truth.len()
        )));
    }
    let mut rows = Vec::new();
    for (p, g) in args.predictions.iter().zip(&args.ground_truth) {
        let pred = kitti::read_poses(p)?;
        let gt = kitti::read_poses(g)?;
        let label = file_label(p);
        let m = evaluate(&pred, &gt, args.align).map_err(|e| CliError::from(e).context(&label))?;
        rows.push(MetricsRow::new(label, gt.len(), &m));
    }
    let doc = MetricsDocument::new(rows);
    let dir = or_default(&args.output_dir, || ctx.output_dir().join("eval"));
    write_file(&dir.join("metrics.json"), &doc.to_json())?;
    write_file(&dir.join("metrics.tsv"), &doc.to_table())?;
    Ok(doc)
}
