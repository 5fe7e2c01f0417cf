use std::collections::HashMap;
use std::path::PathBuf;

use super::{file_label, write_file, Context};
use crate::error::CliError;
use crate::kitti;
use crate::report::plot_series;

#[derive(Debug, Clone)]
pub struct PlotArgs {
    pub inputs: Vec<PathBuf>,
    /// Column prefixes; file stems when empty.
    pub labels: Vec<String>,
    pub output: PathBuf,
}

pub fn run(_ctx: &Context, args: &PlotArgs) -> Result<String, CliError> {
    if args.inputs.is_empty() {
        return Err(CliError::usage("no trajectory files given"));
    }
    if !args.labels.is_empty() && args.labels.len() != args.inputs.len() {
        return Err(CliError::usage("give one label per input file"));
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut series = Vec::new();
    for (i, path) in args.inputs.iter().enumerate() {
        let base = args
            .labels
            .get(i)
            .cloned()
            .unwrap_or_else(|| file_label(path));
        let n = seen.entry(base.clone()).or_default();
        *n += 1;
        let label = if *n == 1 { base } else { format!("{base}_{n}") };
        series.push((label, kitti::read_poses(path)?));
    }
    let text = plot_series(&series);
    write_file(&args.output, &text)?;
    Ok(text)
}
