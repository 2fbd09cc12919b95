use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pkgtrace_core::ml::{
    load_labelled_dir, save_model, score, train, MlError, TrainConfig, DEFAULT_DIMENSION,
};

use crate::exit;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory with `benign/` and `malicious/` subdirectories.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().rng_seed)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    pub dimension: usize,
}

pub fn run(args: TrainArgs) -> anyhow::Result<u8> {
    let data = load_labelled_dir(&args.data)?;
    let config = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        rng_seed: args.seed,
        ..TrainConfig::default()
    };
    let model = match train(&data, &config, args.dimension) {
        Ok(m) => m,
        Err(e @ (MlError::SingleClass(_) | MlError::EmptyDataset)) => {
            eprintln!("error: {e}");
            return Ok(exit::INVALID_INPUT);
        }
        Err(e) => return Err(e.into()),
    };

    // Confusion counts on the training set.
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (report, malicious) in &data {
        match (score(&model, report)? >= model.threshold, *malicious) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    save_model(&model, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "examples {} (benign {}, malicious {})",
        data.len(),
        model.trained_on.benign,
        model.trained_on.malicious
    );
    eprintln!("accuracy {:.4}", ratio(tp + tn, data.len()));
    eprintln!("precision {:.4}", ratio(tp, tp + fp));
    eprintln!("recall {:.4}", ratio(tp, tp + fn_));
    eprintln!("model written to {}", args.out.display());
    Ok(exit::OK)
}
