use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use actdet::evalsuite::EvalConfig;
use actdet::formats::Checkpoint;
use actdet::model::ModelConfig;
use actdet::postprocess::DecodeConfig;
use actdet::synthvid::Dataset;
use actdet::trainer::{train, EvalRecord, LogRecord, TrainConfig, TrainEvent, LOG_SCHEMA};
use actdet::Result;

use crate::{config, TrainArgs};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainLogLine {
    Step(LogRecord),
    Eval { schema: u32, epoch: usize, map: f64 },
}

/// `<dir>/<stem>.log.jsonl` next to the checkpoint.
pub fn train_log_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ckpt.with_file_name(format!("{stem}.log.jsonl"))
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let kv = config::load(args.config.as_deref())?;
    let model = ModelConfig::from_kv(&kv)?;
    let mut cfg = TrainConfig::from_kv(&kv)?;
    let decode = DecodeConfig::from_kv(&kv)?;
    let eval = EvalConfig::from_kv(&kv)?;
    kv.reject_unused(&config::model_and(&["train", "eval", "decode"]))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    let data = Dataset::load(&args.data)?;
    data.check_vocabulary(&model.classes)?;
    let started = Instant::now();
    let mut lines = Vec::new();
    let out = train(&data, &model, &cfg, &decode, &eval, |ev| match ev {
        TrainEvent::Step(r) => {
            if !args.quiet {
                println!(
                    "epoch {:>3} step {:>5} lr {:.2e} loss {:.4} (rpn {:.4}/{:.4}, rcnn {:.4}/{:.4}) {:.0}s",
                    r.epoch,
                    r.step,
                    r.lr,
                    r.total,
                    r.rpn_cls,
                    r.rpn_reg,
                    r.rcnn_cls,
                    r.rcnn_reg,
                    started.elapsed().as_secs_f64()
                );
            }
            lines.push(TrainLogLine::Step(r.clone()));
        }
        TrainEvent::Eval(&EvalRecord { epoch, map }) => {
            println!("epoch {epoch:>3} test mAP {map:.4}");
            lines.push(TrainLogLine::Eval { schema: LOG_SCHEMA, epoch, map });
        }
    })?;

    Checkpoint::from_store(&model, &out.best).save(&args.out)?;
    let log: String = lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("log records serialize") + "\n")
        .collect();
    let log_path = train_log_path(&args.out);
    config::write_text(&log_path, &log)?;
    println!(
        "best test mAP {:.4} at epoch {}; checkpoint {}, log {}",
        out.best_map,
        out.best_epoch,
        args.out.display(),
        log_path.display()
    );
    Ok(())
}
