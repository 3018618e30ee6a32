use actdet::evalsuite::EvalConfig;
use actdet::formats::Split;
use actdet::postprocess::DecodeConfig;
use actdet::synthvid::Dataset;
use actdet::trainer::evaluate;
use actdet::{Error, Result};

use crate::{config, EvalArgs};

pub fn run(args: &EvalArgs) -> Result<()> {
    let kv = config::load(args.config.as_deref())?;
    let mut decode = DecodeConfig::from_kv(&kv)?;
    let mut eval = EvalConfig::from_kv(&kv)?;
    kv.reject_unused(&["eval", "decode"])?;
    if let Some(s) = args.score_thresh {
        decode.score_thresh = s;
        decode.validate()?;
    }
    if let Some(t) = args.iou_thresh {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config {
                field: "--iou-thresh".into(),
                detail: "must lie in (0, 1]".into(),
            });
        }
        eval.iou_thresh = t;
    }
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(Error::Config {
                field: "--split".into(),
                detail: format!("expected `train` or `test`, got `{other}`"),
            })
        }
    };

    let (_, det, store) = config::load_checkpoint(&args.ckpt)?;
    let data = Dataset::load(&args.data)?;
    data.check_vocabulary(&det.cfg.classes)?;
    let (report, _) = evaluate(&det, &store, &data, split, &decode, &eval)?;
    config::write_text(&args.out.join("report.json"), &(report.to_json() + "\n"))?;
    let text = report.to_text();
    config::write_text(&args.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
