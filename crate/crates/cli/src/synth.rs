use actdet::synthvid::{generate_dataset, SynthSpec};
use actdet::Result;

use crate::{config, SynthArgs};

pub fn run(args: &SynthArgs) -> Result<()> {
    let kv = config::load(args.config.as_deref())?;
    let mut spec = SynthSpec::from_kv(&kv)?;
    kv.reject_unused(&["synth"])?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let summary = generate_dataset(&spec, &args.out)?;
    println!(
        "wrote {} clips to {} ({} train, {} test), {} frames of {}x{} each",
        summary.clips,
        args.out.display(),
        summary.train_clips,
        summary.test_clips,
        spec.frames_per_clip,
        spec.height,
        spec.width
    );
    for (class, n) in &summary.actors_per_class {
        println!("  {class:<12} {n} actors");
    }
    Ok(())
}
