use std::path::PathBuf;

use clap::Args;

use attnfilter_core::explain::ClassSelector;
use attnfilter_core::oracle::OracleSpec;
use attnfilter_core::par::{self, Execution};
use attnfilter_core::tensor_io::{save_bundle, Image};
use attnfilter_core::Result;

use crate::inputs::list_images;
use crate::pool::SessionPool;
use crate::{Failure, Outcome};

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Directory of `<image_id>.npy` model inputs
    #[arg(long)]
    pub images: PathBuf,

    /// Classes whose attention gradients are exported: indices or "predicted"
    #[arg(long, value_delimiter = ',', default_value = "predicted")]
    pub classes: Vec<ClassSelector>,

    /// Output directory; one bundle directory per image
    #[arg(long)]
    pub out: PathBuf,

    /// Replace existing bundle directories
    #[arg(long)]
    pub overwrite: bool,
}

fn export_one(pool: &SessionPool, id: &str, path: &PathBuf, args: &ExportArgs) -> Result<()> {
    let image = Image::read_npy(path)?;
    let bundle = pool.with(|s| {
        let mut classes = Vec::new();
        for sel in &args.classes {
            let c = match sel {
                ClassSelector::Index(c) => *c,
                ClassSelector::Predicted => {
                    let p = s.score(std::slice::from_ref(&image))?.remove(0);
                    p.iter().enumerate().fold(0, |b, (i, v)| if *v > p[b] { i } else { b })
                }
            };
            if !classes.contains(&c) {
                classes.push(c);
            }
        }
        s.fetch_bundle(&image, id, &classes)
    })?;
    save_bundle(&bundle, args.out.join(id), args.overwrite)?;
    log::info!("exported {id}");
    Ok(())
}

pub fn run(args: &ExportArgs, oracle: Option<OracleSpec>) -> Outcome {
    let spec = oracle.ok_or_else(|| Failure::config("export needs --oracle or ATTNFILTER_ORACLE"))?;
    let images = list_images(&args.images)?;
    let pool = SessionPool::connect(spec)?;
    let results = par::map(Execution::Parallel, &images, |(id, path)| export_one(&pool, id, path, args));
    let mut failed = 0;
    for ((id, _), r) in images.iter().zip(results) {
        if let Err(e) = r {
            log::error!("{id}: {e}");
            failed += 1;
        }
    }
    println!(
        "exported {} of {} image(s) to {}",
        images.len() - failed,
        images.len(),
        args.out.display()
    );
    Ok(failed)
}
