use std::path::{Path, PathBuf};

use clap::Args;
use salnet_core::data::{read_image, saliency_to_image, write_image, IMAGENET_MEANS};
use salnet_core::eval::predict_image;
use salnet_core::model::load_checkpoint;
use salnet_core::{Error, Result};

use crate::settings::{PathArg, Settings};
use crate::Outcome;

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathArg>,
    /// A PPM/PGM image or a directory of them
    #[arg(long, value_name = "PATH")]
    input: Option<PathArg>,
    /// Receives `<stem>.pgm` per input
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathArg>,
}

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm" | "pnm"))
}

fn list_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let rd = std::fs::read_dir(input).map_err(|e| Error::Io { path: input.into(), source: e })?;
    let mut files: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file() && is_image(p)).collect();
    files.sort();
    Ok(files)
}

pub fn predict(a: PredictArgs, s: &mut Settings) -> Result<Outcome> {
    let ck_path = s.require("checkpoint", a.checkpoint)?;
    let input = s.require("input", a.input)?;
    let out_dir = s.require("out_dir", a.out_dir)?;
    s.log("predict");

    let ck = load_checkpoint(ck_path.as_ref())?;
    let model = ck.model()?;
    let inputs = list_inputs(input.as_ref())?;
    if inputs.is_empty() {
        return Err(Error::Usage(format!("no .ppm/.pgm images in {input}")));
    }
    std::fs::create_dir_all(&out_dir.0).map_err(|e| Error::Io { path: out_dir.0.clone(), source: e })?;
    let mut written = 0usize;
    for path in &inputs {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let target = out_dir.0.join(format!("{stem}.pgm"));
        if target.canonicalize().ok().is_some_and(|t| path.canonicalize().ok() == Some(t)) {
            log::warn!("skipping {}: output would overwrite the input", path.display());
            continue;
        }
        let result = read_image(path)
            .and_then(|img| predict_image(&model, &ck.params, &img, IMAGENET_MEANS))
            .and_then(|map| saliency_to_image(&map, 0))
            .and_then(|out| write_image(&out, &target));
        match result {
            Ok(()) => {
                log::info!("{} -> {}", path.display(), target.display());
                written += 1;
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if written == 0 {
        return Err(Error::Usage("no input image could be processed".into()));
    }
    log::info!("wrote {written} of {} maps to {out_dir}", inputs.len());
    Ok(Outcome::Ok)
}
