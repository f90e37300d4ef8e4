use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use dystan::dataset::{
    load_recordings, synth_generate, windows_from_recordings, write_cache, LabeledWindow, SynthConfig, SED_CLASSES,
    SOC_CLASSES,
};
use serde_json::json;

use crate::manifest::{write_manifest, ManifestBuilder};

/// Manifest path of a single-file output: `<output>.manifest.json`.
pub fn sidecar_manifest(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn sed_name(code: u8) -> &'static str {
    SED_CLASSES.get(code as usize).map_or("OTHER", |c| c.code())
}

fn soc_name(code: u8) -> &'static str {
    SOC_CLASSES.get(code as usize).map_or("?", |c| c.code())
}

pub fn histogram(windows: &[LabeledWindow]) -> String {
    let mut counts: BTreeMap<(u8, u8), usize> = BTreeMap::new();
    for w in windows {
        *counts.entry((w.sed, w.soc)).or_default() += 1;
    }
    let mut out = format!("{:<6} {:<7} {:>6}\n", "sed", "soc", "count");
    for ((sed, soc), n) in counts {
        out.push_str(&format!("{:<6} {:<7} {:>6}\n", sed_name(sed), soc_name(soc), n));
    }
    out
}

pub fn preprocess(input: &Path, output: &Path, keep_other: bool) -> Result<()> {
    let manifest = ManifestBuilder::start("preprocess");
    let recordings = load_recordings(input)?;
    if recordings.is_empty() {
        eprintln!("warning: {} holds no recordings; writing an empty cache", input.display());
    }
    let windows = windows_from_recordings(&recordings, keep_other)?;
    write_cache(output, &windows)?;
    println!("{} windows from {} recordings -> {}", windows.len(), recordings.len(), output.display());
    print!("{}", histogram(&windows));
    let config = json!({ "input": input.display().to_string(), "output": output.display().to_string(), "keep_other": keep_other });
    let m = manifest.finish(config, None, &[input.to_path_buf()], &[output.to_path_buf()])?;
    write_manifest(&sidecar_manifest(output), &m)
}

pub fn synth(cfg: &SynthConfig, output: &Path) -> Result<()> {
    let manifest = ManifestBuilder::start("synth");
    let windows = synth_generate(cfg)?;
    write_cache(output, &windows)?;
    println!("{} synthetic windows -> {}", windows.len(), output.display());
    print!("{}", histogram(&windows));
    let m = manifest.finish(serde_json::to_value(cfg)?, Some(cfg.seed), &[], &[output.to_path_buf()])?;
    write_manifest(&sidecar_manifest(output), &m)
}
