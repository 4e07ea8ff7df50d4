//! On-disk dataset layout.
//!
//! ```text
//! root/manifest.json
//! root/<split>/<index>/left.png
//!                     /right.png
//!                     /gt.pfm        raw disparity in base pixels, s x resolution
//!                     /gt_right.pfm
//!                     /meta.txt      d_max, sr, seed
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smd_core::data::{SceneConfig, Split, StereoSample};
use smd_core::{Result, SmdError};

use crate::fsutil::write_atomic;
use crate::{pfm, png};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub dir: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub scene: SceneConfig,
    pub splits: BTreeMap<String, Vec<SplitEntry>>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| SmdError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| SmdError::Config(format!("bad manifest {}: {e}", path.display())))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SmdError::Config(e.to_string()))?;
        write_atomic(&root.join(MANIFEST), text.as_bytes())
    }

    pub fn entries(&self, split: Split) -> &[SplitEntry] {
        self.splits.get(split.name()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn sample_count(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }
}

pub fn sample_dir(root: &Path, split: Split, index: usize) -> PathBuf {
    root.join(split.name()).join(format!("{index:04}"))
}

/// Plain `key = value` lines.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SmdError::Config(format!("line {}: expected key = value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn kv_get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
    kv.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| SmdError::Config(format!("{}: missing or bad '{key}'", path.display())))
}

pub fn write_sample(dir: &Path, s: &StereoSample) -> Result<()> {
    fs::create_dir_all(dir)?;
    png::write_rgb(&dir.join("left.png"), &s.left)?;
    png::write_rgb(&dir.join("right.png"), &s.right)?;
    pfm::write(&dir.join("gt.pfm"), &s.gt.map(|v| v * s.d_max))?;
    if let Some(g) = &s.gt_right {
        pfm::write(&dir.join("gt_right.pfm"), &g.map(|v| v * s.d_max))?;
    }
    let meta = format!("d_max = {}\nsr = {}\nseed = {}\n", s.d_max, s.sr, s.seed);
    write_atomic(&dir.join("meta.txt"), meta.as_bytes())
}

pub fn read_sample(dir: &Path) -> Result<StereoSample> {
    let meta_path = dir.join("meta.txt");
    let kv = parse_kv(&fs::read_to_string(&meta_path)?)?;
    let d_max: f64 = kv_get(&kv, "d_max", &meta_path)?;
    let sr: usize = kv_get(&kv, "sr", &meta_path)?;
    let seed: u64 = kv_get(&kv, "seed", &meta_path)?;
    let right_path = dir.join("gt_right.pfm");
    let gt_right = if right_path.exists() {
        Some(pfm::read(&right_path)?.map(|v| v / d_max))
    } else {
        None
    };
    let s = StereoSample {
        left: png::read_rgb(&dir.join("left.png"))?,
        right: png::read_rgb(&dir.join("right.png"))?,
        gt: pfm::read(&dir.join("gt.pfm"))?.map(|v| v / d_max),
        gt_right,
        d_max,
        sr,
        seed,
    };
    s.validate()?;
    Ok(s)
}

/// Loads every sample of `split` listed in the manifest, in order.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<StereoSample>> {
    let manifest = Manifest::load(root)?;
    manifest
        .entries(split)
        .iter()
        .map(|e| read_sample(&root.join(&e.dir)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use smd_core::data::gen_scene;

    #[test]
    fn sample_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            width: 16,
            height: 12,
            sr: 2,
            layers: 1,
            d_lo: 1.0,
            d_hi: 3.0,
            d_max: 4.0,
            seed: 9,
            ..SceneConfig::default()
        };
        let s = gen_scene(&cfg).unwrap();
        write_sample(dir.path(), &s).unwrap();
        let back = read_sample(dir.path()).unwrap();
        assert_eq!((back.sr, back.seed, back.d_max), (2, 9, 4.0));
        // PFM stores f32.
        for (a, b) in s.gt.values().iter().zip(back.gt.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(back.gt_right.is_some());
        assert!((&back.left - &s.left).iter().all(|d| d.abs() <= 0.5 / 255.0 + 1e-12));
    }

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("# c\na = 1\n\n b=two \n").unwrap();
        assert_eq!(kv["a"], "1");
        assert_eq!(kv["b"], "two");
        assert!(parse_kv("novalue").is_err());
    }
}
