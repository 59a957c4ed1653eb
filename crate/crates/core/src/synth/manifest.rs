//! Dataset manifest: a plain-text `key = value` file naming the dimensions,
//! disparity budget, and per-sample generator seeds. Samples are regenerated
//! from seeds on demand rather than stored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::generate::{generate_sample, StereoSample};
use crate::elem::Elem;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub height: usize,
    pub width: usize,
    pub d_max: usize,
    pub seeds: Vec<u64>,
}

impl DatasetManifest {
    /// Sequential seeds starting at `base_seed` (pairwise distinct by
    /// construction).
    pub fn new(root: PathBuf, height: usize, width: usize, d_max: usize, count: usize, base_seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::arg("manifest", "sample count must be >= 1".to_string()));
        }
        let seeds = (0..count as u64).map(|i| base_seed.wrapping_add(i)).collect();
        Ok(DatasetManifest { root, height, width, d_max, seeds })
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn sample<E: Elem>(&self, index: usize) -> Result<StereoSample<E>> {
        generate_sample(self.seeds[index], self.height, self.width, self.d_max)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "d_max = {}", self.d_max);
        let _ = writeln!(s, "count = {}", self.seeds.len());
        for (i, seed) in self.seeds.iter().enumerate() {
            let _ = writeln!(s, "seed.{} = {}", i, seed);
        }
        s
    }

    pub fn from_text(root: PathBuf, text: &str) -> Result<Self> {
        let mut height = None;
        let mut width = None;
        let mut d_max = None;
        let mut count = None;
        let mut seeds: Vec<(usize, u64)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "manifest",
                detail: format!("line {}: expected key = value, got {raw:?}", lineno + 1),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_usize = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| Error::Format {
                    what: "manifest",
                    detail: format!("line {}: bad number {v:?}", lineno + 1),
                })
            };
            match key {
                "height" => height = Some(parse_usize(value)?),
                "width" => width = Some(parse_usize(value)?),
                "d_max" => d_max = Some(parse_usize(value)?),
                "count" => count = Some(parse_usize(value)?),
                _ => {
                    if let Some(idx) = key.strip_prefix("seed.") {
                        let idx: usize = parse_usize(idx)?;
                        let seed: u64 = value.parse().map_err(|_| Error::Format {
                            what: "manifest",
                            detail: format!("line {}: bad seed {value:?}", lineno + 1),
                        })?;
                        seeds.push((idx, seed));
                    } else {
                        return Err(Error::Format {
                            what: "manifest",
                            detail: format!("line {}: unknown key {key:?}", lineno + 1),
                        });
                    }
                }
            }
        }
        let missing = |what: &str| Error::Format { what: "manifest", detail: format!("missing {what}") };
        let height = height.ok_or_else(|| missing("height"))?;
        let width = width.ok_or_else(|| missing("width"))?;
        let d_max = d_max.ok_or_else(|| missing("d_max"))?;
        let count = count.ok_or_else(|| missing("count"))?;
        if count == 0 {
            return Err(Error::Format { what: "manifest", detail: "count must be >= 1".to_string() });
        }
        seeds.sort_by_key(|(i, _)| *i);
        if seeds.len() != count || seeds.iter().enumerate().any(|(i, (idx, _))| i != *idx) {
            return Err(Error::Format {
                what: "manifest",
                detail: format!("expected seeds 0..{count}, found {}", seeds.len()),
            });
        }
        let seeds: Vec<u64> = seeds.into_iter().map(|(_, s)| s).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::Format { what: "manifest", detail: "duplicate seeds".to_string() });
        }
        Ok(DatasetManifest { root, height, width, d_max, seeds })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_text(root, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let m = DatasetManifest::new(PathBuf::from("/tmp/x"), 64, 128, 32, 5, 9000).unwrap();
        let back = DatasetManifest::from_text(PathBuf::from("/tmp/x"), &m.to_text()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let text = "height = 4\nwidth = 8\nd_max = 4\ncount = 2\nseed.0 = 7\nseed.1 = 7\n";
        assert!(DatasetManifest::from_text(PathBuf::from("."), text).is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        let text = "height = 4\nwidth = 8\nd_max = 4\ncount = 1\nseed.0 = 7\nbogus = 1\n";
        assert!(DatasetManifest::from_text(PathBuf::from("."), text).is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# dataset\nheight = 16\n\nwidth = 32\nd_max = 8 # quarter\ncount = 1\nseed.0 = 3\n";
        let m = DatasetManifest::from_text(PathBuf::from("."), text).unwrap();
        assert_eq!(m.height, 16);
        assert_eq!(m.d_max, 8);
    }
}
