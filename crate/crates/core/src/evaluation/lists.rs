use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub a: PathBuf,
    pub b: PathBuf,
    pub matching: bool,
}

/// Verification pairs, one `path_a<TAB>path_b<TAB>{1|0}` line each.
/// Relative paths resolve against the list file's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairList {
    pub entries: Vec<PairEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub identity: String,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

impl PairList {
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in lines(text) {
            let fields: Vec<&str> = line.split('\t').collect();
            let [a, b, label] = fields[..] else {
                return Err(Error::format(
                    "pair list",
                    origin,
                    format!(
                        "line {no}: expected 3 tab-separated fields, got {}",
                        fields.len()
                    ),
                ));
            };
            let matching = match label.trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::format(
                        "pair list",
                        origin,
                        format!("line {no}: label must be 1 or 0, got `{other}`"),
                    ))
                }
            };
            entries.push(PairEntry {
                a: resolve(base, a),
                b: resolve(base, b),
                matching,
            });
        }
        if entries.is_empty() {
            return Err(Error::format("pair list", origin, "no pairs"));
        }
        Ok(PairList { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        PairList::parse(&read(path)?, base, path)
    }

    pub fn matching(&self) -> impl Iterator<Item = (usize, &PairEntry)> {
        self.entries.iter().enumerate().filter(|(_, e)| e.matching)
    }

    pub fn non_matching(&self) -> impl Iterator<Item = (usize, &PairEntry)> {
        self.entries.iter().enumerate().filter(|(_, e)| !e.matching)
    }
}

/// Parses a `path<TAB>identity` manifest.
pub fn parse_manifest(text: &str, base: &Path, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (no, line) in lines(text) {
        let Some((path, identity)) = line.split_once('\t') else {
            return Err(Error::format(
                "manifest",
                origin,
                format!("line {no}: expected path<TAB>identity"),
            ));
        };
        if identity.trim().is_empty() {
            return Err(Error::format(
                "manifest",
                origin,
                format!("line {no}: empty identity"),
            ));
        }
        out.push(ManifestEntry {
            path: resolve(base, path),
            identity: identity.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&read(path)?, base, path)
}
