//! Array blocks, demonstration directories and success filtering.
//!
//! An array block is `"MBRT"`, `u32` version, `u32` rank, `rank × u32`
//! dims, then the row-major `f32` payload, all little-endian. A
//! demonstration is a directory holding `manifest.txt` (UTF-8 `key = value`
//! lines) next to `observations.mbrt` and `actions.mbrt`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const ARRAY_MAGIC: &[u8; 4] = b"MBRT";
pub const ARRAY_VERSION: u32 = 1;
pub const DEMO_FORMAT: &str = "mmdemo-demo";
pub const DEMO_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
const OBS_FILE: &str = "observations.mbrt";
const ACT_FILE: &str = "actions.mbrt";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("bad magic {found:?} in {what}")]
    BadMagic { what: String, found: Vec<u8> },
    #[error("{what}: version {found} is not supported (expected {expected})")]
    VersionMismatch { what: String, found: u32, expected: u32 },
    #[error("{what}: shape mismatch: {detail}")]
    ShapeMismatch { what: String, detail: String },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("invalid demonstration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Dense `f32` tensor with explicit dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayBlock {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl ArrayBlock {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, DatasetError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(DatasetError::ShapeMismatch {
                what: "array".into(),
                detail: format!("dims {dims:?} need {expected} values, got {}", data.len()),
            });
        }
        Ok(Self { dims, data })
    }

    /// Stacks equal-length rows into a rank-2 block.
    pub fn from_rows(rows: &[Vec<f32>], width: usize) -> Result<Self, DatasetError> {
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(DatasetError::ShapeMismatch { what: "array".into(), detail: format!("row of {} values, expected {width}", r.len()) });
        }
        Self::new(vec![rows.len(), width], rows.iter().flatten().copied().collect())
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self, DatasetError> {
        Self::new(dims, data.iter().map(|v| *v as f32).collect())
    }

    pub fn rows(&self) -> Vec<Vec<f32>> {
        match self.dims.as_slice() {
            [_, w] if *w > 0 => self.data.chunks(*w).map(<[f32]>::to_vec).collect(),
            [n, _] => vec![Vec::new(); *n],
            _ => vec![self.data.clone()],
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(ARRAY_MAGIC);
        out.extend_from_slice(&ARRAY_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let what = || "array".to_string();
        let short = |need: usize| DatasetError::ShapeMismatch { what: what(), detail: format!("header needs {need} bytes, file has {}", bytes.len()) };
        if bytes.len() < 4 || &bytes[..4] != ARRAY_MAGIC {
            return Err(DatasetError::BadMagic { what: what(), found: bytes[..bytes.len().min(4)].to_vec() });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        if bytes.len() < 12 {
            return Err(short(12));
        }
        let version = word(4);
        if version != ARRAY_VERSION {
            return Err(DatasetError::VersionMismatch { what: what(), found: version, expected: ARRAY_VERSION });
        }
        let rank = word(8) as usize;
        let header = 12 + 4 * rank;
        if bytes.len() < header {
            return Err(short(header));
        }
        let dims: Vec<usize> = (0..rank).map(|k| word(12 + 4 * k) as usize).collect();
        let count: usize = dims.iter().product();
        let payload = &bytes[header..];
        if payload.len() != 4 * count {
            return Err(DatasetError::ShapeMismatch {
                what: what(),
                detail: format!("dims {dims:?} need {} payload bytes, found {}", 4 * count, payload.len()),
            });
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes).map_err(|e| relabel(e, &path.display().to_string()))
    }
}

fn relabel(e: DatasetError, what: &str) -> DatasetError {
    match e {
        DatasetError::BadMagic { found, .. } => DatasetError::BadMagic { what: what.into(), found },
        DatasetError::VersionMismatch { found, expected, .. } => DatasetError::VersionMismatch { what: what.into(), found, expected },
        DatasetError::ShapeMismatch { detail, .. } => DatasetError::ShapeMismatch { what: what.into(), detail },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f32>,
    pub action: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub task: String,
    pub seed: u64,
    pub episode: u64,
    pub success: bool,
    pub steps: Vec<Step>,
    /// Scene parameters drawn at reset.
    pub metadata: BTreeMap<String, f64>,
}

impl Demonstration {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.steps.is_empty() {
            return Err(DatasetError::Invalid("demonstration has no steps".into()));
        }
        if self.task.is_empty() || self.task.contains(['\n', '\r']) || self.task.trim() != self.task {
            return Err(DatasetError::Invalid(format!("bad task id {:?}", self.task)));
        }
        let (o, a) = (self.steps[0].observation.len(), self.steps[0].action.len());
        if self.steps.iter().any(|s| s.observation.len() != o || s.action.len() != a) {
            return Err(DatasetError::Invalid("steps differ in observation or action width".into()));
        }
        for k in self.metadata.keys() {
            if k.is_empty() || k.contains(|c: char| c.is_whitespace() || c == '=') {
                return Err(DatasetError::Invalid(format!("bad metadata key {k:?}")));
            }
        }
        Ok(())
    }

    pub fn observation_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.observation.len())
    }

    pub fn action_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.action.len())
    }
}

fn shape_text(dims: &[usize]) -> String {
    let inner: Vec<String> = dims.iter().map(usize::to_string).collect();
    format!("[{}]", inner.join(", "))
}

/// Writes `demo` into `dir` (created if needed) and returns the manifest path.
pub fn write_demo(demo: &Demonstration, dir: &Path) -> Result<PathBuf, DatasetError> {
    demo.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let obs = ArrayBlock::from_rows(&demo.steps.iter().map(|s| s.observation.clone()).collect::<Vec<_>>(), demo.observation_dim())?;
    let act = ArrayBlock::from_rows(&demo.steps.iter().map(|s| s.action.clone()).collect::<Vec<_>>(), demo.action_dim())?;
    obs.write(&dir.join(OBS_FILE))?;
    act.write(&dir.join(ACT_FILE))?;
    let mut text = String::new();
    text.push_str(&format!("format = {DEMO_FORMAT}\n"));
    text.push_str(&format!("version = {DEMO_VERSION}\n"));
    text.push_str(&format!("task = {}\n", demo.task));
    text.push_str(&format!("seed = {}\n", demo.seed));
    text.push_str(&format!("episode = {}\n", demo.episode));
    text.push_str(&format!("success = {}\n", demo.success));
    text.push_str(&format!("steps = {}\n", demo.steps.len()));
    text.push_str(&format!("observations = {OBS_FILE} {}\n", shape_text(&obs.dims)));
    text.push_str(&format!("actions = {ACT_FILE} {}\n", shape_text(&act.dims)));
    for (k, v) in &demo.metadata {
        // Display for f64 is the shortest string that parses back to the same value.
        text.push_str(&format!("meta.{k} = {v}\n"));
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>, DatasetError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| DatasetError::Manifest(format!("line {}: expected `key = value`", n + 1)))?;
        if out.insert(k.trim().to_string(), v.to_string()).is_some() {
            return Err(DatasetError::Manifest(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(out)
}

fn field<'a>(m: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, DatasetError> {
    m.get(key).map(String::as_str).ok_or_else(|| DatasetError::Manifest(format!("missing key {key}")))
}

fn parsed<T: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<T, DatasetError> {
    field(m, key)?.parse().map_err(|_| DatasetError::Manifest(format!("cannot parse {key}")))
}

fn array_entry(m: &BTreeMap<String, String>, key: &str) -> Result<(String, Vec<usize>), DatasetError> {
    let v = field(m, key)?;
    let (file, shape) = v.split_once(' ').ok_or_else(|| DatasetError::Manifest(format!("{key}: expected `file [dims]`")))?;
    let shape = shape.trim().strip_prefix('[').and_then(|s| s.strip_suffix(']')).ok_or_else(|| DatasetError::Manifest(format!("{key}: bad shape")))?;
    let dims = shape
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().map_err(|_| DatasetError::Manifest(format!("{key}: bad dimension {s}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if file.contains(['/', '\\']) || file == ".." {
        return Err(DatasetError::Manifest(format!("{key}: array file must be a plain name")));
    }
    Ok((file.to_string(), dims))
}

/// Reads a demonstration from its directory or its manifest path.
pub fn read_demo(path: &Path) -> Result<Demonstration, DatasetError> {
    let (dir, manifest) = if path.is_dir() { (path.to_path_buf(), path.join(MANIFEST_FILE)) } else { (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf()) };
    let text = std::fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let m = parse_manifest(&text)?;
    if field(&m, "format")? != DEMO_FORMAT {
        return Err(DatasetError::BadMagic { what: manifest.display().to_string(), found: field(&m, "format")?.as_bytes().to_vec() });
    }
    let version: u32 = parsed(&m, "version")?;
    if version != DEMO_VERSION {
        return Err(DatasetError::VersionMismatch { what: manifest.display().to_string(), found: version, expected: DEMO_VERSION });
    }
    let steps: usize = parsed(&m, "steps")?;
    let mut arrays = Vec::new();
    for key in ["observations", "actions"] {
        let (file, dims) = array_entry(&m, key)?;
        let block = ArrayBlock::read(&dir.join(&file))?;
        if block.dims != dims || dims.len() != 2 || dims[0] != steps {
            return Err(DatasetError::ShapeMismatch {
                what: file,
                detail: format!("manifest says {dims:?} with {steps} steps, file holds {:?}", block.dims),
            });
        }
        arrays.push(block.rows());
    }
    let actions = arrays.pop().expect("two arrays");
    let observations = arrays.pop().expect("two arrays");
    let success = match field(&m, "success")? {
        "true" => true,
        "false" => false,
        other => return Err(DatasetError::Manifest(format!("success must be true or false, got {other}"))),
    };
    let mut metadata = BTreeMap::new();
    for (k, v) in &m {
        if let Some(name) = k.strip_prefix("meta.") {
            let x: f64 = v.parse().map_err(|_| DatasetError::Manifest(format!("cannot parse {k}")))?;
            metadata.insert(name.to_string(), x);
        }
    }
    Ok(Demonstration {
        task: field(&m, "task")?.to_string(),
        seed: parsed(&m, "seed")?,
        episode: parsed(&m, "episode")?,
        success,
        steps: observations.into_iter().zip(actions).map(|(observation, action)| Step { observation, action }).collect(),
        metadata,
    })
}

/// Episode directory name inside a dataset.
pub fn episode_dir(root: &Path, episode: u64) -> PathBuf {
    root.join(format!("episode_{episode:05}"))
}

/// Reads every demonstration below `root` in directory-name order.
pub fn read_dataset(root: &Path) -> Result<Vec<Demonstration>, DatasetError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_demo(d)).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSummary {
    pub kept: usize,
    pub dropped: usize,
    /// Per task: `(kept, dropped)`.
    pub per_task: BTreeMap<String, (usize, usize)>,
}

/// Keeps demonstrations flagged successful that also satisfy `predicate`.
pub fn filter_and_assemble<F>(demos: Vec<Demonstration>, predicate: F) -> (Vec<Demonstration>, DatasetSummary)
where
    F: Fn(&Demonstration) -> bool,
{
    let mut summary = DatasetSummary::default();
    let mut kept = Vec::new();
    for d in demos {
        let tally = summary.per_task.entry(d.task.clone()).or_default();
        if d.success && predicate(&d) {
            tally.0 += 1;
            summary.kept += 1;
            kept.push(d);
        } else {
            tally.1 += 1;
            summary.dropped += 1;
        }
    }
    (kept, summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;
    use rand::Rng;

    pub(crate) fn random_demo(seed: u64, success: bool) -> Demonstration {
        let mut rng = keyed_rng(seed, 0, 0);
        let steps = (0..rng.gen_range(1..30))
            .map(|_| Step {
                observation: (0..5).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect(),
                action: (0..3).map(|_| rng.gen::<f32>()).collect(),
            })
            .collect();
        let metadata = [("object_x".to_string(), rng.gen::<f64>()), ("scale".to_string(), 1.0 / 3.0)].into_iter().collect();
        Demonstration { task: "open-drawer".into(), seed, episode: seed * 3, success, steps, metadata }
    }

    #[test]
    fn array_round_trip_and_header() {
        let a = ArrayBlock::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let b = a.to_bytes();
        assert_eq!(&b[..4], b"MBRT");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(b.len(), 12 + 8 + 24);
        assert_eq!(ArrayBlock::from_bytes(&b).unwrap(), a);
    }

    #[test]
    fn array_errors_are_distinct() {
        let b = ArrayBlock::new(vec![4], vec![1.0; 4]).unwrap().to_bytes();
        let mut magic = b.clone();
        magic[1] = b'X';
        assert!(matches!(ArrayBlock::from_bytes(&magic), Err(DatasetError::BadMagic { .. })));
        let mut ver = b.clone();
        ver[4] = 2;
        assert!(matches!(ArrayBlock::from_bytes(&ver), Err(DatasetError::VersionMismatch { found: 2, .. })));
        assert!(matches!(ArrayBlock::from_bytes(&b[..b.len() - 3]), Err(DatasetError::ShapeMismatch { .. })));
        assert!(ArrayBlock::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn demo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..10 {
            let d = random_demo(seed, seed % 2 == 0);
            let m = write_demo(&d, &episode_dir(dir.path(), seed)).unwrap();
            assert_eq!(read_demo(&m).unwrap(), d);
            assert_eq!(read_demo(m.parent().unwrap()).unwrap(), d);
        }
        assert_eq!(read_dataset(dir.path()).unwrap().len(), 10);
    }

    #[test]
    fn truncated_payload_is_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let d = random_demo(4, true);
        write_demo(&d, dir.path()).unwrap();
        let p = dir.path().join(ACT_FILE);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_demo(dir.path()), Err(DatasetError::ShapeMismatch { .. })));
    }

    #[test]
    fn manifest_version_gate() {
        let dir = tempfile::tempdir().unwrap();
        write_demo(&random_demo(5, true), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).unwrap().replace("version = 1", "version = 7");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(read_demo(dir.path()), Err(DatasetError::VersionMismatch { found: 7, .. })));
    }

    #[test]
    fn rejects_empty_demo() {
        let mut d = random_demo(1, true);
        d.steps.clear();
        assert!(write_demo(&d, tempfile::tempdir().unwrap().path()).is_err());
    }

    #[test]
    fn filtering_counts() {
        let all: Vec<_> = (0..5).map(|s| random_demo(s, true)).collect();
        let (kept, s) = filter_and_assemble(all, |_| true);
        assert_eq!((kept.len(), s.dropped), (5, 0));
        let none: Vec<_> = (0..4).map(|s| random_demo(s, false)).collect();
        let (kept, s) = filter_and_assemble(none, |_| true);
        assert!(kept.is_empty());
        assert_eq!(s.dropped, 4);
        let mixed: Vec<_> = (0..10).map(|s| random_demo(s, s < 7)).collect();
        let (_, s) = filter_and_assemble(mixed, |_| true);
        assert_eq!((s.kept, s.dropped), (7, 3));
        assert_eq!(s.per_task["open-drawer"], (7, 3));
    }
}
