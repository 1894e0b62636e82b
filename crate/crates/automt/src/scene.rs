//! Source test cases on disk and their analysis into representations.
//!
//! Corpus layout: one directory per case holding `frame_%03d.png` and
//! `telemetry.json` (`{"speed_mps": [..], "steering_rad": [..]}`).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use automt_core::prompts::scene_prompt;
use automt_core::scene::{
    build_representation, parse_scene_reply, representation_from_json, representation_to_json, SceneError,
    SceneFields, Telemetry, TestCaseRepresentation,
};

use crate::backends::{Backend, BackendError};
use crate::fsutil::write_atomic;
use crate::image::Image;

pub const TELEMETRY_FILE: &str = "telemetry.json";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("case {case}: {source}")]
    Scene { case: String, source: SceneError },
    #[error("{0}")]
    Corpus(String),
    #[error("{0}")]
    Io(String),
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:03}.png")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceTestCase {
    pub id: String,
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
    pub telemetry: Telemetry,
    pub region: String,
}

impl SourceTestCase {
    /// Reads one case directory; the directory name is the case id.
    pub fn load(dir: &Path, region: &str) -> Result<SourceTestCase, AnalyzeError> {
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| AnalyzeError::Corpus(format!("{}: not a case directory", dir.display())))?;
        let mut frames: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| AnalyzeError::Io(format!("{}: {e}", dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(is_frame_name))
            .collect();
        frames.sort();
        let tpath = dir.join(TELEMETRY_FILE);
        let text = fs::read_to_string(&tpath).map_err(|e| AnalyzeError::Io(format!("{}: {e}", tpath.display())))?;
        let telemetry: Telemetry = serde_json::from_str(&text)
            .map_err(|e| AnalyzeError::Corpus(format!("{}: {e}", tpath.display())))?;
        telemetry.check().map_err(|source| AnalyzeError::Scene { case: id.clone(), source })?;
        if frames.len() != telemetry.len() {
            return Err(AnalyzeError::Corpus(format!(
                "case {id}: {} frames but {} telemetry rows",
                frames.len(),
                telemetry.len()
            )));
        }
        Ok(SourceTestCase { id, dir: dir.to_path_buf(), frames, telemetry, region: region.to_string() })
    }

    pub fn load_frames(&self) -> Result<Vec<Image>, AnalyzeError> {
        self.frames
            .iter()
            .map(|p| Image::load(p).map_err(|e| AnalyzeError::Io(format!("{}: {e}", p.display()))))
            .collect()
    }

    pub fn keyframe(&self) -> Result<Image, AnalyzeError> {
        let p = &self.frames[0];
        Image::load(p).map_err(|e| AnalyzeError::Io(format!("{}: {e}", p.display())))
    }

    pub fn middle_frame(&self) -> Result<Image, AnalyzeError> {
        let p = &self.frames[self.frames.len() / 2];
        Image::load(p).map_err(|e| AnalyzeError::Io(format!("{}: {e}", p.display())))
    }
}

fn is_frame_name(name: &str) -> bool {
    name.strip_prefix("frame_")
        .and_then(|r| r.strip_suffix(".png"))
        .is_some_and(|d| d.len() >= 3 && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Every case directory under `root`, sorted by id.
pub fn load_corpus(root: &Path, region: &str) -> Result<Vec<SourceTestCase>, AnalyzeError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| AnalyzeError::Io(format!("{}: {e}", root.display())))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join(TELEMETRY_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(AnalyzeError::Corpus(format!("{}: no case directories", root.display())));
    }
    dirs.iter().map(|d| SourceTestCase::load(d, region)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalyzeOptions {
    pub frame_cap: usize,
    /// Send only the middle frame, for backends that take one image.
    pub single_image: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions { frame_cap: 10, single_image: false }
    }
}

/// Frames actually sent: the middle one, or up to `frame_cap` spread evenly.
pub fn frames_for_vision(frames: &[Image], opts: AnalyzeOptions) -> Vec<Image> {
    if frames.is_empty() {
        return Vec::new();
    }
    if opts.single_image || opts.frame_cap <= 1 {
        return vec![frames[frames.len() / 2].clone()];
    }
    if frames.len() <= opts.frame_cap {
        return frames.to_vec();
    }
    let n = frames.len();
    (0..opts.frame_cap).map(|i| frames[i * (n - 1) / (opts.frame_cap - 1)].clone()).collect()
}

pub fn analyze_scene(
    case: &SourceTestCase,
    vision: &Backend,
    opts: AnalyzeOptions,
) -> Result<SceneFields, AnalyzeError> {
    let frames = case.load_frames()?;
    let reply = vision.chat(&scene_prompt(), &frames_for_vision(&frames, opts))?;
    parse_scene_reply(&reply).map_err(|source| AnalyzeError::Scene { case: case.id.clone(), source })
}

pub fn analyze_case(
    case: &SourceTestCase,
    vision: &Backend,
    opts: AnalyzeOptions,
) -> Result<TestCaseRepresentation, AnalyzeError> {
    let fields = analyze_scene(case, vision, opts)?;
    build_representation(&case.telemetry, fields).map_err(|source| AnalyzeError::Scene { case: case.id.clone(), source })
}

/// Analyzes every case with at most `parallel` workers, in corpus order.
pub fn analyze_corpus(
    cases: &[SourceTestCase],
    vision: &Backend,
    opts: AnalyzeOptions,
    parallel: usize,
) -> Result<Vec<(String, TestCaseRepresentation)>, AnalyzeError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| AnalyzeError::Io(e.to_string()))?;
    pool.install(|| {
        cases.par_iter().map(|c| analyze_case(c, vision, opts).map(|rep| (c.id.clone(), rep))).collect()
    })
}

pub fn write_representations(path: &Path, reps: &[(String, TestCaseRepresentation)]) -> Result<(), AnalyzeError> {
    let mut out = String::new();
    for (id, rep) in reps {
        out.push_str(&representation_to_json(id, rep));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(|e| AnalyzeError::Io(format!("{}: {e}", path.display())))
}

pub fn read_representations(path: &Path) -> Result<Vec<(String, TestCaseRepresentation)>, AnalyzeError> {
    let text = fs::read_to_string(path).map_err(|e| AnalyzeError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            representation_from_json(l).map_err(|e| AnalyzeError::Corpus(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
