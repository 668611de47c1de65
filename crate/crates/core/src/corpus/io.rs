//! Split files: one JSON record per line, plus a binary frame file holding
//! each utterance's speech in record order.
//!
//! Frame file layout (little endian): magic `CMRTFRMS`, `u32` version,
//! `u32` frame width, then per utterance a length-prefixed id, `u32` row
//! count, and the `f64` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{AlignedUtterance, CorpusError};
use crate::diffcore::Tensor;
use crate::objectives::WordAlignment;

pub const CORPUS_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CMRTFRMS";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    v: u32,
    id: String,
    seed: u64,
    x: Vec<String>,
    pieces: Vec<String>,
    y: Vec<String>,
    alignments: Vec<WordAlignment>,
    frames: usize,
}

fn paths(dir: &Path, split: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{split}.jsonl")), dir.join(format!("{split}.frames")))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

pub fn write_split(dir: &Path, split: &str, utts: &[AlignedUtterance]) -> Result<(), CorpusError> {
    let (rec_path, frame_path) = paths(dir, split);
    let mut rec = BufWriter::new(File::create(&rec_path).map_err(io_err(&rec_path))?);
    let mut frames = BufWriter::new(File::create(&frame_path).map_err(io_err(&frame_path))?);
    let width = utts.first().map_or(0, |u| u.speech.cols()) as u32;
    let fe = io_err(&frame_path);
    frames.write_all(MAGIC).map_err(&fe)?;
    frames.write_all(&CORPUS_FORMAT_VERSION.to_le_bytes()).map_err(&fe)?;
    frames.write_all(&width.to_le_bytes()).map_err(&fe)?;
    for u in utts {
        let r = Record {
            v: CORPUS_FORMAT_VERSION,
            id: u.id.clone(),
            seed: u.seed,
            x: u.x.clone(),
            pieces: u.pieces.clone(),
            y: u.y.clone(),
            alignments: u.alignments.clone(),
            frames: u.speech.rows(),
        };
        let line = serde_json::to_string(&r).expect("records serialize");
        writeln!(rec, "{line}").map_err(io_err(&rec_path))?;
        frames.write_all(&(u.id.len() as u32).to_le_bytes()).map_err(&fe)?;
        frames.write_all(u.id.as_bytes()).map_err(&fe)?;
        frames.write_all(&(u.speech.rows() as u32).to_le_bytes()).map_err(&fe)?;
        for v in u.speech.data() {
            frames.write_all(&v.to_le_bytes()).map_err(&fe)?;
        }
    }
    rec.flush().map_err(io_err(&rec_path))?;
    frames.flush().map_err(&fe)?;
    Ok(())
}

struct FrameReader {
    r: BufReader<File>,
    path: String,
    width: usize,
}

impl FrameReader {
    fn open(path: &Path) -> Result<Self, CorpusError> {
        let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
        let mut head = [0u8; 16];
        let p = path.display().to_string();
        r.read_exact(&mut head).map_err(|_| CorpusError::Sidecar { path: p.clone(), id: "-".into(), msg: "missing header".into() })?;
        let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
        if &head[..8] != MAGIC || version != CORPUS_FORMAT_VERSION {
            return Err(CorpusError::Sidecar { path: p, id: "-".into(), msg: format!("bad header (version {version})") });
        }
        let width = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
        Ok(Self { r, path: p, width })
    }

    fn next(&mut self, id: &str, rows: usize) -> Result<Tensor, CorpusError> {
        let err = |msg: String| CorpusError::Sidecar { path: self.path.clone(), id: id.to_string(), msg };
        let mut b4 = [0u8; 4];
        self.r.read_exact(&mut b4).map_err(|_| err("truncated".into()))?;
        let mut name = vec![0u8; u32::from_le_bytes(b4) as usize];
        self.r.read_exact(&mut name).map_err(|_| err("truncated".into()))?;
        if name != id.as_bytes() {
            return Err(err(format!("found frames for {:?}", String::from_utf8_lossy(&name))));
        }
        self.r.read_exact(&mut b4).map_err(|_| err("truncated".into()))?;
        let n = u32::from_le_bytes(b4) as usize;
        if n != rows {
            return Err(err(format!("{n} frames stored, record says {rows}")));
        }
        let mut raw = vec![0u8; n * self.width * 8];
        self.r.read_exact(&mut raw).map_err(|_| err("truncated".into()))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tensor::matrix(n, self.width, data)?)
    }
}

/// Reads a split. An empty record file yields an empty split.
pub fn read_split(dir: &Path, split: &str) -> Result<Vec<AlignedUtterance>, CorpusError> {
    let (rec_path, frame_path) = paths(dir, split);
    let reader = BufReader::new(File::open(&rec_path).map_err(io_err(&rec_path))?);
    let shown = rec_path.display().to_string();
    let mut frames: Option<FrameReader> = None;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(&rec_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| CorpusError::Malformed { path: shown.clone(), line: i + 1, msg };
        let r: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if r.v != CORPUS_FORMAT_VERSION {
            return Err(malformed(format!("unsupported record version {}", r.v)));
        }
        if r.alignments.len() != r.x.len() {
            return Err(malformed(format!("{} alignments for {} words", r.alignments.len(), r.x.len())));
        }
        if frames.is_none() {
            frames = Some(FrameReader::open(&frame_path)?);
        }
        let speech = frames.as_mut().unwrap().next(&r.id, r.frames)?;
        out.push(AlignedUtterance {
            id: r.id,
            seed: r.seed,
            speech,
            x: r.x,
            pieces: r.pieces,
            y: r.y,
            alignments: r.alignments,
        });
    }
    Ok(out)
}
