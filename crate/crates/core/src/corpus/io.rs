//! On-disk corpus formats.
//!
//! Feature matrices use a small binary format ("WTE1"): magic bytes, two
//! little-endian u32 dimensions (feature dim, frames), then the f32 payload
//! in frame-major order (each frame's features contiguous). Everything else
//! is plain text: a comma-separated manifest (`id,task,features,transcript`
//! with an optional fifth frame-labels column), one-name-per-line transcript
//! and vocabulary files, and an `attribute_map.txt` with lines
//! `action attr attr ...`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{Corpus, VideoRecord, Vocabularies, BACKGROUND_NAME};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WTE1";

/// Write a feature-style matrix (rows x columns = dim x frames).
pub fn write_matrix(path: &Path, m: &Array2<f32>) -> Result<()> {
    let (dim, frames) = m.dim();
    let mut buf = Vec::with_capacity(12 + 4 * dim * frames);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(frames as u32).to_le_bytes());
    for t in 0..frames {
        for d in 0..dim {
            buf.extend_from_slice(&m[(d, t)].to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<Array2<f32>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header)
        .map_err(|_| Error::Format(format!("{}: missing WTE1 header", path.display())))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format(format!("{}: bad magic, expected WTE1", path.display())));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let frames = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if dim == 0 || frames == 0 {
        return Err(Error::Format(format!("{}: empty feature matrix", path.display())));
    }
    let mut data = Vec::new();
    file.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
    let expected = 4 * dim * frames;
    if data.len() < expected {
        return Err(Error::Format(format!(
            "{}: truncated feature file ({} of {} payload bytes)",
            path.display(),
            data.len(),
            expected
        )));
    }
    if data.len() > expected {
        return Err(Error::Format(format!(
            "{}: trailing bytes after feature payload",
            path.display()
        )));
    }
    let mut m = Array2::<f32>::zeros((dim, frames));
    for t in 0..frames {
        for d in 0..dim {
            let off = 4 * (t * dim + d);
            m[(d, t)] = f32::from_le_bytes(data[off..off + 4].try_into().unwrap());
        }
    }
    Ok(m)
}

/// Write a corpus directory: vocabulary files, per-video feature/transcript
/// (and, when present, frame-label) files, and a `manifest.csv` listing all
/// videos.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(dir)?;
    mkdir(&dir.join("features"))?;
    mkdir(&dir.join("transcripts"))?;
    if corpus.videos.iter().any(|v| v.frame_labels.is_some()) {
        mkdir(&dir.join("labels"))?;
    }

    write_lines(&dir.join("tasks.txt"), corpus.vocab.tasks.iter())?;
    write_lines(&dir.join("actions.txt"), corpus.vocab.actions.iter())?;
    let map_lines: Vec<String> = corpus
        .vocab
        .actions
        .iter()
        .enumerate()
        .skip(1)
        .map(|(a, name)| {
            let attrs: Vec<&str> = corpus.vocab.action_to_attrs[a]
                .iter()
                .map(|&j| corpus.vocab.attributes[j].as_str())
                .collect();
            format!("{} {}", name, attrs.join(" "))
        })
        .collect();
    write_lines(&dir.join("attribute_map.txt"), map_lines.iter())?;

    for v in &corpus.videos {
        write_matrix(&dir.join("features").join(format!("{}.wte", v.id)), &v.features)?;
        let transcript: Vec<&str> = v
            .transcript
            .iter()
            .map(|&a| corpus.vocab.actions[a].as_str())
            .collect();
        write_lines(
            &dir.join("transcripts").join(format!("{}.txt", v.id)),
            transcript.iter(),
        )?;
        if let Some(labels) = &v.frame_labels {
            let names: Vec<&str> = labels.iter().map(|&a| corpus.vocab.actions[a].as_str()).collect();
            write_lines(&dir.join("labels").join(format!("{}.txt", v.id)), names.iter())?;
        }
    }

    let all: Vec<usize> = (0..corpus.len()).collect();
    write_manifest(corpus, dir, "manifest.csv", &all)
}

/// Write a manifest for a subset of videos (paths relative to `dir`).
pub fn write_manifest(corpus: &Corpus, dir: &Path, name: &str, indices: &[usize]) -> Result<()> {
    let mut out = String::new();
    for &i in indices {
        let v = &corpus.videos[i];
        out.push_str(&format!(
            "{},{},features/{}.wte,transcripts/{}.txt",
            v.id, corpus.vocab.tasks[v.task], v.id, v.id
        ));
        if v.frame_labels.is_some() {
            out.push_str(&format!(",labels/{}.txt", v.id));
        }
        out.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, out).map_err(|e| Error::io(path, e))
}

struct ManifestRow {
    id: String,
    task: String,
    features: PathBuf,
    transcript: PathBuf,
    labels: Option<PathBuf>,
}

/// Load a corpus from a manifest file.
///
/// Vocabulary files (`tasks.txt`, `actions.txt`, `attribute_map.txt`) are
/// looked up next to the manifest. When `actions.txt` is present the action
/// vocabulary is fixed and transcripts naming unknown actions are an error;
/// otherwise vocabularies are built from the union of observed labels
/// (sorted by name, background first). Without an attribute map, the
/// identity decomposition is used.
pub fn load_corpus(manifest: &Path) -> Result<Corpus> {
    let dir = manifest.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let rows = parse_manifest(manifest, &dir)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: empty manifest", manifest.display())));
    }

    let transcripts: Vec<Vec<String>> = rows
        .iter()
        .map(|r| read_name_lines(&r.transcript))
        .collect::<Result<_>>()?;

    let actions_path = dir.join("actions.txt");
    let fixed_vocab = actions_path.is_file();
    let actions: Vec<String> = if fixed_vocab {
        let names = read_name_lines(&actions_path)?;
        if names.first().map(String::as_str) != Some(BACKGROUND_NAME) {
            return Err(Error::Data(format!(
                "{}: first action must be \"{BACKGROUND_NAME}\"",
                actions_path.display()
            )));
        }
        names
    } else {
        let mut set = BTreeSet::new();
        for t in &transcripts {
            set.extend(t.iter().cloned());
        }
        set.remove(BACKGROUND_NAME);
        std::iter::once(BACKGROUND_NAME.to_string()).chain(set).collect()
    };

    let tasks_path = dir.join("tasks.txt");
    let tasks: Vec<String> = if tasks_path.is_file() {
        read_name_lines(&tasks_path)?
    } else {
        rows.iter().map(|r| r.task.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    };

    let map_path = dir.join("attribute_map.txt");
    let vocab = if map_path.is_file() {
        let (attributes, action_to_attrs) = parse_attribute_map(&map_path, &actions)?;
        Vocabularies::with_attribute_map(tasks, actions, attributes, action_to_attrs)?
    } else {
        Vocabularies::identity(tasks, actions)?
    };

    let action_index = |name: &str, what: &str, id: &str| -> Result<usize> {
        vocab.actions.iter().position(|a| a == name).ok_or_else(|| {
            Error::Data(if fixed_vocab {
                format!("video {id}: {what} names unknown action \"{name}\" (fixed vocabulary)")
            } else {
                format!("video {id}: {what} names unknown action \"{name}\"")
            })
        })
    };

    let mut videos = Vec::with_capacity(rows.len());
    for (row, names) in rows.iter().zip(&transcripts) {
        let task = vocab
            .tasks
            .iter()
            .position(|t| *t == row.task)
            .ok_or_else(|| Error::Data(format!("video {}: unknown task \"{}\"", row.id, row.task)))?;
        let transcript: Vec<usize> = names
            .iter()
            .map(|n| action_index(n, "transcript", &row.id))
            .collect::<Result<_>>()?;
        let features = read_matrix(&row.features)?;
        let frame_labels = match &row.labels {
            Some(p) => Some(
                read_name_lines(p)?
                    .iter()
                    .map(|n| action_index(n, "frame labels", &row.id))
                    .collect::<Result<Vec<usize>>>()?,
            ),
            None => None,
        };
        let attributes = transcript
            .iter()
            .flat_map(|&a| vocab.action_to_attrs[a].iter().copied())
            .collect();
        videos.push(VideoRecord {
            id: row.id.clone(),
            features,
            task,
            transcript,
            attributes,
            frame_labels,
        });
    }

    Corpus::new(vocab, videos)
}

fn parse_manifest(manifest: &Path, dir: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 || fields.len() > 5 || fields.iter().take(4).any(|f| f.is_empty()) {
            return Err(Error::Format(format!(
                "{}:{}: malformed manifest line (expected id,task,features,transcript[,labels])",
                manifest.display(),
                lineno + 1
            )));
        }
        rows.push(ManifestRow {
            id: fields[0].to_string(),
            task: fields[1].to_string(),
            features: dir.join(fields[2]),
            transcript: dir.join(fields[3]),
            labels: fields.get(4).filter(|f| !f.is_empty()).map(|f| dir.join(f)),
        });
    }
    Ok(rows)
}

fn parse_attribute_map(path: &Path, actions: &[String]) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut attributes: Vec<String> = Vec::new();
    let mut per_action: Vec<Option<Vec<usize>>> = vec![None; actions.len()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let action = parts.next().unwrap();
        if action == BACKGROUND_NAME {
            return Err(Error::Data(format!(
                "{}:{}: background has no attributes",
                path.display(),
                lineno + 1
            )));
        }
        let idx = actions
            .iter()
            .position(|a| a == action)
            .ok_or_else(|| Error::Data(format!("{}:{}: unknown action \"{action}\"", path.display(), lineno + 1)))?;
        let mut attrs = Vec::new();
        for name in parts {
            let j = match attributes.iter().position(|a| a == name) {
                Some(j) => j,
                None => {
                    attributes.push(name.to_string());
                    attributes.len() - 1
                }
            };
            if !attrs.contains(&j) {
                attrs.push(j);
            }
        }
        if attrs.is_empty() {
            return Err(Error::Data(format!(
                "{}:{}: action \"{action}\" maps to no attributes",
                path.display(),
                lineno + 1
            )));
        }
        per_action[idx] = Some(attrs);
    }
    let mut action_to_attrs = Vec::with_capacity(actions.len());
    action_to_attrs.push(Vec::new()); // background
    for (a, entry) in per_action.iter().enumerate().skip(1) {
        match entry {
            Some(attrs) => action_to_attrs.push(attrs.clone()),
            None => {
                return Err(Error::Data(format!(
                    "{}: attribute map omits action \"{}\"",
                    path.display(),
                    actions[a]
                )))
            }
        }
    }
    Ok((attributes, action_to_attrs))
}

fn read_name_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a (impl AsRef<str> + 'a)>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for l in lines {
        writeln!(f, "{}", l.as_ref()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
