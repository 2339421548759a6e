//! Corpus file IO.
//!
//! The canonical dialogue format is line-delimited JSON, one session per
//! line: `{"id": ..., "turns": [{"speaker": "patient"|"doctor", "text": ...}]}`.
//! Raw corpus exports use a looser shape (string speaker labels in several
//! spellings, varying text keys) and are normalized by [`convert_raw`].
//! Few-shot demonstration pools are also line-delimited JSON with keys
//! `history`, `rationale`, and `response`.

use crate::dialogue::{DemonstrationExample, DialogueSession, Speaker, Turn};
use serde::Deserialize;
use serde_json::Value;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}:{line}: duplicate session id {id}")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("unrecognized speaker label {label:?}")]
    UnknownSpeaker { label: String },
    #[error("raw sessions failed validation: {ids}", ids = .0.join(", "))]
    InvalidRawSessions(Vec<String>),
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io { path: path.display().to_string(), source }
}

/// Read canonical sessions from line-delimited JSON. Blank lines are
/// skipped; parse failures report the 1-based line number; duplicate
/// session ids are rejected.
pub fn read_sessions(path: &Path) -> Result<Vec<DialogueSession>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut sessions = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let session: DialogueSession = serde_json::from_str(&line).map_err(|e| {
            CorpusError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            }
        })?;
        if !seen.insert(session.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.display().to_string(),
                line: idx + 1,
                id: session.id,
            });
        }
        sessions.push(session);
    }
    Ok(sessions)
}

/// Write sessions as canonical line-delimited JSON.
pub fn write_sessions(path: &Path, sessions: &[DialogueSession]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for session in sessions {
        let line = serde_json::to_string(session).expect("session serializes");
        writeln!(writer, "{line}").map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

fn parse_speaker(label: &str) -> Result<Speaker, CorpusError> {
    match label.trim() {
        "patient" | "Patient" | "Patients" | "病人" | "患者" => Ok(Speaker::Patient),
        "doctor" | "Doctor" | "physician" | "Physician" | "医生" => Ok(Speaker::Physician),
        other => Err(CorpusError::UnknownSpeaker { label: other.to_string() }),
    }
}

fn raw_turn(value: &Value, path: &Path, line: usize) -> Result<Turn, CorpusError> {
    let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
        path: path.display().to_string(),
        line,
        message: "turn is not an object".into(),
    })?;
    let label = ["id", "role", "speaker"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .ok_or_else(|| CorpusError::Parse {
            path: path.display().to_string(),
            line,
            message: "turn has no speaker field (tried id, role, speaker)".into(),
        })?;
    let text = ["Sentence", "sentence", "text", "content"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .ok_or_else(|| CorpusError::Parse {
            path: path.display().to_string(),
            line,
            message: "turn has no text field (tried Sentence, sentence, text, content)".into(),
        })?;
    Ok(Turn::new(parse_speaker(label)?, text))
}

fn raw_session(
    value: &Value,
    path: &Path,
    line: usize,
    fallback_id: String,
) -> Result<DialogueSession, CorpusError> {
    // A raw session is either a bare turn array or an object wrapping one
    // under a conventional key, optionally with its own id.
    let (id, turns_value) = match value {
        Value::Array(_) => (fallback_id, value),
        Value::Object(obj) => {
            let id = ["id", "session_id", "dialogue_id"]
                .iter()
                .find_map(|k| obj.get(*k))
                .and_then(|v| match v {
                    Value::String(s) => Some(s.clone()),
                    Value::Number(n) => Some(n.to_string()),
                    _ => None,
                })
                .unwrap_or(fallback_id);
            let turns = ["turns", "dialogue", "information", "content"]
                .iter()
                .find_map(|k| obj.get(*k).filter(|v| v.is_array()))
                .ok_or_else(|| CorpusError::Parse {
                    path: path.display().to_string(),
                    line,
                    message: "session object has no turn array (tried turns, dialogue, information, content)"
                        .into(),
                })?;
            (id, turns)
        }
        _ => {
            return Err(CorpusError::Parse {
                path: path.display().to_string(),
                line,
                message: "session is neither an array nor an object".into(),
            })
        }
    };
    let turns = turns_value
        .as_array()
        .expect("checked above")
        .iter()
        .map(|t| raw_turn(t, path, line))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DialogueSession::new(id, turns))
}

/// Normalize a raw corpus export into canonical sessions.
///
/// The file may be a single JSON array of sessions or line-delimited JSON
/// with one session per line. Sessions without an id get one derived from
/// the file stem and their position. Sessions that fail validation are
/// collected and reported together rather than silently dropped.
pub fn convert_raw(path: &Path) -> Result<Vec<DialogueSession>, CorpusError> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| io_err(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "session".into());

    let trimmed = text.trim_start();
    let sessions = if trimmed.starts_with('[') {
        let values: Vec<Value> = serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        values
            .iter()
            .enumerate()
            .map(|(i, v)| raw_session(v, path, 1, format!("{stem}-{:05}", i)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let mut out = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            out.push(raw_session(&value, path, idx + 1, format!("{stem}-{:05}", out.len()))?);
        }
        out
    };

    let invalid: Vec<String> = sessions
        .iter()
        .filter(|s| !crate::dialogue::validate_session(s).is_empty())
        .map(|s| s.id.clone())
        .collect();
    if !invalid.is_empty() {
        return Err(CorpusError::InvalidRawSessions(invalid));
    }
    Ok(sessions)
}

#[derive(Deserialize)]
struct PoolEntry {
    history: String,
    rationale: String,
    response: String,
}

/// Read a few-shot demonstration pool from line-delimited JSON.
pub fn read_fewshot_pool(path: &Path) -> Result<Vec<DemonstrationExample>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut pool = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: PoolEntry = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let example = DemonstrationExample::new(entry.history, entry.rationale, entry.response)
            .map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        pool.push(example);
    }
    Ok(pool)
}

/// Concatenate pool files' raw bytes in order and hash them, for manifests.
pub fn hash_file(path: &Path) -> Result<String, CorpusError> {
    use sha2::{Digest, Sha256};
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::NamedTempFile;

    fn write_temp(content: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn canonical_round_trip() {
        let sessions = vec![
            DialogueSession::new(
                "a",
                vec![Turn::patient("肚子疼"), Turn::physician("疼了多久了?")],
            ),
            DialogueSession::new("b", vec![Turn::patient("hi"), Turn::physician("hello")]),
        ];
        let f = NamedTempFile::new().unwrap();
        write_sessions(f.path(), &sessions).unwrap();
        let back = read_sessions(f.path()).unwrap();
        assert_eq!(back, sessions);
    }

    #[test]
    fn read_reports_line_numbers() {
        let f = write_temp("{\"id\":\"a\",\"turns\":[]}\nnot json\n");
        let err = read_sessions(f.path()).unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_duplicate_ids() {
        let line = "{\"id\":\"a\",\"turns\":[{\"speaker\":\"patient\",\"text\":\"x\"}]}";
        let f = write_temp(&format!("{line}\n{line}\n"));
        let err = read_sessions(f.path()).unwrap_err();
        match err {
            CorpusError::DuplicateId { line, id, .. } => {
                assert_eq!(line, 2);
                assert_eq!(id, "a");
            }
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn read_skips_blank_lines() {
        let f = write_temp(
            "\n{\"id\":\"a\",\"turns\":[{\"speaker\":\"patient\",\"text\":\"x\"},{\"speaker\":\"doctor\",\"text\":\"y\"}]}\n\n",
        );
        assert_eq!(read_sessions(f.path()).unwrap().len(), 1);
    }

    #[test]
    fn speaker_serde_names() {
        let turn: Turn = serde_json::from_str("{\"speaker\":\"doctor\",\"text\":\"x\"}").unwrap();
        assert_eq!(turn.speaker, Speaker::Physician);
        assert_eq!(
            serde_json::to_string(&turn).unwrap(),
            "{\"speaker\":\"doctor\",\"text\":\"x\"}"
        );
    }

    #[test]
    fn convert_raw_json_array_with_label_variants() {
        let raw = r#"[
            {"information": [
                {"id": "Patients", "Sentence": "肚子疼"},
                {"id": "Doctor", "Sentence": "疼了多久了?"}
            ]},
            {"id": "case-7", "dialogue": [
                {"role": "病人", "text": "咳嗽"},
                {"role": "医生", "content": "有痰吗?"}
            ]}
        ]"#;
        let f = write_temp(raw);
        let sessions = convert_raw(f.path()).unwrap();
        assert_eq!(sessions.len(), 2);
        assert!(sessions[0].id.ends_with("-00000"));
        assert_eq!(sessions[0].turns[0].speaker, Speaker::Patient);
        assert_eq!(sessions[0].turns[1].text, "疼了多久了?");
        assert_eq!(sessions[1].id, "case-7");
        assert_eq!(sessions[1].turns[1].speaker, Speaker::Physician);
    }

    #[test]
    fn convert_raw_jsonl_bare_arrays() {
        let raw = concat!(
            "[{\"speaker\":\"patient\",\"text\":\"a\"},{\"speaker\":\"doctor\",\"text\":\"b\"}]",
        );
        // A leading '[' means array mode, so wrap in objects for jsonl.
        let raw = format!("{{\"turns\": {raw}}}\n{{\"turns\": {raw}}}\n");
        let f = write_temp(&raw);
        let sessions = convert_raw(f.path()).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_ne!(sessions[0].id, sessions[1].id);
    }

    #[test]
    fn convert_raw_rejects_unknown_speaker() {
        let raw = r#"[{"turns": [{"speaker": "nurse", "text": "x"}]}]"#;
        let f = write_temp(raw);
        let err = convert_raw(f.path()).unwrap_err();
        match err {
            CorpusError::UnknownSpeaker { label } => assert_eq!(label, "nurse"),
            other => panic!("expected unknown speaker, got {other:?}"),
        }
    }

    #[test]
    fn convert_raw_collects_invalid_sessions() {
        let raw = r#"[
            {"id": "ok", "turns": [{"speaker": "patient", "text": "a"}, {"speaker": "doctor", "text": "b"}]},
            {"id": "bad1", "turns": [{"speaker": "patient", "text": "a"}]},
            {"id": "bad2", "turns": [{"speaker": "patient", "text": ""}, {"speaker": "doctor", "text": "b"}]}
        ]"#;
        let f = write_temp(raw);
        let err = convert_raw(f.path()).unwrap_err();
        match err {
            CorpusError::InvalidRawSessions(ids) => {
                assert_eq!(ids, vec!["bad1".to_string(), "bad2".to_string()])
            }
            other => panic!("expected invalid sessions, got {other:?}"),
        }
    }

    #[test]
    fn fewshot_pool_reads_entries() {
        let f = write_temp(concat!(
            "{\"history\":\"P: a\",\"rationale\":\"think\",\"response\":\"r\"}\n",
            "{\"history\":\"P: b\",\"rationale\":\"think more\",\"response\":\"s\"}\n",
        ));
        let pool = read_fewshot_pool(f.path()).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool[1].response_text, "s");
    }

    #[test]
    fn fewshot_pool_rejects_empty_fields() {
        let f = write_temp("{\"history\":\"\",\"rationale\":\"x\",\"response\":\"y\"}\n");
        assert!(matches!(read_fewshot_pool(f.path()), Err(CorpusError::Parse { line: 1, .. })));
    }

    #[test]
    fn hash_file_is_stable() {
        let f = write_temp("abc");
        let h1 = hash_file(f.path()).unwrap();
        let h2 = hash_file(f.path()).unwrap();
        assert_eq!(h1, h2);
        // sha256("abc"), a fixed public test vector.
        assert_eq!(h1, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
