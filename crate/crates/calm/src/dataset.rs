//! JSONL datasets, one item per line:
//! `{"id": str, "speech_frames": [[f64]], "text_tokens": [[f64]], "label": str|null}`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use calm_core::{FeaturePair, Vec64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    speech_frames: Vec<Vec<f64>>,
    text_tokens: Vec<Vec<f64>>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    id: &'a str,
    speech_frames: Vec<&'a [f64]>,
    text_tokens: Vec<&'a [f64]>,
    label: Option<&'a str>,
}

/// Parses a whole JSONL document. Blank lines are skipped.
pub fn parse_dataset(reader: impl BufRead, path: &Path) -> Result<Vec<FeaturePair>> {
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    let mut dims: Option<(usize, usize)> = None;
    for (i, bytes) in reader.split(b'\n').enumerate() {
        let line_no = i + 1;
        let bytes = bytes.map_err(Error::io(path))?;
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let line = std::str::from_utf8(&bytes).map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if rec.speech_frames.is_empty() {
            return Err(parse_err("speech_frames is empty".into()));
        }
        if rec.text_tokens.is_empty() {
            return Err(parse_err("text_tokens is empty".into()));
        }
        let (ds, dt) = *dims.get_or_insert((rec.speech_frames[0].len(), rec.text_tokens[0].len()));
        let check = |rows: &[Vec<f64>], field: &'static str, expected: usize| {
            match rows.iter().find(|r| r.len() != expected) {
                Some(r) => Err(Error::DimInconsistency {
                    path: path.to_path_buf(),
                    line: line_no,
                    field,
                    expected,
                    got: r.len(),
                }),
                None => Ok(()),
            }
        };
        check(&rec.speech_frames, "speech_frames", ds)?;
        check(&rec.text_tokens, "text_tokens", dt)?;
        let vecs = |rows: Vec<Vec<f64>>, field: &str| {
            rows.into_iter()
                .map(|r| Vec64::new(r).map_err(|e| parse_err(format!("{field}: {e}"))))
                .collect::<Result<Vec<_>>>()
        };
        let speech_frames = vecs(rec.speech_frames, "speech_frames")?;
        let text_tokens = vecs(rec.text_tokens, "text_tokens")?;
        if !ids.insert(rec.id.clone()) {
            return Err(parse_err(format!("duplicate id {:?}", rec.id)));
        }
        items.push(FeaturePair {
            id: rec.id,
            speech_frames,
            text_tokens,
            label: rec.label,
        });
    }
    if items.is_empty() {
        return Err(calm_core::Error::EmptyDataset.into());
    }
    Ok(items)
}

pub fn load_dataset(path: &Path) -> Result<Vec<FeaturePair>> {
    let file = File::open(path).map_err(Error::io(path))?;
    parse_dataset(BufReader::new(file), path)
}

pub fn write_dataset(items: &[FeaturePair], mut out: impl Write) -> std::io::Result<()> {
    for item in items {
        let rec = RecordRef {
            id: &item.id,
            speech_frames: item.speech_frames.iter().map(Vec64::as_slice).collect(),
            text_tokens: item.text_tokens.iter().map(Vec64::as_slice).collect(),
            label: item.label.as_deref(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_dataset(items: &[FeaturePair], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let file = File::create(path).map_err(Error::io(path))?;
    write_dataset(items, BufWriter::new(file)).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn parse(text: &str) -> Result<Vec<FeaturePair>> {
        parse_dataset(text.as_bytes(), &PathBuf::from("d.jsonl"))
    }

    #[test]
    fn empty_file() {
        assert!(matches!(parse(""), Err(Error::Core(calm_core::Error::EmptyDataset))));
        assert!(matches!(parse("\n\n"), Err(Error::Core(calm_core::Error::EmptyDataset))));
    }

    #[test]
    fn two_lines_round_trip() {
        let text = concat!(
            r#"{"id":"a","speech_frames":[[0.1,-2.5]],"text_tokens":[[1.0,2.0,3.0],[0.0,0.0,1e-300]],"label":"happy"}"#,
            "\n",
            r#"{"id":"b","speech_frames":[[3.0,4.0],[5.0,6.0]],"text_tokens":[[0.5,0.25,0.125]],"label":null}"#,
            "\n"
        );
        let items = parse(text).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].text_tokens[1].as_slice(), [0.0, 0.0, 1e-300]);
        assert_eq!(items[1].label, None);
        let mut out = Vec::new();
        write_dataset(&items, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn inconsistent_token_dims() {
        let text = concat!(
            r#"{"id":"a","speech_frames":[[1.0]],"text_tokens":[[1.0,2.0,3.0]],"label":null}"#,
            "\n",
            r#"{"id":"b","speech_frames":[[1.0]],"text_tokens":[[1.0,2.0,3.0,4.0]],"label":null}"#
        );
        match parse(text) {
            Err(Error::DimInconsistency { line: 2, expected: 3, got: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let good = r#"{"id":"a","speech_frames":[[1.0]],"text_tokens":[[1.0]]}"#;
        let cases = [
            format!("{good}\n{{not json"),
            format!("{good}\n{good}"),
            format!("{good}\n{}", r#"{"id":"b","speech_frames":[],"text_tokens":[[1.0]]}"#),
            format!("{good}\n{}", r#"{"id":"b","speech_frames":[[1.0]],"text_tokens":[[1.0]],"extra":1}"#),
        ];
        for text in &cases {
            match parse(text) {
                Err(Error::Parse { line: 2, .. }) => {}
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    proptest! {
        #[test]
        fn save_then_load_is_identity(
            rows in prop::collection::vec(
                (prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 2), 1..4),
                 prop::collection::vec(prop::collection::vec(prop::num::f64::NORMAL, 3), 1..4),
                 prop::option::of("[a-z]{1,6}")),
                1..6),
        ) {
            let items: Vec<FeaturePair> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (s, t, label))| FeaturePair {
                    id: format!("id{i}"),
                    speech_frames: s.into_iter().map(|v| Vec64::new(v).unwrap()).collect(),
                    text_tokens: t.into_iter().map(|v| Vec64::new(v).unwrap()).collect(),
                    label,
                })
                .collect();
            let mut out = Vec::new();
            write_dataset(&items, &mut out).unwrap();
            let back = parse_dataset(out.as_slice(), &PathBuf::from("p.jsonl")).unwrap();
            prop_assert_eq!(back, items);
        }
    }
}
