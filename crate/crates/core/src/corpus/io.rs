//! JSON Lines ingestion and the canonical interchange format.
//!
//! Canonical records look like
//! `{"id":17,"text":"…","label":1,"nuisance":"B000123"}`. `id` is optional on
//! input and defaults to the record's position in the file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{default_label_space, Dataset, Sample, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};

/// Field names of a raw review record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewFields {
    pub text: String,
    pub rating: String,
    pub nuisance: String,
}

impl Default for ReviewFields {
    /// Yelp layout.
    fn default() -> Self {
        Self {
            text: "text".into(),
            rating: "stars".into(),
            nuisance: "business_id".into(),
        }
    }
}

impl ReviewFields {
    /// Amazon product review layout.
    pub fn amazon() -> Self {
        Self {
            text: "text".into(),
            rating: "overall".into(),
            nuisance: "asin".into(),
        }
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)> + '_> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| Error::io(path, e))))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty())))
}

fn parse_object(line_no: usize, line: &str) -> Result<serde_json::Map<String, Value>> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::Malformed {
            line: line_no,
            message: "record is not a JSON object".into(),
        }),
        Err(e) => Err(Error::Malformed {
            line: line_no,
            message: e.to_string(),
        }),
    }
}

fn value_as_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Maps a 1..5 star rating to a polarity label index (0 negative, 1 positive).
fn polarity(rating: &Value) -> Option<usize> {
    let r = rating.as_f64()?;
    if r.fract() != 0.0 {
        return None;
    }
    match r as i64 {
        1..=3 => Some(0),
        4 | 5 => Some(1),
        _ => None,
    }
}

#[derive(Default)]
struct SpaceBuilder {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl SpaceBuilder {
    fn intern(&mut self, name: String) -> usize {
        if let Some(&i) = self.index.get(&name) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        i
    }
}

/// Reads raw reviews and maps star ratings to binary polarity.
///
/// Ratings 1–3 become `negative`, 4–5 `positive`; anything else is rejected.
/// The nuisance space is built in first-seen order. A field missing from the
/// first record is reported as a configuration error; later omissions are
/// malformed records.
pub fn ingest_reviews(path: impl AsRef<Path>, fields: &ReviewFields) -> Result<Dataset> {
    let path = path.as_ref();
    let mut nuisances = SpaceBuilder::default();
    let mut samples = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let record = parse_object(line_no, &line?)?;
        let get = |name: &str| -> Result<&Value> {
            record.get(name).ok_or_else(|| {
                if samples.is_empty() {
                    Error::Config(format!("field {name:?} not found in input records"))
                } else {
                    Error::Malformed {
                        line: line_no,
                        message: format!("missing field {name:?}"),
                    }
                }
            })
        };
        let text = get(&fields.text)?;
        let rating = get(&fields.rating)?;
        let nuisance = get(&fields.nuisance)?;
        let malformed = |message: String| Error::Malformed {
            line: line_no,
            message,
        };
        let text = text
            .as_str()
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| malformed(format!("field {:?} must be a non-empty string", fields.text)))?;
        let label = polarity(rating)
            .ok_or_else(|| malformed(format!("rating {rating} is not an integer in 1..=5")))?;
        let nuisance = value_as_id(nuisance)
            .ok_or_else(|| malformed(format!("field {:?} is not a scalar id", fields.nuisance)))?;
        samples.push(Sample {
            id: samples.len() as u64,
            text: text.to_string(),
            label,
            nuisance: nuisances.intern(nuisance),
        });
    }
    let labels = if samples.is_empty() {
        Vec::new()
    } else {
        vec![NEGATIVE.to_string(), POSITIVE.to_string()]
    };
    Dataset::new(samples, labels, nuisances.names)
}

#[derive(Serialize)]
struct CanonicalOut<'a> {
    id: u64,
    text: &'a str,
    label: usize,
    nuisance: &'a str,
}

#[derive(Deserialize)]
struct CanonicalIn {
    id: Option<u64>,
    text: String,
    label: usize,
    nuisance: Value,
}

fn read_canonical(
    path: &Path,
    mut nuisance_of: impl FnMut(usize, String) -> Result<usize>,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let rec: CanonicalIn = serde_json::from_str(&line?).map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let name = value_as_id(&rec.nuisance).ok_or_else(|| Error::Malformed {
            line: line_no,
            message: "nuisance is not a scalar id".into(),
        })?;
        if rec.text.trim().is_empty() {
            return Err(Error::Malformed {
                line: line_no,
                message: "empty text".into(),
            });
        }
        samples.push(Sample {
            id: rec.id.unwrap_or(samples.len() as u64),
            text: rec.text,
            label: rec.label,
            nuisance: nuisance_of(line_no, name)?,
        });
    }
    Ok(samples)
}

/// Reads the canonical pre-labeled format, indexing nuisances in first-seen
/// order.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut nuisances = SpaceBuilder::default();
    let samples = read_canonical(path.as_ref(), |_, name| Ok(nuisances.intern(name)))?;
    let n_labels = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let labels = if samples.is_empty() {
        Vec::new()
    } else {
        default_label_space(n_labels.max(2))
    };
    Dataset::new(samples, labels, nuisances.names)
}

/// Reads the canonical format against fixed label and nuisance spaces, so
/// several files share one indexing. Unknown nuisance names are errors.
pub fn read_jsonl_in_space(
    path: impl AsRef<Path>,
    label_space: &[String],
    nuisance_space: &[String],
) -> Result<Dataset> {
    let index: HashMap<&str, usize> = nuisance_space
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let samples = read_canonical(path.as_ref(), |line, name| {
        index.get(name.as_str()).copied().ok_or_else(|| Error::Malformed {
            line,
            message: format!("nuisance {name:?} is not in the expected space"),
        })
    })?;
    Dataset::new(samples, label_space.to_vec(), nuisance_space.to_vec())
}

/// Writes `d` in the canonical format, one record per line.
pub fn write_jsonl(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in d.samples() {
        let rec = CanonicalOut {
            id: s.id,
            text: &s.text,
            label: s.label,
            nuisance: &d.nuisance_space()[s.nuisance],
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn polarity_mapping() {
        let f = write_lines(&[
            r#"{"text":"meh","stars":3,"business_id":"a"}"#,
            r#"{"text":"nice","stars":4,"business_id":"b"}"#,
            r#"{"text":"awful","stars":1.0,"business_id":"a"}"#,
            r#"{"text":"great","stars":5,"business_id":"c"}"#,
        ]);
        let d = ingest_reviews(f.path(), &ReviewFields::default()).unwrap();
        let labels: Vec<usize> = d.samples().iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 1, 0, 1]);
        assert_eq!(d.label_space(), &[NEGATIVE.to_string(), POSITIVE.to_string()]);
        assert_eq!(d.nuisance_space(), &["a".to_string(), "b".into(), "c".into()]);
    }

    #[test]
    fn empty_file_gives_empty_dataset() {
        let f = write_lines(&[]);
        let d = ingest_reviews(f.path(), &ReviewFields::default()).unwrap();
        assert!(d.is_empty());
        assert!(d.label_space().is_empty());
        assert!(d.nuisance_space().is_empty());
    }

    #[test]
    fn bad_rating_reports_line() {
        let f = write_lines(&[
            r#"{"text":"ok","stars":4,"business_id":"a"}"#,
            "",
            r#"{"text":"odd","stars":6,"business_id":"a"}"#,
        ]);
        match ingest_reviews(f.path(), &ReviewFields::default()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed record, got {other:?}"),
        }
        let f = write_lines(&[r#"{"text":"ok","stars":4.5,"business_id":"a"}"#]);
        assert!(matches!(
            ingest_reviews(f.path(), &ReviewFields::default()),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_field_is_config_error() {
        let f = write_lines(&[r#"{"reviewText":"ok","overall":4,"asin":"x"}"#]);
        assert!(matches!(
            ingest_reviews(f.path(), &ReviewFields::default()),
            Err(Error::Config(_))
        ));
        let fields = ReviewFields {
            text: "reviewText".into(),
            ..ReviewFields::amazon()
        };
        assert_eq!(ingest_reviews(f.path(), &fields).unwrap().len(), 1);
    }

    #[test]
    fn missing_field_later_is_malformed() {
        let f = write_lines(&[
            r#"{"text":"ok","stars":4,"business_id":"a"}"#,
            r#"{"text":"ok","business_id":"a"}"#,
        ]);
        assert!(matches!(
            ingest_reviews(f.path(), &ReviewFields::default()),
            Err(Error::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn canonical_in_space_rejects_unknown_names() {
        let f = write_lines(&[r#"{"text":"t","label":0,"nuisance":"zz"}"#]);
        let labels = default_label_space(2);
        assert!(read_jsonl_in_space(f.path(), &labels, &["a".to_string()]).is_err());
        let d = read_jsonl_in_space(f.path(), &labels, &["a".to_string(), "zz".into()]).unwrap();
        assert_eq!(d.samples()[0].nuisance, 1);
    }

    proptest! {
        #[test]
        fn ingest_write_read_roundtrip(
            records in prop::collection::vec(
                ("[a-z ]{0,12}[a-z]", 1u8..=5, 0usize..6),
                0..40,
            )
        ) {
            let mut raw = tempfile::NamedTempFile::new().unwrap();
            for (text, stars, src) in &records {
                let line = serde_json::json!({"text": text, "stars": stars, "business_id": format!("p{src}")});
                writeln!(raw, "{line}").unwrap();
            }
            let d = ingest_reviews(raw.path(), &ReviewFields::default()).unwrap();
            let out = tempfile::NamedTempFile::new().unwrap();
            write_jsonl(&d, out.path()).unwrap();
            let back = read_jsonl(out.path()).unwrap();
            prop_assert_eq!(back.samples(), d.samples());
            prop_assert_eq!(back.nuisance_space(), d.nuisance_space());
            if !d.is_empty() {
                prop_assert_eq!(back.label_space(), d.label_space());
            }
        }
    }
}
