//! Session/event data model and line-delimited dataset ingestion.
//!
//! A dataset is a pair of files: a JSON schema declaring the domains (with
//! vocabularies and optional numeric bin edges), and a line-delimited file
//! with one JSON session per line:
//!
//! ```text
//! {"session_id":"s1","label":1,"events":[{"page_type":"login","action_type":"click","duration":5.0},...]}
//! ```
//!
//! Each event object carries one value per declared domain (a string for
//! categorical domains, a number for binned domains), plus an optional
//! `item_id`. Field names are exact and case-sensitive.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub const DEFAULT_PAD_TOKEN: &str = "<pad>";
pub const DEFAULT_OOV_TOKEN: &str = "<oov>";

fn default_pad_token() -> String {
    DEFAULT_PAD_TOKEN.to_string()
}

fn default_oov_token() -> String {
    DEFAULT_OOV_TOKEN.to_string()
}

/// One categorical domain: its name, declared vocabulary, and (for numeric
/// domains such as duration) the bin edges that discretize raw values into
/// the vocabulary labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub vocab: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_edges: Option<Vec<f64>>,
}

impl DomainSpec {
    pub fn is_binned(&self) -> bool {
        self.bin_edges.is_some()
    }

    /// Bin a raw numeric value: value < edges[0] maps to vocab[0],
    /// edges[i-1] <= value < edges[i] maps to vocab[i], value >= last edge
    /// maps to the final label.
    pub fn bin_value(&self, value: f64) -> &str {
        let edges = self.bin_edges.as_deref().unwrap_or(&[]);
        let idx = edges.iter().take_while(|&&e| value >= e).count();
        &self.vocab[idx]
    }
}

/// Dataset schema: ordered domains, target sequence length, and the reserved
/// pad/OOV tokens shared by every domain's extended vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub domains: Vec<DomainSpec>,
    pub sequence_length: usize,
    #[serde(default = "default_pad_token")]
    pub pad_token: String,
    #[serde(default = "default_oov_token")]
    pub oov_token: String,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 {
            return Err(Error::InvalidSchema("sequence_length must be >= 1".into()));
        }
        if self.domains.is_empty() {
            return Err(Error::InvalidSchema("schema declares no domains".into()));
        }
        if self.pad_token == self.oov_token {
            return Err(Error::InvalidSchema("pad_token equals oov_token".into()));
        }
        let mut names = HashSet::new();
        for d in &self.domains {
            if !names.insert(d.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate domain `{}`", d.name)));
            }
            if d.vocab.is_empty() {
                return Err(Error::InvalidSchema(format!("domain `{}` has empty vocabulary", d.name)));
            }
            let mut seen = HashSet::new();
            for v in &d.vocab {
                if !seen.insert(v.as_str()) {
                    return Err(Error::InvalidSchema(format!(
                        "domain `{}` repeats vocabulary value `{}`",
                        d.name, v
                    )));
                }
                if v == &self.pad_token || v == &self.oov_token {
                    return Err(Error::InvalidSchema(format!(
                        "domain `{}` vocabulary collides with reserved token `{}`",
                        d.name, v
                    )));
                }
            }
            if let Some(edges) = &d.bin_edges {
                if !edges.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::InvalidSchema(format!(
                        "domain `{}` bin edges are not strictly increasing",
                        d.name
                    )));
                }
                if d.vocab.len() != edges.len() + 1 {
                    return Err(Error::InvalidSchema(format!(
                        "domain `{}` needs {} bin labels for {} edges, has {}",
                        d.name,
                        edges.len() + 1,
                        edges.len(),
                        d.vocab.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    pub fn load(path: &Path) -> Result<DatasetSchema> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let schema: DatasetSchema = serde_json::from_str(&text).map_err(|e| Error::CorruptFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// One timestamped interaction record: a (domain, value) pair per declared
/// domain, in schema order, plus the optional viewed-item token and any raw
/// numeric values that were binned on ingestion.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    /// 1-based ordinal within the session.
    pub index: usize,
    pub features: Vec<(String, String)>,
    pub item_id: Option<String>,
    /// Raw values of binned domains, kept so writing a dataset back out is
    /// lossless.
    pub numeric: Vec<(String, f64)>,
}

impl Event {
    pub fn value(&self, domain: &str) -> Option<&str> {
        self.features
            .iter()
            .find(|(d, _)| d == domain)
            .map(|(_, v)| v.as_str())
    }

    pub fn duration(&self) -> f64 {
        self.numeric
            .iter()
            .find(|(d, _)| d == "duration")
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    }

    /// All-pad event used to left-pad short sessions.
    pub fn pad(schema: &DatasetSchema, index: usize) -> Event {
        Event {
            index,
            features: schema
                .domains
                .iter()
                .map(|d| (d.name.clone(), schema.pad_token.clone()))
                .collect(),
            item_id: None,
            numeric: Vec::new(),
        }
    }

    pub fn is_pad(&self, schema: &DatasetSchema) -> bool {
        self.features.iter().all(|(_, v)| v == &schema.pad_token)
    }
}

/// An ordered, optionally labeled sequence of events.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub events: Vec<Event>,
    /// 1 = fraud, 0 = legitimate; absent at scoring time.
    pub label: Option<u8>,
}

fn parse_event(
    obj: &Map<String, Value>,
    schema: &DatasetSchema,
    session_id: &str,
    line: usize,
    index: usize,
) -> Result<Event> {
    let mut features = Vec::with_capacity(schema.domains.len());
    let mut numeric = Vec::new();
    for d in &schema.domains {
        let raw = obj.get(&d.name).ok_or_else(|| Error::MissingDomain {
            session_id: session_id.to_string(),
            domain: d.name.clone(),
        })?;
        let value = if d.is_binned() {
            match raw {
                Value::Number(n) => {
                    let v = n.as_f64().ok_or_else(|| Error::MalformedLine {
                        line,
                        reason: format!("domain `{}` is not a finite number", d.name),
                    })?;
                    if v < 0.0 {
                        return Err(Error::MalformedLine {
                            line,
                            reason: format!("domain `{}` is negative ({v})", d.name),
                        });
                    }
                    numeric.push((d.name.clone(), v));
                    d.bin_value(v).to_string()
                }
                // pad/OOV rows of a padded session round-trip as strings
                Value::String(s) if s == &schema.pad_token || s == &schema.oov_token => s.clone(),
                other => {
                    return Err(Error::MalformedLine {
                        line,
                        reason: format!("domain `{}` expects a number, got {other}", d.name),
                    })
                }
            }
        } else {
            match raw {
                Value::String(s) => {
                    if s == &schema.pad_token || d.vocab.contains(s) {
                        s.clone()
                    } else {
                        // unseen category: absorb into the reserved OOV value
                        schema.oov_token.clone()
                    }
                }
                other => {
                    return Err(Error::MalformedLine {
                        line,
                        reason: format!("domain `{}` expects a string, got {other}", d.name),
                    })
                }
            }
        };
        features.push((d.name.clone(), value));
    }
    let item_id = match obj.get("item_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            return Err(Error::MalformedLine {
                line,
                reason: format!("item_id expects a string, got {other}"),
            })
        }
    };
    Ok(Event { index, features, item_id, numeric })
}

fn parse_session(text: &str, schema: &DatasetSchema, line: usize) -> Result<Session> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::MalformedLine {
        line,
        reason: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::MalformedLine {
        line,
        reason: "record is not a JSON object".into(),
    })?;
    let session_id = obj
        .get("session_id")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::MalformedLine {
            line,
            reason: "missing string field `session_id`".into(),
        })?
        .to_string();
    let label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) if n.as_u64() == Some(0) => Some(0),
        Some(Value::Number(n)) if n.as_u64() == Some(1) => Some(1),
        Some(other) => {
            return Err(Error::MalformedLine {
                line,
                reason: format!("label must be 0 or 1, got {other}"),
            })
        }
    };
    let raw_events = obj
        .get("events")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::MalformedLine {
            line,
            reason: "missing array field `events`".into(),
        })?;
    if raw_events.is_empty() {
        return Err(Error::MalformedLine {
            line,
            reason: format!("session `{session_id}` has no events"),
        });
    }
    let mut events = Vec::with_capacity(raw_events.len());
    for (i, ev) in raw_events.iter().enumerate() {
        let obj = ev.as_object().ok_or_else(|| Error::MalformedLine {
            line,
            reason: format!("event {} is not a JSON object", i + 1),
        })?;
        events.push(parse_event(obj, schema, &session_id, line, i + 1)?);
    }
    Ok(Session { session_id, events, label })
}

/// Read sessions from a line-delimited file, validating every event against
/// the schema. Unknown categorical values map to the reserved OOV token.
pub fn load_sessions(path: &Path, schema: &DatasetSchema) -> Result<Vec<Session>> {
    schema.validate()?;
    if !path.exists() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_sessions(BufReader::new(file), schema)
}

pub fn read_sessions<R: Read>(reader: BufReader<R>, schema: &DatasetSchema) -> Result<Vec<Session>> {
    let mut sessions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| Error::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        sessions.push(parse_session(&text, schema, line_no)?);
    }
    Ok(sessions)
}

fn event_to_json(e: &Event, schema: &DatasetSchema) -> Value {
    let mut obj = Map::new();
    for d in &schema.domains {
        let cat = e.value(&d.name).expect("event validated against schema");
        if d.is_binned() {
            if let Some((_, raw)) = e.numeric.iter().find(|(n, _)| n == &d.name) {
                obj.insert(d.name.clone(), json!(raw));
                continue;
            }
        }
        obj.insert(d.name.clone(), json!(cat));
    }
    if let Some(item) = &e.item_id {
        obj.insert("item_id".into(), json!(item));
    }
    Value::Object(obj)
}

/// Write sessions in the same line-delimited format `load_sessions` reads.
/// `load_sessions . write_sessions` is the identity on valid session lists.
pub fn write_sessions(path: &Path, sessions: &[Session], schema: &DatasetSchema) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    for s in sessions {
        let mut obj = Map::new();
        obj.insert("session_id".into(), json!(s.session_id));
        if let Some(label) = s.label {
            obj.insert("label".into(), json!(label));
        }
        obj.insert(
            "events".into(),
            Value::Array(s.events.iter().map(|e| event_to_json(e, schema)).collect()),
        );
        serde_json::to_writer(&mut out, &Value::Object(obj))
            .map_err(|e| Error::CorruptFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        out.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    out.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Force a session to exactly `target_len` events: keep the last
/// `target_len` when too long, left-pad with all-pad events when too short.
/// Event indexes are renumbered 1..=target_len.
pub fn pad_or_truncate(s: &Session, target_len: usize, schema: &DatasetSchema) -> Session {
    assert!(target_len >= 1, "target length must be >= 1");
    let mut events: Vec<Event> = if s.events.len() >= target_len {
        s.events[s.events.len() - target_len..].to_vec()
    } else {
        let pad_count = target_len - s.events.len();
        let mut evs: Vec<Event> = (0..pad_count).map(|i| Event::pad(schema, i + 1)).collect();
        evs.extend(s.events.iter().cloned());
        evs
    };
    for (i, e) in events.iter_mut().enumerate() {
        e.index = i + 1;
    }
    Session {
        session_id: s.session_id.clone(),
        events,
        label: s.label,
    }
}

#[cfg(test)]
pub(crate) fn test_schema() -> DatasetSchema {
    DatasetSchema {
        domains: vec![
            DomainSpec {
                name: "page_type".into(),
                vocab: vec!["home".into(), "item".into(), "cart".into()],
                bin_edges: None,
            },
            DomainSpec {
                name: "action_type".into(),
                vocab: vec!["view".into(), "click".into()],
                bin_edges: None,
            },
            DomainSpec {
                name: "duration".into(),
                vocab: vec!["short".into(), "long".into()],
                bin_edges: Some(vec![10.0]),
            },
        ],
        sequence_length: 4,
        pad_token: DEFAULT_PAD_TOKEN.into(),
        oov_token: DEFAULT_OOV_TOKEN.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str, schema: &DatasetSchema) -> Result<Vec<Session>> {
        read_sessions(BufReader::new(Cursor::new(text.to_string())), schema)
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let schema = test_schema();
        assert!(read("", &schema).unwrap().is_empty());
    }

    #[test]
    fn single_session_parses() {
        let schema = test_schema();
        let line = r#"{"session_id":"s1","label":1,"events":[
            {"page_type":"home","action_type":"view","duration":3.0},
            {"page_type":"item","action_type":"click","duration":15.5,"item_id":"X9"},
            {"page_type":"cart","action_type":"click","duration":1.0}]}"#
            .replace('\n', "");
        let sessions = read(&line, &schema).unwrap();
        assert_eq!(sessions.len(), 1);
        let s = &sessions[0];
        assert_eq!(s.events.len(), 3);
        assert_eq!(s.label, Some(1));
        assert_eq!(s.events[0].value("duration"), Some("short"));
        assert_eq!(s.events[1].value("duration"), Some("long"));
        assert_eq!(s.events[1].item_id.as_deref(), Some("X9"));
        assert_eq!(s.events[2].index, 3);
    }

    #[test]
    fn missing_domain_names_the_domain() {
        let schema = test_schema();
        let line = r#"{"session_id":"s1","events":[{"action_type":"view","duration":3.0}]}"#;
        let err = read(line, &schema).unwrap_err();
        match err {
            Error::MissingDomain { session_id, domain } => {
                assert_eq!(session_id, "s1");
                assert_eq!(domain, "page_type");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let schema = test_schema();
        let text = "{\"session_id\":\"a\",\"events\":[{\"page_type\":\"home\",\"action_type\":\"view\",\"duration\":1.0}]}\nnot json\n";
        match read(text, &schema).unwrap_err() {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_value_maps_to_oov() {
        let schema = test_schema();
        let line = r#"{"session_id":"s1","events":[{"page_type":"mystery","action_type":"view","duration":1.0}]}"#;
        let sessions = read(line, &schema).unwrap();
        assert_eq!(sessions[0].events[0].value("page_type"), Some(DEFAULT_OOV_TOKEN));
    }

    #[test]
    fn roundtrip_is_identity() {
        let schema = test_schema();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let line = r#"{"session_id":"s1","label":0,"events":[
            {"page_type":"home","action_type":"view","duration":3.0},
            {"page_type":"item","action_type":"click","duration":15.5,"item_id":"X9"}]}"#
            .replace('\n', "");
        let sessions = read(&line, &schema).unwrap();
        write_sessions(&path, &sessions, &schema).unwrap();
        let reloaded = load_sessions(&path, &schema).unwrap();
        assert_eq!(sessions, reloaded);
    }

    #[test]
    fn padded_session_roundtrips() {
        let schema = test_schema();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let line = r#"{"session_id":"s1","events":[{"page_type":"home","action_type":"view","duration":3.0}]}"#;
        let padded: Vec<Session> = read(line, &schema)
            .unwrap()
            .iter()
            .map(|s| pad_or_truncate(s, 3, &schema))
            .collect();
        write_sessions(&path, &padded, &schema).unwrap();
        assert_eq!(load_sessions(&path, &schema).unwrap(), padded);
    }

    #[test]
    fn truncation_keeps_last_events() {
        let schema = test_schema();
        let pages = ["home", "item", "cart", "home", "item"];
        let events: Vec<Event> = pages
            .iter()
            .enumerate()
            .map(|(i, p)| Event {
                index: i + 1,
                features: vec![
                    ("page_type".into(), p.to_string()),
                    ("action_type".into(), "view".into()),
                    ("duration".into(), "short".into()),
                ],
                item_id: None,
                numeric: vec![("duration".into(), 1.0)],
            })
            .collect();
        let s = Session { session_id: "s".into(), events, label: None };
        let out = pad_or_truncate(&s, 3, &schema);
        assert_eq!(out.events.len(), 3);
        let kept: Vec<&str> = out.events.iter().map(|e| e.value("page_type").unwrap()).collect();
        assert_eq!(kept, vec!["cart", "home", "item"]);
        assert_eq!(out.events[0].index, 1);
    }

    #[test]
    fn padding_prepends_pad_events() {
        let schema = test_schema();
        let s = Session {
            session_id: "s".into(),
            events: vec![Event {
                index: 1,
                features: vec![
                    ("page_type".into(), "home".into()),
                    ("action_type".into(), "view".into()),
                    ("duration".into(), "short".into()),
                ],
                item_id: None,
                numeric: vec![("duration".into(), 2.0)],
            }],
            label: Some(0),
        };
        let out = pad_or_truncate(&s, 3, &schema);
        assert_eq!(out.events.len(), 3);
        assert!(out.events[0].is_pad(&schema));
        assert!(out.events[1].is_pad(&schema));
        assert_eq!(out.events[2].value("page_type"), Some("home"));
    }

    #[test]
    fn pad_or_truncate_is_idempotent_and_exact_length() {
        let schema = test_schema();
        for len in 1..8 {
            let events: Vec<Event> = (0..len)
                .map(|i| Event {
                    index: i + 1,
                    features: vec![
                        ("page_type".into(), "home".into()),
                        ("action_type".into(), "view".into()),
                        ("duration".into(), "short".into()),
                    ],
                    item_id: None,
                    numeric: vec![("duration".into(), 1.0)],
                })
                .collect();
            let s = Session { session_id: format!("s{len}"), events, label: None };
            let once = pad_or_truncate(&s, 4, &schema);
            assert_eq!(once.events.len(), 4);
            let twice = pad_or_truncate(&once, 4, &schema);
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn identity_when_already_target_length() {
        let schema = test_schema();
        let events: Vec<Event> = (0..4)
            .map(|i| Event {
                index: i + 1,
                features: vec![
                    ("page_type".into(), "item".into()),
                    ("action_type".into(), "click".into()),
                    ("duration".into(), "long".into()),
                ],
                item_id: Some(format!("it{i}")),
                numeric: vec![("duration".into(), 20.0)],
            })
            .collect();
        let s = Session { session_id: "s".into(), events, label: Some(1) };
        assert_eq!(pad_or_truncate(&s, 4, &schema), s);
    }

    #[test]
    fn schema_validation_catches_bad_edges() {
        let mut schema = test_schema();
        schema.domains[2].bin_edges = Some(vec![10.0, 5.0]);
        schema.domains[2].vocab = vec!["a".into(), "b".into(), "c".into()];
        assert!(schema.validate().is_err());
    }
}
