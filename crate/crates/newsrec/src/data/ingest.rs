//! Click-log ingestion.
//!
//! Two wire formats are accepted and auto-detected per file (first non-blank
//! line starting with `{` means JSON lines):
//!
//! * **JSON lines** — one object per line with the fields `userId`, `id`
//!   (news id), `time` (Unix seconds), and optionally `title`, `profile`,
//!   `sessionStart`, `sessionStop`. A profile is a list of
//!   `{"item": entity, "groups": [{"group": type, ...}, ...]}` objects; each
//!   (item, group) combination becomes one (entity, entity-type) pair.
//! * **TSV fallback** — exactly five tab-separated UTF-8 fields per line:
//!   `user_id<TAB>news_id<TAB>timestamp<TAB>title<TAB>profile` where the
//!   profile field is `entity:type` entries joined by `;` (empty field for no
//!   profile; the type is everything after the last `:` of an entry).
//!
//! Malformed lines are skipped and counted; more than 10% malformed is fatal.
//! Output events are stably sorted by timestamp.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// One parsed click with its original string identifiers and raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub user: String,
    pub news: String,
    /// Unix seconds; always positive.
    pub ts: i64,
    pub title: String,
    /// (entity, entity-type) pairs as attached by the provider.
    pub profile: Vec<(String, String)>,
    pub session_start: bool,
    pub session_stop: bool,
}

/// What happened while reading a file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub lines: usize,
    pub parsed: usize,
    pub malformed: usize,
    /// Up to five sample diagnostics for malformed lines.
    pub samples: Vec<String>,
}

#[derive(Deserialize)]
struct JsonGroup {
    group: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonGroupEntry {
    Tagged(JsonGroup),
    Plain(String),
}

#[derive(Deserialize)]
struct JsonProfileItem {
    item: String,
    #[serde(default)]
    groups: Vec<JsonGroupEntry>,
}

#[derive(Deserialize)]
struct JsonEvent {
    #[serde(rename = "userId")]
    user_id: Option<String>,
    id: Option<String>,
    time: Option<f64>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    profile: Vec<JsonProfileItem>,
    #[serde(default, rename = "sessionStart")]
    session_start: bool,
    #[serde(default, rename = "sessionStop")]
    session_stop: bool,
}

fn parse_json_line(line: &str) -> std::result::Result<RawEvent, String> {
    let ev: JsonEvent = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let user = ev.user_id.filter(|u| !u.is_empty()).ok_or("missing userId")?;
    let news = ev.id.filter(|d| !d.is_empty()).ok_or("missing news id")?;
    let ts = ev.time.ok_or("missing time")? as i64;
    if ts <= 0 {
        return Err(format!("non-positive timestamp {ts}"));
    }
    let mut profile = Vec::new();
    for item in ev.profile {
        for g in item.groups {
            let group = match g {
                JsonGroupEntry::Tagged(t) => t.group,
                JsonGroupEntry::Plain(s) => s,
            };
            profile.push((item.item.clone(), group));
        }
    }
    Ok(RawEvent {
        user,
        news,
        ts,
        title: ev.title.unwrap_or_default(),
        profile,
        session_start: ev.session_start,
        session_stop: ev.session_stop,
    })
}

fn parse_tsv_line(line: &str) -> std::result::Result<RawEvent, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 tab-separated fields, got {}", fields.len()));
    }
    if fields[0].is_empty() {
        return Err("empty user id".into());
    }
    if fields[1].is_empty() {
        return Err("empty news id".into());
    }
    let ts: i64 = fields[2]
        .parse()
        .map_err(|e| format!("bad timestamp {:?}: {e}", fields[2]))?;
    if ts <= 0 {
        return Err(format!("non-positive timestamp {ts}"));
    }
    let mut profile = Vec::new();
    for entry in fields[4].split(';').filter(|s| !s.is_empty()) {
        let (entity, ty) = entry
            .rsplit_once(':')
            .ok_or_else(|| format!("profile entry {entry:?} lacks a type"))?;
        if entity.is_empty() || ty.is_empty() {
            return Err(format!("profile entry {entry:?} has an empty side"));
        }
        profile.push((entity.to_string(), ty.to_string()));
    }
    Ok(RawEvent {
        user: fields[0].to_string(),
        news: fields[1].to_string(),
        ts,
        title: fields[3].to_string(),
        profile,
        session_start: false,
        session_stop: false,
    })
}

/// Render events in the TSV wire format (inverse of TSV ingestion for events
/// without session flags).
pub fn to_tsv(events: &[RawEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let profile = e
            .profile
            .iter()
            .map(|(ent, ty)| format!("{ent}:{ty}"))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.user, e.news, e.ts, e.title, profile
        ));
    }
    out
}

/// Parse a whole log from text. `json` selects the line grammar.
pub fn ingest_str(text: &str, json: bool) -> Result<(Vec<RawEvent>, IngestReport)> {
    let mut report = IngestReport::default();
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let parsed = if json {
            parse_json_line(line)
        } else {
            parse_tsv_line(line)
        };
        match parsed {
            Ok(e) => {
                report.parsed += 1;
                events.push(e);
            }
            Err(why) => {
                report.malformed += 1;
                if report.samples.len() < 5 {
                    report.samples.push(format!("line {}: {why}", lineno + 1));
                }
            }
        }
    }
    if report.malformed * 10 > report.lines {
        return Err(Error::Data(format!(
            "{} of {} lines malformed (>10%); samples: {}",
            report.malformed,
            report.lines,
            report.samples.join(" | ")
        )));
    }
    events.sort_by_key(|e| e.ts);
    Ok((events, report))
}

/// Read and parse a click log, auto-detecting the format.
pub fn ingest(path: &Path) -> Result<(Vec<RawEvent>, IngestReport)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let json = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| l.trim_start().starts_with('{'))
        .unwrap_or(false);
    ingest_str(&text, json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_lines_parse_in_timestamp_order() {
        let text = "u1\tn1\t300\tHello there\tA:person\n\
                    u2\tn2\t100\tAnother\t\n\
                    u1\tn3\t200\tThird one\tB:location;C:concept\n";
        let (events, report) = ingest_str(text, false).unwrap();
        assert_eq!(report.parsed, 3);
        assert_eq!(report.malformed, 0);
        let ts: Vec<i64> = events.iter().map(|e| e.ts).collect();
        assert_eq!(ts, vec![100, 200, 300]);
        assert_eq!(events[2].profile, vec![("A".into(), "person".into())]);
        assert_eq!(events[1].profile.len(), 2);
        assert!(events[0].profile.is_empty());
    }

    #[test]
    fn json_lines_parse_adressa_shapes() {
        let text = concat!(
            r#"{"userId":"u1","id":"n1","time":1000.0,"title":"Stor nyhet","#,
            r#""profile":[{"item":"Trondheim","groups":[{"group":"location","weight":0.9},{"group":"entity"}]}],"#,
            r#""sessionStart":true}"#,
            "\n",
            r#"{"userId":"u2","id":"n2","time":500}"#,
            "\n"
        );
        let (events, report) = ingest_str(text, true).unwrap();
        assert_eq!(report.parsed, 2);
        assert_eq!(events[0].ts, 500, "sorted by time");
        assert_eq!(events[1].user, "u1");
        assert!(events[1].session_start);
        assert_eq!(
            events[1].profile,
            vec![
                ("Trondheim".into(), "location".into()),
                ("Trondheim".into(), "entity".into())
            ]
        );
        assert_eq!(events[0].title, "");
    }

    #[test]
    fn malformed_lines_are_skipped_and_counted() {
        let text = "u1\tn1\t100\tok\t\n\
                    u2\t\t200\tmissing news id\t\n\
                    u3\tn3\t300\tok\t\n\
                    u4\tn4\t400\tok\t\n\
                    u5\tn5\t500\tok\t\n\
                    u6\tn6\t600\tok\t\n\
                    u7\tn7\t700\tok\t\n\
                    u8\tn8\t800\tok\t\n\
                    u9\tn9\t900\tok\t\n\
                    u10\tn10\t1000\tok\t\n\
                    u11\tn11\t1100\tok\t\n";
        let (events, report) = ingest_str(text, false).unwrap();
        assert_eq!(report.malformed, 1);
        assert_eq!(events.len(), 10);
        assert!(report.samples[0].contains("line 2"));
    }

    #[test]
    fn too_many_malformed_lines_is_fatal() {
        let text = "garbage\nu1\tn1\t100\tok\t\nmore garbage\n";
        let err = ingest_str(text, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("malformed"), "{msg}");
        assert!(msg.contains("line 1"), "diagnostics name the lines: {msg}");
    }

    #[test]
    fn zero_or_negative_timestamps_are_malformed() {
        let text = "u1\tn1\t0\tx\t\nu2\tn2\t-5\ty\t\n\
                    a\tb\t1\tok\t\nc\td\t2\tok\t\ne\tf\t3\tok\t\n\
                    g\th\t4\tok\t\ni\tj\t5\tok\t\nk\tl\t6\tok\t\n\
                    m\tn\t7\tok\t\no\tp\t8\tok\t\nq\tr\t9\tok\t\n\
                    s\tt\t10\tok\t\nu\tv\t11\tok\t\nw\tx\t12\tok\t\n\
                    y\tz\t13\tok\t\naa\tbb\t14\tok\t\ncc\tdd\t15\tok\t\n\
                    ee\tff\t16\tok\t\ngg\thh\t17\tok\t\nii\tjj\t18\tok\t\n";
        let (_, report) = ingest_str(text, false).unwrap();
        assert_eq!(report.malformed, 2);
    }

    #[test]
    fn missing_file_is_fatal_and_names_the_path() {
        let err = ingest(Path::new("/nonexistent/events.tsv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/events.tsv"));
    }

    #[test]
    fn format_sniffing_picks_json_for_brace_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(
            &path,
            "\n{\"userId\":\"u\",\"id\":\"n\",\"time\":42}\n",
        )
        .unwrap();
        let (events, _) = ingest(&path).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].ts, 42);
    }

    #[test]
    fn tsv_round_trips_through_its_own_renderer() {
        let events = vec![
            RawEvent {
                user: "u1".into(),
                news: "n1".into(),
                ts: 100,
                title: "En tittel".into(),
                profile: vec![("X".into(), "person".into()), ("Y:Z".into(), "concept".into())],
                session_start: false,
                session_stop: false,
            },
            RawEvent {
                user: "u2".into(),
                news: "n2".into(),
                ts: 200,
                title: String::new(),
                profile: vec![],
                session_start: false,
                session_stop: false,
            },
        ];
        let text = to_tsv(&events);
        let (parsed, report) = ingest_str(&text, false).unwrap();
        assert_eq!(report.malformed, 0);
        assert_eq!(parsed, events, "entities may contain ':' (type is after the last)");
    }

    #[test]
    fn equal_timestamps_keep_file_order() {
        let text = "u1\tfirst\t100\ta\t\nu1\tsecond\t100\tb\t\n";
        let (events, _) = ingest_str(text, false).unwrap();
        assert_eq!(events[0].news, "first");
        assert_eq!(events[1].news, "second");
    }
}
