//! Event records: `subject_id<TAB>variable_id<TAB>kind<TAB>day<TAB>value`,
//! with an empty value for categorical events.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use longsig_core::curve::{Event, EventKind, EventStream};

use super::rows;
use crate::error::Result;

pub const HEADER: &str = "# subject_id\tvariable_id\tkind\tday\tvalue\n";

pub fn write_events<'a>(streams: impl IntoIterator<Item = &'a EventStream>) -> String {
    let mut out = String::from(HEADER);
    for s in streams {
        for e in s.events() {
            let value = e.value.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                s.subject_id(),
                s.variable_id(),
                s.kind().as_str(),
                e.day,
                value
            );
        }
    }
    out
}

/// Streams grouped by subject, both in order of first appearance.
pub fn read_events(path: &Path, text: &str) -> Result<Vec<(String, Vec<EventStream>)>> {
    struct Pending {
        kind: EventKind,
        events: Vec<Event>,
    }
    let mut subjects: Vec<(String, Vec<(String, Pending)>)> = Vec::new();
    let mut subject_index: HashMap<String, usize> = HashMap::new();
    let mut stream_index: HashMap<(usize, String), usize> = HashMap::new();
    for row in rows(path, text, 5) {
        let row = row?;
        let kind = EventKind::parse(row.str(2)).ok_or_else(|| row.error(format!("unknown kind `{}`", row.str(2))))?;
        let day: i64 = row.get(3, "day")?;
        let event = match (kind, row.str(4)) {
            (EventKind::CategoricalEvent, "") => Event::code(day),
            (EventKind::CategoricalEvent, _) => return Err(row.error("categorical events carry no value")),
            (EventKind::ContinuousLab, "") => return Err(row.error("lab event without a value")),
            (EventKind::ContinuousLab, _) => Event::lab(day, row.real(4, "value")?),
        };
        let si = *subject_index.entry(row.str(0).to_string()).or_insert_with(|| {
            subjects.push((row.str(0).to_string(), Vec::new()));
            subjects.len() - 1
        });
        let streams = &mut subjects[si].1;
        let vi = *stream_index.entry((si, row.str(1).to_string())).or_insert_with(|| {
            streams.push((
                row.str(1).to_string(),
                Pending {
                    kind,
                    events: Vec::new(),
                },
            ));
            streams.len() - 1
        });
        let pending = &mut streams[vi].1;
        if pending.kind != kind {
            return Err(row.error(format!("`{}` switches kind", row.str(1))));
        }
        pending.events.push(event);
    }
    subjects
        .into_iter()
        .map(|(subject, streams)| {
            let streams = streams
                .into_iter()
                .map(|(variable, p)| EventStream::new(subject.clone(), variable, p.kind, p.events))
                .collect::<longsig_core::Result<Vec<_>>>()?;
            Ok((subject, streams))
        })
        .collect()
}
