use std::io::{BufRead, Write};

use crate::error::DataError;

/// One `(user, item, behavior, timestamp)` event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InteractionRecord {
    pub user: usize,
    pub item: usize,
    pub behavior: usize,
    pub timestamp: i64,
}

impl InteractionRecord {
    pub fn new(user: usize, item: usize, behavior: usize, timestamp: i64) -> Self {
        Self {
            user,
            item,
            behavior,
            timestamp,
        }
    }
}

/// Ordered behavior labels; the line index is the behavior id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorVocab {
    labels: Vec<String>,
}

impl BehaviorVocab {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, DataError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(DataError::Vocabulary("no behavior labels".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.contains(char::is_whitespace) {
                return Err(DataError::Vocabulary(format!("invalid label `{l}`")));
            }
            if labels[..i].contains(l) {
                return Err(DataError::Vocabulary(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { labels })
    }

    /// One label per line; blank and `#` lines are skipped.
    pub fn parse(reader: impl BufRead) -> Result<Self, DataError> {
        let mut labels = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            labels.push(line.to_string());
        }
        Self::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for l in &self.labels {
            writeln!(out, "{l}")?;
        }
        Ok(())
    }
}

/// Parse a tab-separated `user item behavior timestamp` log. Lines starting
/// with `#` and blank lines are ignored. Records keep file order and raw ids.
pub fn parse_interactions(
    reader: impl BufRead,
    vocab: &BehaviorVocab,
) -> Result<Vec<InteractionRecord>, DataError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<usize, DataError> {
            s.trim().parse().map_err(|_| DataError::Parse {
                line: line_no,
                msg: format!("invalid {what} `{s}`"),
            })
        };
        let user = num(fields[0], "user id")?;
        let item = num(fields[1], "item id")?;
        let behavior = vocab
            .id(fields[2].trim())
            .ok_or_else(|| DataError::UnknownBehavior {
                line: line_no,
                label: fields[2].to_string(),
            })?;
        let timestamp = fields[3].trim().parse().map_err(|_| DataError::Parse {
            line: line_no,
            msg: format!("invalid timestamp `{}`", fields[3]),
        })?;
        out.push(InteractionRecord {
            user,
            item,
            behavior,
            timestamp,
        });
    }
    Ok(out)
}

/// Inverse of [`parse_interactions`].
pub fn write_interactions(
    records: &[InteractionRecord],
    vocab: &BehaviorVocab,
    mut out: impl Write,
) -> std::io::Result<()> {
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.user,
            r.item,
            vocab.label(r.behavior),
            r.timestamp
        )?;
    }
    Ok(())
}
