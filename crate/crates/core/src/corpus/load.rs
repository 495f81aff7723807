use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, RawInteraction};

/// Column mapping for delimiter-separated interaction files. The file must
/// have a header row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSpec {
    pub delimiter: char,
    pub user_column: String,
    pub item_column: String,
    pub timestamp_column: String,
    /// Used when present in the header; rows default to positive otherwise.
    pub label_column: String,
    /// Optional item release time column overriding first-interaction entry.
    pub release_column: Option<String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            delimiter: ',',
            user_column: "user_id".into(),
            item_column: "item_id".into(),
            timestamp_column: "timestamp".into(),
            label_column: "label".into(),
            release_column: None,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub rows: usize,
    pub duplicates: usize,
}

/// Reads and parses an interaction file.
pub fn load_interactions(
    path: impl AsRef<Path>,
    spec: &ColumnSpec,
) -> Result<(Corpus, LoadStats), CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (corpus, stats) = read_interactions(file, spec)?;
    log::info!(
        "loaded {} interactions from {} ({} duplicate rows dropped)",
        corpus.len(),
        path.display(),
        stats.duplicates
    );
    Ok((corpus, stats))
}

pub fn read_interactions(
    reader: impl Read,
    spec: &ColumnSpec,
) -> Result<(Corpus, LoadStats), CorpusError> {
    if !spec.delimiter.is_ascii() {
        return Err(CorpusError::InvalidParameter(format!(
            "delimiter {:?} is not a single ASCII character",
            spec.delimiter
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter as u8)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let user_col =
        find(&spec.user_column).ok_or_else(|| CorpusError::MissingColumn(spec.user_column.clone()))?;
    let item_col =
        find(&spec.item_column).ok_or_else(|| CorpusError::MissingColumn(spec.item_column.clone()))?;
    let ts_col = find(&spec.timestamp_column)
        .ok_or_else(|| CorpusError::MissingColumn(spec.timestamp_column.clone()))?;
    let label_col = find(&spec.label_column);
    let release_col = match &spec.release_column {
        Some(name) => Some(find(name).ok_or_else(|| CorpusError::MissingColumn(name.clone()))?),
        None => None,
    };

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CorpusError::MalformedRow {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize, what: &str| {
            record
                .get(idx)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| CorpusError::MalformedRow {
                    line,
                    reason: format!("empty {what}"),
                })
        };
        let user = field(user_col, "user id")?;
        let item = field(item_col, "item id")?;
        let timestamp = parse_timestamp(field(ts_col, "timestamp")?, line)?;
        let label = match label_col {
            Some(idx) => parse_label(field(idx, "label")?, line)?,
            None => true,
        };
        let release = match release_col {
            Some(idx) => match record.get(idx).filter(|s| !s.is_empty()) {
                Some(s) => Some(parse_timestamp(s, line)?),
                None => None,
            },
            None => None,
        };
        rows.push(RawInteraction {
            user: user.to_owned(),
            item: item.to_owned(),
            timestamp,
            label,
            release,
        });
    }
    let total = rows.len();
    let (corpus, duplicates) = Corpus::from_raw(rows);
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus("parsing"));
    }
    Ok((
        corpus,
        LoadStats {
            rows: total,
            duplicates,
        },
    ))
}

fn parse_timestamp(s: &str, line: u64) -> Result<i64, CorpusError> {
    let ts: i64 = s.parse().map_err(|_| CorpusError::MalformedRow {
        line,
        reason: format!("timestamp `{s}` is not an integer"),
    })?;
    if ts < 0 {
        return Err(CorpusError::MalformedRow {
            line,
            reason: format!("negative timestamp {ts}"),
        });
    }
    Ok(ts)
}

fn parse_label(s: &str, line: u64) -> Result<bool, CorpusError> {
    match s {
        "1" | "true" | "True" => Ok(true),
        "0" | "false" | "False" => Ok(false),
        _ => Err(CorpusError::MalformedRow {
            line,
            reason: format!("label `{s}` is not binary"),
        }),
    }
}

/// Writes the corpus as `user_id,item_id,timestamp,label[,release]`.
pub fn write_interactions(
    corpus: &Corpus,
    mut out: impl Write,
    delimiter: char,
) -> std::io::Result<()> {
    let with_release = corpus.item_release.iter().any(Option::is_some);
    let d = delimiter;
    if with_release {
        writeln!(out, "user_id{d}item_id{d}timestamp{d}label{d}release")?;
    } else {
        writeln!(out, "user_id{d}item_id{d}timestamp{d}label")?;
    }
    for raw in corpus.to_raw() {
        write!(
            out,
            "{}{d}{}{d}{}{d}{}",
            raw.user,
            raw.item,
            raw.timestamp,
            u8::from(raw.label)
        )?;
        if with_release {
            match raw.release {
                Some(r) => write!(out, "{d}{r}")?,
                None => write!(out, "{d}")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
