use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};

use super::{AggregateDaily, IngestError, Platform, Post};

pub const POST_HEADER: [&str; 6] = ["platform", "id", "created_at", "author", "parent_item", "text"];
pub const AGGREGATE_HEADER: [&str; 4] = ["date", "category", "posts_total", "posts_matching"];

/// A row that failed validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
    pub raw: String,
}

fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<(), IngestError> {
    let mut out = String::from("line\treason\traw\n");
    for r in rejects {
        out.push_str(&format!("{}\t{}\t{}\n", r.line, escape_field(&r.reason), escape_field(&r.raw)));
    }
    std::fs::write(path, out).map_err(|e| IngestError::io(path.display(), e))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TsvIngest {
    pub posts: Vec<Post>,
    pub rejects: Vec<Reject>,
}

impl TsvIngest {
    pub fn write_rejects(&self, path: &Path) -> Result<(), IngestError> {
        write_rejects(path, &self.rejects)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AggregateIngest {
    pub rows: Vec<AggregateDaily>,
    pub rejects: Vec<Reject>,
}

impl AggregateIngest {
    pub fn write_rejects(&self, path: &Path) -> Result<(), IngestError> {
        write_rejects(path, &self.rejects)
    }
}

/// Escapes `\`, tab, newline and carriage return as two-character sequences.
pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn write_posts_tsv<W: Write>(mut w: W, posts: &[Post]) -> io::Result<()> {
    writeln!(w, "{}", POST_HEADER.join("\t"))?;
    for p in posts {
        write_post_row(&mut w, p)?;
    }
    Ok(())
}

pub(crate) fn write_post_row<W: Write>(w: &mut W, p: &Post) -> io::Result<()> {
    writeln!(
        w,
        "{}\t{}\t{}\t{}\t{}\t{}",
        p.platform,
        escape_field(&p.id),
        format_time(&p.created_at),
        escape_field(p.author.as_deref().unwrap_or("")),
        escape_field(p.parent_item.as_deref().unwrap_or("")),
        escape_field(&p.text)
    )
}

pub fn write_aggregates_tsv<W: Write>(mut w: W, rows: &[AggregateDaily]) -> io::Result<()> {
    writeln!(w, "{}", AGGREGATE_HEADER.join("\t"))?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            r.date.format("%Y-%m-%d"),
            escape_field(&r.category),
            r.posts_total,
            r.posts_matching
        )?;
    }
    Ok(())
}

/// Maps each expected column to its position, rejecting missing, repeated
/// or unknown names.
fn header_positions<const N: usize>(
    label: &str,
    header: &csv::StringRecord,
    expected: [&str; N],
) -> Result<[usize; N], IngestError> {
    let bad = |message: String| IngestError::BadHeader {
        path: label.to_string(),
        message,
    };
    let mut seen = HashSet::new();
    for name in header.iter() {
        if !seen.insert(name) {
            return Err(bad(format!("duplicate column {name:?}")));
        }
        if !expected.contains(&name) {
            return Err(bad(format!("unexpected column {name:?}")));
        }
    }
    let mut pos = [0usize; N];
    for (slot, name) in pos.iter_mut().zip(expected) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name:?}")))?;
    }
    Ok(pos)
}

fn tsv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(r)
}

fn raw_line(rec: &csv::StringRecord) -> String {
    rec.iter().collect::<Vec<_>>().join("\t")
}

/// Reads posts in the post TSV layout from any reader.
pub fn read_posts_tsv<R: Read>(reader: R, label: &str) -> Result<TsvIngest, IngestError> {
    let mut rdr = tsv_reader(reader);
    let csv_err = |source| IngestError::Csv {
        path: label.to_string(),
        source,
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(IngestError::BadHeader {
            path: label.to_string(),
            message: "missing header row".into(),
        });
    }
    let [platform_i, id_i, created_i, author_i, parent_i, text_i] = header_positions(label, &header, POST_HEADER)?;

    let mut out = TsvIngest::default();
    let mut ids: HashSet<(Platform, String)> = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let reject = |reason: String| Reject {
            line,
            reason,
            raw: raw_line(&rec),
        };
        if rec.len() != header.len() {
            out.rejects.push(reject(format!("expected {} fields, found {}", header.len(), rec.len())));
            continue;
        }
        let parsed = (|| -> Result<Post, String> {
            let platform: Platform = rec[platform_i].parse()?;
            let id = unescape_field(&rec[id_i])?;
            if id.is_empty() {
                return Err("empty id".into());
            }
            let created_at = DateTime::parse_from_rfc3339(&rec[created_i])
                .map_err(|e| format!("bad created_at {:?}: {e}", &rec[created_i]))?
                .with_timezone(&Utc);
            let opt = |s: &str| -> Result<Option<String>, String> {
                let v = unescape_field(s)?;
                Ok((!v.is_empty()).then_some(v))
            };
            Ok(Post::new(
                platform,
                id,
                created_at,
                opt(&rec[author_i])?,
                opt(&rec[parent_i])?,
                unescape_field(&rec[text_i])?,
            ))
        })();
        match parsed {
            Ok(post) => {
                if ids.insert((post.platform, post.id.clone())) {
                    out.posts.push(post);
                } else {
                    out.rejects.push(reject(format!("duplicate id {:?}", post.id)));
                }
            }
            Err(reason) => out.rejects.push(reject(reason)),
        }
    }
    Ok(out)
}

/// Loads a post TSV file; invalid rows land in `rejects` with a reason.
pub fn ingest_tsv(path: &Path) -> Result<TsvIngest, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path.display(), e))?;
    read_posts_tsv(BufReader::new(file), &path.display().to_string())
}

/// Loads daily aggregate counts; `(date, category)` must be unique.
pub fn ingest_aggregates(path: &Path) -> Result<AggregateIngest, IngestError> {
    let label = path.display().to_string();
    let file = File::open(path).map_err(|e| IngestError::io(&label, e))?;
    let mut rdr = tsv_reader(BufReader::new(file));
    let csv_err = |source| IngestError::Csv {
        path: label.clone(),
        source,
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    let [date_i, cat_i, total_i, match_i] = header_positions(&label, &header, AGGREGATE_HEADER)?;

    let mut out = AggregateIngest::default();
    let mut keys: BTreeMap<(NaiveDate, String), usize> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let reject = |reason: String| Reject {
            line,
            reason,
            raw: raw_line(&rec),
        };
        if rec.len() != header.len() {
            out.rejects.push(reject(format!("expected {} fields, found {}", header.len(), rec.len())));
            continue;
        }
        let parsed = (|| -> Result<AggregateDaily, String> {
            let date = NaiveDate::parse_from_str(&rec[date_i], "%Y-%m-%d")
                .map_err(|e| format!("bad date {:?}: {e}", &rec[date_i]))?;
            let category = unescape_field(&rec[cat_i])?;
            if category.is_empty() {
                return Err("empty category".into());
            }
            let int = |s: &str, what: &str| s.parse::<u64>().map_err(|e| format!("bad {what} {s:?}: {e}"));
            let posts_total = int(&rec[total_i], "posts_total")?;
            let posts_matching = int(&rec[match_i], "posts_matching")?;
            if posts_matching > posts_total {
                return Err(format!("posts_matching {posts_matching} exceeds posts_total {posts_total}"));
            }
            Ok(AggregateDaily {
                date,
                category,
                posts_total,
                posts_matching,
            })
        })();
        match parsed {
            Ok(row) => {
                let key = (row.date, row.category.clone());
                if let Some(&first_line) = keys.get(&key) {
                    return Err(IngestError::DuplicateAggregate {
                        path: label.clone(),
                        date: row.date,
                        category: row.category,
                        first_line,
                        line: line as usize,
                    });
                }
                keys.insert(key, line as usize);
                out.rows.push(row);
            }
            Err(reason) => out.rejects.push(reject(reason)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const HEADER: &str = "platform\tid\tcreated_at\tauthor\tparent_item\ttext\n";

    #[test]
    fn three_valid_rows() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}liveticker\t1\t2020-03-16T07:00:00Z\tu1\ti1\tAngst\nliveticker\t2\t2020-03-16T08:00:00+01:00\t\t\tWut\\tund\\nTrauer\nmicroblog\t1\t2020-03-17T00:00:00Z\tu2\t\tok\n"
        );
        let got = ingest_tsv(&write(dir.path(), "p.tsv", &body)).unwrap();
        assert_eq!(got.posts.len(), 3);
        assert!(got.rejects.is_empty());
        assert_eq!(got.posts[1].text, "Wut\tund\nTrauer");
        assert_eq!(got.posts[1].author, None);
        assert_eq!(got.posts[1].created_at, Utc.with_ymd_and_hms(2020, 3, 16, 7, 0, 0).unwrap());
    }

    #[test]
    fn bad_timestamp_is_rejected_not_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}liveticker\t1\t2020-03-16T07:00:00Z\t\t\ta\nliveticker\t2\tyesterday\t\t\tb\nliveticker\t3\t2020-03-16T07:00:00Z\t\t\tc\n"
        );
        let p = write(dir.path(), "p.tsv", &body);
        let got = ingest_tsv(&p).unwrap();
        assert_eq!(got.posts.len(), 2);
        assert_eq!(got.rejects.len(), 1);
        assert_eq!(got.rejects[0].line, 3);
        assert!(got.rejects[0].reason.contains("created_at"));

        let rej = dir.path().join("p.rejects.tsv");
        got.write_rejects(&rej).unwrap();
        let text = std::fs::read_to_string(rej).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("3\t"));
    }

    #[test]
    fn header_problems_are_hard_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = write(dir.path(), "a.tsv", "platform\tid\tcreated_at\tauthor\ttext\n");
        assert!(matches!(ingest_tsv(&missing), Err(IngestError::BadHeader { .. })));
        let dup = write(dir.path(), "b.tsv", "platform\tid\tid\tcreated_at\tauthor\tparent_item\ttext\n");
        assert!(matches!(ingest_tsv(&dup), Err(IngestError::BadHeader { .. })));
        let empty = write(dir.path(), "c.tsv", "");
        assert!(matches!(ingest_tsv(&empty), Err(IngestError::BadHeader { .. })));
    }

    #[test]
    fn column_order_is_free() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "p.tsv",
            "text\tid\tplatform\tcreated_at\tparent_item\tauthor\nhallo\tx\tstudentchat\t2020-01-01T00:00:00Z\t\tu\n",
        );
        let got = ingest_tsv(&p).unwrap();
        assert_eq!(got.posts[0].text, "hallo");
        assert_eq!(got.posts[0].author.as_deref(), Some("u"));
    }

    #[test]
    fn wrong_field_count_and_duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}liveticker\t1\t2020-03-16T07:00:00Z\t\t\ta\nliveticker\t1\t2020-03-16T07:00:00Z\t\t\ta\nliveticker\t2\t2020-03-16T07:00:00Z\t\ta\n"
        );
        let got = ingest_tsv(&write(dir.path(), "p.tsv", &body)).unwrap();
        assert_eq!(got.posts.len(), 1);
        assert_eq!(got.rejects.len(), 2);
    }

    #[test]
    fn aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.tsv",
            "date\tcategory\tposts_total\tposts_matching\n2020-03-16\tanxiety\t1000\t62\n2020-03-16\tanger\t10\t11\n",
        );
        let got = ingest_aggregates(&p).unwrap();
        assert_eq!(
            got.rows,
            vec![AggregateDaily {
                date: NaiveDate::from_ymd_opt(2020, 3, 16).unwrap(),
                category: "anxiety".into(),
                posts_total: 1000,
                posts_matching: 62,
            }]
        );
        assert_eq!(got.rejects.len(), 1);
        assert!(got.rejects[0].reason.contains("exceeds"));

        let empty = write(dir.path(), "e.tsv", "date\tcategory\tposts_total\tposts_matching\n");
        assert!(ingest_aggregates(&empty).unwrap().rows.is_empty());

        let dup = write(
            dir.path(),
            "d.tsv",
            "date\tcategory\tposts_total\tposts_matching\n2020-03-16\tanxiety\t1\t0\n2020-03-16\tanxiety\t2\t1\n",
        );
        assert!(matches!(ingest_aggregates(&dup), Err(IngestError::DuplicateAggregate { first_line: 2, line: 3, .. })));
    }

    fn post_strategy() -> impl Strategy<Value = Post> {
        (
            prop::sample::select(Platform::ALL.to_vec()),
            "[a-z0-9]{1,8}",
            0i64..2_000_000_000,
            proptest::option::of("[a-z\\\\\t]{1,6}"),
            proptest::option::of("[0-9]{1,4}"),
            "(?s).{0,40}",
        )
            .prop_map(|(pl, id, secs, author, parent, text)| {
                Post::new(pl, id, Utc.timestamp_opt(secs, 0).unwrap(), author, parent, text)
            })
    }

    proptest! {
        #[test]
        fn write_then_read_is_stable(posts in proptest::collection::vec(post_strategy(), 0..20)) {
            let mut unique = Vec::new();
            let mut seen = HashSet::new();
            for p in posts {
                if seen.insert((p.platform, p.id.clone())) {
                    unique.push(p);
                }
            }
            let mut first = Vec::new();
            write_posts_tsv(&mut first, &unique).unwrap();
            let read = read_posts_tsv(first.as_slice(), "mem").unwrap();
            prop_assert!(read.rejects.is_empty(), "{:?}", read.rejects);
            prop_assert_eq!(&read.posts, &unique);
            let mut second = Vec::new();
            write_posts_tsv(&mut second, &read.posts).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
