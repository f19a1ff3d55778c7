//! MovieLens `u.data` reader: `user \t item \t rating \t timestamp`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::Rating;
use crate::{Error, Result};

pub fn load_ratings(path: impl AsRef<Path>) -> Result<Vec<Rating>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(&text)
}

pub fn parse_ratings(text: &str) -> Result<Vec<Rating>> {
    let mut out = Vec::new();
    let mut pairs = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let num = |k: usize, name: &str| -> Result<i64> {
            fields[k].trim().parse::<i64>().map_err(|_| Error::Parse {
                line,
                reason: format!("invalid {name} {:?}", fields[k]),
            })
        };
        let user = num(0, "user id")?;
        let item = num(1, "item id")?;
        let value = num(2, "rating")?;
        let timestamp = num(3, "timestamp")?;
        let id = |v: i64, name: &str| -> Result<u32> {
            u32::try_from(v).map_err(|_| Error::Parse {
                line,
                reason: format!("{name} {v} out of range"),
            })
        };
        let (user_id, item_id) = (id(user, "user id")?, id(item, "item id")?);
        if !(1..=5).contains(&value) {
            return Err(Error::RatingOutOfRange { line, value });
        }
        if !pairs.insert((user_id, item_id)) {
            return Err(Error::DuplicateRating {
                line,
                user: user_id,
                item: item_id,
            });
        }
        out.push(Rating {
            user_id,
            item_id,
            value: value as u8,
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn write_ratings(path: impl AsRef<Path>, ratings: &[Rating]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::with_capacity(ratings.len() * 24);
    for r in ratings {
        let _ = writeln!(text, "{}\t{}\t{}\t{}", r.user_id, r.item_id, r.value, r.timestamp);
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_line() {
        let r = parse_ratings("196\t242\t3\t881250949\n").unwrap();
        assert_eq!(
            r,
            vec![Rating {
                user_id: 196,
                item_id: 242,
                value: 3,
                timestamp: 881250949
            }]
        );
    }

    #[test]
    fn rejects_out_of_range_rating() {
        let err = parse_ratings("1\t1\t6\t0\n").unwrap_err();
        assert!(err.to_string().contains("rating out of range"), "{err}");
    }

    #[test]
    fn preserves_file_order() {
        let r = parse_ratings("3\t1\t5\t10\n1\t2\t1\t11\n2\t9\t4\t12\n").unwrap();
        let users: Vec<u32> = r.iter().map(|x| x.user_id).collect();
        assert_eq!(users, vec![3, 1, 2]);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse_ratings("1\t1\t3\t0\n1\tx\t3\t0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(
            parse_ratings("1 1 3 0\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_ratings(""), Err(Error::EmptyDataset)));
        assert!(matches!(parse_ratings("\n\n"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn duplicate_pair_rejected() {
        assert!(matches!(
            parse_ratings("1\t1\t3\t0\n1\t1\t4\t5\n"),
            Err(Error::DuplicateRating { line: 2, .. })
        ));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.data");
        let ratings = parse_ratings("196\t242\t3\t881250949\n186\t302\t3\t891717742\n").unwrap();
        write_ratings(&path, &ratings).unwrap();
        assert_eq!(load_ratings(&path).unwrap(), ratings);
        assert!(matches!(
            load_ratings(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
