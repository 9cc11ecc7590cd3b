use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{InteractionLog, RawInteraction};
use crate::error::{Error, Result};

const CSV_HEADER: &str = "userId,movieId,rating,timestamp";

/// Default minimum interactions per user.
pub const DEFAULT_MIN_INTERACTIONS: usize = 5;

/// Reads a MovieLens ratings file (`::`-separated `.dat` or the headed `.csv`).
pub fn parse_movielens(path: &Path, min_interactions: usize) -> Result<InteractionLog> {
    let text = std::fs::read_to_string(path)?;
    parse_movielens_str(&text, &path.display().to_string(), min_interactions)
}

/// Parses ratings text. Per-user lists come back sorted by timestamp (ties in
/// file order), users below `min_interactions` are dropped, and item ids are
/// remapped to `1..=item_count` in ascending order of original id.
pub fn parse_movielens_str(
    text: &str,
    source: &str,
    min_interactions: usize,
) -> Result<InteractionLog> {
    let mut by_user: BTreeMap<u32, Vec<RawInteraction>> = BTreeMap::new();
    let mut csv = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 && line == CSV_HEADER {
            csv = true;
            continue;
        }
        let fields: Vec<&str> = if csv {
            line.split(',').collect()
        } else {
            line.split("::").collect()
        };
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            msg,
        };
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let user_id: u32 = fields[0]
            .parse()
            .map_err(|_| err(format!("bad user id `{}`", fields[0])))?;
        let item_id: u32 = fields[1]
            .parse()
            .map_err(|_| err(format!("bad item id `{}`", fields[1])))?;
        let rating: f32 = fields[2]
            .parse()
            .map_err(|_| err(format!("bad rating `{}`", fields[2])))?;
        let timestamp: i64 = fields[3]
            .parse()
            .map_err(|_| err(format!("bad timestamp `{}`", fields[3])))?;
        if user_id == 0 || item_id == 0 {
            return Err(err("ids must be >= 1".into()));
        }
        if timestamp < 0 {
            return Err(err("negative timestamp".into()));
        }
        by_user.entry(user_id).or_default().push(RawInteraction {
            user_id,
            item_id,
            rating,
            timestamp,
        });
    }

    let mut users: Vec<Vec<RawInteraction>> = by_user
        .into_values()
        .filter(|events| events.len() >= min_interactions)
        .collect();
    if users.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut item_ids: Vec<u32> = users.iter().flatten().map(|e| e.item_id).collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let dense: BTreeMap<u32, u32> = item_ids
        .iter()
        .enumerate()
        .map(|(i, &orig)| (orig, i as u32 + 1))
        .collect();
    for events in &mut users {
        // stable sort keeps file order for equal timestamps
        events.sort_by_key(|e| e.timestamp);
        for e in events.iter_mut() {
            e.item_id = dense[&e.item_id];
        }
    }
    Ok(InteractionLog {
        users,
        item_count: item_ids.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dat_format_sorted_and_remapped() {
        let text = "1::50::5::300\n1::10::3::100\n1::70::4::200\n2::10::1::5\n2::99::2::6\n";
        let log = parse_movielens_str(text, "t", 2).unwrap();
        assert_eq!(log.users.len(), 2);
        assert_eq!(log.item_count, 4);
        let items: Vec<u32> = log.users[0].iter().map(|e| e.item_id).collect();
        // originals 10, 70, 50 -> dense 1, 3, 2
        assert_eq!(items, [1, 3, 2]);
        assert_eq!(
            log.users[1].iter().map(|e| e.item_id).collect::<Vec<_>>(),
            [1, 4]
        );
    }

    #[test]
    fn csv_format_with_header() {
        let text = "userId,movieId,rating,timestamp\n3,7,3.5,10\n3,8,4.0,11\n";
        let log = parse_movielens_str(text, "t", 1).unwrap();
        assert_eq!(log.users[0].len(), 2);
        assert_eq!(log.users[0][0].rating, 3.5);
    }

    #[test]
    fn threshold_filter_can_empty_the_dataset() {
        let text = "1::1::5::1\n1::2::5::2\n1::3::5::3\n";
        assert!(matches!(
            parse_movielens_str(text, "t", 5),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn equal_timestamps_keep_file_order() {
        let text = "1::30::5::7\n1::20::5::7\n1::10::5::7\n";
        let log = parse_movielens_str(text, "t", 1).unwrap();
        let items: Vec<u32> = log.users[0].iter().map(|e| e.item_id).collect();
        assert_eq!(items, [3, 2, 1]);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = "1::1::5::1\n1::oops::5::2\n";
        match parse_movielens_str(text, "ratings.dat", 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
