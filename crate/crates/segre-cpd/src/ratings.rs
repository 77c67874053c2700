//! Rating tables: parsing, one-hot tensorization, and seeded splits.
//!
//! Two input layouts are accepted: the double-colon format
//! `user::item::rating::timestamp` (one rating per line, timestamp
//! optional) and comma-separated values with a header line
//! (`user,item,rating[,timestamp]`). Ratings must be integers in 1..=5.
//!
//! User and item ids are remapped to dense 0-based indices in order of
//! first appearance; the id tables are kept so reports can name the
//! original ids. Splits share the parent table's id maps, so tensors built
//! from any split have the same shape.

use crate::error::{Error, Result};
use crate::tensor::SparseObservations;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingRow {
    /// Dense 0-based user index.
    pub user: usize,
    /// Dense 0-based item index.
    pub item: usize,
    /// Stars, 1..=5.
    pub rating: u8,
}

#[derive(Debug, Clone)]
pub struct RatingsTable {
    rows: Vec<RatingRow>,
    /// Dense index -> original id.
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

impl RatingsTable {
    /// Builds a table from raw `(user id, item id, rating)` triples,
    /// remapping ids in order of first appearance.
    pub fn from_raw(raw: &[(u64, u64, u8)]) -> Result<Self> {
        let mut user_map: HashMap<u64, usize> = HashMap::new();
        let mut item_map: HashMap<u64, usize> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut rows = Vec::with_capacity(raw.len());
        let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
        for &(u, i, r) in raw {
            if !(1..=5).contains(&r) {
                return Err(Error::invalid(format!("rating {r} outside 1..=5")));
            }
            let user = *user_map.entry(u).or_insert_with(|| {
                user_ids.push(u);
                user_ids.len() - 1
            });
            let item = *item_map.entry(i).or_insert_with(|| {
                item_ids.push(i);
                item_ids.len() - 1
            });
            if seen.insert((user, item), ()).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate rating for user {u}, item {i}"
                )));
            }
            rows.push(RatingRow {
                user,
                item,
                rating: r,
            });
        }
        Ok(RatingsTable {
            rows,
            user_ids,
            item_ids,
        })
    }

    fn with_same_ids(&self, rows: Vec<RatingRow>) -> RatingsTable {
        RatingsTable {
            rows,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
        }
    }

    pub fn rows(&self) -> &[RatingRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    /// Tensor shape of the one-hot encoding: users x items x 5.
    pub fn tensor_shape(&self) -> Vec<usize> {
        vec![self.n_users(), self.n_items(), 5]
    }
}

fn parse_rating_token(token: &str, lineno: usize) -> Result<u8> {
    // Accept "4" and "4.0" spellings, but the value must be an integer in
    // 1..=5.
    let value: f64 = token
        .trim()
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad rating `{token}`")))?;
    let rounded = value.round();
    if (value - rounded).abs() > 1e-9 || !(1.0..=5.0).contains(&rounded) {
        return Err(Error::parse(
            lineno,
            format!("rating {token} is not an integer in 1..=5"),
        ));
    }
    Ok(rounded as u8)
}

fn parse_id(token: &str, what: &str, lineno: usize) -> Result<u64> {
    token
        .trim()
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad {what} id `{token}`")))
}

/// Parses rating text in either supported layout.
pub fn parse_ratings_text(text: &str) -> Result<RatingsTable> {
    let mut raw: Vec<(u64, u64, u8)> = Vec::new();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let (_, first) = match lines.peek() {
        Some(&(n, l)) => (n, l),
        None => return RatingsTable::from_raw(&raw),
    };
    if first.contains("::") {
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split("::").collect();
            if fields.len() < 3 {
                return Err(Error::parse(
                    lineno,
                    "expected user::item::rating[::timestamp]",
                ));
            }
            raw.push((
                parse_id(fields[0], "user", lineno)?,
                parse_id(fields[1], "item", lineno)?,
                parse_rating_token(fields[2], lineno)?,
            ));
        }
    } else {
        // CSV with a mandatory header line.
        let (_, _header) = lines.next().expect("peeked");
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 3 {
                return Err(Error::parse(lineno, "expected user,item,rating[,...]"));
            }
            raw.push((
                parse_id(fields[0], "user", lineno)?,
                parse_id(fields[1], "item", lineno)?,
                parse_rating_token(fields[2], lineno)?,
            ));
        }
    }
    RatingsTable::from_raw(&raw)
}

pub fn parse_ratings(path: impl AsRef<Path>) -> Result<RatingsTable> {
    parse_ratings_text(&fs::read_to_string(path)?)
}

/// One-hot encoding: each rating of `s` stars contributes five observed
/// entries of the users x items x 5 tensor, a 1 at slice `s` and 0 at the
/// other four slices. Unrated pairs contribute no observations.
pub fn one_hot_tensorize(table: &RatingsTable) -> Result<SparseObservations> {
    let shape = table.tensor_shape();
    let mut entries = Vec::with_capacity(table.len() * 5);
    for row in table.rows() {
        for star in 0..5usize {
            let value = if star + 1 == row.rating as usize { 1.0 } else { 0.0 };
            entries.push((vec![row.user, row.item, star], value));
        }
    }
    SparseObservations::new(shape, entries)
}

/// Random split by rating pair: `fraction` of the rows (rounded) go to the
/// first table. Deterministic per seed; both halves keep the parent id
/// maps, so their one-hot tensors share the parent's shape.
pub fn split_train_test(
    table: &RatingsTable,
    fraction: f64,
    seed: u64,
) -> Result<(RatingsTable, RatingsTable)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("split fraction must lie in (0, 1)"));
    }
    let n = table.len();
    let n_train = ((fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut train_rows = Vec::with_capacity(n_train);
    let mut test_rows = Vec::with_capacity(n - n_train);
    for (pos, &i) in order.iter().enumerate() {
        if pos < n_train {
            train_rows.push(table.rows[i]);
        } else {
            test_rows.push(table.rows[i]);
        }
    }
    // Keep the original row order within each half so output files do not
    // depend on the shuffle order.
    train_rows.sort_by_key(|r| (r.user, r.item));
    test_rows.sort_by_key(|r| (r.user, r.item));
    Ok((
        table.with_same_ids(train_rows),
        table.with_same_ids(test_rows),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIXTURE: &str = "1::10::5::978300760\n1::11::3::978302109\n2::10::1::978301968\n";

    #[test]
    fn parse_dat_fixture() {
        let table = parse_ratings_text(FIXTURE).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.n_users(), 2);
        assert_eq!(table.n_items(), 2);
        assert_eq!(table.rows()[0], RatingRow { user: 0, item: 0, rating: 5 });
        assert_eq!(table.user_ids(), &[1, 2]);
        assert_eq!(table.item_ids(), &[10, 11]);
    }

    #[test]
    fn parse_csv_with_header() {
        let text = "userId,movieId,rating,timestamp\n7,3,4,99\n8,3,2,100\n";
        let table = parse_ratings_text(text).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.rows()[0].rating, 4);
        // "4.0" style ratings also parse.
        let text = "u,i,r\n7,3,4.0\n";
        assert_eq!(parse_ratings_text(text).unwrap().rows()[0].rating, 4);
    }

    #[test]
    fn parse_rejects_bad_ratings_and_duplicates() {
        let err = parse_ratings_text("1::10::6::0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_ratings_text("1::10::3.5::0\n").is_err());
        assert!(parse_ratings_text("1::10::3::0\n1::10::4::0\n").is_err());
    }

    #[test]
    fn one_hot_examples() {
        let table = parse_ratings_text("1::1::3::0\n").unwrap();
        let obs = one_hot_tensorize(&table).unwrap();
        assert_eq!(obs.shape(), &[1, 1, 5]);
        assert_eq!(obs.len(), 5);
        for (idx, v) in obs.iter() {
            let expect = if idx[2] == 2 { 1.0 } else { 0.0 };
            assert_eq!(v, expect);
        }

        let empty = RatingsTable::from_raw(&[]).unwrap();
        assert!(one_hot_tensorize(&empty).unwrap().is_empty());
        let two = parse_ratings_text("1::1::2::0\n1::2::5::0\n").unwrap();
        assert_eq!(one_hot_tensorize(&two).unwrap().len(), 10);
    }

    #[test]
    fn one_hot_groups_back_to_table() {
        let table = parse_ratings_text(FIXTURE).unwrap();
        let obs = one_hot_tensorize(&table).unwrap();
        // Group entries by (user, item) and read off the argmax star.
        let mut recovered: Vec<(usize, usize, u8)> = Vec::new();
        let mut by_pair: std::collections::HashMap<(usize, usize), [f64; 5]> =
            std::collections::HashMap::new();
        for (idx, v) in obs.iter() {
            by_pair.entry((idx[0], idx[1])).or_insert([0.0; 5])[idx[2]] = v;
        }
        for (&(u, i), scores) in &by_pair {
            let star = scores.iter().position(|&s| s == 1.0).unwrap() + 1;
            recovered.push((u, i, star as u8));
        }
        recovered.sort();
        let mut expected: Vec<(usize, usize, u8)> = table
            .rows()
            .iter()
            .map(|r| (r.user, r.item, r.rating))
            .collect();
        expected.sort();
        assert_eq!(recovered, expected);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let raw: Vec<(u64, u64, u8)> = (0..10).map(|i| (i / 5, 100 + i, 3)).collect();
        let table = RatingsTable::from_raw(&raw).unwrap();
        let (train, test) = split_train_test(&table, 0.8, 7).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        // Same seed, same split.
        let (train2, test2) = split_train_test(&table, 0.8, 7).unwrap();
        assert_eq!(train.rows(), train2.rows());
        assert_eq!(test.rows(), test2.rows());
        // Id maps are shared.
        assert_eq!(train.n_users(), table.n_users());
        assert_eq!(test.n_items(), table.n_items());
    }

    proptest! {
        #[test]
        fn split_partitions_the_rows(n in 2usize..60, seed in 0u64..1000) {
            let raw: Vec<(u64, u64, u8)> = (0..n as u64)
                .map(|i| (i % 7, i, (i % 5 + 1) as u8))
                .collect();
            let table = RatingsTable::from_raw(&raw).unwrap();
            let (train, test) = split_train_test(&table, 0.8, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            let expected = (0.8 * n as f64).round() as usize;
            prop_assert!(train.len().abs_diff(expected) <= 1);
            let mut all: Vec<RatingRow> = train
                .rows()
                .iter()
                .chain(test.rows())
                .copied()
                .collect();
            all.sort_by_key(|r| (r.user, r.item));
            let mut orig: Vec<RatingRow> = table.rows().to_vec();
            orig.sort_by_key(|r| (r.user, r.item));
            prop_assert_eq!(all, orig);
        }
    }
}
