//! Implicit-feedback interaction storage.
//!
//! The binary user×item matrix is kept row-compressed. The degree-normalized
//! adjacency keeps both a CSR view (user rows) and a CSC mirror (item
//! columns) so the item Gram filter `R̃ᵀ R̃ v` can be applied as two sparse
//! matvecs without ever forming the item×item matrix.

use std::borrow::Cow;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Binary interaction matrix, one sorted item list per user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    rows: Vec<Vec<u32>>,
}

impl InteractionMatrix {
    /// Build from per-user item lists. Lists are sorted and deduplicated.
    pub fn from_rows(n_items: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        let n_users = rows.len();
        Self::with_dims(n_users, n_items, rows)
    }

    /// Build with explicit dimensions; `rows` may be shorter than `n_users`.
    pub fn with_dims(n_users: usize, n_items: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        let m = Self::build(n_users, n_items, rows)?;
        if m.nnz() == 0 {
            return Err(Error::Empty);
        }
        Ok(m)
    }

    /// Like [`Self::with_dims`] but accepts a matrix with no interactions,
    /// as a validation split of a tiny dataset can be.
    pub(crate) fn with_dims_allow_empty(
        n_users: usize,
        n_items: usize,
        rows: Vec<Vec<u32>>,
    ) -> Self {
        Self::build(n_users, n_items, rows).expect("rows derived from a valid matrix")
    }

    fn build(n_users: usize, n_items: usize, mut rows: Vec<Vec<u32>>) -> Result<Self> {
        if rows.len() > n_users {
            return Err(Error::OutOfBounds {
                kind: "user",
                id: rows.len() - 1,
                dim: n_users,
            });
        }
        rows.resize(n_users, Vec::new());
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last as usize >= n_items {
                    return Err(Error::OutOfBounds {
                        kind: "item",
                        id: last as usize,
                        dim: n_items,
                    });
                }
            }
        }
        Ok(InteractionMatrix {
            n_users,
            n_items,
            rows,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.rows[user].binary_search(&item).is_ok()
    }

    /// Per-item interaction counts.
    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_items];
        for row in &self.rows {
            for &i in row {
                deg[i as usize] += 1;
            }
        }
        deg
    }

    /// Dense binary vector `r_u`.
    pub fn dense_row(&self, user: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.n_items];
        for &i in &self.rows[user] {
            r[i as usize] = 1.0;
        }
        r
    }

    /// Entrywise union of two matrices with identical dimensions.
    pub fn union(&self, other: &InteractionMatrix) -> Result<InteractionMatrix> {
        if self.n_users != other.n_users {
            return Err(Error::DimensionMismatch {
                expected: self.n_users,
                actual: other.n_users,
            });
        }
        if self.n_items != other.n_items {
            return Err(Error::DimensionMismatch {
                expected: self.n_items,
                actual: other.n_items,
            });
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        InteractionMatrix::with_dims(self.n_users, self.n_items, rows)
    }

    /// Write in the one-line-per-user text format. Users without items are
    /// written as a bare user id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (u, row) in self.rows.iter().enumerate() {
            write!(out, "{u}").expect("write to Vec");
            for i in row {
                write!(out, " {i}").expect("write to Vec");
            }
            out.push(b'\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Parse a whitespace-separated interaction file: `user item item ...`.
///
/// Dimensions default to `max id + 1`. A declared dimension smaller than an
/// id present in the file is a bounds error.
pub fn load_interactions(
    path: &Path,
    n_users: Option<usize>,
    n_items: Option<usize>,
) -> Result<InteractionMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, path, n_users, n_items)
}

pub(crate) fn parse_interactions(
    text: &str,
    path: &Path,
    n_users: Option<usize>,
    n_items: Option<usize>,
) -> Result<InteractionMatrix> {
    let mut rows: Vec<Vec<u32>> = Vec::new();
    let mut max_item: Option<u32> = None;
    for (lineno, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };
        let parse = |tok: &str| -> Result<u32> {
            tok.parse::<u32>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                token: tok.to_string(),
            })
        };
        let user = parse(first)? as usize;
        if let Some(dim) = n_users {
            if user >= dim {
                return Err(Error::OutOfBounds {
                    kind: "user",
                    id: user,
                    dim,
                });
            }
        }
        if rows.len() <= user {
            rows.resize(user + 1, Vec::new());
        }
        for tok in tokens {
            let item = parse(tok)?;
            if let Some(dim) = n_items {
                if item as usize >= dim {
                    return Err(Error::OutOfBounds {
                        kind: "item",
                        id: item as usize,
                        dim,
                    });
                }
            }
            max_item = Some(max_item.map_or(item, |m| m.max(item)));
            rows[user].push(item);
        }
    }
    let Some(max_item) = max_item else {
        return Err(Error::Empty);
    };
    let n_users = n_users.unwrap_or(rows.len());
    let n_items = n_items.unwrap_or(max_item as usize + 1);
    InteractionMatrix::with_dims(n_users, n_items, rows)
}

/// Degree-normalized adjacency `D_U^{-1/2} R D_I^{-1/2}` with a CSC mirror.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    n_users: usize,
    n_items: usize,
    row_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    row_val: Vec<f64>,
    col_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    col_val: Vec<f64>,
}

/// Normalize `R`. Zero-degree rows and columns simply have no entries.
pub fn normalize(r: &InteractionMatrix) -> NormalizedAdjacency {
    let item_deg = r.item_degrees();
    let nnz = r.nnz();

    let mut row_ptr = Vec::with_capacity(r.n_users + 1);
    let mut row_idx = Vec::with_capacity(nnz);
    let mut row_val = Vec::with_capacity(nnz);
    row_ptr.push(0);
    for row in &r.rows {
        let du = row.len() as f64;
        for &i in row {
            row_idx.push(i);
            row_val.push(1.0 / (du * item_deg[i as usize] as f64).sqrt());
        }
        row_ptr.push(row_idx.len());
    }

    let mut col_ptr = vec![0usize; r.n_items + 1];
    for &i in &row_idx {
        col_ptr[i as usize + 1] += 1;
    }
    for i in 0..r.n_items {
        col_ptr[i + 1] += col_ptr[i];
    }
    let mut fill = col_ptr.clone();
    let mut col_idx = vec![0u32; nnz];
    let mut col_val = vec![0.0; nnz];
    for u in 0..r.n_users {
        for k in row_ptr[u]..row_ptr[u + 1] {
            let i = row_idx[k] as usize;
            col_idx[fill[i]] = u as u32;
            col_val[fill[i]] = row_val[k];
            fill[i] += 1;
        }
    }

    NormalizedAdjacency {
        n_users: r.n_users,
        n_items: r.n_items,
        row_ptr,
        row_idx,
        row_val,
        col_ptr,
        col_idx,
        col_val,
    }
}

impl NormalizedAdjacency {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// `(item, value)` pairs of one user row.
    pub fn row_entries(&self, user: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[user]..self.row_ptr[user + 1];
        self.row_idx[span.clone()]
            .iter()
            .zip(&self.row_val[span])
            .map(|(&i, &v)| (i as usize, v))
    }

    /// Row-major dense copy, for small oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_items]; self.n_users];
        for (u, row) in dense.iter_mut().enumerate() {
            for (i, v) in self.row_entries(u) {
                row[i] = v;
            }
        }
        dense
    }

    /// `R̃ v` over users.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_items, v.len())?;
        Ok((0..self.n_users)
            .map(|u| {
                (self.row_ptr[u]..self.row_ptr[u + 1])
                    .map(|k| self.row_val[k] * v[self.row_idx[k] as usize])
                    .sum()
            })
            .collect())
    }

    /// `R̃ᵀ y` over items, gathered column-wise from the CSC mirror.
    pub fn transpose_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_users, y.len())?;
        Ok((0..self.n_items)
            .map(|i| {
                (self.col_ptr[i]..self.col_ptr[i + 1])
                    .map(|k| self.col_val[k] * y[self.col_idx[k] as usize])
                    .sum()
            })
            .collect())
    }

    /// Item Gram filter `R̃ᵀ (R̃ v)`.
    pub fn gram_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let y = self.matvec(v)?;
        self.transpose_matvec(&y)
    }

    /// `G̃ r` for a binary item set, touching only the users that share an
    /// item with the set and the items those users interacted with.
    pub fn gram_of_items(&self, items: &[u32]) -> Vec<f64> {
        let mut user_acc = vec![0.0; self.n_users];
        let mut touched = Vec::new();
        for &i in items {
            let i = i as usize;
            for k in self.col_ptr[i]..self.col_ptr[i + 1] {
                let u = self.col_idx[k] as usize;
                if user_acc[u] == 0.0 {
                    touched.push(u);
                }
                user_acc[u] += self.col_val[k];
            }
        }
        touched.sort_unstable();
        let mut out = vec![0.0; self.n_items];
        for u in touched {
            let y = user_acc[u];
            for k in self.row_ptr[u]..self.row_ptr[u + 1] {
                out[self.row_idx[k] as usize] += self.row_val[k] * y;
            }
        }
        out
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Per-item decay slowdown `c_u = γ · G̃ r_u` for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayCoefficients {
    pub user: usize,
    pub coeffs: Vec<f64>,
}

/// Compute `γ · G̃ r_u` where `r_u` is the user's row of `history`.
pub fn decay_coefficients(
    adj: &NormalizedAdjacency,
    history: &InteractionMatrix,
    user: usize,
    gamma: f64,
) -> Result<DecayCoefficients> {
    if user >= history.n_users() {
        return Err(Error::OutOfBounds {
            kind: "user",
            id: user,
            dim: history.n_users(),
        });
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("gamma must be >= 0, got {gamma}")));
    }
    check_len(adj.n_items(), history.n_items())?;
    let coeffs = if gamma == 0.0 {
        vec![0.0; adj.n_items()]
    } else {
        let mut g = adj.gram_of_items(history.row(user));
        g.iter_mut().for_each(|x| *x *= gamma);
        g
    };
    Ok(DecayCoefficients { user, coeffs })
}

/// Default cache budget for decay coefficients: 4 GiB.
pub const DEFAULT_CACHE_BYTES: usize = 4 << 30;

/// Lazily filled per-user cache of decay coefficients.
///
/// When `n_users · n_items · 8` exceeds the byte budget nothing is cached and
/// coefficients are recomputed on each request.
pub struct DecayCache {
    adj: NormalizedAdjacency,
    history: InteractionMatrix,
    gamma: f64,
    slots: Option<Vec<OnceLock<Vec<f64>>>>,
}

impl DecayCache {
    pub fn new(history: InteractionMatrix, gamma: f64, budget_bytes: usize) -> Result<Self> {
        if !(gamma >= 0.0) {
            return Err(Error::Domain(format!("gamma must be >= 0, got {gamma}")));
        }
        let adj = normalize(&history);
        let bytes = history
            .n_users()
            .saturating_mul(history.n_items())
            .saturating_mul(8);
        let slots = (bytes <= budget_bytes)
            .then(|| (0..history.n_users()).map(|_| OnceLock::new()).collect());
        Ok(DecayCache {
            adj,
            history,
            gamma,
            slots,
        })
    }

    pub fn is_caching(&self) -> bool {
        self.slots.is_some()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn history(&self) -> &InteractionMatrix {
        &self.history
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adj
    }

    pub fn get(&self, user: usize) -> Result<Cow<'_, [f64]>> {
        if user >= self.history.n_users() {
            return Err(Error::OutOfBounds {
                kind: "user",
                id: user,
                dim: self.history.n_users(),
            });
        }
        let compute = || {
            decay_coefficients(&self.adj, &self.history, user, self.gamma)
                .expect("user and gamma validated")
                .coeffs
        };
        Ok(match &self.slots {
            Some(slots) => Cow::Borrowed(slots[user].get_or_init(compute).as_slice()),
            None => Cow::Owned(compute()),
        })
    }
}

/// Per-user random holdout of `⌊fraction · deg(u)⌋` items.
pub fn split_validation(
    r: &InteractionMatrix,
    fraction: f64,
    seed: u64,
) -> Result<(InteractionMatrix, InteractionMatrix)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut train = Vec::with_capacity(r.n_users);
    let mut valid = Vec::with_capacity(r.n_users);
    for (u, row) in r.rows.iter().enumerate() {
        let n_hold = (fraction * row.len() as f64).floor() as usize;
        let mut items = row.clone();
        if n_hold > 0 {
            let mut rng = rng::stream(seed, Purpose::Split, u as u64, 0);
            items.shuffle(&mut rng);
        }
        let mut held: Vec<u32> = items.drain(..n_hold).collect();
        held.sort_unstable();
        items.sort_unstable();
        train.push(items);
        valid.push(held);
    }
    Ok((
        InteractionMatrix::with_dims_allow_empty(r.n_users, r.n_items, train),
        InteractionMatrix::with_dims_allow_empty(r.n_users, r.n_items, valid),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(text: &str) -> Result<InteractionMatrix> {
        parse_interactions(text, &PathBuf::from("mem"), None, None)
    }

    fn dense_gram(adj: &NormalizedAdjacency, v: &[f64]) -> Vec<f64> {
        let d = adj.to_dense();
        let n = adj.n_items();
        let mut g = vec![vec![0.0; n]; n];
        for row in &d {
            for i in 0..n {
                for j in 0..n {
                    g[i][j] += row[i] * row[j];
                }
            }
        }
        g.iter()
            .map(|gi| gi.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn random_matrix(seed: u64, users: usize, items: usize, density: f64) -> InteractionMatrix {
        use rand::Rng;
        let mut rng = rng::stream(seed, Purpose::Verify, 0, 0);
        loop {
            let rows: Vec<Vec<u32>> = (0..users)
                .map(|_| {
                    (0..items as u32)
                        .filter(|_| rng.random::<f64>() < density)
                        .collect()
                })
                .collect();
            if let Ok(m) = InteractionMatrix::from_rows(items, rows) {
                return m;
            }
        }
    }

    #[test]
    fn load_infers_dims() {
        let m = parse("0 1 2\n1 2\n").unwrap();
        assert_eq!((m.n_users(), m.n_items(), m.nnz()), (2, 3, 3));
    }

    #[test]
    fn load_dedups() {
        let m = parse("0 5 5").unwrap();
        assert_eq!(m.row(0), &[5]);
    }

    #[test]
    fn load_empty_is_error() {
        assert!(matches!(parse(""), Err(Error::Empty)));
        assert!(matches!(parse("0\n1\n"), Err(Error::Empty)));
    }

    #[test]
    fn load_reports_line_number() {
        match parse("0 1\n1 x2\n") {
            Err(Error::Parse { line, token, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(token, "x2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_bounds_error() {
        let r = parse_interactions("0 4", &PathBuf::from("mem"), None, Some(4));
        assert!(matches!(
            r,
            Err(Error::OutOfBounds {
                kind: "item",
                id: 4,
                dim: 4
            })
        ));
        let r = parse_interactions("3 1", &PathBuf::from("mem"), Some(2), None);
        assert!(matches!(r, Err(Error::OutOfBounds { kind: "user", .. })));
    }

    #[test]
    fn normalize_values() {
        // user 0 has 4 items, item 0 has 9 users.
        let mut rows = vec![vec![0, 1, 2, 3]];
        for _ in 0..8 {
            rows.push(vec![0]);
        }
        let m = InteractionMatrix::from_rows(4, rows).unwrap();
        let adj = normalize(&m);
        let (i, v) = adj.row_entries(0).next().unwrap();
        assert_eq!(i, 0);
        assert!((v - 1.0 / 6.0).abs() < 1e-15);

        let one = InteractionMatrix::from_rows(1, vec![vec![0]]).unwrap();
        assert_eq!(normalize(&one).row_entries(0).next().unwrap().1, 1.0);

        let full = InteractionMatrix::from_rows(2, vec![vec![0, 1], vec![0, 1]]).unwrap();
        let adj = normalize(&full);
        assert!(adj.to_dense().iter().flatten().all(|&x| x == 0.5));
    }

    #[test]
    fn gram_hand_example() {
        let full = InteractionMatrix::from_rows(2, vec![vec![0, 1], vec![0, 1]]).unwrap();
        let adj = normalize(&full);
        assert_eq!(adj.gram_matvec(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let g = adj.gram_matvec(&[1.0, 0.0]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        assert!(matches!(
            adj.gram_matvec(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn gram_matches_dense_random_5x7() {
        let m = random_matrix(11, 5, 7, 0.4);
        let adj = normalize(&m);
        let v: Vec<f64> = (0..7).map(|i| (i as f64 * 0.37).sin()).collect();
        let fast = adj.gram_matvec(&v).unwrap();
        let slow = dense_gram(&adj, &v);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn decay_coefficients_cases() {
        let m = random_matrix(5, 5, 7, 0.4);
        let adj = normalize(&m);
        let zero = decay_coefficients(&adj, &m, 0, 0.0).unwrap();
        assert!(zero.coeffs.iter().all(|&c| c == 0.0));

        for u in 0..5 {
            let c = decay_coefficients(&adj, &m, u, 1.7).unwrap();
            let expected = dense_gram(&adj, &m.dense_row(u));
            for (a, b) in c.coeffs.iter().zip(&expected) {
                assert!((a - 1.7 * b).abs() <= 1e-12);
            }
        }

        let rows = vec![vec![0, 1], vec![]];
        let with_empty = InteractionMatrix::from_rows(3, rows).unwrap();
        let adj = normalize(&with_empty);
        let c = decay_coefficients(&adj, &with_empty, 1, 1.0).unwrap();
        assert!(c.coeffs.iter().all(|&x| x == 0.0));
        assert!(decay_coefficients(&adj, &with_empty, 2, 1.0).is_err());
        assert!(decay_coefficients(&adj, &with_empty, 0, -1.0).is_err());
    }

    #[test]
    fn decay_zero_outside_neighborhood() {
        // Two disconnected components: user 0 -> items {0,1}, user 1 -> item {2}.
        let m = InteractionMatrix::from_rows(3, vec![vec![0, 1], vec![2]]).unwrap();
        let adj = normalize(&m);
        let c = decay_coefficients(&adj, &m, 0, 1.0).unwrap();
        assert!(c.coeffs[0] > 0.0 && c.coeffs[1] > 0.0);
        assert_eq!(c.coeffs[2], 0.0);
    }

    #[test]
    fn cache_with_and_without_budget() {
        let m = random_matrix(2, 6, 9, 0.3);
        let cached = DecayCache::new(m.clone(), 1.0, DEFAULT_CACHE_BYTES).unwrap();
        let uncached = DecayCache::new(m, 1.0, 0).unwrap();
        assert!(cached.is_caching());
        assert!(!uncached.is_caching());
        for u in 0..6 {
            assert_eq!(cached.get(u).unwrap(), uncached.get(u).unwrap());
            assert!(matches!(cached.get(u).unwrap(), Cow::Borrowed(_)));
        }
        assert!(cached.get(6).is_err());
    }

    #[test]
    fn split_floor_rule() {
        let m = InteractionMatrix::from_rows(4, vec![vec![0, 1, 2], vec![0, 1, 2, 3]]).unwrap();
        let (train, valid) = split_validation(&m, 0.1, 3).unwrap();
        assert_eq!(valid.row(0).len(), 0);
        assert_eq!(train.row(0), m.row(0));

        let (train, valid) = split_validation(&m, 0.5, 3).unwrap();
        assert_eq!(valid.row(1).len(), 2);
        assert!(valid.row(1).iter().all(|i| !train.contains(1, *i)));
    }

    #[test]
    fn split_deterministic() {
        let m = random_matrix(9, 20, 30, 0.3);
        assert_eq!(
            split_validation(&m, 0.2, 42).unwrap(),
            split_validation(&m, 0.2, 42).unwrap()
        );
        assert!(split_validation(&m, 0.0, 1).is_err());
        assert!(split_validation(&m, 1.0, 1).is_err());
    }

    #[test]
    fn split_partition_over_seeds() {
        let m = random_matrix(4, 15, 25, 0.35);
        for seed in 0..100 {
            let (train, valid) = split_validation(&m, 0.3, seed).unwrap();
            for u in 0..m.n_users() {
                assert!(valid.row(u).iter().all(|i| !train.contains(u, *i)));
                let mut joined: Vec<u32> =
                    train.row(u).iter().chain(valid.row(u)).copied().collect();
                joined.sort_unstable();
                assert_eq!(joined, m.row(u));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn gram_nonnegative_and_dense_agreement(
            seed in 0u64..1000,
            users in 2usize..12,
            items in 2usize..50,
        ) {
            let m = random_matrix(seed, users, items, 0.3);
            let adj = normalize(&m);
            // Pattern preserved: one normalized value per interaction, all positive.
            for u in 0..users {
                let pattern: Vec<u32> = adj.row_entries(u).map(|(i, _)| i as u32).collect();
                proptest::prop_assert_eq!(&pattern[..], m.row(u));
                proptest::prop_assert!(adj.row_entries(u).all(|(_, v)| v > 0.0));
            }
            let v: Vec<f64> = (0..items).map(|i| ((i * 7 + seed as usize) % 5) as f64).collect();
            let fast = adj.gram_matvec(&v).unwrap();
            let slow = dense_gram(&adj, &v);
            for (a, b) in fast.iter().zip(&slow) {
                proptest::prop_assert!(*a >= 0.0);
                proptest::prop_assert!((a - b).abs() <= 1e-12);
            }
            for u in 0..users {
                let sparse = adj.gram_of_items(m.row(u));
                let dense = adj.gram_matvec(&m.dense_row(u)).unwrap();
                for (a, b) in sparse.iter().zip(&dense) {
                    proptest::prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
