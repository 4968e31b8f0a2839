//! Block labels from crossing data.
//!
//! Curves that cross cannot share a diagonal block; curves asserted to
//! "almost touch" must. [`infer_labels`] assigns a signed label vector `ve`
//! in which `+k` and `-k` form a family of two mutually crossing groups,
//! [`almost_touch`] merges groups along user assertions, and
//! [`min_blocks_oracle`] solves the same constraints exactly for small `n`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crossing::R1Matrix;
use crate::error::{Error, Result, TouchError};

/// Signed group labels, one per curve (curve `i` at position `i - 1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVector(pub Vec<i64>);

impl LabelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Label of curve `i` (1-based).
    pub fn label(&self, i: usize) -> i64 {
        self.0[i - 1]
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(|&x| x != 0)
    }

    pub fn group_count(&self) -> usize {
        self.0.iter().collect::<BTreeSet<_>>().len()
    }
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(i64::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Ordered `(a, b)` rows with `a < b`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct TouchList {
    rows: Vec<(usize, usize)>,
}

impl TryFrom<Vec<(usize, usize)>> for TouchList {
    type Error = Error;

    fn try_from(rows: Vec<(usize, usize)>) -> Result<Self> {
        TouchList::new(rows)
    }
}

impl From<TouchList> for Vec<(usize, usize)> {
    fn from(t: TouchList) -> Self {
        t.rows
    }
}

impl TouchList {
    /// Orders each pair; rejects self-pairs, zero indices and repeated rows.
    pub fn new(rows: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for (r, (a, b)) in rows.into_iter().enumerate() {
            let (a, b) = (a.min(b), a.max(b));
            if a == 0 || a == b {
                return Err(Error::InvalidParameter(format!(
                    "Touch row {}: invalid pair ({a}, {b})",
                    r + 1
                )));
            }
            if !seen.insert((a, b)) {
                return Err(Error::InvalidParameter(format!(
                    "Touch row {}: duplicate pair ({a}, {b})",
                    r + 1
                )));
            }
            out.push((a, b));
        }
        Ok(TouchList { rows: out })
    }

    /// Parses one pair per line (`a b` or `a,b`); `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            let parsed: Option<Vec<usize>> = nums.iter().map(|s| s.parse().ok()).collect();
            match parsed.as_deref() {
                Some([a, b]) => rows.push((*a, *b)),
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "Touch line {}: expected two curve indices, got `{line}`",
                        ln + 1
                    )))
                }
            }
        }
        TouchList::new(rows)
    }

    pub fn rows(&self) -> &[(usize, usize)] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub label: i64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    pub blocks: Vec<Block>,
    /// Block sizes, ascending.
    pub sizes: Vec<usize>,
}

fn check_r1(r1: &R1Matrix, n: usize) -> Result<()> {
    for (i, j) in r1.pairs() {
        if j > n {
            return Err(Error::CurveIndex { index: j, n });
        }
        if i > n {
            return Err(Error::CurveIndex { index: i, n });
        }
    }
    Ok(())
}

/// Labels from crossing rows, processed in order.
///
/// Row `i` first labels curve `i` if needed (opposite to an already labelled
/// partner, else a fresh positive label), then gives every unlabelled partner
/// the opposite label. A partner that already carries curve `i`'s own label is
/// a clash: it moves to a fresh group, the rest of the row is reset and left
/// to later rows. Curves still unlabelled at the end get fresh labels, and any
/// crossing pair left sharing a label is split.
pub fn infer_labels(r1: &R1Matrix, n: usize) -> Result<LabelVector> {
    check_r1(r1, n)?;
    if n == 0 {
        return Ok(LabelVector(Vec::new()));
    }
    let mut ve = vec![0i64; n + 1];
    ve[1] = 1;
    let mut k = 1i64;
    for i in 1..n {
        let row: Vec<usize> = r1.partners(i).collect();
        if ve[i] == 0 {
            match row.iter().find(|&&j| ve[j] != 0) {
                Some(&j) => ve[i] = -ve[j],
                None => {
                    k += 1;
                    ve[i] = k;
                }
            }
        }
        for (idx, &j) in row.iter().enumerate() {
            if ve[j] == 0 || ve[j] != ve[i] {
                ve[j] = -ve[i];
            } else {
                k += 1;
                ve[j] = k;
                for &m in &row[idx + 1..] {
                    ve[m] = 0;
                }
                break;
            }
        }
    }
    for label in ve.iter_mut().skip(1) {
        if *label == 0 {
            k += 1;
            *label = k;
        }
    }
    let pairs = r1.pairs();
    loop {
        let clash = pairs.iter().find(|&&(a, b)| ve[a] == ve[b]);
        match clash {
            Some(&(_, b)) => {
                k += 1;
                ve[b] = k;
            }
            None => break,
        }
    }
    Ok(LabelVector(ve[1..].to_vec()))
}

fn first_violation(ve: &[i64], pairs: &BTreeSet<(usize, usize)>) -> Option<(usize, usize)> {
    pairs.iter().copied().find(|&(a, b)| ve[a - 1] == ve[b - 1])
}

/// Merges groups along the Touch rows, in order.
///
/// For each row `(a, b)`: equal labels are left alone; opposite labels mean
/// the pair both crosses and touches, which is an error for that row;
/// otherwise `b`'s group takes `a`'s label and `b`'s opposite group takes
/// `a`'s opposite label. Every merge is checked against the crossing pairs.
pub fn almost_touch(ve: &LabelVector, touch: &TouchList, r1: &R1Matrix) -> Result<LabelVector> {
    let n = ve.len();
    if !ve.is_complete() {
        return Err(Error::InvalidParameter(
            "label vector has unassigned entries".into(),
        ));
    }
    check_r1(r1, n)?;
    for &(a, b) in touch.rows() {
        if b > n {
            return Err(Error::CurveIndex { index: b, n });
        }
        if a == 0 {
            return Err(Error::CurveIndex { index: a, n });
        }
    }
    let pairs = r1.pairs();
    let mut out = ve.0.clone();
    for (r, &(a, b)) in touch.rows().iter().enumerate() {
        let (va, vb) = (out[a - 1], out[b - 1]);
        if va == vb {
            continue;
        }
        if va == -vb {
            return Err(TouchError {
                row: r + 1,
                a,
                b,
                reason: format!(
                    "curves {a} and {b} carry opposite labels {va} and {vb} of one crossing family"
                ),
            }
            .into());
        }
        for x in out.iter_mut() {
            if *x == vb {
                *x = va;
            } else if *x == -vb {
                *x = -va;
            }
        }
        if let Some((p, q)) = first_violation(&out, &pairs) {
            return Err(TouchError {
                row: r + 1,
                a,
                b,
                reason: format!("merging puts crossing curves {p} and {q} into one group"),
            }
            .into());
        }
    }
    Ok(LabelVector(out))
}

/// One block per distinct label, in order of first appearance.
pub fn block_structure(ve: &LabelVector) -> Result<BlockStructure> {
    if !ve.is_complete() {
        return Err(Error::InvalidParameter(
            "label vector has unassigned entries".into(),
        ));
    }
    let mut order: Vec<i64> = Vec::new();
    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in ve.0.iter().enumerate() {
        let entry = members.entry(l).or_default();
        if entry.is_empty() {
            order.push(l);
        }
        entry.push(i + 1);
    }
    let blocks: Vec<Block> = order
        .into_iter()
        .map(|label| Block {
            label,
            members: members.remove(&label).unwrap_or_default(),
        })
        .collect();
    let mut sizes: Vec<usize> = blocks.iter().map(|b| b.members.len()).collect();
    sizes.sort_unstable();
    Ok(BlockStructure { blocks, sizes })
}

/// Largest `n` accepted by [`min_blocks_oracle`].
pub const ORACLE_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult {
    pub groups: usize,
    /// Group index (0-based) of each curve.
    pub partition: Vec<usize>,
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut y = x;
    while parent[y] != root {
        let next = parent[y];
        parent[y] = root;
        y = next;
    }
    root
}

fn colorable(
    adj: &[Vec<bool>],
    order: &[usize],
    colors: &mut [usize],
    pos: usize,
    k: usize,
) -> bool {
    if pos == order.len() {
        return true;
    }
    let v = order[pos];
    let used = order[..pos]
        .iter()
        .map(|&u| colors[u])
        .max()
        .map_or(0, |m| m + 1);
    // symmetry breaking: never open more than one new color at a time
    for c in 0..k.min(used + 1) {
        if order[..pos].iter().any(|&u| adj[v][u] && colors[u] == c) {
            continue;
        }
        colors[v] = c;
        if colorable(adj, order, colors, pos + 1, k) {
            return true;
        }
    }
    false
}

/// Exact group count under the constraints: crossing pairs separate, touch
/// pairs unite.
///
/// Touch pairs are contracted first. Each connected component of the
/// combined constraint graph is colored on its own and the component counts
/// are summed, so that curves without any constraint between them are never
/// pooled into one group.
pub fn min_blocks_oracle(
    crossings: &BTreeSet<(usize, usize)>,
    touch: &[(usize, usize)],
    n: usize,
) -> Result<OracleResult> {
    if n > ORACLE_MAX_N {
        return Err(Error::InvalidParameter(format!(
            "exact oracle is limited to n <= {ORACLE_MAX_N}, got {n}"
        )));
    }
    for &(a, b) in crossings.iter().chain(touch) {
        for x in [a, b] {
            if x == 0 || x > n {
                return Err(Error::CurveIndex { index: x, n });
            }
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in touch {
        let (ra, rb) = (find(&mut parent, a - 1), find(&mut parent, b - 1));
        parent[rb.max(ra)] = ra.min(rb);
    }
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in crossings {
        let (ra, rb) = (find(&mut parent, a - 1), find(&mut parent, b - 1));
        if ra == rb {
            return Err(Error::Infeasible(a, b));
        }
        adj[ra][rb] = true;
        adj[rb][ra] = true;
    }
    let roots: Vec<usize> = (0..n).filter(|&x| find(&mut parent, x) == x).collect();
    // components of the contracted conflict graph
    let mut comp = vec![usize::MAX; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for &r in &roots {
        if comp[r] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut stack = vec![r];
        let mut members = Vec::new();
        comp[r] = id;
        while let Some(v) = stack.pop() {
            members.push(v);
            for &u in &roots {
                if adj[v][u] && comp[u] == usize::MAX {
                    comp[u] = id;
                    stack.push(u);
                }
            }
        }
        members.sort_by_key(|&v| std::cmp::Reverse(adj[v].iter().filter(|&&e| e).count()));
        components.push(members);
    }
    let mut colors = vec![0usize; n];
    let mut offset = 0;
    for members in &components {
        let k = (1..=members.len())
            .find(|&k| colorable(&adj, members, &mut colors, 0, k))
            .unwrap_or(members.len());
        for &v in members {
            colors[v] += offset;
        }
        offset += k;
    }
    let partition: Vec<usize> = (0..n).map(|x| colors[find(&mut parent, x)]).collect();
    // renumber groups by first appearance
    let mut remap = BTreeMap::new();
    let partition: Vec<usize> = partition
        .into_iter()
        .map(|g| {
            let next = remap.len();
            *remap.entry(g).or_insert(next)
        })
        .collect();
    Ok(OracleResult {
        groups: offset,
        partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r1(n: usize, rows: &[(usize, &[usize])]) -> R1Matrix {
        R1Matrix::from_partners(n, rows).unwrap()
    }

    fn eleven_short() -> R1Matrix {
        r1(
            11,
            &[
                (1, &[2, 3]),
                (3, &[4]),
                (4, &[5, 6]),
                (6, &[7]),
                (7, &[8]),
                (10, &[11]),
            ],
        )
    }

    fn eleven_long() -> R1Matrix {
        r1(
            11,
            &[
                (1, &[2]),
                (2, &[3]),
                (3, &[5]),
                (4, &[5]),
                (5, &[6]),
                (6, &[8]),
                (7, &[8]),
                (10, &[11]),
            ],
        )
    }

    fn six() -> R1Matrix {
        r1(
            6,
            &[(1, &[2, 3, 5, 6]), (2, &[3, 5]), (3, &[5]), (4, &[5, 6])],
        )
    }

    fn five() -> R1Matrix {
        r1(
            5,
            &[(1, &[2, 3, 4, 5]), (2, &[3, 4, 5]), (3, &[4, 5]), (4, &[5])],
        )
    }

    fn touch(rows: &[(usize, usize)]) -> TouchList {
        TouchList::new(rows.iter().copied()).unwrap()
    }

    #[test]
    fn reference_label_vectors() {
        assert_eq!(
            infer_labels(&eleven_short(), 11).unwrap().0,
            vec![1, -1, -1, 1, -1, -1, 1, -1, 2, 3, -3]
        );
        assert_eq!(
            infer_labels(&eleven_long(), 11).unwrap().0,
            vec![1, -1, 1, 1, -1, 1, 1, -1, 2, 3, -3]
        );
        assert_eq!(
            infer_labels(&six(), 6).unwrap().0,
            vec![1, -1, 2, 2, -2, -2]
        );
        assert_eq!(infer_labels(&five(), 5).unwrap().0, vec![1, -1, 2, -2, 3]);
    }

    #[test]
    fn reference_touch_merges() {
        let ve = infer_labels(&eleven_short(), 11).unwrap();
        let out = almost_touch(
            &ve,
            &touch(&[(2, 3), (5, 6), (6, 8), (9, 10)]),
            &eleven_short(),
        )
        .unwrap();
        assert_eq!(out.0, vec![1, -1, -1, 1, -1, -1, 1, -1, 2, 2, -2]);

        let ve = infer_labels(&eleven_long(), 11).unwrap();
        let t = touch(&[(1, 3), (3, 4), (4, 6), (6, 7), (7, 9), (9, 10)]);
        let out = almost_touch(&ve, &t, &eleven_long()).unwrap();
        assert_eq!(out.0, vec![1, -1, 1, 1, -1, 1, 1, -1, 1, 1, -1]);
        assert_eq!(block_structure(&out).unwrap().sizes, vec![4, 7]);
    }

    #[test]
    fn empty_touch_is_identity() {
        let ve = infer_labels(&six(), 6).unwrap();
        assert_eq!(
            almost_touch(&ve, &TouchList::default(), &six()).unwrap(),
            ve
        );
    }

    #[test]
    fn crossing_touch_pair_is_an_error() {
        let r = r1(2, &[(1, &[2])]);
        let ve = LabelVector(vec![1, -1]);
        match almost_touch(&ve, &touch(&[(1, 2)]), &r) {
            Err(Error::Touch(e)) => assert_eq!(e.row, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn merge_creating_a_crossing_conflict_names_the_row() {
        // 1 crosses 3; touching 1-2 then 2-3 forces 1 and 3 together
        let r = r1(3, &[(1, &[3])]);
        let ve = LabelVector(vec![1, 2, -1]);
        match almost_touch(&ve, &touch(&[(1, 2), (2, 3)]), &r) {
            Err(Error::Touch(e)) => assert_eq!(e.row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn block_sizes() {
        let sizes = |v: Vec<i64>| block_structure(&LabelVector(v)).unwrap().sizes;
        assert_eq!(sizes(vec![1, -1, 1, 1, -1, 1, 1, -1, 1, 1, -1]), vec![4, 7]);
        assert_eq!(sizes(vec![1, -1, 2, 2, -2, -2]), vec![1, 1, 2, 2]);
        assert_eq!(sizes(vec![1, -1, 2, -2, 3]), vec![1, 1, 1, 1, 1]);
        assert!(block_structure(&LabelVector(vec![1, 0])).is_err());
    }

    #[test]
    fn no_crossings_gives_singletons() {
        let ve = infer_labels(&r1(3, &[]), 3).unwrap();
        assert_eq!(ve.0, vec![1, 2, 3]);
    }

    #[test]
    fn r1_out_of_range() {
        let r = r1(6, &[(1, &[6])]);
        assert!(matches!(infer_labels(&r, 5), Err(Error::CurveIndex { .. })));
    }

    #[test]
    fn oracle_examples() {
        let pairs = |r: &R1Matrix| r.pairs();
        assert_eq!(
            min_blocks_oracle(&[(1, 2)].into(), &[], 2).unwrap().groups,
            2
        );
        assert_eq!(min_blocks_oracle(&pairs(&six()), &[], 6).unwrap().groups, 4);
        let t = [(1, 3), (3, 4), (4, 6), (6, 7), (7, 9), (9, 10)];
        assert_eq!(
            min_blocks_oracle(&pairs(&eleven_long()), &t, 11)
                .unwrap()
                .groups,
            2
        );
        assert_eq!(
            min_blocks_oracle(&pairs(&five()), &[], 5).unwrap().groups,
            5
        );
        assert_eq!(
            min_blocks_oracle(&pairs(&eleven_short()), &[], 11)
                .unwrap()
                .groups,
            5
        );
        let t = [(2, 3), (5, 6), (6, 8), (9, 10)];
        assert_eq!(
            min_blocks_oracle(&pairs(&eleven_short()), &t, 11)
                .unwrap()
                .groups,
            4
        );
        assert!(matches!(
            min_blocks_oracle(&[(1, 2)].into(), &[(1, 2)], 2),
            Err(Error::Infeasible(1, 2))
        ));
    }

    #[test]
    fn touch_file_parsing() {
        let t = TouchList::parse("# pairs\n2 3\n5,6\n\n9 10 # last\n").unwrap();
        assert_eq!(t.rows(), &[(2, 3), (5, 6), (9, 10)]);
        assert!(TouchList::parse("1 2 3").is_err());
        assert!(TouchList::parse("2 2").is_err());
        assert!(TouchList::parse("1 2\n2 1").is_err());
    }

    fn constraint_sets() -> impl Strategy<Value = (usize, BTreeSet<(usize, usize)>)> {
        (2usize..=10).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (1..=n)
                .flat_map(|i| (i + 1..=n).map(move |j| (i, j)))
                .collect();
            let len = pairs.len();
            (Just(n), proptest::collection::vec(any::<bool>(), len)).prop_map(move |(n, mask)| {
                let set = pairs
                    .iter()
                    .zip(mask)
                    .filter(|(_, m)| *m)
                    .map(|(p, _)| *p)
                    .collect();
                (n, set)
            })
        })
    }

    proptest! {
        #[test]
        fn labels_separate_crossings((n, pairs) in constraint_sets()) {
            let r = build(&pairs, n);
            let ve = infer_labels(&r, n).unwrap();
            prop_assert!(ve.is_complete());
            for (a, b) in &pairs {
                prop_assert_ne!(ve.label(*a), ve.label(*b));
            }
            let oracle = min_blocks_oracle(&pairs, &[], n).unwrap();
            prop_assert!(ve.group_count() >= oracle.groups);
        }

        #[test]
        fn oracle_partition_is_valid((n, pairs) in constraint_sets(), touch_mask in proptest::collection::vec(any::<bool>(), 45)) {
            let all: Vec<(usize, usize)> = (1..=n).flat_map(|i| (i + 1..=n).map(move |j| (i, j))).collect();
            let touch: Vec<(usize, usize)> = all.iter().zip(&touch_mask)
                .filter(|(p, m)| **m && !pairs.contains(p)).map(|(p, _)| *p).take(3).collect();
            if let Ok(res) = min_blocks_oracle(&pairs, &touch, n) {
                for (a, b) in &pairs {
                    prop_assert_ne!(res.partition[a - 1], res.partition[b - 1]);
                }
                for (a, b) in &touch {
                    prop_assert_eq!(res.partition[a - 1], res.partition[b - 1]);
                }
                let used: BTreeSet<usize> = res.partition.iter().copied().collect();
                prop_assert_eq!(used.len(), res.groups);
            }
        }

        #[test]
        fn touch_is_idempotent((n, pairs) in constraint_sets(), touch_mask in proptest::collection::vec(any::<bool>(), 45)) {
            let r = build(&pairs, n);
            let ve = infer_labels(&r, n).unwrap();
            let all: Vec<(usize, usize)> = (1..=n).flat_map(|i| (i + 1..=n).map(move |j| (i, j))).collect();
            let t = TouchList::new(all.iter().zip(&touch_mask).filter(|(_, m)| **m).map(|(p, _)| *p).take(4)).unwrap();
            if let Ok(once) = almost_touch(&ve, &t, &r) {
                let twice = almost_touch(&once, &t, &r).unwrap();
                prop_assert_eq!(&once, &twice);
                for (a, b) in t.rows() {
                    prop_assert_eq!(once.label(*a), once.label(*b));
                }
                for (a, b) in &pairs {
                    prop_assert_ne!(once.label(*a), once.label(*b));
                }
            }
        }

        #[test]
        fn oracle_count_is_permutation_invariant((n, pairs) in constraint_sets(), seed in any::<u64>()) {
            let mut perm: Vec<usize> = (1..=n).collect();
            // deterministic shuffle from the seed
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let permuted: BTreeSet<(usize, usize)> = pairs.iter()
                .map(|&(a, b)| { let (x, y) = (perm[a - 1], perm[b - 1]); (x.min(y), x.max(y)) })
                .collect();
            let a = min_blocks_oracle(&pairs, &[], n).unwrap();
            let b = min_blocks_oracle(&permuted, &[], n).unwrap();
            prop_assert_eq!(a.groups, b.groups);
        }
    }

    fn build(pairs: &BTreeSet<(usize, usize)>, n: usize) -> R1Matrix {
        let set = crate::crossing::CrossingSet {
            crossings: pairs
                .iter()
                .map(|&(i, j)| crate::crossing::Crossing {
                    i,
                    j,
                    t_star: 0.0,
                    gap_before: 1.0,
                    gap_after: 1.0,
                })
                .collect(),
        };
        crate::crossing::build_r1(&set, n).unwrap()
    }
}
