//! N:M mask space: patterns, the probabilistic-sum operator, enumeration of
//! the per-group mask set and the validated [`NMMask`] container.
//!
//! Groups are contiguous, non-overlapping blocks of `M` entries in storage
//! order. Matrices are flattened row-major before grouping. Positions inside
//! a group are 0-based.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest group size accepted by operations that enumerate the mask set.
pub const MAX_ENUM_GROUP: usize = 16;

/// Largest number of ordered basis selections `M!/(M-N)!` that
/// [`verify_representation`] will walk.
pub const MAX_ORDERED_SELECTIONS: u64 = 10_000_000;

/// Exact binomial coefficient. Panics on overflow, which cannot happen for `n <= 64`.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Keep `N` of every `M` consecutive weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SparsityPattern {
    n_keep: usize,
    group_size: usize,
}

impl SparsityPattern {
    pub fn new(n_keep: usize, group_size: usize) -> Result<Self> {
        if n_keep == 0 || n_keep > group_size {
            return Err(Error::invalid(format!(
                "pattern {n_keep}:{group_size} must satisfy 1 <= N <= M"
            )));
        }
        Ok(Self { n_keep, group_size })
    }

    /// N, the number of kept positions per group.
    pub fn n(&self) -> usize {
        self.n_keep
    }

    /// M, the group length.
    pub fn m(&self) -> usize {
        self.group_size
    }

    /// `C(M, N)`, the size of the per-group mask set.
    pub fn combinations(&self) -> u64 {
        binomial(self.group_size as u64, self.n_keep as u64)
    }

    /// Number of groups in a flat vector of length `d`; rejects `d` not divisible by `M`.
    pub fn group_count(&self, d: usize) -> Result<usize> {
        if d == 0 || !d.is_multiple_of(self.group_size) {
            return Err(Error::dim(format!(
                "length {d} is not a positive multiple of group size {}",
                self.group_size
            )));
        }
        Ok(d / self.group_size)
    }

    pub(crate) fn check_enumerable(&self) -> Result<()> {
        if self.group_size > MAX_ENUM_GROUP {
            return Err(Error::capacity(format!(
                "group size {} exceeds the enumeration bound M <= {MAX_ENUM_GROUP}",
                self.group_size
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n_keep, self.group_size)
    }
}

impl FromStr for SparsityPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (n, m) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("pattern `{s}` is not of the form N:M")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("pattern `{s}` is not of the form N:M")))
        };
        Self::new(parse(n)?, parse(m)?)
    }
}

impl TryFrom<String> for SparsityPattern {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SparsityPattern> for String {
    fn from(p: SparsityPattern) -> String {
        p.to_string()
    }
}

/// A real vector of length `M`, one group's worth of entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupVector(Vec<f64>);

impl GroupVector {
    pub fn new(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    /// The basis vector `e_j` of length `m`.
    pub fn basis(j: usize, m: usize) -> Result<Self> {
        if j >= m {
            return Err(Error::invalid(format!("basis index {j} out of range for M = {m}")));
        }
        let mut v = vec![0.0; m];
        v[j] = 1.0;
        Ok(Self(v))
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        Self(bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    /// Converts to bits when every entry is exactly 0 or 1.
    pub fn to_bits(&self) -> Option<Vec<bool>> {
        self.0
            .iter()
            .map(|&x| {
                if x == 0.0 {
                    Some(false)
                } else if x == 1.0 {
                    Some(true)
                } else {
                    None
                }
            })
            .collect()
    }
}

impl AsRef<[f64]> for GroupVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Coordinate-wise probabilistic sum `1 - (1 - a) * (1 - b)`.
///
/// On binary inputs this is the coordinate-wise OR.
pub fn oplus(a: &GroupVector, b: &GroupVector) -> Result<GroupVector> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("oplus of lengths {} and {}", a.len(), b.len())));
    }
    Ok(GroupVector(
        a.0.iter()
            .zip(&b.0)
            .map(|(&x, &y)| 1.0 - (1.0 - x) * (1.0 - y))
            .collect(),
    ))
}

/// Folds `e_{k_1} ⊕ ... ⊕ e_{k_N}` for distinct 0-based positions.
pub fn compose_basis(indices: &[usize], m: usize) -> Result<GroupVector> {
    let mut seen = vec![false; m];
    let mut acc = GroupVector::zeros(m);
    for &k in indices {
        let e = GroupVector::basis(k, m)?;
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::invalid(format!("duplicate basis index {k}")));
        }
        acc = oplus(&acc, &e)?;
    }
    Ok(acc)
}

/// Kept-position sets of every group mask, in lexicographic order of the
/// corresponding bit vectors (`[0,0,1,1] < [0,1,0,1] < ... < [1,1,0,0]`).
pub fn enumerate_index_sets(pattern: SparsityPattern) -> Result<Vec<Vec<usize>>> {
    pattern.check_enumerable()?;
    let m = pattern.m();
    let n = pattern.n() as u32;
    // Reading the bit vector as a binary number with position 0 as the most
    // significant bit makes numeric order coincide with lexicographic order.
    Ok((0u32..(1u32 << m))
        .filter(|v| v.count_ones() == n)
        .map(|v| (0..m).filter(|&j| (v >> (m - 1 - j)) & 1 == 1).collect())
        .collect())
}

/// All `C(M, N)` binary group vectors with exactly `N` ones, lexicographically ordered.
pub fn enumerate_masks(pattern: SparsityPattern) -> Result<Vec<GroupVector>> {
    let m = pattern.m();
    Ok(enumerate_index_sets(pattern)?
        .into_iter()
        .map(|set| {
            let mut v = vec![0.0; m];
            for k in set {
                v[k] = 1.0;
            }
            GroupVector(v)
        })
        .collect())
}

/// Checks that folding ⊕ over every ordered selection of `N` distinct basis
/// vectors produces exactly the enumerated mask set.
pub fn verify_representation(pattern: SparsityPattern) -> Result<bool> {
    pattern.check_enumerable()?;
    let (n, m) = (pattern.n() as u64, pattern.m() as u64);
    let ordered: u64 = (m - n + 1..=m).product();
    if ordered > MAX_ORDERED_SELECTIONS {
        return Err(Error::capacity(format!(
            "{ordered} ordered selections for {pattern} exceed {MAX_ORDERED_SELECTIONS}"
        )));
    }

    let mut composed = BTreeSet::new();
    let mut used = vec![false; pattern.m()];
    let mut ok = true;
    walk_selections(
        pattern,
        &GroupVector::zeros(pattern.m()),
        0,
        &mut used,
        &mut composed,
        &mut ok,
    )?;
    if !ok {
        return Ok(false);
    }

    let enumerated: BTreeSet<Vec<bool>> = enumerate_masks(pattern)?
        .iter()
        .map(|g| g.to_bits().expect("enumerated masks are binary"))
        .collect();
    Ok(composed == enumerated)
}

fn walk_selections(
    pattern: SparsityPattern,
    acc: &GroupVector,
    depth: usize,
    used: &mut [bool],
    out: &mut BTreeSet<Vec<bool>>,
    ok: &mut bool,
) -> Result<()> {
    if depth == pattern.n() {
        match acc.to_bits() {
            Some(bits) => {
                out.insert(bits);
            }
            None => *ok = false,
        }
        return Ok(());
    }
    for k in 0..pattern.m() {
        if used[k] {
            continue;
        }
        used[k] = true;
        let next = oplus(acc, &GroupVector::basis(k, pattern.m())?)?;
        walk_selections(pattern, &next, depth + 1, used, out, ok)?;
        used[k] = false;
    }
    Ok(())
}

/// A binary mask over `d` weights with exactly `N` ones in every group of `M`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NMMask {
    bits: Vec<bool>,
    pattern: SparsityPattern,
}

impl NMMask {
    /// Validates the per-group `N`-ones invariant.
    pub fn new(bits: Vec<bool>, pattern: SparsityPattern) -> Result<Self> {
        pattern.group_count(bits.len())?;
        for (i, g) in bits.chunks(pattern.m()).enumerate() {
            let ones = g.iter().filter(|&&b| b).count();
            if ones != pattern.n() {
                return Err(Error::invalid(format!(
                    "group {i} has {ones} kept positions, pattern {pattern} requires {}",
                    pattern.n()
                )));
            }
        }
        Ok(Self { bits, pattern })
    }

    /// Builds a mask from the kept positions of each group.
    pub fn from_index_sets(sets: &[Vec<usize>], pattern: SparsityPattern) -> Result<Self> {
        let m = pattern.m();
        let mut bits = vec![false; sets.len() * m];
        for (i, set) in sets.iter().enumerate() {
            for &k in set {
                if k >= m {
                    return Err(Error::invalid(format!("position {k} out of range in group {i}")));
                }
                bits[i * m + k] = true;
            }
        }
        Self::new(bits, pattern)
    }

    /// The all-kept mask, only valid when `N = M`.
    pub fn dense(d: usize, pattern: SparsityPattern) -> Result<Self> {
        Self::new(vec![true; d], pattern)
    }

    pub fn pattern(&self) -> SparsityPattern {
        self.pattern
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn group_count(&self) -> usize {
        self.bits.len() / self.pattern.m()
    }

    pub fn group(&self, i: usize) -> &[bool] {
        let m = self.pattern.m();
        &self.bits[i * m..(i + 1) * m]
    }

    pub fn groups(&self) -> std::slice::Chunks<'_, bool> {
        self.bits.chunks(self.pattern.m())
    }

    /// Kept positions of group `i`, ascending.
    pub fn kept(&self, i: usize) -> Vec<usize> {
        kept_positions(self.group(i))
    }

    /// `m ⊙ w`.
    pub fn apply(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.bits.len() {
            return Err(Error::dim(format!(
                "mask of length {} applied to {} weights",
                self.bits.len(),
                weights.len()
            )));
        }
        Ok(self
            .bits
            .iter()
            .zip(weights)
            .map(|(&b, &w)| if b { w } else { 0.0 })
            .collect())
    }

    /// Text form: `NM <N> <M> <d>` then one line of `M` digits per group.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "NM {} {} {}\n",
            self.pattern.n(),
            self.pattern.m(),
            self.bits.len()
        );
        for g in self.groups() {
            s.extend(g.iter().map(|&b| if b { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mask file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad_header = || Error::Parse(format!("bad mask header `{header}`"));
        if fields.len() != 4 || fields[0] != "NM" {
            return Err(bad_header());
        }
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad_header());
        let pattern = SparsityPattern::new(num(fields[1])?, num(fields[2])?)?;
        let d = num(fields[3])?;
        let groups = pattern.group_count(d)?;

        let mut bits = Vec::with_capacity(d);
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let line = line.trim();
            if i >= groups || line.len() != pattern.m() {
                return Err(Error::Parse(format!("mask line {} has wrong shape", i + 2)));
            }
            for c in line.chars() {
                bits.push(match c {
                    '0' => false,
                    '1' => true,
                    _ => return Err(Error::Parse(format!("unexpected character `{c}` in mask"))),
                });
            }
        }
        if bits.len() != d {
            return Err(Error::Parse(format!("mask declares {d} bits, found {}", bits.len())));
        }
        Self::new(bits, pattern)
    }

    /// One bit per weight; weight `i` is bit `i % 8` (LSB first) of byte `i / 8`.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_packed(bytes: &[u8], pattern: SparsityPattern, d: usize) -> Result<Self> {
        if bytes.len() != d.div_ceil(8) {
            return Err(Error::Parse(format!(
                "packed mask of {d} bits needs {} bytes, got {}",
                d.div_ceil(8),
                bytes.len()
            )));
        }
        if !d.is_multiple_of(8) && bytes[d / 8] >> (d % 8) != 0 {
            return Err(Error::Parse("nonzero padding bits in packed mask".into()));
        }
        let bits = (0..d).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        Self::new(bits, pattern)
    }
}

pub(crate) fn kept_positions(group: &[bool]) -> Vec<usize> {
    group
        .iter()
        .enumerate()
        .filter_map(|(k, &b)| b.then_some(k))
        .collect()
}
