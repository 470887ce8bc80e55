//! Structured pattern sets and noise injection.
//!
//! Patterns are rows `x = u . G` for integer messages `u` and a block-structured
//! integer generator `G`, so the training set spans a low-dimensional subspace
//! globally and per column block. That structure is what the learner's
//! null-space rows latch onto, and it is what gives the set its exponential
//! size in the message dimension.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::linalg::{exact_rank, exact_rank_cols, IntMatrix};
use crate::persist;
use crate::rng::rng_from;

const GENERATOR_RETRY_BUDGET: usize = 1000;
const SEGMENT_RETRY_BUDGET: usize = 64;
/// Full enumeration is meant for small message spaces; anything bigger than
/// this is a config mistake, not a workload.
const ENUMERATION_LIMIT: u128 = 1 << 24;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible spec: {0}")]
    InfeasibleSpec(String),
    #[error("generator retry budget exhausted after {tries} attempts")]
    RetryBudgetExhausted { tries: usize },
    #[error("requested {requested} patterns but the message space holds {capacity}")]
    CountExceedsCapacity { requested: usize, capacity: u128 },
    #[error("full enumeration of {capacity} messages exceeds the {limit} limit")]
    EnumerationTooLarge { capacity: u128, limit: u128 },
    #[error("every candidate pattern fell outside the state alphabet")]
    AllCandidatesRejected,
    #[error("noise weight {weight} exceeds pattern length {n}")]
    WeightTooLarge { weight: usize, n: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Parameters of the generator construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorSpec {
    /// Pattern length.
    pub n: usize,
    /// Number of column blocks; divides `n`.
    pub l: usize,
    /// Nonzero rows per block sub-matrix, `k < n/l`.
    pub k: usize,
    /// Global subspace dimension, `k_g < n`.
    pub k_g: usize,
    /// Generator alphabet bound: entries of `G` lie in `0..gamma`.
    pub gamma: i64,
    /// Message alphabet bound: message entries lie in `0..upsilon`.
    pub upsilon: i64,
    /// State alphabet size: pattern entries must lie in `0..s`.
    pub s: i64,
    /// Maximum allowed column degree of `G`.
    pub d_star_cap: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn block_len(&self) -> usize {
        self.n / self.l
    }

    /// `s - 1 >= d* (gamma-1)(upsilon-1)`: every product `u . g_j` fits the
    /// state alphabet, so synthesis rejects nothing.
    pub fn is_admissible(&self) -> bool {
        self.s - 1 >= (self.d_star_cap as i64) * (self.gamma - 1) * (self.upsilon - 1)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |msg: String| Err(DatasetError::InvalidSpec(msg));
        if self.n == 0 || self.l == 0 || self.n % self.l != 0 {
            return fail(format!("L={} must divide n={}", self.l, self.n));
        }
        if self.k == 0 || self.k >= self.block_len() {
            return fail(format!("need 0 < k < n/L, got k={} n/L={}", self.k, self.block_len()));
        }
        if self.k_g == 0 || self.k_g >= self.n {
            return fail(format!("need 0 < k_g < n, got k_g={} n={}", self.k_g, self.n));
        }
        if self.gamma < 2 || self.upsilon < 2 {
            return fail(format!("alphabet bounds gamma={} upsilon={} must be >= 2", self.gamma, self.upsilon));
        }
        if self.s < 2 {
            return fail(format!("state alphabet size S={} must be >= 2", self.s));
        }
        if self.d_star_cap == 0 {
            return fail("column degree cap d* must be >= 1".into());
        }
        Ok(())
    }
}

/// Block-structured integer generator matrix, `k_g x n`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub matrix: IntMatrix,
    pub spec: GeneratorSpec,
}

impl Generator {
    pub fn block_cols(&self, b: usize) -> std::ops::Range<usize> {
        let w = self.spec.block_len();
        b * w..(b + 1) * w
    }

    pub fn column_degree(&self, j: usize) -> usize {
        (0..self.spec.k_g).filter(|&i| self.matrix.get(i, j) != 0).count()
    }
}

/// Training set: kept patterns, their messages, and the spec they came from.
#[derive(Debug, Clone)]
pub struct PatternMatrix {
    pub patterns: IntMatrix,
    /// Message vectors for the kept patterns; absent after a file load.
    pub messages: Option<IntMatrix>,
    pub spec: GeneratorSpec,
    pub kept: usize,
    pub rejected: usize,
}

impl PatternMatrix {
    pub fn count(&self) -> usize {
        self.patterns.rows()
    }

    pub fn n(&self) -> usize {
        self.patterns.cols()
    }

    pub fn row(&self, i: usize) -> &[i64] {
        self.patterns.row(i)
    }

    /// The column sub-matrix of block `b`.
    pub fn block_patterns(&self, b: usize) -> IntMatrix {
        let w = self.spec.block_len();
        self.patterns.column_slice(b * w, (b + 1) * w)
    }
}

/// Additive noise as drawn, before state clipping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseVector {
    pub z: Vec<i64>,
}

impl NoiseVector {
    pub fn weight(&self) -> usize {
        self.z.iter().filter(|&&v| v != 0).count()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.z.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect()
    }
}

/// Ranks of a pattern set against its declared subspace structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureReport {
    pub global_rank: usize,
    pub block_ranks: Vec<usize>,
    /// `block_ranks[b] <= k`?
    pub block_ok: Vec<bool>,
    /// `global_rank == k_g`?
    pub global_ok: bool,
    pub k: usize,
    pub k_g: usize,
}

/// How many patterns to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternCount {
    /// Enumerate the whole message space.
    All,
    Count(usize),
}

/// Sample a generator satisfying the spec. Deterministic in `spec.seed`;
/// resamples until the block structure, degree cap and full row rank hold.
pub fn build_generator(spec: &GeneratorSpec) -> Result<Generator, DatasetError> {
    spec.validate()?;
    if spec.k * spec.l < spec.k_g {
        return Err(DatasetError::InfeasibleSpec(format!(
            "k*L = {} nonzero-row slots cannot cover k_g = {} independent rows",
            spec.k * spec.l,
            spec.k_g
        )));
    }
    if spec.k > spec.k_g {
        return Err(DatasetError::InfeasibleSpec(format!(
            "a block cannot have k = {} nonzero rows when G has only k_g = {} rows",
            spec.k, spec.k_g
        )));
    }
    let mut rng = rng_from(spec.seed);
    for _ in 0..GENERATOR_RETRY_BUDGET {
        let mut g = match sample_structured(&mut rng, spec) {
            Some(g) => g,
            None => continue,
        };
        cap_column_degrees(&mut g, spec.d_star_cap);
        if !block_structure_ok(&g, spec) {
            continue;
        }
        if exact_rank(&g) != spec.k_g {
            continue;
        }
        return Ok(Generator { matrix: g, spec: *spec });
    }
    Err(DatasetError::RetryBudgetExhausted { tries: GENERATOR_RETRY_BUDGET })
}

/// Choose the k nonzero rows of every block by dealing a shuffled row
/// permutation across blocks first (so each row is selected somewhere — a
/// zero row of G could never reach rank k_g), then topping blocks up with
/// uniform draws. Entries of selected segments are uniform over `0..gamma`,
/// redrawn if a segment comes out all zero.
fn sample_structured(rng: &mut rand_chacha::ChaCha8Rng, spec: &GeneratorSpec) -> Option<IntMatrix> {
    let mut g = IntMatrix::zeros(spec.k_g, spec.n);
    let mut queue: Vec<usize> = (0..spec.k_g).collect();
    queue.shuffle(rng);
    let mut next = 0usize;
    for b in 0..spec.l {
        let mut chosen: Vec<usize> = Vec::with_capacity(spec.k);
        while chosen.len() < spec.k && next < queue.len() {
            chosen.push(queue[next]);
            next += 1;
        }
        while chosen.len() < spec.k {
            let cand = rng.random_range(0..spec.k_g);
            if !chosen.contains(&cand) {
                chosen.push(cand);
            }
        }
        let lo = b * spec.block_len();
        for &row in &chosen {
            if !fill_segment(rng, &mut g, row, lo, spec.block_len(), spec.gamma) {
                return None;
            }
        }
    }
    Some(g)
}

fn fill_segment(
    rng: &mut rand_chacha::ChaCha8Rng,
    g: &mut IntMatrix,
    row: usize,
    lo: usize,
    len: usize,
    gamma: i64,
) -> bool {
    for _ in 0..SEGMENT_RETRY_BUDGET {
        let mut any = false;
        for j in lo..lo + len {
            let v = rng.random_range(0..gamma);
            g.set(row, j, v);
            any |= v != 0;
        }
        if any {
            return true;
        }
    }
    false
}

/// Zero the lowest-magnitude entries (ties by row index) of any column whose
/// degree exceeds the cap.
fn cap_column_degrees(g: &mut IntMatrix, cap: usize) {
    for j in 0..g.cols() {
        let mut nz: Vec<(i64, usize)> =
            (0..g.rows()).filter(|&i| g.get(i, j) != 0).map(|i| (g.get(i, j).abs(), i)).collect();
        if nz.len() <= cap {
            continue;
        }
        nz.sort();
        for &(_, i) in nz.iter().take(nz.len() - cap) {
            g.set(i, j, 0);
        }
    }
}

fn block_structure_ok(g: &IntMatrix, spec: &GeneratorSpec) -> bool {
    let w = spec.block_len();
    (0..spec.l).all(|b| {
        let nonzero_rows = (0..spec.k_g)
            .filter(|&i| g.row(i)[b * w..(b + 1) * w].iter().any(|&v| v != 0))
            .count();
        nonzero_rows == spec.k
    })
}

fn message_capacity(upsilon: i64, k_g: usize) -> u128 {
    (upsilon as u128).checked_pow(k_g as u32).unwrap_or(u128::MAX)
}

/// Build patterns `x = u . G` for distinct messages `u`, keeping a candidate
/// only if every entry fits in `0..s`. Counts of kept and rejected candidates
/// are reported on the result.
pub fn synthesize_patterns(
    gen: &Generator,
    count: PatternCount,
    upsilon: i64,
    s: i64,
    seed: u64,
) -> Result<PatternMatrix, DatasetError> {
    if upsilon < 2 {
        return Err(DatasetError::InvalidSpec(format!("upsilon={upsilon} must be >= 2")));
    }
    if s < 2 {
        return Err(DatasetError::InvalidSpec(format!("S={s} must be >= 2")));
    }
    let k_g = gen.spec.k_g;
    let capacity = message_capacity(upsilon, k_g);
    let messages: Vec<Vec<i64>> = match count {
        PatternCount::All => {
            if capacity > ENUMERATION_LIMIT {
                return Err(DatasetError::EnumerationTooLarge { capacity, limit: ENUMERATION_LIMIT });
            }
            enumerate_messages(upsilon, k_g)
        }
        PatternCount::Count(c) => {
            if c == 0 {
                return Err(DatasetError::InvalidSpec("pattern count must be positive".into()));
            }
            if c as u128 > capacity {
                return Err(DatasetError::CountExceedsCapacity { requested: c, capacity });
            }
            sample_distinct_messages(upsilon, k_g, c, seed)
        }
    };

    let mut kept_rows = Vec::new();
    let mut kept_msgs = Vec::new();
    let mut rejected = 0usize;
    for u in messages {
        let x = message_times_generator(&u, &gen.matrix);
        if x.iter().all(|&v| v < s) {
            kept_rows.push(x);
            kept_msgs.push(u);
        } else {
            rejected += 1;
        }
    }
    if kept_rows.is_empty() {
        return Err(DatasetError::AllCandidatesRejected);
    }
    let kept = kept_rows.len();
    let mut spec = gen.spec;
    spec.upsilon = upsilon;
    spec.s = s;
    spec.seed = seed;
    Ok(PatternMatrix {
        patterns: IntMatrix::from_rows(kept_rows),
        messages: Some(IntMatrix::from_rows(kept_msgs)),
        spec,
        kept,
        rejected,
    })
}

fn message_times_generator(u: &[i64], g: &IntMatrix) -> Vec<i64> {
    let mut x = vec![0i64; g.cols()];
    for (i, &ui) in u.iter().enumerate() {
        if ui == 0 {
            continue;
        }
        for (xj, &gj) in x.iter_mut().zip(g.row(i)) {
            *xj += ui * gj;
        }
    }
    x
}

/// Odometer enumeration, all-zero message first.
fn enumerate_messages(upsilon: i64, k_g: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut digits = vec![0i64; k_g];
    loop {
        out.push(digits.clone());
        let mut pos = k_g;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < upsilon {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Seeded rejection sampling without replacement; draw order is what lands in
/// the training set, so it is reproducible.
fn sample_distinct_messages(upsilon: i64, k_g: usize, count: usize, seed: u64) -> Vec<Vec<i64>> {
    let mut rng = rng_from(seed);
    let mut seen: HashSet<Vec<i64>> = HashSet::with_capacity(count * 2);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u: Vec<i64> = (0..k_g).map(|_| rng.random_range(0..upsilon)).collect();
        if seen.insert(u.clone()) {
            out.push(u);
        }
    }
    out
}

/// Exact ranks of the pattern set, globally and per column block.
pub fn verify_subspace(x: &PatternMatrix) -> StructureReport {
    let spec = &x.spec;
    let w = spec.block_len();
    let global_rank = exact_rank(&x.patterns);
    let block_ranks: Vec<usize> =
        (0..spec.l).map(|b| exact_rank_cols(&x.patterns, b * w, (b + 1) * w)).collect();
    let block_ok: Vec<bool> = block_ranks.iter().map(|&r| r <= spec.k).collect();
    StructureReport {
        global_ok: global_rank == spec.k_g,
        global_rank,
        block_ranks,
        block_ok,
        k: spec.k,
        k_g: spec.k_g,
    }
}

/// Corrupt `weight` distinct positions with +/-1 noise and clip the result
/// into `0..s`. Returns the clipped pattern together with the pre-clip noise.
pub fn inject_noise(
    x: &[i64],
    weight: usize,
    s: i64,
    seed: u64,
) -> Result<(Vec<i64>, NoiseVector), DatasetError> {
    let n = x.len();
    if weight > n {
        return Err(DatasetError::WeightTooLarge { weight, n });
    }
    let mut rng = rng_from(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut z = vec![0i64; n];
    for i in 0..weight {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
        z[idx[i]] = if rng.random_bool(0.5) { 1 } else { -1 };
    }
    let corrupted: Vec<i64> = x.iter().zip(&z).map(|(&v, &d)| (v + d).clamp(0, s - 1)).collect();
    Ok((corrupted, NoiseVector { z }))
}

fn header_string(spec: &GeneratorSpec) -> String {
    format!(
        "n={},L={},k={},k_g={},S={},gamma={},upsilon={},seed={}",
        spec.n, spec.l, spec.k, spec.k_g, spec.s, spec.gamma, spec.upsilon, spec.seed
    )
}

fn parse_header(line: &str) -> Result<GeneratorSpec, DatasetError> {
    let kv = persist::parse_kv_line(line).map_err(DatasetError::Parse)?;
    let get = |key: &str| -> Result<i64, DatasetError> {
        kv.get(key)
            .ok_or_else(|| DatasetError::Parse(format!("header missing `{key}`")))?
            .parse::<i64>()
            .map_err(|e| DatasetError::Parse(format!("header field `{key}`: {e}")))
    };
    let k = get("k")? as usize;
    Ok(GeneratorSpec {
        n: get("n")? as usize,
        l: get("L")? as usize,
        k,
        k_g: get("k_g")? as usize,
        s: get("S")?,
        gamma: get("gamma")?,
        upsilon: get("upsilon")?,
        // Not part of the persisted header; the generation-time default.
        d_star_cap: k,
        seed: kv
            .get("seed")
            .ok_or_else(|| DatasetError::Parse("header missing `seed`".into()))?
            .parse::<u64>()
            .map_err(|e| DatasetError::Parse(format!("header field `seed`: {e}")))?,
    })
}

fn write_int_csv(path: &Path, spec: &GeneratorSpec, m: &IntMatrix) -> Result<(), DatasetError> {
    let mut out = header_string(spec);
    out.push('\n');
    for i in 0..m.rows() {
        let mut line = String::new();
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            let _ = write!(line, "{v}");
        }
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_int_csv(path: &Path) -> Result<(GeneratorSpec, IntMatrix), DatasetError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| DatasetError::Parse("empty file".into()))?;
    let spec = parse_header(header)?;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<i64>, _> = line.split(',').map(|t| t.trim().parse::<i64>()).collect();
        rows.push(row.map_err(|e| DatasetError::Parse(format!("line {}: {e}", lineno + 2)))?);
    }
    if rows.is_empty() {
        return Err(DatasetError::Parse("no data rows".into()));
    }
    Ok((spec, IntMatrix::from_rows(rows)))
}

pub fn save_patterns(pm: &PatternMatrix, path: &Path) -> Result<(), DatasetError> {
    write_int_csv(path, &pm.spec, &pm.patterns)
}

pub fn load_patterns(path: &Path) -> Result<PatternMatrix, DatasetError> {
    let (spec, patterns) = read_int_csv(path)?;
    let kept = patterns.rows();
    Ok(PatternMatrix { patterns, messages: None, spec, kept, rejected: 0 })
}

pub fn save_generator(g: &Generator, path: &Path) -> Result<(), DatasetError> {
    write_int_csv(path, &g.spec, &g.matrix)
}

pub fn load_generator(path: &Path) -> Result<Generator, DatasetError> {
    let (spec, matrix) = read_int_csv(path)?;
    Ok(Generator { matrix, spec })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> GeneratorSpec {
        GeneratorSpec { n: 4, l: 2, k: 1, k_g: 2, gamma: 2, upsilon: 2, s: 2, d_star_cap: 1, seed: 3 }
    }

    fn desk_spec() -> GeneratorSpec {
        GeneratorSpec { n: 16, l: 4, k: 3, k_g: 8, gamma: 2, upsilon: 2, s: 4, d_star_cap: 3, seed: 7 }
    }

    #[test]
    fn smallest_admissible_instance() {
        let g = build_generator(&tiny_spec()).unwrap();
        assert_eq!(g.matrix.rows(), 2);
        assert_eq!(g.matrix.cols(), 4);
        assert!((0..2).all(|i| (0..4).all(|j| (0..2).contains(&g.matrix.get(i, j)))));
        assert_eq!(exact_rank(&g.matrix), 2);
        for b in 0..2 {
            let cols = g.block_cols(b);
            let nonzero_rows =
                (0..2).filter(|&i| g.matrix.row(i)[cols.clone()].iter().any(|&v| v != 0)).count();
            assert_eq!(nonzero_rows, 1);
        }
    }

    #[test]
    fn generator_is_deterministic_in_seed() {
        let a = build_generator(&desk_spec()).unwrap();
        let b = build_generator(&desk_spec()).unwrap();
        assert_eq!(a.matrix, b.matrix);
        let mut other = desk_spec();
        other.seed = 8;
        let c = build_generator(&other).unwrap();
        assert_ne!(a.matrix, c.matrix);
    }

    #[test]
    fn desk_generator_structure() {
        let spec = desk_spec();
        let g = build_generator(&spec).unwrap();
        assert_eq!(exact_rank(&g.matrix), 8);
        for j in 0..spec.n {
            assert!(g.column_degree(j) <= spec.d_star_cap);
        }
    }

    #[test]
    fn infeasible_when_slots_cannot_cover_rank() {
        let spec = GeneratorSpec { n: 8, l: 2, k: 1, k_g: 4, gamma: 2, upsilon: 2, s: 2, d_star_cap: 1, seed: 0 };
        assert!(matches!(build_generator(&spec), Err(DatasetError::InfeasibleSpec(_))));
    }

    #[test]
    fn infeasible_when_blocks_need_more_rows_than_exist() {
        let spec = GeneratorSpec { n: 20, l: 2, k: 7, k_g: 5, gamma: 2, upsilon: 2, s: 8, d_star_cap: 7, seed: 0 };
        assert!(matches!(build_generator(&spec), Err(DatasetError::InfeasibleSpec(_))));
    }

    #[test]
    fn all_messages_enumerated_for_small_space() {
        let spec = GeneratorSpec { n: 6, l: 2, k: 2, k_g: 2, gamma: 2, upsilon: 2, s: 4, d_star_cap: 2, seed: 1 };
        let g = build_generator(&spec).unwrap();
        let pm = synthesize_patterns(&g, PatternCount::All, 2, 4, 1).unwrap();
        assert_eq!(pm.kept + pm.rejected, 4);
    }

    #[test]
    fn zero_message_maps_to_zero_pattern_and_is_kept() {
        let g = build_generator(&desk_spec()).unwrap();
        let pm = synthesize_patterns(&g, PatternCount::All, 2, 4, 1).unwrap();
        let msgs = pm.messages.as_ref().unwrap();
        let idx = (0..msgs.rows()).find(|&i| msgs.row(i).iter().all(|&v| v == 0)).unwrap();
        assert!(pm.row(idx).iter().all(|&v| v == 0));
    }

    #[test]
    fn admissible_spec_rejects_nothing() {
        let spec = desk_spec();
        assert!(spec.is_admissible());
        let g = build_generator(&spec).unwrap();
        let pm = synthesize_patterns(&g, PatternCount::All, spec.upsilon, spec.s, 1).unwrap();
        assert_eq!(pm.rejected, 0);
        assert_eq!(pm.kept as u128, 1 << 8);
        // Exhaustive entry check against the column-degree bound.
        for i in 0..pm.count() {
            for (j, &v) in pm.row(i).iter().enumerate() {
                assert!(v >= 0 && v < spec.s);
                let dj = g.column_degree(j) as i64;
                assert!(v <= dj * (spec.gamma - 1) * (spec.upsilon - 1));
            }
        }
    }

    #[test]
    fn count_sampling_is_distinct_and_seeded() {
        let g = build_generator(&desk_spec()).unwrap();
        let a = synthesize_patterns(&g, PatternCount::Count(40), 2, 4, 9).unwrap();
        let b = synthesize_patterns(&g, PatternCount::Count(40), 2, 4, 9).unwrap();
        assert_eq!(a.patterns, b.patterns);
        let msgs = a.messages.as_ref().unwrap();
        let set: HashSet<Vec<i64>> = (0..msgs.rows()).map(|i| msgs.row(i).to_vec()).collect();
        assert_eq!(set.len(), 40);
    }

    #[test]
    fn count_exceeding_capacity_errors() {
        let g = build_generator(&tiny_spec()).unwrap();
        assert!(matches!(
            synthesize_patterns(&g, PatternCount::Count(5), 2, 2, 0),
            Err(DatasetError::CountExceedsCapacity { requested: 5, capacity: 4 })
        ));
    }

    #[test]
    fn verify_subspace_zero_row() {
        let spec = tiny_spec();
        let pm = PatternMatrix {
            patterns: IntMatrix::from_rows(vec![vec![0, 0, 0, 0]]),
            messages: None,
            spec,
            kept: 1,
            rejected: 0,
        };
        let rep = verify_subspace(&pm);
        assert_eq!(rep.global_rank, 0);
        assert!(rep.block_ranks.iter().all(|&r| r == 0));
        assert!(!rep.global_ok);
    }

    #[test]
    fn verify_subspace_flags_noise_row() {
        let spec = desk_spec();
        let g = build_generator(&spec).unwrap();
        let mut pm = synthesize_patterns(&g, PatternCount::All, 2, 4, 1).unwrap();
        let rep = verify_subspace(&pm);
        assert!(rep.global_ok);
        assert_eq!(rep.global_rank, 8);
        assert!(rep.block_ok.iter().all(|&b| b));

        // Swap one pattern for a vector outside the subspace; the global rank
        // must rise to k_g + 1 and be flagged.
        let mut probe = vec![0i64; spec.n];
        let mut found = false;
        for trial in 0..64 {
            for (j, p) in probe.iter_mut().enumerate() {
                *p = (((j + trial * 7) % 3) + 1) as i64;
            }
            let mut rows: Vec<Vec<i64>> = (0..pm.count()).map(|i| pm.row(i).to_vec()).collect();
            rows[0] = probe.clone();
            let stacked = IntMatrix::from_rows(rows);
            if exact_rank(&stacked) == spec.k_g + 1 {
                pm.patterns = stacked;
                found = true;
                break;
            }
        }
        assert!(found, "could not find a probe outside the subspace");
        let rep = verify_subspace(&pm);
        assert_eq!(rep.global_rank, spec.k_g + 1);
        assert!(!rep.global_ok);
    }

    #[test]
    fn noise_weight_zero_is_identity() {
        let x = vec![1, 2, 3, 0];
        let (y, z) = inject_noise(&x, 0, 4, 5).unwrap();
        assert_eq!(y, x);
        assert_eq!(z.weight(), 0);
    }

    #[test]
    fn noise_weight_three_touches_three_positions() {
        let x = vec![2i64; 10];
        let (_, z) = inject_noise(&x, 3, 5, 11).unwrap();
        assert_eq!(z.weight(), 3);
        assert!(z.z.iter().all(|&v| (-1..=1).contains(&v)));
        // Pre-clip, exactly the noisy positions differ.
        let pre: Vec<i64> = x.iter().zip(&z.z).map(|(&a, &b)| a + b).collect();
        let diff = pre.iter().zip(&x).filter(|(a, b)| a != b).count();
        assert_eq!(diff, 3);
    }

    #[test]
    fn clipping_pins_boundary_states() {
        // Entry at 0 hit with -1 stays 0; entry at S-1 hit with +1 stays S-1.
        let x = vec![0i64, 3, 0, 3, 0, 3, 0, 3];
        for seed in 0..40 {
            let (y, z) = inject_noise(&x, 8, 4, seed).unwrap();
            assert_eq!(z.weight(), 8);
            assert!(y.iter().all(|&v| (0..4).contains(&v)));
            for (i, &d) in z.z.iter().enumerate() {
                if x[i] == 0 && d == -1 {
                    assert_eq!(y[i], 0);
                }
                if x[i] == 3 && d == 1 {
                    assert_eq!(y[i], 3);
                }
            }
        }
    }

    #[test]
    fn noise_is_reproducible_bit_for_bit() {
        let x: Vec<i64> = (0..50).map(|i| i % 4).collect();
        let (y1, z1) = inject_noise(&x, 7, 4, 123).unwrap();
        let (y2, z2) = inject_noise(&x, 7, 4, 123).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(z1, z2);
    }

    #[test]
    fn noise_weight_too_large() {
        assert!(matches!(
            inject_noise(&[1, 2], 3, 4, 0),
            Err(DatasetError::WeightTooLarge { weight: 3, n: 2 })
        ));
    }

    #[test]
    fn pattern_and_generator_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = desk_spec();
        let g = build_generator(&spec).unwrap();
        let pm = synthesize_patterns(&g, PatternCount::Count(30), 2, 4, 2).unwrap();

        let gp = dir.path().join("generator.csv");
        let pp = dir.path().join("dataset.csv");
        save_generator(&g, &gp).unwrap();
        save_patterns(&pm, &pp).unwrap();

        let g2 = load_generator(&gp).unwrap();
        assert_eq!(g2.matrix, g.matrix);
        assert_eq!(g2.spec.k_g, spec.k_g);
        let pm2 = load_patterns(&pp).unwrap();
        assert_eq!(pm2.patterns, pm.patterns);
        assert_eq!(pm2.spec.s, 4);
    }
}
