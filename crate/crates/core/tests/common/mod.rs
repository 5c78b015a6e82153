//! Test-side oracles and generators shared by the acceptance suite.
//!
//! Every oracle here re-derives its expected values from first principles —
//! plain recursive walks, brute-force scoring loops, exact rational
//! arithmetic — without touching the engine's index or tree structures, so
//! agreement between the two is meaningful evidence of correctness.

use std::collections::{BTreeMap, BTreeSet};

use num::{BigInt, BigRational, Signed, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use hetdoc_core::table::HeaderNode;

// ---------------------------------------------------------------------------
// Header-forest generation and exhaustive DFS oracles (criteria 1 and 2)
// ---------------------------------------------------------------------------

/// A test-side header tree: the oracle walks this directly, the engine gets an
/// equivalent `HeaderNode` conversion.
#[derive(Debug, Clone)]
pub struct SpecNode {
    pub label: String,
    pub children: Vec<SpecNode>,
}

impl SpecNode {
    pub fn leaf(label: impl Into<String>) -> Self {
        SpecNode {
            label: label.into(),
            children: Vec::new(),
        }
    }
}

/// Random forest with exactly `leaves` leaves and node levels within
/// `1..=max_depth`. Labels come from `naming`; a small fraction repeat so the
/// duplicate-path lookup rule gets exercised.
pub fn random_forest(
    rng: &mut ChaCha8Rng,
    leaves: usize,
    max_depth: u32,
    naming: &mut LabelSource,
) -> Vec<SpecNode> {
    assert!(leaves >= 1 && max_depth >= 1);
    if max_depth == 1 {
        return (0..leaves)
            .map(|_| SpecNode::leaf(naming.next(rng)))
            .collect();
    }
    // Partition the leaf budget into 1..=leaves sibling groups.
    let groups = rng.random_range(1..=leaves);
    let mut sizes = vec![1usize; groups];
    for _ in 0..(leaves - groups) {
        let at = rng.random_range(0..groups);
        sizes[at] += 1;
    }
    sizes
        .into_iter()
        .map(|size| {
            if size == 1 && rng.random_bool(0.6) {
                SpecNode::leaf(naming.next(rng))
            } else {
                SpecNode {
                    label: naming.next(rng),
                    children: random_forest(rng, size, max_depth - 1, naming),
                }
            }
        })
        .collect()
}

/// Label generator: mostly fresh labels, occasionally a repeat of an earlier
/// one (to create duplicate header paths).
pub struct LabelSource {
    issued: Vec<String>,
    counter: usize,
}

impl LabelSource {
    pub fn new() -> Self {
        LabelSource {
            issued: Vec::new(),
            counter: 0,
        }
    }

    pub fn next(&mut self, rng: &mut ChaCha8Rng) -> String {
        if !self.issued.is_empty() && rng.random_bool(0.1) {
            let at = rng.random_range(0..self.issued.len());
            return self.issued[at].clone();
        }
        self.counter += 1;
        let label = format!("{} {}", WORDS[self.counter % WORDS.len()], self.counter);
        self.issued.push(label.clone());
        label
    }
}

const WORDS: &[&str] = &[
    "Revenue",
    "Expenses",
    "Assets",
    "Q1",
    "Q2",
    "2013",
    "2014",
    "Domestic",
    "Export",
    "Total",
    "Net",
    "Gross",
    "Operating",
    "Capital",
    "Services",
];

pub fn to_header_nodes(forest: &[SpecNode]) -> Vec<HeaderNode> {
    forest
        .iter()
        .map(|n| HeaderNode::branch(n.label.clone(), to_header_nodes(&n.children)))
        .collect()
}

/// All root-to-leaf label paths, leftmost first.
pub fn oracle_leaf_paths(forest: &[SpecNode]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    for node in forest {
        leaf_walk(node, &mut prefix, &mut out);
    }
    out
}

fn leaf_walk(node: &SpecNode, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    prefix.push(node.label.clone());
    if node.children.is_empty() {
        out.push(prefix.clone());
    } else {
        for child in &node.children {
            leaf_walk(child, prefix, out);
        }
    }
    prefix.pop();
}

/// Root-to-node paths for every node at exactly `level` (roots are level 1),
/// in pre-order.
pub fn oracle_paths_at_level(forest: &[SpecNode], level: u32) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    for node in forest {
        level_walk(node, 1, level, &mut prefix, &mut out);
    }
    out
}

fn level_walk(
    node: &SpecNode,
    depth: u32,
    want: u32,
    prefix: &mut Vec<String>,
    out: &mut Vec<Vec<String>>,
) {
    prefix.push(node.label.clone());
    if depth == want {
        out.push(prefix.clone());
    }
    for child in &node.children {
        level_walk(child, depth + 1, want, prefix, out);
    }
    prefix.pop();
}

pub fn oracle_node_count(forest: &[SpecNode]) -> usize {
    forest
        .iter()
        .map(|n| 1 + oracle_node_count(&n.children))
        .sum()
}

pub fn oracle_depth(forest: &[SpecNode]) -> u32 {
    forest
        .iter()
        .map(|n| {
            if n.children.is_empty() {
                1
            } else {
                1 + oracle_depth(&n.children)
            }
        })
        .max()
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Independent tokenizer (criteria 3 and 7)
// ---------------------------------------------------------------------------

/// Lowercase, split on every non-alphanumeric character, drop empty segments —
/// implemented as a manual scan rather than `str::split`.
pub fn oracle_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            tokens.push(text[s..i].to_lowercase());
        }
    }
    if let Some(s) = start {
        tokens.push(text[s..].to_lowercase());
    }
    tokens
}

// ---------------------------------------------------------------------------
// Brute-force Okapi BM25 (criteria 3 and 7)
// ---------------------------------------------------------------------------

/// A corpus entry as the oracle sees it: owning document and raw text.
#[derive(Debug, Clone)]
pub struct OracleChunk {
    pub doc_id: String,
    pub text: String,
}

/// Brute-force document ranking: per-chunk Okapi scores summed over the
/// distinct query terms in ascending term order, max-rollup per document,
/// zero scores dropped, ties by ascending doc id, truncated to `n`.
pub fn oracle_bm25(
    chunks: &[OracleChunk],
    query: &str,
    n: usize,
    k1: f64,
    b: f64,
) -> Vec<(String, f64)> {
    let tokenized: Vec<Vec<String>> = chunks.iter().map(|c| oracle_tokenize(&c.text)).collect();
    let total = chunks.len() as f64;
    let avg_len = tokenized.iter().map(|t| t.len() as f64).sum::<f64>() / chunks.len() as f64;
    let mut terms: Vec<String> = oracle_tokenize(query);
    terms.sort();
    terms.dedup();
    let dfs: Vec<f64> = terms
        .iter()
        .map(|term| {
            tokenized
                .iter()
                .filter(|tokens| tokens.iter().any(|t| t == term))
                .count() as f64
        })
        .collect();

    let mut doc_best: BTreeMap<String, f64> = BTreeMap::new();
    for (i, chunk_tokens) in tokenized.iter().enumerate() {
        let mut score = 0.0f64;
        for (term, &df) in terms.iter().zip(&dfs) {
            if df == 0.0 {
                continue;
            }
            let tf = chunk_tokens.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (total - df + 0.5) / (df + 0.5)).ln();
            let len_norm = 1.0 - b + b * chunk_tokens.len() as f64 / avg_len;
            score += idf * tf / (tf + k1 * len_norm);
        }
        if score > 0.0 {
            let entry = doc_best
                .entry(chunks[i].doc_id.clone())
                .or_insert(f64::NEG_INFINITY);
            if score > *entry {
                *entry = score;
            }
        }
    }
    let mut ranked: Vec<(String, f64)> = doc_best.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(n);
    ranked
}

// ---------------------------------------------------------------------------
// Bag-of-words embeddings and cosine ranking (criterion 7)
// ---------------------------------------------------------------------------

/// Independent bag-of-words model: vocabulary = sorted distinct corpus
/// tokens; a text embeds as its L2-normalized term-frequency vector.
pub struct OracleBow {
    vocab: Vec<String>,
}

impl OracleBow {
    pub fn new<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let vocab: BTreeSet<String> = texts.into_iter().flat_map(oracle_tokenize).collect();
        OracleBow {
            vocab: vocab.into_iter().collect(),
        }
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0f64; self.vocab.len()];
        for token in oracle_tokenize(text) {
            if let Ok(i) = self.vocab.binary_search(&token) {
                counts[i] += 1.0;
            }
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut counts {
                *v /= norm;
            }
        }
        counts
    }
}

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Brute-force dense ranking: cosine against every stored chunk vector,
/// max-rollup per document, zero similarities dropped, ties by ascending
/// doc id, truncated to `m`.
pub fn oracle_embedding_rank(
    chunks: &[OracleChunk],
    vectors: &[Vec<f64>],
    query_vec: &[f64],
    m: usize,
) -> Vec<(String, f64)> {
    let mut doc_best: BTreeMap<String, f64> = BTreeMap::new();
    for (i, vector) in vectors.iter().enumerate() {
        let score = oracle_cosine(query_vec, vector);
        if score > 0.0 {
            let entry = doc_best
                .entry(chunks[i].doc_id.clone())
                .or_insert(f64::NEG_INFINITY);
            if score > *entry {
                *entry = score;
            }
        }
    }
    let mut ranked: Vec<(String, f64)> = doc_best.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(m);
    ranked
}

// ---------------------------------------------------------------------------
// Ensemble re-merge oracle (criteria 4, 7 and 8)
// ---------------------------------------------------------------------------

/// Re-merge two document rankings from their id sequences: order by best
/// 1-based rank, embedding provenance first on rank ties, then ascending doc
/// id; scores are `1 / best_rank`.
pub fn oracle_merge(bm25_ids: &[String], embedding_ids: &[String]) -> Vec<(String, f64)> {
    let all: BTreeSet<&String> = bm25_ids.iter().chain(embedding_ids.iter()).collect();
    let mut keyed: Vec<(usize, u8, &String)> = all
        .into_iter()
        .map(|doc| {
            let bm25_rank = bm25_ids.iter().position(|d| d == doc).map(|p| p + 1);
            let emb_rank = embedding_ids.iter().position(|d| d == doc).map(|p| p + 1);
            // Embedding provenance (0) sorts before BM25 (1) on rank ties.
            let (rank, provenance) = match (emb_rank, bm25_rank) {
                (Some(e), Some(b)) if e <= b => (e, 0u8),
                (Some(e), None) => (e, 0),
                (_, Some(b)) => (b, 1),
                _ => unreachable!("doc came from one of the lists"),
            };
            (rank, provenance, doc)
        })
        .collect();
    keyed.sort();
    keyed
        .into_iter()
        .map(|(rank, _, doc)| (doc.clone(), 1.0 / rank as f64))
        .collect()
}

// ---------------------------------------------------------------------------
// Exact rational expression oracle (criterion 6)
// ---------------------------------------------------------------------------

/// Test-side arithmetic expression, rendered with explicit parentheses.
#[derive(Debug, Clone)]
pub enum Expr {
    Num(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn render(&self) -> String {
        match self {
            Expr::Num(s) => s.clone(),
            Expr::Neg(x) => format!("(-{})", x.render()),
            Expr::Add(l, r) => format!("({}+{})", l.render(), r.render()),
            Expr::Sub(l, r) => format!("({}-{})", l.render(), r.render()),
            Expr::Mul(l, r) => format!("({}*{})", l.render(), r.render()),
            Expr::Div(l, r) => format!("({}/{})", l.render(), r.render()),
        }
    }

    /// Exact value under unbounded rational arithmetic.
    pub fn rational(&self) -> BigRational {
        match self {
            Expr::Num(s) => parse_rational_literal(s),
            Expr::Neg(x) => -x.rational(),
            Expr::Add(l, r) => l.rational() + r.rational(),
            Expr::Sub(l, r) => l.rational() - r.rational(),
            Expr::Mul(l, r) => l.rational() * r.rational(),
            Expr::Div(l, r) => l.rational() / r.rational(),
        }
    }
}

fn parse_rational_literal(s: &str) -> BigRational {
    match s.split_once('.') {
        None => BigRational::from_integer(s.parse::<i64>().unwrap().into()),
        Some((int, frac)) => {
            let scale = BigInt::from(10u32).pow(frac.len() as u32);
            let digits: BigInt = format!("{int}{frac}").parse().unwrap();
            BigRational::new(digits, scale)
        }
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    bigint_to_f64(r.numer()) / bigint_to_f64(r.denom())
}

fn bigint_to_f64(i: &BigInt) -> f64 {
    i.to_string().parse::<f64>().unwrap()
}

/// Random expression with at most `ops` binary operators. Guards keep the
/// engine's per-operation significant-digit rounding within the acceptance
/// tolerance: divisors are never zero, and additive results never cancel
/// below the larger operand's magnitude (each operation can then at most
/// double the accumulated relative rounding error).
pub fn random_expr(rng: &mut ChaCha8Rng, ops: usize) -> Expr {
    if ops == 0 {
        let expr = random_literal(rng);
        return if rng.random_bool(0.15) {
            Expr::Neg(Box::new(expr))
        } else {
            expr
        };
    }
    let left_ops = rng.random_range(0..ops);
    let right_ops = ops - 1 - left_ops;
    let left = random_expr(rng, left_ops);
    loop {
        let right = random_expr(rng, right_ops);
        let (a, b) = (left.rational(), right.rational());
        match rng.random_range(0..4) {
            0 => {
                if no_cancellation(&a, &(a.clone() + &b), &b) {
                    return Expr::Add(Box::new(left), Box::new(right));
                }
            }
            1 => {
                if no_cancellation(&a, &(a.clone() - &b), &b) {
                    return Expr::Sub(Box::new(left), Box::new(right));
                }
            }
            2 => return Expr::Mul(Box::new(left), Box::new(right)),
            _ => {
                if !b.is_zero() {
                    return Expr::Div(Box::new(left), Box::new(right));
                }
            }
        }
    }
}

/// True when `result = a ± b` kept at least half the larger operand's
/// magnitude, bounding how much one addition can amplify rounding error.
fn no_cancellation(a: &BigRational, result: &BigRational, b: &BigRational) -> bool {
    let larger = a.abs().max(b.abs());
    result.abs() * BigInt::from(2) >= larger
}

fn random_literal(rng: &mut ChaCha8Rng) -> Expr {
    if rng.random_bool(0.4) {
        let whole = rng.random_range(0..1000);
        let frac = rng.random_range(1..100);
        Expr::Num(format!("{whole}.{frac:02}"))
    } else {
        Expr::Num(rng.random_range(1..1000).to_string())
    }
}

// ---------------------------------------------------------------------------
// Heuristic token cost (criterion 5)
// ---------------------------------------------------------------------------

pub fn oracle_token_cost(text: &str) -> usize {
    text.len().div_ceil(4)
}
