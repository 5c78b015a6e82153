//! Deterministic synthetic data for the benchmarks: documents with passages
//! and two-level hierarchical tables at a controllable corpus size, plus a
//! matching query mix. No randomness, so timings compare across runs.

use hetdoc_core::{Cell, Document, HeaderNode, HeaderTree, HierarchicalTable, Orientation};

const TOPICS: &[&str] = &[
    "revenue",
    "earnings",
    "inventory",
    "logistics",
    "research",
    "marketing",
    "hardware",
    "software",
    "services",
    "exports",
    "salaries",
    "facilities",
];

const FILLER: &[&str] = &[
    "grew",
    "declined",
    "held",
    "steady",
    "across",
    "regions",
    "during",
    "the",
    "fiscal",
    "year",
    "with",
    "strong",
    "demand",
    "from",
    "key",
    "segments",
    "despite",
    "headwinds",
];

fn passage(doc: usize, p: usize) -> String {
    let mut words = Vec::with_capacity(14);
    words.push(format!("company{doc:03}"));
    words.push(TOPICS[(doc + p) % TOPICS.len()].to_string());
    for w in 0..12 {
        words.push(FILLER[(doc * 7 + p * 3 + w) % FILLER.len()].to_string());
    }
    words.join(" ")
}

fn header_tree(orientation: Orientation, prefix: &str, branches: usize) -> HeaderTree {
    let roots = (0..branches)
        .map(|b| {
            HeaderNode::branch(
                format!("{prefix} group {b}"),
                vec![
                    HeaderNode::leaf(format!("{prefix} {b} actual")),
                    HeaderNode::leaf(format!("{prefix} {b} plan")),
                ],
            )
        })
        .collect();
    HeaderTree::new(orientation, roots).expect("valid synthetic header tree")
}

fn table(doc: usize) -> HierarchicalTable {
    let left = header_tree(Orientation::Left, "metric", 3);
    let top = header_tree(Orientation::Top, "period", 2);
    let data = (0..left.leaf_count())
        .map(|r| {
            (0..top.leaf_count())
                .map(|c| {
                    let v = (doc * 97 + r * 13 + c * 7) % 9000;
                    match (r + c) % 4 {
                        0 => Cell::parse(format!("{v}")),
                        1 => Cell::parse(format!("{},{:03}", v / 100 + 1, v % 1000)),
                        2 => Cell::parse(format!("{}.{}%", v % 90, v % 10)),
                        _ => Cell::parse(format!("({v})")),
                    }
                })
                .collect()
        })
        .collect();
    HierarchicalTable::new(
        format!("table{doc:03}"),
        Some(format!(
            "Performance of company{doc:03} by metric and period"
        )),
        left,
        top,
        data,
    )
    .expect("valid synthetic table")
}

/// `count` documents, each with four passages and one 6x4 two-level table.
pub fn sample_documents(count: usize) -> Vec<Document> {
    (0..count)
        .map(|doc| {
            let passages = (0..4).map(|p| passage(doc, p)).collect();
            Document::new(format!("doc{doc:03}"), passages, vec![table(doc)])
                .expect("valid synthetic document")
        })
        .collect()
}

/// Queries that mix corpus vocabulary with header labels so both indices do
/// real scoring work.
pub fn sample_queries(count: usize) -> Vec<String> {
    (0..count)
        .map(|q| {
            format!(
                "what was the {} of company{:03} for metric {} actual during the fiscal year",
                TOPICS[q % TOPICS.len()],
                q % 40,
                q % 3,
            )
        })
        .collect()
}
