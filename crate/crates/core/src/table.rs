//! Hierarchical tables: ordered header forests on both axes plus a dense data
//! grid addressed by (left leaf, top leaf) coordinates.
//!
//! A table has a *left* header tree whose leaves name the data rows and a
//! *top* header tree whose leaves name the data columns. Non-leaf header
//! nodes group the rows/columns beneath them; the grouping structure is what
//! the hierarchical linearization in [`crate::corpus`] exploits. Flattening a
//! table joins every root-to-leaf label path into a single composite label,
//! producing an ordinary one-level table over the same grid.

use std::fmt;

use thiserror::Error;

/// Separator used when joining header labels along a path into one composite
/// label, e.g. `Revenue | Electronics`.
pub const PATH_SEPARATOR: &str = " | ";

/// Errors raised by table construction and lookup.
#[derive(Debug, Error)]
pub enum TableError {
    /// A header tree was constructed with no root nodes.
    #[error("header tree for {0:?} axis has no nodes")]
    EmptyTree(Orientation),
    /// A header node label was empty (after trimming).
    #[error("empty header label in {0:?} tree")]
    EmptyLabel(Orientation),
    /// A table id was empty.
    #[error("table id must be non-empty")]
    EmptyTableId,
    /// `prefix_paths` was asked for a level outside `1..=depth`.
    #[error("level {level} out of range 1..={depth}")]
    LevelOutOfRange { level: u32, depth: u32 },
    /// A cell lookup named a path that is not a leaf path of the tree.
    #[error("no {orientation:?} leaf path {path:?} in table {table_id}")]
    PathNotFound {
        table_id: String,
        orientation: Orientation,
        path: String,
    },
    /// The data grid does not match the header trees' leaf counts.
    #[error(
        "table {table_id} data grid is {got_rows}x{got_cols}, \
         headers require {want_rows}x{want_cols}"
    )]
    GridShape {
        table_id: String,
        want_rows: usize,
        want_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    /// A tree was attached to the wrong axis of a table.
    #[error("tree for {expected:?} axis has orientation {got:?}")]
    WrongOrientation {
        expected: Orientation,
        got: Orientation,
    },
}

/// Which axis of the table a header tree (or path) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Column headers above the grid.
    Top,
    /// Row headers to the left of the grid.
    Left,
}

/// One node in a header tree. Nodes are created unleveled; the tree assigns
/// 1-based levels on construction (roots are level 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderNode {
    label: String,
    level: u32,
    children: Vec<HeaderNode>,
}

impl HeaderNode {
    /// A leaf node with no children.
    pub fn leaf(label: impl Into<String>) -> Self {
        Self::branch(label, Vec::new())
    }

    /// An internal node grouping `children` (which may be empty, making it a
    /// leaf).
    pub fn branch(label: impl Into<String>, children: Vec<HeaderNode>) -> Self {
        HeaderNode {
            label: label.into(),
            level: 0,
            children,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// 1-based depth of this node; roots are level 1. Zero only before the
    /// node is attached to a tree.
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn children(&self) -> &[HeaderNode] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn assign_levels(&mut self, level: u32) {
        self.level = level;
        for child in &mut self.children {
            child.assign_levels(level + 1);
        }
    }

    fn validate(&self, orientation: Orientation) -> Result<(), TableError> {
        if self.label.trim().is_empty() {
            return Err(TableError::EmptyLabel(orientation));
        }
        for child in &self.children {
            child.validate(orientation)?;
        }
        Ok(())
    }

    fn max_level(&self) -> u32 {
        self.children
            .iter()
            .map(HeaderNode::max_level)
            .max()
            .unwrap_or(self.level)
    }
}

/// A root-to-node label path within one header tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeaderPath {
    orientation: Orientation,
    labels: Vec<String>,
}

impl HeaderPath {
    pub fn new(orientation: Orientation, labels: Vec<String>) -> Self {
        HeaderPath {
            orientation,
            labels,
        }
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The composite label: all path labels joined with [`PATH_SEPARATOR`].
    pub fn joined(&self) -> String {
        self.labels.join(PATH_SEPARATOR)
    }
}

impl fmt::Display for HeaderPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined())
    }
}

/// A pre-order view of one node in a header tree: its path, level, and the
/// contiguous range of leaves beneath it.
#[derive(Debug, Clone)]
pub struct NodeView {
    /// Root-to-node label path.
    pub path: HeaderPath,
    /// 1-based level of the node.
    pub level: u32,
    /// Index of the first leaf covered by this node's subtree, in leaf order.
    pub leaf_start: usize,
    /// Number of leaves covered by this node's subtree (>= 1).
    pub leaf_count: usize,
    /// Whether the node itself is a leaf.
    pub is_leaf: bool,
}

/// An ordered forest of header nodes for one axis of a table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderTree {
    orientation: Orientation,
    roots: Vec<HeaderNode>,
    depth: u32,
}

impl HeaderTree {
    /// Build a header tree, validating that at least one root exists and
    /// every label is non-empty, and assigning 1-based levels.
    pub fn new(orientation: Orientation, mut roots: Vec<HeaderNode>) -> Result<Self, TableError> {
        if roots.is_empty() {
            return Err(TableError::EmptyTree(orientation));
        }
        for root in &mut roots {
            root.validate(orientation)?;
            root.assign_levels(1);
        }
        let depth = roots.iter().map(HeaderNode::max_level).max().unwrap_or(1);
        Ok(HeaderTree {
            orientation,
            roots,
            depth,
        })
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn roots(&self) -> &[HeaderNode] {
        &self.roots
    }

    /// Maximum node level in the tree (>= 1).
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Every node of the tree in pre-order (depth-first, children in
    /// declaration order), with its path, level, and covered leaf range.
    pub fn nodes(&self) -> Vec<NodeView> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        let mut next_leaf = 0usize;
        for root in &self.roots {
            self.walk(root, &mut prefix, &mut next_leaf, &mut out);
        }
        out
    }

    fn walk(
        &self,
        node: &HeaderNode,
        prefix: &mut Vec<String>,
        next_leaf: &mut usize,
        out: &mut Vec<NodeView>,
    ) {
        prefix.push(node.label.clone());
        let slot = out.len();
        // Placeholder pushed first so parents precede children (pre-order);
        // the leaf range is patched once the subtree has been walked.
        out.push(NodeView {
            path: HeaderPath::new(self.orientation, prefix.clone()),
            level: node.level,
            leaf_start: *next_leaf,
            leaf_count: 0,
            is_leaf: node.is_leaf(),
        });
        if node.is_leaf() {
            *next_leaf += 1;
            out[slot].leaf_count = 1;
        } else {
            let start = out[slot].leaf_start;
            for child in &node.children {
                self.walk(child, prefix, next_leaf, out);
            }
            out[slot].leaf_count = *next_leaf - start;
        }
        prefix.pop();
    }

    /// Paths to every leaf, left to right. Their order defines the data
    /// grid's row (left tree) or column (top tree) order.
    pub fn leaf_paths(&self) -> Vec<HeaderPath> {
        self.nodes()
            .into_iter()
            .filter(|n| n.is_leaf)
            .map(|n| n.path)
            .collect()
    }

    /// Number of leaves in the tree.
    pub fn leaf_count(&self) -> usize {
        self.nodes().iter().filter(|n| n.is_leaf).count()
    }

    /// Total number of nodes in the tree.
    pub fn node_count(&self) -> usize {
        self.nodes().len()
    }

    /// Paths to every node at exactly `level`, in pre-order. Errors when
    /// `level` is outside `1..=depth()`.
    pub fn prefix_paths(&self, level: u32) -> Result<Vec<HeaderPath>, TableError> {
        if level == 0 || level > self.depth {
            return Err(TableError::LevelOutOfRange {
                level,
                depth: self.depth,
            });
        }
        Ok(self
            .nodes()
            .into_iter()
            .filter(|n| n.level == level)
            .map(|n| n.path)
            .collect())
    }

    /// Depth-1 tree with one leaf per leaf path of `self`, labeled with the
    /// joined path. Flattening is idempotent: a depth-1 tree flattens to
    /// itself.
    pub fn flattened(&self) -> HeaderTree {
        let roots = self
            .leaf_paths()
            .into_iter()
            .map(|p| HeaderNode::leaf(p.joined()))
            .collect();
        HeaderTree::new(self.orientation, roots)
            .expect("flattening a valid tree yields a valid tree")
    }
}

/// One data cell: the raw string as it appeared, plus a best-effort numeric
/// reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    raw: String,
    numeric: Option<f64>,
    unit_hint: Option<String>,
}

impl Cell {
    /// Parse a raw cell string.
    ///
    /// - `""`, `"-"`, and `"N/A"` (after trimming, case-insensitive) are
    ///   missing values: no numeric reading.
    /// - Thousands separators (commas) and currency symbols are stripped.
    /// - `(123)` reads as -123 (accounting negative).
    /// - A trailing `%` sets `unit_hint` to `"%"`; the numeric value is kept
    ///   unscaled (`"4.5%"` reads as 4.5).
    /// - Anything that still fails to parse is kept as text with no numeric
    ///   reading.
    pub fn parse(raw: impl Into<String>) -> Cell {
        let raw = raw.into();
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed == "-" || trimmed.eq_ignore_ascii_case("n/a") {
            return Cell {
                raw,
                numeric: None,
                unit_hint: None,
            };
        }
        let cleaned: String = trimmed
            .chars()
            .filter(|c| !matches!(c, ',' | '$' | '€' | '£' | '¥') && !c.is_whitespace())
            .collect();
        let mut body = cleaned.as_str();
        let mut negative = false;
        if body.len() >= 2 && body.starts_with('(') && body.ends_with(')') {
            negative = true;
            body = &body[1..body.len() - 1];
        }
        let mut percent = false;
        if let Some(stripped) = body.strip_suffix('%') {
            percent = true;
            body = stripped;
        }
        match body.parse::<f64>() {
            Ok(v) if v.is_finite() => Cell {
                raw,
                numeric: Some(if negative { -v } else { v }),
                unit_hint: percent.then(|| "%".to_string()),
            },
            _ => Cell {
                raw,
                numeric: None,
                unit_hint: None,
            },
        }
    }

    /// The cell text exactly as it appeared in the source document.
    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Numeric reading of the cell, if it has one.
    pub fn numeric(&self) -> Option<f64> {
        self.numeric
    }

    /// Unit suffix detected during parsing (currently only `"%"`).
    pub fn unit_hint(&self) -> Option<&str> {
        self.unit_hint.as_deref()
    }
}

/// A titled data grid with hierarchical headers on both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalTable {
    table_id: String,
    title: Option<String>,
    left: HeaderTree,
    top: HeaderTree,
    data: Vec<Vec<Cell>>,
}

impl HierarchicalTable {
    /// Build a table, checking axis orientations and that `data` is an
    /// `m x n` grid where `m`/`n` are the left/top trees' leaf counts.
    pub fn new(
        table_id: impl Into<String>,
        title: Option<String>,
        left: HeaderTree,
        top: HeaderTree,
        data: Vec<Vec<Cell>>,
    ) -> Result<Self, TableError> {
        let table_id = table_id.into();
        if table_id.trim().is_empty() {
            return Err(TableError::EmptyTableId);
        }
        if left.orientation() != Orientation::Left {
            return Err(TableError::WrongOrientation {
                expected: Orientation::Left,
                got: left.orientation(),
            });
        }
        if top.orientation() != Orientation::Top {
            return Err(TableError::WrongOrientation {
                expected: Orientation::Top,
                got: top.orientation(),
            });
        }
        let want_rows = left.leaf_count();
        let want_cols = top.leaf_count();
        let got_rows = data.len();
        let got_cols = data.iter().map(Vec::len).max().unwrap_or(0);
        let rectangular = data.iter().all(|row| row.len() == want_cols);
        if got_rows != want_rows || !rectangular {
            return Err(TableError::GridShape {
                table_id,
                want_rows,
                want_cols,
                got_rows,
                got_cols,
            });
        }
        Ok(HierarchicalTable {
            table_id,
            title,
            left,
            top,
            data,
        })
    }

    pub fn table_id(&self) -> &str {
        &self.table_id
    }

    pub fn title(&self) -> Option<&str> {
        self.title.as_deref()
    }

    pub fn left(&self) -> &HeaderTree {
        &self.left
    }

    pub fn top(&self) -> &HeaderTree {
        &self.top
    }

    /// Number of data rows (left-tree leaves).
    pub fn n_rows(&self) -> usize {
        self.data.len()
    }

    /// Number of data columns (top-tree leaves).
    pub fn n_cols(&self) -> usize {
        self.data.first().map(Vec::len).unwrap_or(0)
    }

    /// Cell at grid position (`row`, `col`) in leaf order.
    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.data[row][col]
    }

    pub fn data(&self) -> &[Vec<Cell>] {
        &self.data
    }

    /// Look up a cell by its full left and top leaf paths. When duplicate
    /// label paths exist, the first (leftmost) match in leaf order wins.
    pub fn locate_cell(
        &self,
        left_path: &HeaderPath,
        top_path: &HeaderPath,
    ) -> Result<&Cell, TableError> {
        let row = self.leaf_position(&self.left, left_path)?;
        let col = self.leaf_position(&self.top, top_path)?;
        Ok(&self.data[row][col])
    }

    fn leaf_position(&self, tree: &HeaderTree, path: &HeaderPath) -> Result<usize, TableError> {
        if path.orientation() == tree.orientation() {
            if let Some(pos) = tree
                .leaf_paths()
                .iter()
                .position(|p| p.labels() == path.labels())
            {
                return Ok(pos);
            }
        }
        Err(TableError::PathNotFound {
            table_id: self.table_id.clone(),
            orientation: tree.orientation(),
            path: path.joined(),
        })
    }

    /// The flat equivalent of this table: both header trees flattened to
    /// depth 1 (composite labels), same grid, same id and title.
    pub fn flattened(&self) -> HierarchicalTable {
        HierarchicalTable {
            table_id: self.table_id.clone(),
            title: self.title.clone(),
            left: self.left.flattened(),
            top: self.top.flattened(),
            data: self.data.clone(),
        }
    }
}
