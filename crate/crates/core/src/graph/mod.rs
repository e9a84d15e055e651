//! Compressed-sparse-row graphs and the preprocessing the layers rely on.
//!
//! Row `i` of a [`CsrGraph`] lists the in-neighbours of node `i`: an entry
//! `(i, j)` means messages flow from `j` into `i`. Rows are kept in
//! canonical form (strictly increasing column indices), which the kernels
//! rely on for a fixed reduction order and for tie-breaking in max/min
//! gradients.

mod generate;
pub mod io;

pub use generate::{generate_graph, planted_partition, GraphSpec};

use crate::error::{EgcError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrGraph {
    num_nodes: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    coeff: Option<Vec<f32>>,
    has_self_loops: bool,
}

impl CsrGraph {
    /// Graph with `num_nodes` nodes and no edges.
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            row_ptr: vec![0; num_nodes + 1],
            col_idx: Vec::new(),
            coeff: None,
            has_self_loops: num_nodes == 0,
        }
    }

    /// Build a canonical graph from `(src, dst)` pairs. Duplicates are merged.
    ///
    /// The pair `(src, dst)` is stored in row `dst`: `src` becomes an
    /// in-neighbour of `dst`.
    pub fn from_edges(edges: &[(usize, usize)], num_nodes: usize) -> Result<Self> {
        if num_nodes == 0 && !edges.is_empty() {
            return Err(EgcError::config("edges given for a graph with zero nodes"));
        }
        if num_nodes > u32::MAX as usize {
            return Err(EgcError::config("node count exceeds u32 index range"));
        }
        let mut counts = vec![0usize; num_nodes + 1];
        for &(s, d) in edges {
            for index in [s, d] {
                if index >= num_nodes {
                    return Err(EgcError::IndexOutOfRange { index, num_nodes });
                }
            }
            counts[d + 1] += 1;
        }
        for i in 0..num_nodes {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0u32; edges.len()];
        for &(s, d) in edges {
            cols[fill[d]] = s as u32;
            fill[d] += 1;
        }

        let mut row_ptr = Vec::with_capacity(num_nodes + 1);
        let mut col_idx = Vec::with_capacity(edges.len());
        row_ptr.push(0);
        for i in 0..num_nodes {
            let row = &mut cols[counts[i]..counts[i + 1]];
            row.sort_unstable();
            let mut last = None;
            for &c in row.iter() {
                if last != Some(c) {
                    col_idx.push(c);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self::assemble(num_nodes, row_ptr, col_idx, None))
    }

    /// Build from an undirected edge list, inserting both directions.
    pub fn from_undirected_edges(edges: &[(usize, usize)], num_nodes: usize) -> Result<Self> {
        let both: Vec<_> = edges
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .collect();
        Self::from_edges(&both, num_nodes)
    }

    /// Validate raw CSR arrays and wrap them.
    pub fn from_parts(
        num_nodes: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        coeff: Option<Vec<f32>>,
    ) -> Result<Self> {
        if row_ptr.len() != num_nodes + 1 {
            return Err(EgcError::shape("row_ptr length", num_nodes + 1, row_ptr.len()));
        }
        if row_ptr[0] != 0 || row_ptr[num_nodes] != col_idx.len() {
            return Err(EgcError::config(format!(
                "row_ptr must start at 0 and end at {}",
                col_idx.len()
            )));
        }
        for i in 0..num_nodes {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(EgcError::config(format!("row_ptr decreases at row {i}")));
            }
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if let Some(&c) = row.iter().find(|&&c| c as usize >= num_nodes) {
                return Err(EgcError::IndexOutOfRange {
                    index: c as usize,
                    num_nodes,
                });
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(EgcError::config(format!(
                    "row {i} is not strictly increasing"
                )));
            }
        }
        if let Some(c) = &coeff {
            if c.len() != col_idx.len() {
                return Err(EgcError::shape("coeff length", col_idx.len(), c.len()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(EgcError::NonFinite("edge coefficients"));
            }
        }
        Ok(Self::assemble(num_nodes, row_ptr, col_idx, coeff))
    }

    fn assemble(
        num_nodes: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        coeff: Option<Vec<f32>>,
    ) -> Self {
        let has_self_loops = (0..num_nodes).all(|i| {
            col_idx[row_ptr[i]..row_ptr[i + 1]]
                .binary_search(&(i as u32))
                .is_ok()
        });
        Self {
            num_nodes,
            row_ptr,
            col_idx,
            coeff,
            has_self_loops,
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    #[inline]
    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    #[inline]
    pub fn coeff(&self) -> Option<&[f32]> {
        self.coeff.as_deref()
    }

    #[inline]
    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    /// Column indices of row `i`.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Edge-slot range of row `i`, usable to index `col_idx` and `coeff`.
    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Coefficient of edge slot `e`, 1 when the graph carries none.
    #[inline]
    pub fn edge_weight(&self, e: usize) -> f32 {
        self.coeff.as_ref().map_or(1.0, |c| c[e])
    }

    /// All stored pairs as `(row, col)`, row-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j as usize)))
    }

    /// Edge list in the `(src, dst)` convention accepted by [`CsrGraph::from_edges`].
    pub fn to_edge_list(&self) -> Vec<(usize, usize)> {
        self.edges().map(|(i, j)| (j, i)).collect()
    }

    /// Copy of the graph with every node holding exactly one self-loop.
    ///
    /// Existing coefficients are dropped unless the graph already had all
    /// self-loops (in which case it is returned unchanged).
    pub fn add_self_loops(&self) -> Self {
        if self.has_self_loops {
            return self.clone();
        }
        let mut row_ptr = Vec::with_capacity(self.num_nodes + 1);
        let mut col_idx = Vec::with_capacity(self.num_edges() + self.num_nodes);
        row_ptr.push(0);
        for i in 0..self.num_nodes {
            let row = self.neighbors(i);
            let me = i as u32;
            let at = row.partition_point(|&c| c < me);
            col_idx.extend_from_slice(&row[..at]);
            col_idx.push(me);
            col_idx.extend(row[at..].iter().copied().filter(|&c| c != me));
            row_ptr.push(col_idx.len());
        }
        Self {
            num_nodes: self.num_nodes,
            row_ptr,
            col_idx,
            coeff: None,
            has_self_loops: true,
        }
    }

    /// Row lengths; on a self-looped graph this is the degree of `Ã`.
    pub fn in_degrees(&self) -> Vec<usize> {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Fill `coeff[(i, j)] = 1 / sqrt(deg(i) · deg(j))`.
    ///
    /// Degrees are in-degrees of the self-looped graph, so the coefficient
    /// matrix is `D̃^{-1/2} Ã D̃^{-1/2}` on undirected input.
    pub fn sym_norm_coeffs(&self) -> Result<Self> {
        if !self.has_self_loops {
            return Err(EgcError::MissingSelfLoops);
        }
        let inv_sqrt: Vec<f64> = self
            .in_degrees()
            .into_iter()
            .map(|d| 1.0 / (d as f64).sqrt())
            .collect();
        let mut coeff = Vec::with_capacity(self.num_edges());
        for i in 0..self.num_nodes {
            for &j in self.neighbors(i) {
                coeff.push((inv_sqrt[i] * inv_sqrt[j as usize]) as f32);
            }
        }
        Ok(Self {
            coeff: Some(coeff),
            ..self.clone()
        })
    }

    /// Self-loops plus symmetric-normalization coefficients.
    pub fn normalized(&self) -> Self {
        self.add_self_loops()
            .sym_norm_coeffs()
            .expect("self-looped graph always normalizes")
    }

    /// Relabel nodes: node `v` becomes `perm[v]`. Coefficients follow their edges.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(EgcError::shape("permutation length", self.num_nodes, perm.len()));
        }
        let mut seen = vec![false; self.num_nodes];
        for &p in perm {
            if p >= self.num_nodes || std::mem::replace(&mut seen[p], true) {
                return Err(EgcError::config("not a permutation"));
            }
        }
        let mut inv = vec![0; self.num_nodes];
        for (v, &p) in perm.iter().enumerate() {
            inv[p] = v;
        }
        let mut row_ptr = Vec::with_capacity(self.num_nodes + 1);
        let mut col_idx = Vec::with_capacity(self.num_edges());
        let mut coeff = self.coeff.as_ref().map(|_| Vec::with_capacity(self.num_edges()));
        row_ptr.push(0);
        let mut row: Vec<(u32, f32)> = Vec::new();
        for new_i in 0..self.num_nodes {
            let old_i = inv[new_i];
            row.clear();
            for e in self.row_range(old_i) {
                row.push((perm[self.col_idx[e] as usize] as u32, self.edge_weight(e)));
            }
            row.sort_unstable_by_key(|&(c, _)| c);
            for &(c, w) in &row {
                col_idx.push(c);
                if let Some(cf) = coeff.as_mut() {
                    cf.push(w);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            num_nodes: self.num_nodes,
            row_ptr,
            col_idx,
            coeff,
            has_self_loops: self.has_self_loops,
        })
    }
}

/// A heterogeneous graph: one CSR adjacency per relation type over a shared
/// node set, plus a type id for every node.
#[derive(Clone, Debug)]
pub struct NodeTypedGraph {
    relations: Vec<CsrGraph>,
    node_type: Vec<u32>,
    num_node_types: usize,
}

impl NodeTypedGraph {
    pub fn new(relations: Vec<CsrGraph>, node_type: Vec<u32>, num_node_types: usize) -> Result<Self> {
        let n = node_type.len();
        if let Some(g) = relations.iter().find(|g| g.num_nodes() != n) {
            return Err(EgcError::shape("relation node count", n, g.num_nodes()));
        }
        if let Some(&t) = node_type.iter().find(|&&t| t as usize >= num_node_types) {
            return Err(EgcError::config(format!(
                "node type {t} out of range for {num_node_types} types"
            )));
        }
        Ok(Self {
            relations,
            node_type,
            num_node_types,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_type.len()
    }

    pub fn relations(&self) -> &[CsrGraph] {
        &self.relations
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn node_type(&self) -> &[u32] {
        &self.node_type
    }

    pub fn num_node_types(&self) -> usize {
        self.num_node_types
    }
}
