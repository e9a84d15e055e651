//! Row-partitioned execution. Every output row is owned by exactly one
//! worker and each worker walks its rows in ascending order, so results do
//! not depend on the worker count.

use std::ops::Range;

use crate::graph::CsrGraph;

/// Kernel execution settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExecOptions {
    pub threads: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self { threads: 1 }
    }
}

impl ExecOptions {
    pub fn with_threads(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
        }
    }
}

/// Split `0..num_nodes` into at most `parts` contiguous ranges with roughly
/// equal edge-plus-row work.
pub(crate) fn partition_rows(g: &CsrGraph, parts: usize) -> Vec<Range<usize>> {
    let n = g.num_nodes();
    let parts = parts.max(1).min(n.max(1));
    if parts == 1 {
        return vec![0..n];
    }
    let rp = g.row_ptr();
    let total = g.num_edges() + n;
    let mut ranges = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 1..parts {
        let target = total * p / parts;
        // first row whose cumulative work reaches target
        let mut end = start;
        while end < n && rp[end] + end < target {
            end += 1;
        }
        ranges.push(start..end);
        start = end;
    }
    ranges.push(start..n);
    ranges
}

/// Cut a row-major buffer into one disjoint slice per range.
pub(crate) fn split_rows<'a, T>(
    mut buf: &'a mut [T],
    stride: usize,
    ranges: &[Range<usize>],
) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(ranges.len());
    for r in ranges {
        let (head, tail) = buf.split_at_mut(r.len() * stride);
        out.push(head);
        buf = tail;
    }
    out
}

/// Run one closure per work item, the last on the calling thread.
pub(crate) fn run_workers<W: Send>(mut items: Vec<W>, f: impl Fn(W) + Sync) {
    match items.len() {
        0 => {}
        1 => f(items.pop().unwrap()),
        _ => std::thread::scope(|s| {
            let last = items.pop().unwrap();
            for item in items {
                let f = &f;
                s.spawn(move || f(item));
            }
            f(last);
        }),
    }
}
