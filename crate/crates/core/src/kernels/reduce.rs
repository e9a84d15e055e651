//! Register-blocked neighborhood reductions.
//!
//! A row is reduced in narrow column blocks. For each block the
//! neighbor list is swept once and every aggregator of a group (up to
//! three) folds the loaded values into its own local accumulators, so each
//! fetched element feeds all aggregators while it sits in a register.
//!
//! Aggregator groups are resolved to monomorphized reducers once per kernel
//! call; the per-row loop only makes an indirect call per group. A finished
//! block either lands in per-row state or, for the weighted-store kernel, is
//! finalized and combined into the output while still in registers.

use super::{Aggregator, BasisLayout, STD_EPS};
use crate::scalar::Real;

/// Columns per register block for a lone aggregator and for groups.
const WIDE: usize = 16;
const NARROW: usize = 8;
/// Aggregators sharing one sweep of the neighbor list.
pub(crate) const GROUP: usize = 3;

const NONE: u8 = 0;
const ADD: u8 = 1;
const SCALED: u8 = 2;
const MAX: u8 = 3;
const MIN: u8 = 4;
const MOMENTS: u8 = 5;

fn opcode(a: Aggregator) -> u8 {
    match a {
        Aggregator::Sum | Aggregator::Mean => ADD,
        Aggregator::SymNorm => SCALED,
        Aggregator::Max => MAX,
        Aggregator::Min => MIN,
        Aggregator::Std | Aggregator::Var => MOMENTS,
    }
}

/// Where a reducer leaves each finished column block.
pub(crate) enum Epilogue<'a, T> {
    /// Raw (unfinalized) state for slot `k` at `state[offsets[k]..]`; the
    /// squared sums of moment aggregators at `state[offsets[k] + width..]`.
    Store { state: &'a mut [T] },
    /// Finalize in registers and add the weighted aggregates straight into
    /// the output row. `first` is the group's first aggregator index.
    Combine {
        w_row: &'a [T],
        num_aggs: usize,
        first: usize,
        layout: BasisLayout,
        count: usize,
        out: &'a mut [T],
    },
}

/// Reduce one full row for one aggregator group. `seg` is the basis width;
/// column blocks never straddle a basis boundary.
pub(crate) type RowReducer<T> = fn(
    data: &[T],
    width: usize,
    seg: usize,
    cols: &[u32],
    coeff: Option<&[f32]>,
    group: &ReduceGroup<T>,
    ep: &mut Epilogue<'_, T>,
);

/// One group of aggregators and where their state lives.
pub(crate) struct ReduceGroup<T> {
    pub(crate) reducer: RowReducer<T>,
    pub(crate) kinds: [Option<Aggregator>; GROUP],
    pub(crate) offsets: [usize; GROUP],
}

impl<T> ReduceGroup<T> {
    #[inline]
    pub(crate) fn run(
        &self,
        data: &[T],
        width: usize,
        seg: usize,
        cols: &[u32],
        coeff: Option<&[f32]>,
        ep: &mut Epilogue<'_, T>,
    ) {
        (self.reducer)(data, width, seg, cols, coeff, self, ep)
    }
}

pub(crate) fn plan_groups<T: Real>(aggs: &[Aggregator], offsets: &[usize]) -> Vec<ReduceGroup<T>> {
    aggs.chunks(GROUP)
        .zip(offsets.chunks(GROUP))
        .map(|(group, offs)| {
            let mut codes = [NONE; GROUP];
            let mut kinds = [None; GROUP];
            let mut o = [0; GROUP];
            for (k, (&a, &off)) in group.iter().zip(offs).enumerate() {
                codes[k] = opcode(a);
                kinds[k] = Some(a);
                o[k] = off;
            }
            ReduceGroup {
                reducer: select::<T>(codes),
                kinds,
                offsets: o,
            }
        })
        .collect()
}

fn select<T: Real>(c: [u8; GROUP]) -> RowReducer<T> {
    match c[0] {
        ADD => select2::<T, ADD>(c),
        SCALED => select2::<T, SCALED>(c),
        MAX => select2::<T, MAX>(c),
        MIN => select2::<T, MIN>(c),
        MOMENTS => select2::<T, MOMENTS>(c),
        _ => unreachable!("empty aggregator group"),
    }
}

fn select2<T: Real, const A: u8>(c: [u8; GROUP]) -> RowReducer<T> {
    match c[1] {
        NONE => reduce_row::<T, A, NONE, NONE, WIDE>,
        ADD => select3::<T, A, ADD>(c),
        SCALED => select3::<T, A, SCALED>(c),
        MAX => select3::<T, A, MAX>(c),
        MIN => select3::<T, A, MIN>(c),
        MOMENTS => select3::<T, A, MOMENTS>(c),
        _ => unreachable!(),
    }
}

fn select3<T: Real, const A: u8, const B: u8>(c: [u8; GROUP]) -> RowReducer<T> {
    match c[2] {
        NONE => reduce_row::<T, A, B, NONE, NARROW>,
        ADD => reduce_row::<T, A, B, ADD, NARROW>,
        SCALED => reduce_row::<T, A, B, SCALED, NARROW>,
        MAX => reduce_row::<T, A, B, MAX, NARROW>,
        MIN => reduce_row::<T, A, B, MIN, NARROW>,
        MOMENTS => reduce_row::<T, A, B, MOMENTS, NARROW>,
        _ => unreachable!(),
    }
}

#[inline(always)]
fn init<T: Real, const OP: u8>() -> T {
    match OP {
        MAX => T::neg_infinity(),
        MIN => T::infinity(),
        _ => T::zero(),
    }
}

#[inline(always)]
fn step<T: Real, const OP: u8>(acc: &mut T, sq: &mut T, v: T, c: T) {
    match OP {
        ADD => *acc += v,
        SCALED => *acc += c * v,
        MAX => *acc = if *acc > v { *acc } else { v },
        MIN => *acc = if *acc < v { *acc } else { v },
        MOMENTS => {
            *acc += v;
            *sq += v * v;
        }
        _ => {}
    }
}

#[inline(always)]
fn store<T: Real, const OP: u8>(state: &mut [T], off: usize, width: usize, c0: usize, acc: &[T], sq: &[T]) {
    if OP == NONE {
        return;
    }
    let len = acc.len();
    state[off + c0..off + c0 + len].copy_from_slice(acc);
    if OP == MOMENTS {
        state[off + width + c0..off + width + c0 + len].copy_from_slice(sq);
    }
}

/// Same arithmetic as [`Aggregator::finalize`], on a register block.
#[inline(always)]
fn finalize_block<T: Real>(kind: Aggregator, count: usize, acc: &mut [T], sq: &[T]) {
    match kind {
        Aggregator::Mean => {
            let inv = T::one() / T::of(count as f64);
            acc.iter_mut().for_each(|s| *s *= inv);
        }
        Aggregator::Std | Aggregator::Var => {
            let inv = T::one() / T::of(count as f64);
            let eps = T::of(STD_EPS);
            for (s, &q) in acc.iter_mut().zip(sq) {
                let mean = *s * inv;
                let var = (q * inv - mean * mean).max(T::zero());
                *s = if kind == Aggregator::Std { (var + eps).sqrt() } else { var };
            }
        }
        _ => {}
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn reduce_block<T: Real, const A: u8, const B: u8, const C: u8, const CH: usize>(
    data: &[T],
    width: usize,
    seg: usize,
    cols: &[u32],
    coeff: Option<&[f32]>,
    group: &ReduceGroup<T>,
    ep: &mut Epilogue<'_, T>,
    c0: usize,
    len: usize,
) {
    let scaled = A == SCALED || B == SCALED || C == SCALED;
    let mut a = [init::<T, A>(); CH];
    let mut b = [init::<T, B>(); CH];
    let mut c = [init::<T, C>(); CH];
    let mut qa = [T::zero(); CH];
    let mut qb = [T::zero(); CH];
    let mut qc = [T::zero(); CH];
    for (n, &j) in cols.iter().enumerate() {
        let w = if scaled {
            T::of(coeff.map_or(1.0, |cf| cf[n]) as f64)
        } else {
            T::one()
        };
        let at = j as usize * width + c0;
        let xs = &data[at..at + len];
        for t in 0..len {
            let v = xs[t];
            step::<T, A>(&mut a[t], &mut qa[t], v, w);
            step::<T, B>(&mut b[t], &mut qb[t], v, w);
            step::<T, C>(&mut c[t], &mut qc[t], v, w);
        }
    }
    match ep {
        Epilogue::Store { state } => {
            let o = group.offsets;
            store::<T, A>(state, o[0], width, c0, &a[..len], &qa[..len]);
            store::<T, B>(state, o[1], width, c0, &b[..len], &qb[..len]);
            store::<T, C>(state, o[2], width, c0, &c[..len], &qc[..len]);
        }
        Epilogue::Combine {
            w_row,
            num_aggs,
            first,
            layout,
            count,
            out,
        } => {
            let k = group.kinds;
            finalize_slot::<T, A>(k[0], *count, &mut a[..len], &qa[..len]);
            finalize_slot::<T, B>(k[1], *count, &mut b[..len], &qb[..len]);
            finalize_slot::<T, C>(k[2], *count, &mut c[..len], &qc[..len]);
            let basis = c0 / seg;
            let d0 = c0 % seg;
            let wi = |h, slot| w_row[layout.weight_index(*num_aggs, h, *first + slot, basis)];
            for h in 0..layout.heads {
                let o = &mut out[h * seg + d0..h * seg + d0 + len];
                add_weighted::<T, A>(o, || wi(h, 0), &a[..len]);
                add_weighted::<T, B>(o, || wi(h, 1), &b[..len]);
                add_weighted::<T, C>(o, || wi(h, 2), &c[..len]);
            }
        }
    }
}

#[inline(always)]
fn finalize_slot<T: Real, const OP: u8>(kind: Option<Aggregator>, count: usize, acc: &mut [T], sq: &[T]) {
    if let (true, Some(kind)) = (OP == ADD || OP == MOMENTS, kind) {
        finalize_block(kind, count, acc, sq);
    }
}

#[inline(always)]
fn add_weighted<T: Real, const OP: u8>(o: &mut [T], weight: impl FnOnce() -> T, v: &[T]) {
    if OP == NONE {
        return;
    }
    let wv = weight();
    for (ot, &vt) in o.iter_mut().zip(v) {
        *ot += wv * vt;
    }
}

fn reduce_row<T: Real, const A: u8, const B: u8, const C: u8, const CH: usize>(
    data: &[T],
    width: usize,
    seg: usize,
    cols: &[u32],
    coeff: Option<&[f32]>,
    group: &ReduceGroup<T>,
    ep: &mut Epilogue<'_, T>,
) {
    let full = seg - seg % CH;
    let mut base = 0;
    while base < width {
        let mut d = 0;
        while d < full {
            reduce_block::<T, A, B, C, CH>(data, width, seg, cols, coeff, group, ep, base + d, CH);
            d += CH;
        }
        if full < seg {
            reduce_block::<T, A, B, C, CH>(data, width, seg, cols, coeff, group, ep, base + full, seg - full);
        }
        base += seg;
    }
}
