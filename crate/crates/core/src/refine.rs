//! Gain-driven refinement with move, exchange, replicate and delete.
//!
//! A [`Refiner`] caches per-net source and drain host masks, per-FPGA drain
//! copy counts, net costs, resource usage and I/O usage, so the gain of an
//! operation touches only the nets incident to the one or two vertices it
//! changes. Candidate operations live in a bank of `1 + 3K` max-heaps: one
//! exchange heap plus a move, replicate and delete heap per destination
//! FPGA. Each loop iteration applies the best entry across all heaps if it
//! still satisfies the constraints, then recomputes entries only for pins of
//! the nets it touched.

use std::cmp::Reverse;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use priority_queue::PriorityQueue;

use crate::coarsen::Level;
use crate::metrics::{self, io_masks, mask_cost, mask_max_hop};
use crate::model::{Bits, EdgeId, FpgaId, Hypergraph, Placement, VertexId, MAX_FPGAS};
use crate::topology::MfsTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Move,
    Exchange,
    Replicate,
    Delete,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Move, OpKind::Exchange, OpKind::Replicate, OpKind::Delete];

    /// Tie-break rank among equal gains; higher wins.
    fn rank(self) -> u8 {
        match self {
            OpKind::Delete => 3,
            OpKind::Move => 2,
            OpKind::Exchange => 1,
            OpKind::Replicate => 0,
        }
    }

    /// Position in [`RefineStats::applied`].
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    /// Relocate the original of `v` to `to`, which must not host `v`.
    Move { v: VertexId, to: FpgaId },
    /// Swap the originals of `u` and `v`; neither may already host the
    /// other's FPGA.
    Exchange { u: VertexId, v: VertexId },
    /// Add a copy of `v` on `to`.
    Replicate { v: VertexId, to: FpgaId },
    /// Remove the replica of `v` on `from`.
    Delete { v: VertexId, from: FpgaId },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Move { .. } => OpKind::Move,
            Op::Exchange { .. } => OpKind::Exchange,
            Op::Replicate { .. } => OpKind::Replicate,
            Op::Delete { .. } => OpKind::Delete,
        }
    }

    /// The vertex the op is keyed under (`u` for exchanges).
    pub fn vertex(&self) -> VertexId {
        match *self {
            Op::Move { v, .. } | Op::Replicate { v, .. } | Op::Delete { v, .. } => v,
            Op::Exchange { u, .. } => u,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Move { v, to } => write!(f, "move {v} -> F{to}"),
            Op::Exchange { u, v } => write!(f, "exchange {u} <-> {v}"),
            Op::Replicate { v, to } => write!(f, "replicate {v} on F{to}"),
            Op::Delete { v, from } => write!(f, "delete {v} from F{from}"),
        }
    }
}

/// Host-mask updates of an op: one or two `(vertex, new mask)` pairs.
#[derive(Debug, Clone, Copy)]
struct Changes {
    items: [(VertexId, u64); 2],
    len: usize,
}

impl Changes {
    fn one(v: VertexId, mask: u64) -> Self {
        Changes { items: [(v, mask), (0, 0)], len: 1 }
    }

    fn as_slice(&self) -> &[(VertexId, u64)] {
        &self.items[..self.len]
    }
}

/// Structural legality of `op` under `p`, returning the mask updates.
fn mask_changes(p: &Placement, op: Op, num_fpgas: usize) -> Option<Changes> {
    let n = p.num_vertices();
    match op {
        Op::Move { v, to } => {
            if v >= n || to >= num_fpgas || p.is_host(v, to) {
                return None;
            }
            let m = (p.host_mask(v) & !(1u64 << p.original[v])) | (1u64 << to);
            Some(Changes::one(v, m))
        }
        Op::Replicate { v, to } => {
            if v >= n || to >= num_fpgas || p.is_host(v, to) {
                return None;
            }
            Some(Changes::one(v, p.host_mask(v) | (1u64 << to)))
        }
        Op::Delete { v, from } => {
            if v >= n || p.replicas[v].binary_search(&from).is_err() {
                return None;
            }
            Some(Changes::one(v, p.host_mask(v) & !(1u64 << from)))
        }
        Op::Exchange { u, v } => {
            if u >= n || v >= n || u == v {
                return None;
            }
            let (fu, fv) = (p.original[u], p.original[v]);
            if fu == fv || p.is_host(u, fv) || p.is_host(v, fu) {
                return None;
            }
            let mu = (p.host_mask(u) & !(1u64 << fu)) | (1u64 << fv);
            let mv = (p.host_mask(v) & !(1u64 << fv)) | (1u64 << fu);
            Some(Changes { items: [(u, mu), (v, mv)], len: 2 })
        }
    }
}

/// Applies a legal op to a placement.
fn apply_to_placement(p: &mut Placement, op: Op) {
    match op {
        Op::Move { v, to } => p.original[v] = to,
        Op::Replicate { v, to } => {
            p.add_replica(v, to);
        }
        Op::Delete { v, from } => {
            p.remove_replica(v, from);
        }
        Op::Exchange { u, v } => p.original.swap(u, v),
    }
}

/// Subset of operators the refiner may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpSet {
    pub moves: bool,
    pub exchanges: bool,
    pub replicates: bool,
    pub deletes: bool,
}

impl OpSet {
    pub fn all() -> Self {
        OpSet { moves: true, exchanges: true, replicates: true, deletes: true }
    }

    pub fn none() -> Self {
        OpSet { moves: false, exchanges: false, replicates: false, deletes: false }
    }

    pub fn move_exchange() -> Self {
        OpSet { moves: true, exchanges: true, ..Self::none() }
    }

    pub fn contains(&self, kind: OpKind) -> bool {
        match kind {
            OpKind::Move => self.moves,
            OpKind::Exchange => self.exchanges,
            OpKind::Replicate => self.replicates,
            OpKind::Delete => self.deletes,
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::none()
    }
}

impl Default for OpSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FromStr for OpSet {
    type Err = String;

    /// Comma-separated subset of `mv,ex,rep,del`, or `none`.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut set = OpSet::none();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "mv" | "move" => set.moves = true,
                "ex" | "exchange" => set.exchanges = true,
                "rep" | "replicate" => set.replicates = true,
                "del" | "delete" => set.deletes = true,
                "all" => set = OpSet::all(),
                "none" => {}
                other => return Err(format!("unknown operator '{other}'")),
            }
        }
        Ok(set)
    }
}

impl fmt::Display for OpSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.moves, "mv"),
            (self.exchanges, "ex"),
            (self.replicates, "rep"),
            (self.deletes, "del"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

/// How gains are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainMode {
    /// From the cached per-net masks and drain counts.
    #[default]
    Incremental,
    /// Every affected net's before and after cost is rebuilt from its pins'
    /// placements. Same results, slower; used as a speed baseline.
    FullRecompute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub ops: OpSet,
    /// Cap on replicate applications per refiner run.
    pub max_replicas: Option<usize>,
    /// Also accept zero-gain moves and exchanges, at most
    /// `zero_gain_limit` times.
    pub allow_zero_gain: bool,
    pub zero_gain_limit: usize,
    pub mode: GainMode,
    /// Exchange partners evaluated per vertex, drawn from neighbours on
    /// the vertex's best move destination.
    pub exchange_candidates: usize,
    /// Validate the full state after every applied op. Slow.
    pub audit: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            ops: OpSet::all(),
            max_replicas: None,
            allow_zero_gain: false,
            zero_gain_limit: 10_000,
            mode: GainMode::Incremental,
            exchange_candidates: 8,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefineStats {
    pub thd_before: u64,
    pub thd_after: u64,
    /// Applied ops indexed by `OpKind as usize`.
    pub applied: [u64; 4],
    pub popped: u64,
    pub blocked: u64,
    pub audit_failures: u64,
    pub first_audit_failure: Option<String>,
}

impl RefineStats {
    pub fn applied_total(&self) -> u64 {
        self.applied.iter().sum()
    }

    pub fn merge(&mut self, other: &RefineStats) {
        for (a, b) in self.applied.iter_mut().zip(other.applied) {
            *a += b;
        }
        self.popped += other.popped;
        self.blocked += other.blocked;
        self.audit_failures += other.audit_failures;
        if self.first_audit_failure.is_none() {
            self.first_audit_failure.clone_from(&other.first_audit_failure);
        }
    }
}

/// Why a candidate op cannot be applied now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blocked {
    Resource(FpgaId),
    Io(FpgaId),
    Hop(EdgeId),
}

type Key = (i64, u8, Reverse<VertexId>, Reverse<FpgaId>);
type Heap = PriorityQueue<VertexId, Key>;

fn key(kind: OpKind, gain: i64, v: VertexId, dest: FpgaId) -> Key {
    (gain, kind.rank(), Reverse(v), Reverse(dest))
}

struct HeapBank {
    exchange: Heap,
    partner: Vec<Option<VertexId>>,
    /// Move, replicate and delete heaps, indexed `kind * K + f`.
    per_fpga: Vec<Heap>,
    /// Per vertex, which per-FPGA heaps hold an entry (bit `f`), by kind.
    present: [Vec<u64>; 3],
    k: usize,
}

impl HeapBank {
    fn new(n: usize, k: usize) -> Self {
        HeapBank {
            exchange: Heap::new(),
            partner: vec![None; n],
            per_fpga: (0..3 * k).map(|_| Heap::new()).collect(),
            present: [vec![0; n], vec![0; n], vec![0; n]],
            k,
        }
    }

    fn slot(kind: OpKind) -> usize {
        match kind {
            OpKind::Move => 0,
            OpKind::Replicate => 1,
            OpKind::Delete => 2,
            OpKind::Exchange => unreachable!(),
        }
    }

    fn clear_vertex(&mut self, v: VertexId) {
        if self.partner[v].take().is_some() {
            self.exchange.remove(&v);
        }
        for s in 0..3 {
            for f in Bits(std::mem::take(&mut self.present[s][v])) {
                self.per_fpga[s * self.k + f].remove(&v);
            }
        }
    }

    fn clear_kind(&mut self, kind: OpKind) {
        if kind == OpKind::Exchange {
            self.exchange.clear();
            self.partner.iter_mut().for_each(|p| *p = None);
            return;
        }
        let s = Self::slot(kind);
        for f in 0..self.k {
            self.per_fpga[s * self.k + f].clear();
        }
        self.present[s].iter_mut().for_each(|m| *m = 0);
    }

    fn insert(&mut self, op: Op, gain: i64, exchange_dest: FpgaId) {
        match op {
            Op::Exchange { u, v } => {
                self.partner[u] = Some(v);
                self.exchange.push(u, key(OpKind::Exchange, gain, u, exchange_dest));
            }
            Op::Move { v, to: f } | Op::Replicate { v, to: f } | Op::Delete { v, from: f } => {
                let s = Self::slot(op.kind());
                self.present[s][v] |= 1u64 << f;
                self.per_fpga[s * self.k + f].push(v, key(op.kind(), gain, v, f));
            }
        }
    }

    fn remove(&mut self, op: Op) {
        match op {
            Op::Exchange { u, .. } => {
                self.partner[u] = None;
                self.exchange.remove(&u);
            }
            Op::Move { v, to: f } | Op::Replicate { v, to: f } | Op::Delete { v, from: f } => {
                let s = Self::slot(op.kind());
                self.present[s][v] &= !(1u64 << f);
                self.per_fpga[s * self.k + f].remove(&v);
            }
        }
    }

    fn make_op(&self, s: usize, f: FpgaId, v: VertexId) -> Op {
        match s {
            0 => Op::Move { v, to: f },
            1 => Op::Replicate { v, to: f },
            _ => Op::Delete { v, from: f },
        }
    }

    fn best(&self) -> Option<(Op, i64)> {
        let mut best: Option<(Key, Op)> = None;
        let mut consider = |k: &Key, op: Op| {
            if best.as_ref().is_none_or(|(bk, _)| k > bk) {
                best = Some((*k, op));
            }
        };
        if let Some((&u, k)) = self.exchange.peek() {
            let v = self.partner[u].expect("exchange entry has a partner");
            consider(k, Op::Exchange { u, v });
        }
        for (i, heap) in self.per_fpga.iter().enumerate() {
            if let Some((&v, k)) = heap.peek() {
                consider(k, self.make_op(i / self.k, i % self.k, v));
            }
        }
        best.map(|(k, op)| (op, k.0))
    }

    fn stored(&self, op: Op) -> Option<i64> {
        match op {
            Op::Exchange { u, v } => {
                if self.partner[u] == Some(v) {
                    self.exchange.get_priority(&u).map(|k| k.0)
                } else {
                    None
                }
            }
            Op::Move { v, to: f } | Op::Replicate { v, to: f } | Op::Delete { v, from: f } => {
                let s = Self::slot(op.kind());
                self.per_fpga[s * self.k + f].get_priority(&v).map(|k| k.0)
            }
        }
    }

    fn entries(&self) -> Vec<(Op, i64)> {
        let mut out: Vec<(Op, i64)> = self
            .exchange
            .iter()
            .map(|(&u, k)| (Op::Exchange { u, v: self.partner[u].expect("partner") }, k.0))
            .collect();
        for (i, heap) in self.per_fpga.iter().enumerate() {
            out.extend(heap.iter().map(|(&v, k)| (self.make_op(i / self.k, i % self.k, v), k.0)));
        }
        out.sort();
        out
    }

    fn len(&self) -> usize {
        self.exchange.len() + self.per_fpga.iter().map(Heap::len).sum::<usize>()
    }

    fn bump(&mut self, op: Op, by: i64) -> bool {
        let (heap, item) = match op {
            Op::Exchange { u, .. } => (&mut self.exchange, u),
            Op::Move { v, to: f } | Op::Replicate { v, to: f } | Op::Delete { v, from: f } => {
                let s = Self::slot(op.kind());
                (&mut self.per_fpga[s * self.k + f], v)
            }
        };
        heap.change_priority_by(&item, |k| k.0 += by)
    }
}

/// Refinement state over one hypergraph level.
pub struct Refiner<'a> {
    h: &'a Hypergraph,
    t: &'a MfsTopology,
    cfg: RefineConfig,
    k: usize,
    r: usize,
    p: Placement,
    host: Vec<u64>,
    src_mask: Vec<u64>,
    drain_mask: Vec<u64>,
    drain_cnt: Vec<u32>,
    cost: Vec<u64>,
    usage: Vec<u64>,
    io: Vec<u64>,
    thd: u64,
    bank: HeapBank,
    /// Vertices whose exchange search evaluated this one as a partner
    /// since it last changed.
    candidate_of: Vec<Vec<VertexId>>,
    /// Best move destination at the last refresh, where exchange partners
    /// are sought.
    ex_target: Vec<Option<FpgaId>>,
    /// Move gains per target from the last refresh, `k` per vertex, valid
    /// where `move_cached` is set. Any change to a vertex's nets refreshes it.
    move_gain: Vec<i64>,
    move_cached: Vec<bool>,
    /// Ops blocked only by resources on an FPGA, retried when it frees.
    parked: Vec<BTreeSet<Op>>,
    stamp: Vec<u32>,
    epoch: u32,
    replicates_applied: usize,
    zero_gain_used: usize,
    stats: RefineStats,
}

impl<'a> Refiner<'a> {
    /// Builds caches for `p` and fills the heap bank.
    ///
    /// Panics if `p` is not well formed for `h` and `t`.
    pub fn new(h: &'a Hypergraph, t: &'a MfsTopology, p: Placement, cfg: RefineConfig) -> Self {
        let k = t.num_fpgas();
        let n = h.num_vertices();
        assert!(p.is_well_formed(n, k), "malformed placement");
        let r = h.resource_types();
        let host: Vec<u64> = (0..n).map(|v| p.host_mask(v)).collect();
        let m = h.num_edges();
        let mut src_mask = vec![0u64; m];
        let mut drain_mask = vec![0u64; m];
        let mut drain_cnt = vec![0u32; m * k];
        let mut cost = vec![0u64; m];
        let mut io = vec![0u64; k];
        let mut thd = 0u64;
        let hm = t.hops();
        for (e, edge) in h.edges().iter().enumerate() {
            src_mask[e] = host[edge.source];
            for &d in &edge.drains {
                for f in Bits(host[d]) {
                    drain_cnt[e * k + f] += 1;
                }
                drain_mask[e] |= host[d];
            }
            cost[e] = mask_cost(src_mask[e], drain_mask[e], hm);
            thd += edge.weight * cost[e];
            let (ex, im) = io_masks(src_mask[e], drain_mask[e], hm);
            for f in Bits(ex | im) {
                io[f] += edge.weight;
            }
        }
        let mut usage = vec![0u64; k * r];
        for v in 0..n {
            for f in Bits(host[v]) {
                for (u, w) in usage[f * r..(f + 1) * r].iter_mut().zip(h.vertex_weight(v)) {
                    *u += w;
                }
            }
        }
        let mut me = Refiner {
            h,
            t,
            cfg,
            k,
            r,
            p,
            host,
            src_mask,
            drain_mask,
            drain_cnt,
            cost,
            usage,
            io,
            thd,
            bank: HeapBank::new(n, k),
            candidate_of: vec![Vec::new(); n],
            ex_target: vec![None; n],
            move_gain: vec![0; n * k],
            move_cached: vec![false; n],
            parked: vec![BTreeSet::new(); k],
            stamp: vec![0; n],
            epoch: 0,
            replicates_applied: 0,
            zero_gain_used: 0,
            stats: RefineStats { thd_before: thd, thd_after: thd, ..RefineStats::default() },
        };
        me.refresh_all(&(0..n).collect::<Vec<_>>());
        me
    }

    pub fn placement(&self) -> &Placement {
        &self.p
    }

    pub fn into_placement(self) -> Placement {
        self.p
    }

    pub fn thd(&self) -> u64 {
        self.thd
    }

    pub fn io_usage(&self) -> &[u64] {
        &self.io
    }

    pub fn usage(&self, f: FpgaId) -> &[u64] {
        &self.usage[f * self.r..(f + 1) * self.r]
    }

    pub fn stats(&self) -> &RefineStats {
        &self.stats
    }

    pub fn config(&self) -> &RefineConfig {
        &self.cfg
    }

    /// THD decrease `op` would cause, or `None` if it is structurally
    /// illegal in the current placement.
    pub fn gain(&self, op: Op) -> Option<i64> {
        mask_changes(&self.p, op, self.k).map(|ch| self.eval(ch.as_slice()))
    }

    /// Gain stored in the heap bank for `op`, if it has an entry.
    pub fn stored_gain(&self, op: Op) -> Option<i64> {
        self.bank.stored(op)
    }

    /// All heap entries, sorted.
    pub fn entries(&self) -> Vec<(Op, i64)> {
        self.bank.entries()
    }

    pub fn num_entries(&self) -> usize {
        self.bank.len()
    }

    /// Best entry across all heaps.
    pub fn peek(&self) -> Option<(Op, i64)> {
        self.bank.best()
    }

    /// Corrupts one stored gain. Test hook for the stale-gain detector.
    #[doc(hidden)]
    pub fn inject_stale_gain(&mut self) -> Option<Op> {
        let (op, _) = self.bank.best()?;
        self.bank.bump(op, 1).then_some(op)
    }

    /// Calls `f(e, pins)` once for every net incident to a changed vertex;
    /// `pins[i]` tells whether change `i` touches a pin of `e`.
    fn for_each_affected(&self, ch: &[(VertexId, u64)], mut f: impl FnMut(EdgeId, [bool; 2])) {
        let is_pin = |e: EdgeId, x: VertexId| {
            let edge = self.h.edge(e);
            edge.source == x || edge.drains.binary_search(&x).is_ok()
        };
        let x0 = ch[0].0;
        let x1 = ch.get(1).map(|c| c.0);
        for &e in self.h.incident(x0) {
            f(e, [true, x1.is_some_and(|x| is_pin(e, x))]);
        }
        if let Some(x1) = x1 {
            for &e in self.h.incident(x1) {
                if !is_pin(e, x0) {
                    f(e, [false, true]);
                }
            }
        }
    }

    /// Source and drain masks of `e` after applying `ch`, from the caches.
    #[inline]
    fn net_after(&self, e: EdgeId, ch: &[(VertexId, u64)], pins: [bool; 2]) -> (u64, u64) {
        let edge = self.h.edge(e);
        let mut src = self.src_mask[e];
        let mut drain = self.drain_mask[e];
        let mut toggled = 0u64;
        for (i, &(x, new)) in ch.iter().enumerate() {
            if !pins[i] {
                continue;
            }
            if x == edge.source {
                src = new;
            } else {
                toggled |= self.host[x] ^ new;
            }
        }
        for f in Bits(toggled) {
            let mut c = i64::from(self.drain_cnt[e * self.k + f]);
            for (i, &(x, new)) in ch.iter().enumerate() {
                if pins[i] && x != edge.source {
                    c += ((new >> f) & 1) as i64 - ((self.host[x] >> f) & 1) as i64;
                }
            }
            if c > 0 {
                drain |= 1u64 << f;
            } else {
                drain &= !(1u64 << f);
            }
        }
        (src, drain)
    }

    /// Cost decrease of `e` under `ch`. When the source keeps its hosts only
    /// the drain FPGAs that appear or vanish matter, since the cost is a
    /// sum over drain FPGAs of their distance to the nearest source copy.
    #[inline]
    fn net_saving(&self, e: EdgeId, ch: &[(VertexId, u64)], pins: [bool; 2]) -> i64 {
        let hm = self.t.hops();
        let edge = self.h.edge(e);
        let src_moves = ch.iter().zip(pins).any(|(&(x, _), pin)| pin && x == edge.source);
        if src_moves {
            let (s, d) = self.net_after(e, ch, pins);
            return self.cost[e] as i64 - mask_cost(s, d, hm) as i64;
        }
        let src = self.src_mask[e];
        let mut toggled = 0u64;
        for (i, &(x, new)) in ch.iter().enumerate() {
            if pins[i] {
                toggled |= self.host[x] ^ new;
            }
        }
        let mut saving = 0i64;
        for f in Bits(toggled & !src) {
            let mut c = i64::from(self.drain_cnt[e * self.k + f]);
            for (i, &(x, new)) in ch.iter().enumerate() {
                if pins[i] {
                    c += ((new >> f) & 1) as i64 - ((self.host[x] >> f) & 1) as i64;
                }
            }
            let was = self.drain_mask[e] & (1u64 << f) != 0;
            if was != (c > 0) {
                let dist = if src.count_ones() == 1 {
                    hm.get(src.trailing_zeros() as usize, f)
                } else {
                    metrics::nearest_source(src, f, hm).1
                };
                saving += if was { i64::from(dist) } else { -i64::from(dist) };
            }
        }
        saving
    }

    /// Source and drain masks of `e` rebuilt from the placement, with `ch`
    /// overriding the listed vertices.
    fn net_from_pins(&self, e: EdgeId, ch: &[(VertexId, u64)]) -> (u64, u64) {
        let mask = |x: VertexId| {
            ch.iter()
                .find(|c| c.0 == x)
                .map_or_else(|| self.p.host_mask(x), |c| c.1)
        };
        let edge = self.h.edge(e);
        let src = mask(edge.source);
        let drain = edge.drains.iter().fold(0u64, |m, &d| m | mask(d));
        (src, drain)
    }

    fn eval(&self, ch: &[(VertexId, u64)]) -> i64 {
        let hm = self.t.hops();
        let mut gain = 0i64;
        match self.cfg.mode {
            GainMode::Incremental => self.for_each_affected(ch, |e, pins| {
                let w = self.h.edge(e).weight as i64;
                gain += w * self.net_saving(e, ch, pins);
            }),
            GainMode::FullRecompute => self.for_each_affected(ch, |e, _| {
                let (s0, d0) = self.net_from_pins(e, &[]);
                let (s1, d1) = self.net_from_pins(e, ch);
                let w = self.h.edge(e).weight as i64;
                gain += w * (mask_cost(s0, d0, hm) as i64 - mask_cost(s1, d1, hm) as i64);
            }),
        }
        gain
    }

    /// Gain of `v` taking host mask `keep | f`, for every `f` outside its
    /// current hosts, in one pass over the incident nets. Entries for
    /// current hosts are left at 0.
    fn gains_per_target(&self, v: VertexId, keep: u64) -> [i64; MAX_FPGAS] {
        let hm = self.t.hops();
        let hosts = self.host[v];
        let free = !hosts & low_bits(self.k);
        let dropped = hosts & !keep;
        let mut out = [0i64; MAX_FPGAS];
        let mut base = 0i64;
        for &e in self.h.incident(v) {
            let edge = self.h.edge(e);
            let w = edge.weight as i64;
            let (src, drain) = (self.src_mask[e], self.drain_mask[e]);
            if edge.source == v {
                for f in Bits(free) {
                    out[f] += w * (self.cost[e] as i64 - mask_cost(keep | (1u64 << f), drain, hm) as i64);
                }
                continue;
            }
            let dist = |f: FpgaId| {
                if src.count_ones() == 1 {
                    hm.get(src.trailing_zeros() as usize, f)
                } else {
                    metrics::nearest_source(src, f, hm).1
                }
            };
            for b in Bits(dropped & !src) {
                if self.drain_cnt[e * self.k + b] == 1 {
                    base += w * i64::from(dist(b));
                }
            }
            for f in Bits(free & !src & !drain) {
                out[f] -= w * i64::from(dist(f));
            }
        }
        for f in Bits(free) {
            out[f] += base;
        }
        out
    }

    /// Checks resources, I/O and `Hop_max` for a structurally legal op.
    /// The FPGA whose capacity a legal op would exceed, if any.
    fn overflow(&self, op: Op) -> Option<FpgaId> {
        let r = self.r;
        let fits = |f: FpgaId, add: &[u64], sub: Option<&[u64]>| {
            let used = &self.usage[f * r..(f + 1) * r];
            let cap = self.t.capacity(f);
            (0..r).all(|i| used[i] - sub.map_or(0, |s| s[i]) + add[i] <= cap[i])
        };
        match op {
            Op::Move { v, to } | Op::Replicate { v, to } => {
                (!fits(to, self.h.vertex_weight(v), None)).then_some(to)
            }
            Op::Exchange { u, v } => {
                let (wu, wv) = (self.h.vertex_weight(u), self.h.vertex_weight(v));
                let (fu, fv) = (self.p.original[u], self.p.original[v]);
                if !fits(fu, wv, Some(wu)) {
                    Some(fu)
                } else if !fits(fv, wu, Some(wv)) {
                    Some(fv)
                } else {
                    None
                }
            }
            Op::Delete { .. } => None,
        }
    }

    pub fn check(&self, op: Op) -> Result<(), Blocked> {
        let Some(ch) = mask_changes(&self.p, op, self.k) else {
            panic!("illegal op {op}");
        };
        if let Some(f) = self.overflow(op) {
            return Err(Blocked::Resource(f));
        }
        let has_io = self.t.io_limits().iter().any(Option::is_some);
        let hop_max = self.t.hop_max();
        if !has_io && hop_max.is_none() {
            return Ok(());
        }
        let hm = self.t.hops();
        let ch = ch.as_slice();
        let mut delta = vec![0i64; self.k];
        let mut hop_fail = None;
        self.for_each_affected(ch, |e, pins| {
            let (s, d) = self.net_after(e, ch, pins);
            if let Some(max) = hop_max {
                if hop_fail.is_none() && mask_max_hop(s, d, hm) > max {
                    hop_fail = Some(e);
                }
            }
            if has_io {
                let w = self.h.edge(e).weight as i64;
                let (ex0, im0) = io_masks(self.src_mask[e], self.drain_mask[e], hm);
                let (ex1, im1) = io_masks(s, d, hm);
                for f in Bits(ex0 | im0) {
                    delta[f] -= w;
                }
                for f in Bits(ex1 | im1) {
                    delta[f] += w;
                }
            }
        });
        for (f, &dl) in delta.iter().enumerate() {
            if dl > 0 {
                if let Some(lim) = self.t.io_limit(f) {
                    if self.io[f] as i64 + dl > lim as i64 {
                        return Err(Blocked::Io(f));
                    }
                }
            }
        }
        match hop_fail {
            Some(e) => Err(Blocked::Hop(e)),
            None => Ok(()),
        }
    }

    fn zero_gain_allowed(&self) -> bool {
        self.cfg.allow_zero_gain && self.zero_gain_used < self.cfg.zero_gain_limit
    }

    fn replicates_open(&self) -> bool {
        self.cfg.ops.replicates && self.cfg.max_replicas.is_none_or(|m| self.replicates_applied < m)
    }

    fn is_boundary(&self, v: VertexId) -> bool {
        self.h
            .incident(v)
            .iter()
            .any(|&e| (self.src_mask[e] | self.drain_mask[e]).count_ones() >= 2)
    }

    fn feeds_remote_drains(&self, v: VertexId) -> bool {
        self.h
            .incident(v)
            .iter()
            .any(|&e| self.cost[e] > 0 && self.h.edge(e).source == v)
    }

    /// Recomputes every heap entry keyed under the listed vertices.
    /// Exchanges go last so that they see fresh move gains on both sides.
    fn refresh_all(&mut self, vs: &[VertexId]) {
        for &v in vs {
            self.refresh(v);
        }
        for &v in vs {
            self.refresh_exchange(v);
        }
    }

    /// Recomputes the heap entries of `v` other than its exchange.
    fn refresh(&mut self, v: VertexId) {
        self.bank.clear_vertex(v);
        let ops = self.cfg.ops;
        let hosts = self.host[v];
        let orig = self.p.original[v];
        let boundary = self.is_boundary(v);
        let zero_ok = self.zero_gain_allowed();
        let mut found: Vec<(Op, i64, FpgaId)> = Vec::new();
        // best move destination, also where exchange partners are sought
        let mut target: Option<(i64, Reverse<FpgaId>)> = None;
        let batched = self.cfg.mode == GainMode::Incremental;
        self.move_cached[v] = false;
        if (ops.moves || ops.exchanges) && boundary {
            let keep = hosts & !(1u64 << orig);
            let per = if batched { self.gains_per_target(v, keep) } else { [0; MAX_FPGAS] };
            if batched {
                self.move_gain[v * self.k..(v + 1) * self.k].copy_from_slice(&per[..self.k]);
                self.move_cached[v] = true;
            }
            for f in (0..self.k).filter(|&f| hosts & (1u64 << f) == 0) {
                let g = if batched { per[f] } else { self.eval(&[(v, keep | (1u64 << f))]) };
                if target.is_none_or(|t| (g, Reverse(f)) > t) {
                    target = Some((g, Reverse(f)));
                }
                if ops.moves && (g > 0 || (zero_ok && g == 0)) {
                    found.push((Op::Move { v, to: f }, g, f));
                }
            }
        }
        if self.replicates_open() && self.feeds_remote_drains(v) {
            let per = if batched { self.gains_per_target(v, hosts) } else { [0; MAX_FPGAS] };
            for f in (0..self.k).filter(|&f| hosts & (1u64 << f) == 0) {
                let g = if batched { per[f] } else { self.eval(&[(v, hosts | (1u64 << f))]) };
                if g > 0 {
                    found.push((Op::Replicate { v, to: f }, g, f));
                }
            }
        }
        if ops.deletes {
            for &f in &self.p.replicas[v] {
                let g = self.eval(&[(v, hosts & !(1u64 << f))]);
                if g >= 0 {
                    found.push((Op::Delete { v, from: f }, g, f));
                }
            }
        }
        for (op, g, dest) in found {
            if let Some(f) = self.overflow(op) {
                self.parked[f].insert(op);
                continue;
            }
            self.bank.insert(op, g, dest);
        }
        self.ex_target[v] = target.filter(|_| ops.exchanges).map(|(_, Reverse(f))| f);
    }

    /// Recomputes the exchange entry of `v` toward its last best move
    /// destination. Candidates that do not fit are parked.
    fn refresh_exchange(&mut self, v: VertexId) {
        let Some(target) = self.ex_target[v] else { return };
        let (mut seen, mut blocked) = (Vec::new(), Vec::new());
        let best = self.best_exchange(v, target, self.zero_gain_allowed(), &mut seen, &mut blocked);
        for w in seen {
            self.watch(w, v);
        }
        for (op, f) in blocked {
            self.parked[f].insert(op);
        }
        if let Some((op, g, dest)) = best {
            self.bank.insert(op, g, dest);
        }
    }

    /// Records that the exchange gains of `u` depend on the nets of `w`.
    fn watch(&mut self, w: VertexId, u: VertexId) {
        let list = &mut self.candidate_of[w];
        if list.last() != Some(&u) {
            list.push(u);
            if list.len() > 64 {
                list.sort_unstable();
                list.dedup();
            }
        }
    }

    /// Best exchange of `u` with a neighbour whose original is on `target`.
    /// The evaluated candidates are pushed to `seen`; qualifying ones that
    /// do not fit go to `blocked` with the FPGA that is too full.
    fn best_exchange(
        &self,
        u: VertexId,
        target: FpgaId,
        zero_ok: bool,
        seen: &mut Vec<VertexId>,
        blocked: &mut Vec<(Op, FpgaId)>,
    ) -> Option<(Op, i64, FpgaId)> {
        let fu = self.p.original[u];
        let mut best: Option<(i64, Reverse<VertexId>)> = None;
        'nets: for &e in self.h.incident(u) {
            for w in self.h.edge(e).pins() {
                if seen.len() >= self.cfg.exchange_candidates {
                    break 'nets;
                }
                if w == u || seen.contains(&w) {
                    continue;
                }
                let fw = self.p.original[w];
                if fw != target || fw == fu || self.host[u] & (1u64 << fw) != 0 || self.host[w] & (1u64 << fu) != 0 {
                    continue;
                }
                seen.push(w);
                let mu = (self.host[u] & !(1u64 << fu)) | (1u64 << fw);
                let mw = (self.host[w] & !(1u64 << fw)) | (1u64 << fu);
                let g = match self.cfg.mode {
                    GainMode::Incremental => self.pair_gain((u, mu), (w, mw)),
                    GainMode::FullRecompute => self.eval(&[(u, mu), (w, mw)]),
                };
                if let Some(f) = self.overflow(Op::Exchange { u, v: w }) {
                    if g > 0 || (zero_ok && g == 0) {
                        blocked.push((Op::Exchange { u, v: w }, f));
                    }
                    continue;
                }
                let cand = (g, Reverse(w));
                if best.is_none_or(|b| cand > b) {
                    best = Some(cand);
                }
            }
        }
        let (g, Reverse(w)) = best?;
        (g > 0 || (zero_ok && g == 0)).then(|| (Op::Exchange { u, v: w }, g, self.p.original[w]))
    }

    /// Exchange gain as the cached move gains of both sides plus a
    /// correction on the nets they share.
    fn pair_gain(&self, (u, mu): (VertexId, u64), (w, mw): (VertexId, u64)) -> i64 {
        let (k, fu, fw) = (self.k, self.p.original[u], self.p.original[w]);
        let ch = [(u, mu), (w, mw)];
        if !(self.move_cached[u] && self.move_cached[w]) {
            return self.eval(&ch);
        }
        let mut g = self.move_gain[u * k + fw] + self.move_gain[w * k + fu];
        for &e in self.h.incident(u) {
            let edge = self.h.edge(e);
            if edge.source == w || edge.drains.binary_search(&w).is_ok() {
                let both = self.net_saving(e, &ch, [true, true]);
                let apart = self.net_saving(e, &ch, [true, false]) + self.net_saving(e, &ch, [false, true]);
                g += edge.weight as i64 * (both - apart);
            }
        }
        g
    }

    /// Re-admits a parked move, replicate or delete if it is still legal,
    /// now fits, and still clears the acceptance threshold.
    fn unpark(&mut self, op: Op) {
        let Some(ch) = mask_changes(&self.p, op, self.k) else { return };
        if let Some(f) = self.overflow(op) {
            self.parked[f].insert(op);
            return;
        }
        let g = match (op, self.cfg.mode) {
            (Op::Exchange { .. }, GainMode::Incremental) => self.pair_gain(ch.as_slice()[0], ch.as_slice()[1]),
            _ => self.eval(ch.as_slice()),
        };
        if let Op::Exchange { u, v: w } = op {
            if !self.cfg.ops.exchanges || !(g > 0 || (g == 0 && self.zero_gain_allowed())) {
                return;
            }
            // u holds one exchange entry. A weaker wake is dropped: u
            // searches again whenever its entry leaves the bank.
            if let Some(cur) = self.bank.partner[u] {
                let cur_g = self.bank.stored(Op::Exchange { u, v: cur }).expect("partner has an entry");
                if (cur_g, Reverse(cur)) >= (g, Reverse(w)) {
                    return;
                }
            }
            self.bank.insert(op, g, self.p.original[w]);
            self.watch(w, u);
            return;
        }
        let ok = match op.kind() {
            OpKind::Move => g > 0 || (g == 0 && self.zero_gain_allowed()),
            OpKind::Replicate => g > 0 && self.replicates_open(),
            _ => g >= 0,
        };
        if ok && self.cfg.ops.contains(op.kind()) {
            self.bank.insert(op, g, 0);
        }
    }

    fn next_epoch(&mut self) -> u32 {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.epoch
    }

    /// Applies a structurally legal op without checking constraints,
    /// updates every cache and refreshes the affected heap entries.
    /// Returns the realized THD decrease.
    pub fn apply(&mut self, op: Op) -> i64 {
        let Some(ch) = mask_changes(&self.p, op, self.k) else {
            panic!("illegal op {op}");
        };
        let ch = ch.as_slice();
        let before = self.thd;
        let hm = self.t.hops();
        let mut nets: Vec<(EdgeId, [bool; 2])> = Vec::new();
        self.for_each_affected(ch, |e, pins| nets.push((e, pins)));
        for &(e, pins) in &nets {
            let edge = self.h.edge(e);
            let w = edge.weight;
            let (ex0, im0) = io_masks(self.src_mask[e], self.drain_mask[e], hm);
            for f in Bits(ex0 | im0) {
                self.io[f] -= w;
            }
            self.thd -= w * self.cost[e];
            let (s, d) = self.net_after(e, ch, pins);
            for (i, &(x, new)) in ch.iter().enumerate() {
                if pins[i] && x != edge.source {
                    let old = self.host[x];
                    for f in Bits(old ^ new) {
                        let c = &mut self.drain_cnt[e * self.k + f];
                        if new & (1u64 << f) != 0 {
                            *c += 1;
                        } else {
                            *c -= 1;
                        }
                    }
                }
            }
            self.src_mask[e] = s;
            self.drain_mask[e] = d;
            self.cost[e] = mask_cost(s, d, hm);
            self.thd += w * self.cost[e];
            let (ex1, im1) = io_masks(s, d, hm);
            for f in Bits(ex1 | im1) {
                self.io[f] += w;
            }
        }
        let r = self.r;
        let mut freed = 0u64;
        for &(x, new) in ch {
            let old = self.host[x];
            let wx = self.h.vertex_weight(x);
            for f in Bits(old & !new) {
                for (u, w) in self.usage[f * r..(f + 1) * r].iter_mut().zip(wx) {
                    *u -= w;
                }
                freed |= 1u64 << f;
            }
            for f in Bits(new & !old) {
                for (u, w) in self.usage[f * r..(f + 1) * r].iter_mut().zip(wx) {
                    *u += w;
                }
            }
        }
        // an exchange only frees an FPGA where the outgoing vertex is larger
        if let Op::Exchange { u, v } = op {
            let (fu, fv) = (self.p.original[u], self.p.original[v]);
            let (wu, wv) = (self.h.vertex_weight(u), self.h.vertex_weight(v));
            freed = 0;
            if wu.iter().zip(wv).any(|(a, b)| a > b) {
                freed |= 1u64 << fu;
            }
            if wv.iter().zip(wu).any(|(a, b)| a > b) {
                freed |= 1u64 << fv;
            }
        }
        for &(x, new) in ch {
            self.host[x] = new;
        }
        apply_to_placement(&mut self.p, op);
        if op.kind() == OpKind::Replicate {
            self.replicates_applied += 1;
            if !self.replicates_open() {
                self.bank.clear_kind(OpKind::Replicate);
            }
        }

        let epoch = self.next_epoch();
        let mut todo: Vec<VertexId> = Vec::new();
        let mark = |x: VertexId, stamp: &mut Vec<u32>, todo: &mut Vec<VertexId>| {
            if stamp[x] != epoch {
                stamp[x] = epoch;
                todo.push(x);
            }
        };
        for &(x, _) in ch {
            mark(x, &mut self.stamp, &mut todo);
        }
        for &(e, _) in &nets {
            for x in self.h.edge(e).pins() {
                mark(x, &mut self.stamp, &mut todo);
            }
        }
        let mut unparked = Vec::new();
        for f in Bits(freed) {
            let mut set = std::mem::take(&mut self.parked[f]);
            set.retain(|&op| {
                if mask_changes(&self.p, op, self.k).is_none() {
                    return false;
                }
                let wake = self.overflow(op).is_none();
                if wake {
                    unparked.push(op);
                }
                !wake
            });
            self.parked[f] = set;
        }
        // exchange searches that looked at a changed vertex are stale
        let mut again: Vec<VertexId> = Vec::new();
        for &w in &todo {
            again.extend(std::mem::take(&mut self.candidate_of[w]));
        }
        again.sort_unstable();
        again.dedup();
        self.refresh_all(&todo);
        for u in again {
            if self.stamp[u] != epoch {
                if let Some(w) = self.bank.partner[u] {
                    self.bank.remove(Op::Exchange { u, v: w });
                }
                self.refresh_exchange(u);
            }
        }
        // refreshed vertices already reconsidered their parked ops
        for op in unparked {
            if self.stamp[op.vertex()] != epoch {
                self.unpark(op);
            }
        }
        before as i64 - self.thd as i64
    }

    /// Pops and handles one entry. Returns the applied op, if any, or
    /// `None` when the bank is empty.
    pub fn step(&mut self) -> Option<Option<Op>> {
        let (op, gain) = self.bank.best()?;
        self.bank.remove(op);
        self.stats.popped += 1;
        let zero_move = gain == 0 && matches!(op.kind(), OpKind::Move | OpKind::Exchange);
        if zero_move && !self.zero_gain_allowed() {
            return Some(None);
        }
        match self.check(op) {
            Ok(()) => {}
            Err(b) => {
                self.stats.blocked += 1;
                match (b, op) {
                    // recompute u's best partner; this one gets parked there
                    (Blocked::Resource(_), Op::Exchange { u, .. }) => self.refresh_exchange(u),
                    (Blocked::Resource(f), _) => {
                        self.parked[f].insert(op);
                    }
                    _ => {}
                }
                return Some(None);
            }
        }
        let before = self.thd;
        let realized = self.apply(op);
        debug_assert_eq!(realized, gain, "stale gain for {op}");
        if zero_move {
            self.zero_gain_used += 1;
        }
        self.stats.applied[op.kind().index()] += 1;
        if self.cfg.audit {
            self.audit(op, before);
        }
        Some(Some(op))
    }

    fn audit(&mut self, op: Op, before: u64) {
        let mut problems = Vec::new();
        if self.thd > before {
            problems.push(format!("THD rose {before} -> {}", self.thd));
        }
        let full = metrics::total_hop_distance(self.h, &self.p, self.t.hops());
        if full != self.thd {
            problems.push(format!("cached THD {} != recomputed {full}", self.thd));
        }
        let v = metrics::validate(self.h, self.t, &self.p);
        if !v.is_empty() {
            problems.push(format!("{} violations, first {:?}", v.len(), v[0]));
        }
        if !problems.is_empty() {
            self.stats.audit_failures += 1;
            if self.stats.first_audit_failure.is_none() {
                self.stats.first_audit_failure = Some(format!("after {op}: {}", problems.join("; ")));
            }
        }
    }

    /// Applies the best feasible entry until none remain.
    pub fn run(&mut self) -> RefineStats {
        while self.step().is_some() {}
        self.stats.thd_after = self.thd;
        self.stats.clone()
    }
}

fn low_bits(k: usize) -> u64 {
    if k >= 64 {
        u64::MAX
    } else {
        (1u64 << k) - 1
    }
}

/// Refines `p` on one level; returns the improved placement and counters.
pub fn refine_level(
    h: &Hypergraph,
    t: &MfsTopology,
    p: Placement,
    cfg: &RefineConfig,
) -> (Placement, RefineStats) {
    if cfg.ops.is_empty() {
        let thd = metrics::total_hop_distance(h, &p, t.hops());
        return (p, RefineStats { thd_before: thd, thd_after: thd, ..Default::default() });
    }
    let mut r = Refiner::new(h, t, p, cfg.clone());
    let stats = r.run();
    (r.into_placement(), stats)
}

/// Fine placement from a coarse one: every fine vertex takes its
/// hypernode's original and replicas.
pub fn project_to_finer(level: &Level, coarse: &Placement) -> Placement {
    Placement {
        original: level.map.iter().map(|&c| coarse.original[c]).collect(),
        replicas: level.map.iter().map(|&c| coarse.replicas[c].clone()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GainMismatch {
    /// Index of the op about to be applied, or the sequence length for the
    /// final sweep.
    pub step: usize,
    pub op: Op,
    pub incremental: i64,
    pub expected: i64,
}

impl fmt::Display for GainMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {}: {} has gain {} but full recompute gives {}",
            self.step, self.op, self.incremental, self.expected
        )
    }
}

/// Replays `ops`, comparing every stored heap gain and every op's
/// incremental gain with a from-scratch evaluation. The bank is swept
/// before the first op and after the last; ops that are illegal at their
/// turn are skipped. Returns the number of comparisons made.
pub fn incremental_vs_full_check(r: &mut Refiner<'_>, ops: &[Op]) -> Result<usize, GainMismatch> {
    let mut checked = 0usize;
    let sweep = |r: &Refiner<'_>, step: usize, checked: &mut usize| -> Result<(), GainMismatch> {
        for (op, stored) in r.entries() {
            let expected = crate::oracle::full_gain_recompute(r.h, r.t, &r.p, op)
                .expect("stored op is legal");
            *checked += 1;
            if stored != expected {
                return Err(GainMismatch { step, op, incremental: stored, expected });
            }
        }
        Ok(())
    };
    sweep(r, 0, &mut checked)?;
    for (i, &op) in ops.iter().enumerate() {
        let Some(g) = r.gain(op) else { continue };
        let expected = crate::oracle::full_gain_recompute(r.h, r.t, &r.p, op).expect("legal op");
        checked += 1;
        if g != expected {
            return Err(GainMismatch { step: i, op, incremental: g, expected });
        }
        if let Some(stored) = r.stored_gain(op) {
            checked += 1;
            if stored != expected {
                return Err(GainMismatch { step: i, op, incremental: stored, expected });
            }
        }
        r.apply(op);
    }
    sweep(r, ops.len(), &mut checked)?;
    Ok(checked)
}
