//! Text formats for hypergraphs, topologies and solutions, an hMETIS
//! reader, and a seeded random instance generator.
//!
//! Hypergraph format (`#` starts a comment, blank lines ignored):
//!
//! ```text
//! V E k
//! <k resource integers>            # V vertex lines
//! <weight> <source> <drain> ...    # E net lines
//! ```
//!
//! Topology format:
//!
//! ```text
//! K L k [hop_max]
//! <cap_1> ... <cap_k> [io_limit|-] # K FPGA lines
//! <a> <b>                          # L link lines
//! ```
//!
//! Solution format: one line per vertex, the original FPGA followed by its
//! replica FPGAs.

use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{FpgaId, Hyperedge, Hypergraph, ModelError, Placement, ResourceVector, MAX_FPGAS};
use crate::topology::{MfsTopology, TopologyError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    MalformedHeader(String),
    ExpectedInteger(String),
    NegativeValue,
    ZeroWeight,
    SourceInDrains,
    DanglingVertex { vertex: usize, count: usize },
    MissingDrains,
    TokenCount { expected: String, got: usize },
    UnexpectedEof(String),
    TrailingGarbage,
    SelfLink,
    DuplicateLink,
    FpgaOutOfRange { fpga: usize, count: usize },
    ReplicaIsOriginal,
    DuplicateReplica,
    Topology(TopologyError),
    Model(ModelError),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ParseErrorKind::*;
        match self {
            MalformedHeader(m) => write!(f, "malformed header: {m}"),
            ExpectedInteger(t) => write!(f, "expected integer, found `{t}`"),
            NegativeValue => write!(f, "negative weight or value"),
            ZeroWeight => write!(f, "net weight must be at least 1"),
            SourceInDrains => write!(f, "source repeated in drains"),
            DanglingVertex { vertex, count } => {
                write!(f, "dangling vertex id {vertex} (|V| = {count})")
            }
            MissingDrains => write!(f, "net has no drains"),
            TokenCount { expected, got } => write!(f, "expected {expected} values, found {got}"),
            UnexpectedEof(what) => write!(f, "unexpected end of input, expected {what}"),
            TrailingGarbage => write!(f, "trailing content after last record"),
            SelfLink => write!(f, "self-link"),
            DuplicateLink => write!(f, "duplicate link"),
            FpgaOutOfRange { fpga, count } => write!(f, "FPGA id {fpga} out of range (K = {count})"),
            ReplicaIsOriginal => write!(f, "replica equals original"),
            DuplicateReplica => write!(f, "duplicate replica"),
            Topology(e) => write!(f, "{e}"),
            Model(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    column: usize,
}

struct Line<'a> {
    number: usize,
    tokens: Vec<Token<'a>>,
}

impl Line<'_> {
    fn err(&self, column: usize, kind: ParseErrorKind) -> ParseError {
        ParseError { line: self.number, column, kind }
    }

    fn at(&self, i: usize, kind: ParseErrorKind) -> ParseError {
        let column = self.tokens.get(i).map_or(1, |t| t.column);
        self.err(column, kind)
    }

    fn int(&self, i: usize) -> Result<u64, ParseError> {
        let tok = self.tokens[i];
        if let Some(rest) = tok.text.strip_prefix('-') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                return Err(self.err(tok.column, ParseErrorKind::NegativeValue));
            }
        }
        tok.text
            .parse::<u64>()
            .map_err(|_| self.err(tok.column, ParseErrorKind::ExpectedInteger(tok.text.to_string())))
    }

    fn ints(&self) -> Result<Vec<u64>, ParseError> {
        (0..self.tokens.len()).map(|i| self.int(i)).collect()
    }
}

fn lines(text: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = Vec::new();
        let mut start = None;
        for (pos, ch) in content.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    tokens.push(Token { text: &content[s..pos], column: s + 1 });
                }
            } else if start.is_none() {
                start = Some(pos);
            }
        }
        if let Some(s) = start {
            tokens.push(Token { text: &content[s..], column: s + 1 });
        }
        if !tokens.is_empty() {
            out.push(Line { number: idx + 1, tokens });
        }
    }
    out
}

struct Records<'a> {
    lines: std::vec::IntoIter<Line<'a>>,
    last_line: usize,
}

impl<'a> Records<'a> {
    fn new(text: &'a str) -> Self {
        let last_line = text.lines().count().max(1);
        Records { lines: lines(text).into_iter(), last_line }
    }

    fn next(&mut self, what: &str) -> Result<Line<'a>, ParseError> {
        self.lines.next().ok_or_else(|| ParseError {
            line: self.last_line,
            column: 1,
            kind: ParseErrorKind::UnexpectedEof(what.to_string()),
        })
    }

    fn finish(mut self) -> Result<(), ParseError> {
        match self.lines.next() {
            Some(l) => Err(l.at(0, ParseErrorKind::TrailingGarbage)),
            None => Ok(()),
        }
    }
}

fn header(line: &Line<'_>, min: usize, max: usize, shape: &str) -> Result<Vec<u64>, ParseError> {
    let n = line.tokens.len();
    if n < min || n > max {
        return Err(line.at(
            0,
            ParseErrorKind::MalformedHeader(format!("expected `{shape}`, found {n} fields")),
        ));
    }
    line.ints().map_err(|e| match e.kind {
        ParseErrorKind::ExpectedInteger(t) => ParseError {
            kind: ParseErrorKind::MalformedHeader(format!("non-integer field `{t}`")),
            ..e
        },
        _ => e,
    })
}

/// Parses the native hypergraph format.
pub fn parse_hypergraph(text: &str) -> Result<Hypergraph, ParseError> {
    let mut rec = Records::new(text);
    let head = rec.next("header `V E k`")?;
    let h = header(&head, 3, 3, "V E k")?;
    let (nv, ne, k) = (h[0] as usize, h[1] as usize, h[2] as usize);
    if k == 0 {
        return Err(head.at(2, ParseErrorKind::MalformedHeader("k must be positive".into())));
    }
    let mut weights = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = rec.next("vertex weight line")?;
        if line.tokens.len() != k {
            return Err(line.at(
                0,
                ParseErrorKind::TokenCount { expected: k.to_string(), got: line.tokens.len() },
            ));
        }
        weights.push(ResourceVector(line.ints()?));
    }
    let mut edges = Vec::with_capacity(ne);
    for _ in 0..ne {
        let line = rec.next("net line `w src d1 ...`")?;
        if line.tokens.len() < 2 {
            return Err(line.at(
                0,
                ParseErrorKind::TokenCount { expected: "at least 3".into(), got: line.tokens.len() },
            ));
        }
        let vals = line.ints()?;
        if vals[0] == 0 {
            return Err(line.at(0, ParseErrorKind::ZeroWeight));
        }
        for (i, &v) in vals.iter().enumerate().skip(1) {
            if v as usize >= nv {
                return Err(line.at(
                    i,
                    ParseErrorKind::DanglingVertex { vertex: v as usize, count: nv },
                ));
            }
        }
        let source = vals[1] as usize;
        if let Some(i) = vals.iter().skip(2).position(|&d| d as usize == source) {
            return Err(line.at(i + 2, ParseErrorKind::SourceInDrains));
        }
        if vals.len() < 3 {
            return Err(line.at(1, ParseErrorKind::MissingDrains));
        }
        edges.push(Hyperedge {
            weight: vals[0],
            source,
            drains: vals[2..].iter().map(|&d| d as usize).collect(),
        });
    }
    rec.finish()?;
    Hypergraph::new(k, weights, edges).map_err(|e| ParseError {
        line: 1,
        column: 1,
        kind: ParseErrorKind::Model(e),
    })
}

/// Reads an hMETIS `.hgr` file. Each net's first pin becomes its source and
/// the rest its drains, so driver information present elsewhere is lost.
/// Nets that reduce to a single distinct pin are dropped. Supported `fmt`
/// values: absent/0 (unweighted), 1 (net weights), 10 (vertex weights),
/// 11 (both). Vertex weights become a single resource type.
pub fn parse_hmetis(text: &str) -> Result<Hypergraph, ParseError> {
    let mut rec = Records::new(text);
    let head = rec.next("header `E V [fmt]`")?;
    let h = header(&head, 2, 3, "E V [fmt]")?;
    let (ne, nv) = (h[0] as usize, h[1] as usize);
    let fmt = h.get(2).copied().unwrap_or(0);
    let (edge_w, vertex_w) = match fmt {
        0 => (false, false),
        1 => (true, false),
        10 => (false, true),
        11 => (true, true),
        _ => {
            return Err(head.at(2, ParseErrorKind::MalformedHeader(format!("unsupported fmt {fmt}"))))
        }
    };
    let mut edges = Vec::with_capacity(ne);
    for _ in 0..ne {
        let line = rec.next("net line")?;
        let vals = line.ints()?;
        let (w, pins) = if edge_w {
            (vals[0], &vals[1..])
        } else {
            (1, &vals[..])
        };
        if w == 0 {
            return Err(line.at(0, ParseErrorKind::ZeroWeight));
        }
        let offset = usize::from(edge_w);
        for (i, &p) in pins.iter().enumerate() {
            if p == 0 || p as usize > nv {
                return Err(line.at(
                    i + offset,
                    ParseErrorKind::DanglingVertex { vertex: p as usize, count: nv },
                ));
            }
        }
        if pins.is_empty() {
            return Err(line.at(0, ParseErrorKind::MissingDrains));
        }
        let source = pins[0] as usize - 1;
        let mut drains: Vec<usize> = pins[1..]
            .iter()
            .map(|&p| p as usize - 1)
            .filter(|&d| d != source)
            .collect();
        drains.sort_unstable();
        drains.dedup();
        if !drains.is_empty() {
            edges.push(Hyperedge { weight: w, source, drains });
        }
    }
    let mut weights = vec![ResourceVector(vec![1]); nv];
    if vertex_w {
        for w in weights.iter_mut() {
            let line = rec.next("vertex weight line")?;
            if line.tokens.len() != 1 {
                return Err(line.at(
                    0,
                    ParseErrorKind::TokenCount { expected: "1".into(), got: line.tokens.len() },
                ));
            }
            *w = ResourceVector(line.ints()?);
        }
    }
    rec.finish()?;
    Hypergraph::new(1, weights, edges).map_err(|e| ParseError {
        line: 1,
        column: 1,
        kind: ParseErrorKind::Model(e),
    })
}

/// Parses the native topology format.
pub fn parse_topology(text: &str) -> Result<MfsTopology, ParseError> {
    let mut rec = Records::new(text);
    let head = rec.next("header `K L k [hop_max]`")?;
    let h = header(&head, 3, 4, "K L k [hop_max]")?;
    let (nf, nl, k) = (h[0] as usize, h[1] as usize, h[2] as usize);
    if nf == 0 {
        return Err(head.at(0, ParseErrorKind::MalformedHeader("K must be positive".into())));
    }
    if nf > MAX_FPGAS {
        return Err(head.at(0, ParseErrorKind::Topology(TopologyError::TooManyFpgas(nf))));
    }
    if k == 0 {
        return Err(head.at(2, ParseErrorKind::MalformedHeader("k must be positive".into())));
    }
    let hop_max = match h.get(3) {
        Some(0) => return Err(head.at(3, ParseErrorKind::Topology(TopologyError::ZeroHopMax))),
        Some(&m) => Some(u32::try_from(m).unwrap_or(u32::MAX)),
        None => None,
    };
    let mut caps = Vec::with_capacity(nf);
    let mut io = Vec::with_capacity(nf);
    for _ in 0..nf {
        let line = rec.next("FPGA line `cap_1 .. cap_k [io_limit]`")?;
        let n = line.tokens.len();
        if n != k && n != k + 1 {
            return Err(line.at(
                0,
                ParseErrorKind::TokenCount { expected: format!("{k} or {}", k + 1), got: n },
            ));
        }
        let cap: Result<Vec<u64>, _> = (0..k).map(|i| line.int(i)).collect();
        caps.push(ResourceVector(cap?));
        io.push(if n == k || line.tokens[k].text == "-" {
            None
        } else {
            Some(line.int(k)?)
        });
    }
    let mut links = Vec::with_capacity(nl);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..nl {
        let line = rec.next("link line `a b`")?;
        if line.tokens.len() != 2 {
            return Err(line.at(
                0,
                ParseErrorKind::TokenCount { expected: "2".into(), got: line.tokens.len() },
            ));
        }
        let (a, b) = (line.int(0)? as usize, line.int(1)? as usize);
        for (i, x) in [(0, a), (1, b)] {
            if x >= nf {
                return Err(line.at(i, ParseErrorKind::FpgaOutOfRange { fpga: x, count: nf }));
            }
        }
        if a == b {
            return Err(line.at(1, ParseErrorKind::SelfLink));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(line.at(0, ParseErrorKind::DuplicateLink));
        }
        links.push((a, b));
    }
    rec.finish()?;
    MfsTopology::new(caps, io, links, hop_max).map_err(|e| ParseError {
        line: 1,
        column: 1,
        kind: ParseErrorKind::Topology(e),
    })
}

/// Parses a solution. Range checks against `K` and `|V|` are left to
/// validation.
pub fn parse_solution(text: &str) -> Result<Placement, ParseError> {
    let mut original = Vec::new();
    let mut replicas = Vec::new();
    for line in lines(text) {
        let vals = line.ints()?;
        let o = vals[0] as FpgaId;
        let mut reps: Vec<FpgaId> = Vec::with_capacity(vals.len() - 1);
        for (i, &r) in vals.iter().enumerate().skip(1) {
            let r = r as FpgaId;
            if r == o {
                return Err(line.at(i, ParseErrorKind::ReplicaIsOriginal));
            }
            if reps.contains(&r) {
                return Err(line.at(i, ParseErrorKind::DuplicateReplica));
            }
            reps.push(r);
        }
        reps.sort_unstable();
        original.push(o);
        replicas.push(reps);
    }
    Ok(Placement { original, replicas })
}

pub fn write_solution(p: &Placement) -> String {
    let mut s = String::with_capacity(p.num_vertices() * 3);
    for (o, reps) in p.original.iter().zip(&p.replicas) {
        write!(s, "{o}").unwrap();
        for r in reps {
            write!(s, " {r}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn write_hypergraph(h: &Hypergraph) -> String {
    let mut s = String::new();
    writeln!(s, "{} {} {}", h.num_vertices(), h.num_edges(), h.resource_types()).unwrap();
    for v in 0..h.num_vertices() {
        push_joined(&mut s, h.vertex_weight(v).iter());
    }
    for e in h.edges() {
        push_joined(
            &mut s,
            [e.weight, e.source as u64]
                .iter()
                .copied()
                .chain(e.drains.iter().map(|&d| d as u64))
                .collect::<Vec<_>>()
                .iter(),
        );
    }
    s
}

pub fn write_topology(t: &MfsTopology) -> String {
    let mut s = String::new();
    write!(s, "{} {} {}", t.num_fpgas(), t.links().len(), t.resource_types()).unwrap();
    if let Some(m) = t.hop_max() {
        write!(s, " {m}").unwrap();
    }
    s.push('\n');
    for f in 0..t.num_fpgas() {
        for c in t.capacity(f) {
            write!(s, "{c} ").unwrap();
        }
        match t.io_limit(f) {
            Some(l) => writeln!(s, "{l}").unwrap(),
            None => s.push_str("-\n"),
        }
    }
    for (a, b) in t.links() {
        writeln!(s, "{a} {b}").unwrap();
    }
    s
}

fn push_joined<'a>(s: &mut String, vals: impl Iterator<Item = &'a u64>) {
    let mut first = true;
    for v in vals {
        if !first {
            s.push(' ');
        }
        first = false;
        write!(s, "{v}").unwrap();
    }
    s.push('\n');
}

/// A hypergraph with the topology it targets.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBundle {
    pub hypergraph: Hypergraph,
    pub topology: MfsTopology,
    pub names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("hypergraph has {hypergraph} resource types, topology has {topology}")]
    ResourceMismatch { hypergraph: usize, topology: usize },
}

impl InstanceBundle {
    pub fn new(hypergraph: Hypergraph, topology: MfsTopology) -> Result<Self, InstanceError> {
        if hypergraph.resource_types() != topology.resource_types() {
            return Err(InstanceError::ResourceMismatch {
                hypergraph: hypergraph.resource_types(),
                topology: topology.resource_types(),
            });
        }
        Ok(InstanceBundle { hypergraph, topology, names: None })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("vertex count must be positive")]
    NoVertices,
    #[error("at least two vertices are needed to form nets")]
    TooFewVertices,
    #[error("FPGA count must be in 1..={MAX_FPGAS}")]
    FpgaCount,
    #[error("resource type count must be positive")]
    NoResourceTypes,
    #[error("spare capacity {0} is negative: total vertex weight would exceed total capacity")]
    NegativeSpare(String),
    #[error("hop limit must be positive")]
    ZeroHopMax,
    #[error("knob out of range: {0}")]
    Knob(String),
}

/// Knobs for [`gen_instance`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub vertices: usize,
    pub edges: usize,
    pub fpgas: usize,
    pub resource_types: usize,
    /// Total capacity is `(1 + spare)` times total vertex weight, per type.
    pub spare: f64,
    /// Probability that a net gets a long-tailed fanout instead of 1..=2.
    pub fanout_skew: f64,
    pub max_fanout: usize,
    /// Drains are drawn within this id distance of the source, mostly.
    pub locality: usize,
    /// Links added on top of a random spanning tree.
    pub extra_links: usize,
    pub hop_max: Option<u32>,
    /// Per-FPGA io limit as a multiple of `2 * total net weight / K`.
    pub io_factor: Option<f64>,
    /// Capacity jitter across FPGAs, fraction in `[0, 1)`.
    pub heterogeneity: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 1,
            vertices: 1000,
            edges: 1000,
            fpgas: 8,
            resource_types: 2,
            spare: 0.3,
            fanout_skew: 0.3,
            max_fanout: 16,
            locality: 24,
            extra_links: 4,
            hop_max: None,
            io_factor: None,
            heterogeneity: 0.2,
        }
    }
}

/// Generates a deterministic random instance. Nets favour nearby vertex ids
/// (giving cluster structure) and some sources drive several nets with wide
/// fanout so replication has something to gain.
pub fn gen_instance(cfg: &GenConfig) -> Result<InstanceBundle, GenError> {
    if cfg.vertices == 0 {
        return Err(GenError::NoVertices);
    }
    if cfg.edges > 0 && cfg.vertices < 2 {
        return Err(GenError::TooFewVertices);
    }
    if cfg.fpgas == 0 || cfg.fpgas > MAX_FPGAS {
        return Err(GenError::FpgaCount);
    }
    if cfg.resource_types == 0 {
        return Err(GenError::NoResourceTypes);
    }
    if !(cfg.spare >= 0.0) {
        return Err(GenError::NegativeSpare(cfg.spare.to_string()));
    }
    if cfg.hop_max == Some(0) {
        return Err(GenError::ZeroHopMax);
    }
    if !(0.0..=1.0).contains(&cfg.fanout_skew) {
        return Err(GenError::Knob("fanout_skew must be in [0,1]".into()));
    }
    if !(0.0..1.0).contains(&cfg.heterogeneity) {
        return Err(GenError::Knob("heterogeneity must be in [0,1)".into()));
    }
    if cfg.max_fanout == 0 || cfg.locality == 0 {
        return Err(GenError::Knob("max_fanout and locality must be positive".into()));
    }
    if matches!(cfg.io_factor, Some(x) if !(x > 0.0)) {
        return Err(GenError::Knob("io_factor must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.vertices;
    let k = cfg.resource_types;

    let weights: Vec<ResourceVector> = (0..n)
        .map(|_| {
            ResourceVector(
                (0..k)
                    .map(|i| {
                        if i == 0 {
                            rng.gen_range(1..=8)
                        } else if rng.gen_bool(0.3) {
                            rng.gen_range(1..=4)
                        } else {
                            0
                        }
                    })
                    .collect(),
            )
        })
        .collect();

    // a minority of "hub" vertices drive most wide nets
    let hubs: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.1)).collect();
    let mut edges = Vec::with_capacity(cfg.edges);
    for _ in 0..cfg.edges {
        let wide = rng.gen_bool(cfg.fanout_skew);
        let source = if wide && !hubs.is_empty() {
            hubs[rng.gen_range(0..hubs.len())]
        } else {
            rng.gen_range(0..n)
        };
        let fanout = if wide {
            // long tail: P(f) ~ 1/f^2 on 2..=max_fanout
            let u: f64 = rng.gen_range(0.0..1.0);
            ((2.0 / (1.0 - u).max(1e-9)).floor() as usize).clamp(2, cfg.max_fanout)
        } else {
            rng.gen_range(1..=2)
        }
        .min(n - 1);
        let mut drains = Vec::with_capacity(fanout);
        while drains.len() < fanout {
            let d = if rng.gen_bool(0.9) {
                let lo = source.saturating_sub(cfg.locality);
                let hi = (source + cfg.locality).min(n - 1);
                rng.gen_range(lo..=hi)
            } else {
                rng.gen_range(0..n)
            };
            if d != source && !drains.contains(&d) {
                drains.push(d);
            }
        }
        let weight = if rng.gen_bool(0.75) { 1 } else { rng.gen_range(2..=4) };
        edges.push(Hyperedge { weight, source, drains });
    }
    let hypergraph = Hypergraph::new(k, weights, edges).expect("generator emits valid nets");

    let nf = cfg.fpgas;
    let mut links = Vec::new();
    let mut order: Vec<usize> = (0..nf).collect();
    order.shuffle(&mut rng);
    for i in 1..nf {
        let j = rng.gen_range(0..i);
        links.push((order[j].min(order[i]), order[j].max(order[i])));
    }
    let max_links = nf * (nf - 1) / 2;
    let mut extra = cfg.extra_links.min(max_links - links.len());
    while extra > 0 {
        let a = rng.gen_range(0..nf);
        let b = rng.gen_range(0..nf);
        let key = (a.min(b), a.max(b));
        if a != b && !links.contains(&key) {
            links.push(key);
            extra -= 1;
        }
    }

    let total = hypergraph.total_weight();
    let mut scale: Vec<f64> = (0..nf)
        .map(|_| 1.0 + cfg.heterogeneity * rng.gen_range(-1.0..=1.0))
        .collect();
    let mean = scale.iter().sum::<f64>() / nf as f64;
    for s in &mut scale {
        *s /= mean;
    }
    let max_vertex: Vec<u64> = (0..k)
        .map(|i| (0..n).map(|v| hypergraph.vertex_weight(v)[i]).max().unwrap_or(0))
        .collect();
    let caps: Vec<ResourceVector> = scale
        .iter()
        .map(|s| {
            ResourceVector(
                (0..k)
                    .map(|i| {
                        let c = (total.0[i] as f64 * (1.0 + cfg.spare) / nf as f64 * s).ceil() as u64;
                        c.max(max_vertex[i]).max(1)
                    })
                    .collect(),
            )
        })
        .collect();
    let io_limits = match cfg.io_factor {
        Some(x) => {
            let signal: u64 = hypergraph.edges().iter().map(|e| e.weight).sum();
            let lim = (x * 2.0 * signal as f64 / nf as f64).ceil() as u64;
            vec![Some(lim); nf]
        }
        None => vec![None; nf],
    };
    let topology = MfsTopology::new(caps, io_limits, links, cfg.hop_max)
        .expect("generator emits a connected topology");
    Ok(InstanceBundle { hypergraph, topology, names: None })
}
