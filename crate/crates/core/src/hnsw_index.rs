//! Layered small-world graph over granular-ball centers.
//!
//! Each ball joins layers `0..=L` for a random level `L`. Insertion walks
//! down from the top layer, picking at every layer the single nearest node
//! among a candidate set (the whole layer at the top, the carried node and
//! its two-hop neighborhood below) and linking the new node to it. Search
//! takes the same path for a query and feeds each layer's pick into a
//! bounded priority queue.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::granular_ball::{GranularBall, Label};
use crate::quantum_sim::{
    encode_point, quantum_compare, select_min, similarity_batch, swap_test_p1, AngleState,
    Comparator, Cost, EncodingParams, Scored, SimilarityBackend,
};
use crate::scalar::Scalar;

/// Construction and search parameters stored with the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexParams {
    /// Degree cap `m`.
    pub max_neighbors: usize,
    pub encoding: EncodingParams,
    pub backend: SimilarityBackend,
    pub comparator: Comparator,
    pub seed: u64,
    /// Score the whole layer during insertion instead of the two-hop set.
    pub full_layer_candidates: bool,
}

impl IndexParams {
    pub fn new(max_neighbors: usize, encoding: EncodingParams) -> Self {
        Self {
            max_neighbors,
            encoding,
            backend: SimilarityBackend::Exact,
            comparator: Comparator::Exact,
            seed: 0,
            full_layer_candidates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_neighbors == 0 {
            return Err(Error::InvalidParameter(
                "max neighbors must be at least 1".into(),
            ));
        }
        EncodingParams::new(self.encoding.bits, self.encoding.dim)?;
        self.backend.validate()?;
        self.comparator.validate()
    }
}

/// `floor(log2 n)` for `n >= 1`.
pub fn floor_log2(n: usize) -> usize {
    (usize::BITS - 1 - n.max(1).leading_zeros()) as usize
}

/// Level for a uniform draw `r` in `(0, 1)` with `ball_count` balls in total.
pub fn level_for(r: f64, ball_count: usize) -> usize {
    let raw = (-r.log2()).floor();
    let cap = floor_log2(ball_count);
    if raw >= cap as f64 {
        cap
    } else {
        raw.max(0.0) as usize
    }
}

/// Draws the top layer a new node will occupy.
pub fn assign_level<R: Rng + ?Sized>(rng: &mut R, ball_count: usize) -> usize {
    let r = loop {
        let r: f64 = rng.random();
        if r > 0.0 {
            break r;
        }
    };
    level_for(r, ball_count)
}

/// Node set and undirected adjacency of one layer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerGraph {
    nodes: BTreeSet<usize>,
    adjacency: BTreeMap<usize, BTreeSet<usize>>,
}

impl LayerGraph {
    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.nodes.contains(&node)
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.get(&node).into_iter().flatten().copied()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.get(&node).map_or(0, BTreeSet::len)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(&a).is_some_and(|n| n.contains(&b))
    }

    /// Edges as `(low, high)` pairs in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(&a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
    }

    fn add_node(&mut self, node: usize) {
        self.nodes.insert(node);
    }

    fn link(&mut self, a: usize, b: usize) {
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    fn unlink(&mut self, a: usize, b: usize) {
        for (x, y) in [(a, b), (b, a)] {
            if let Some(ns) = self.adjacency.get_mut(&x) {
                ns.remove(&y);
                if ns.is_empty() {
                    self.adjacency.remove(&x);
                }
            }
        }
    }
}

/// Bounded queue of `(dissimilarity, ball)` pairs, at most `k` long.
///
/// Entries are kept in ascending `(dissimilarity, id)` order; the last one
/// has the highest eviction priority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborQueue<S> {
    capacity: usize,
    entries: Vec<Scored<S>>,
}

impl<S: Scalar> NeighborQueue<S> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending dissimilarity.
    pub fn entries(&self) -> &[Scored<S>] {
        &self.entries
    }

    /// The entry that would be evicted next.
    pub fn worst(&self) -> Option<&Scored<S>> {
        self.entries.last()
    }

    pub fn push(&mut self, entry: Scored<S>) -> bool {
        self.offer(entry, &Comparator::Exact, &mut Cost::default())
    }

    /// Admits `entry` unless the queue is full and `entry` is larger than the
    /// current worst; at capacity an admitted entry evicts the worst.
    pub fn offer(&mut self, entry: Scored<S>, comparator: &Comparator, cost: &mut Cost) -> bool {
        if self.capacity == 0 {
            return false;
        }
        if self.entries.len() >= self.capacity {
            let worst = self.entries[self.entries.len() - 1];
            cost.comparisons += 1;
            if quantum_compare(worst.dissimilarity, entry.dissimilarity, comparator).less {
                return false;
            }
            self.entries.pop();
        }
        let at = self
            .entries
            .partition_point(|e| order(e, &entry) != std::cmp::Ordering::Greater);
        self.entries.insert(at, entry);
        true
    }

    /// One entry per ball, keeping its smallest dissimilarity.
    pub fn deduplicated(&self) -> Vec<Scored<S>> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.id))
            .copied()
            .collect()
    }

    pub fn ids(&self) -> BTreeSet<usize> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

fn order<S: Scalar>(a: &Scored<S>, b: &Scored<S>) -> std::cmp::Ordering {
    a.dissimilarity
        .partial_cmp(&b.dissimilarity)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.id.cmp(&b.id))
}

/// One layer of a search descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStep<S> {
    pub layer: usize,
    pub candidates: Vec<usize>,
    pub selected: Scored<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome<S> {
    pub queue: NeighborQueue<S>,
    pub trace: Vec<LayerStep<S>>,
    pub cost: Cost,
}

/// What an insertion did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insertion {
    pub level: usize,
    /// `(layer, neighbor)` links created, top layer first.
    pub links: Vec<(usize, usize)>,
    pub cost: Cost,
}

/// The layered graph plus the balls it indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalIndex<S> {
    params: IndexParams,
    balls: Vec<GranularBall<S>>,
    encoded: Vec<AngleState<S>>,
    layers: Vec<LayerGraph>,
    levels: Vec<Option<usize>>,
    entry: Option<usize>,
    build_cost: Cost,
}

/// Rounds a real center to the nearest encodable integer per dimension.
pub fn quantize_center<S: Scalar>(center: &[S], max_value: u64) -> Vec<u32> {
    center
        .iter()
        .map(|&c| {
            let v = c.as_f64().round();
            if v.is_nan() || v <= 0.0 {
                0
            } else {
                v.min(max_value as f64) as u32
            }
        })
        .collect()
}

impl<S: Scalar> HierarchicalIndex<S> {
    /// An empty index over `balls`; members are dropped and centers encoded.
    /// Nothing is inserted yet.
    pub fn new(mut balls: Vec<GranularBall<S>>, params: IndexParams) -> Result<Self> {
        params.validate()?;
        let encoded = balls
            .iter()
            .map(|b| Self::encode_center(b, &params.encoding))
            .collect::<Result<Vec<_>>>()?;
        for b in &mut balls {
            b.strip_members();
        }
        let layer_count = floor_log2(balls.len()) + 1;
        Ok(Self {
            levels: vec![None; balls.len()],
            params,
            balls,
            encoded,
            layers: vec![LayerGraph::default(); layer_count],
            entry: None,
            build_cost: Cost::default(),
        })
    }

    /// Builds an index inserting every ball in order, levels drawn from `params.seed`.
    pub fn build(balls: Vec<GranularBall<S>>, params: IndexParams) -> Result<Self> {
        let mut index = Self::new(balls, params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for id in 0..index.balls.len() {
            index.insert(id, &mut rng)?;
        }
        Ok(index)
    }

    fn encode_center(ball: &GranularBall<S>, encoding: &EncodingParams) -> Result<AngleState<S>> {
        encode_point(
            &quantize_center(&ball.center, encoding.max_value()),
            encoding,
        )
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn balls(&self) -> &[GranularBall<S>] {
        &self.balls
    }

    pub fn encoded(&self) -> &[AngleState<S>] {
        &self.encoded
    }

    pub fn layers(&self) -> &[LayerGraph] {
        &self.layers
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerGraph> {
        self.layers.get(layer)
    }

    pub fn level_of(&self, node: usize) -> Option<usize> {
        self.levels.get(node).copied().flatten()
    }

    pub fn entry_point(&self) -> Option<usize> {
        self.entry
    }

    /// Highest layer holding any node.
    pub fn top_layer(&self) -> Option<usize> {
        self.entry.and_then(|e| self.levels[e])
    }

    pub fn inserted(&self) -> usize {
        self.levels.iter().filter(|l| l.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.entry.is_none()
    }

    pub fn build_cost(&self) -> Cost {
        self.build_cost
    }

    pub fn labels(&self) -> BTreeSet<Label> {
        self.balls.iter().map(|b| b.label).collect()
    }

    /// The entry node, its neighbors and their neighbors at `layer`, ascending.
    pub fn candidate_set(&self, layer: usize, entry: usize) -> Result<Vec<usize>> {
        let graph = self
            .layers
            .get(layer)
            .filter(|g| g.contains(entry))
            .ok_or(Error::InvalidEntryPoint { node: entry, layer })?;
        let mut set = BTreeSet::from([entry]);
        for n in graph.neighbors(entry) {
            set.insert(n);
            set.extend(graph.neighbors(n));
        }
        Ok(set.into_iter().collect())
    }

    fn exact_gap(&self, a: usize, b: usize) -> S {
        let sim = crate::quantum_sim::exact_similarity(&self.encoded[a], &self.encoded[b])
            .expect("encoded states share a dimension");
        swap_test_p1(sim)
    }

    /// Links `a` and `b`, pruning each endpoint's farthest neighbor when the
    /// link would push it over the degree cap.
    fn connect(&mut self, layer: usize, a: usize, b: usize) {
        let cap = self.params.max_neighbors;
        for (x, y) in [(a, b), (b, a)] {
            let graph = &self.layers[layer];
            if graph.has_edge(x, y) || graph.degree(x) < cap {
                continue;
            }
            let farthest = graph
                .neighbors(x)
                .map(|n| (self.exact_gap(x, n), n))
                .fold(None::<(S, usize)>, |best, (d, n)| match best {
                    Some((bd, _)) if d < bd => best,
                    _ => Some((d, n)),
                })
                .map(|(_, n)| n);
            if let Some(n) = farthest {
                self.layers[layer].unlink(x, n);
            }
        }
        self.layers[layer].link(a, b);
    }

    fn nearest(
        &self,
        candidates: &[usize],
        query: &AngleState<S>,
        rng: &mut ChaCha8Rng,
        cost: &mut Cost,
    ) -> Result<Option<Scored<S>>> {
        let scored = similarity_batch(
            candidates.iter().map(|&id| (id, &self.encoded[id])),
            query,
            &self.params.backend,
            rng,
            cost,
        )?;
        Ok(select_min(&scored, &self.params.comparator, cost))
    }

    /// Inserts ball `id` at a level drawn from `rng`.
    ///
    /// Swap tests in sampled mode draw from a stream derived from the index
    /// seed and `id`, so they do not disturb the level stream.
    pub fn insert<R: Rng + ?Sized>(&mut self, id: usize, rng: &mut R) -> Result<Insertion> {
        let level = assign_level(rng, self.balls.len());
        self.insert_at_level(id, level)
    }

    /// Inserts ball `id` with a fixed level (clamped to the top layer).
    pub fn insert_at_level(&mut self, id: usize, level: usize) -> Result<Insertion> {
        if id >= self.balls.len() {
            return Err(Error::UnknownNode(id));
        }
        if self.levels[id].is_some() {
            return Err(Error::DuplicateNode(id));
        }
        let level = level.min(self.layers.len() - 1);
        for layer in 0..=level {
            self.layers[layer].add_node(id);
        }
        self.levels[id] = Some(level);

        let mut cost = Cost::default();
        let mut links = Vec::new();
        let Some(entry) = self.entry else {
            self.entry = Some(id);
            return Ok(Insertion { level, links, cost });
        };
        let top = self.levels[entry].expect("entry point is inserted");
        let mut rng = stream(self.params.seed, 0x1f5e_7000 ^ id as u64);
        let query = self.encoded[id].clone();
        let mut carried = entry;
        for layer in (0..=top).rev() {
            let candidates: Vec<usize> =
                if layer == top || (self.params.full_layer_candidates && layer <= level) {
                    self.layers[layer].nodes().filter(|&n| n != id).collect()
                } else {
                    self.candidate_set(layer, carried)?
                };
            let Some(best) = self.nearest(&candidates, &query, &mut rng, &mut cost)? else {
                continue;
            };
            if layer <= level {
                self.connect(layer, id, best.id);
                links.push((layer, best.id));
            }
            carried = best.id;
        }
        if level > top {
            self.entry = Some(id);
        }
        self.build_cost.add(&cost);
        Ok(Insertion { level, links, cost })
    }

    /// Same graph, different similarity backend and comparator for later searches.
    pub fn with_backend(
        mut self,
        backend: SimilarityBackend,
        comparator: Comparator,
    ) -> Result<Self> {
        backend.validate()?;
        comparator.validate()?;
        self.params.backend = backend;
        self.params.comparator = comparator;
        Ok(self)
    }

    /// Descends from the top layer, queueing each layer's nearest node.
    pub fn search<R: Rng + ?Sized>(
        &self,
        query: &AngleState<S>,
        k: usize,
        rng: &mut R,
    ) -> Result<SearchOutcome<S>> {
        let entry = self.entry.ok_or(Error::IndexEmpty)?;
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if query.dim() != self.params.encoding.dim {
            return Err(Error::DimensionMismatch {
                expected: self.params.encoding.dim,
                got: query.dim(),
            });
        }
        let top = self.levels[entry].expect("entry point is inserted");
        let mut rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut cost = Cost::default();
        let mut queue = NeighborQueue::new(k);
        let mut trace = Vec::with_capacity(top + 1);
        let mut carried = entry;
        for layer in (0..=top).rev() {
            let candidates = if layer == top {
                self.layers[layer].nodes().collect()
            } else {
                self.candidate_set(layer, carried)?
            };
            let best = self
                .nearest(&candidates, query, &mut rng, &mut cost)?
                .expect("candidate set contains the carried node");
            queue.offer(best, &self.params.comparator, &mut cost);
            carried = best.id;
            trace.push(LayerStep {
                layer,
                candidates,
                selected: best,
            });
        }
        Ok(SearchOutcome { queue, trace, cost })
    }

    /// Checks nesting, degree cap, symmetry and edge endpoints.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let m = self.params.max_neighbors;
        for (l, g) in self.layers.iter().enumerate() {
            for (&a, ns) in &g.adjacency {
                if !g.contains(a) {
                    return Err(format!("layer {l}: edge endpoint {a} not a member"));
                }
                if ns.len() > m {
                    return Err(format!("layer {l}: node {a} has degree {} > {m}", ns.len()));
                }
                for &b in ns {
                    if !g.contains(b) {
                        return Err(format!("layer {l}: edge endpoint {b} not a member"));
                    }
                    if !g.has_edge(b, a) {
                        return Err(format!("layer {l}: edge {a}-{b} not symmetric"));
                    }
                    if a == b {
                        return Err(format!("layer {l}: self loop at {a}"));
                    }
                }
            }
            if l > 0 {
                if let Some(n) = g.nodes().find(|&n| !self.layers[l - 1].contains(n)) {
                    return Err(format!("node {n} in layer {l} but not layer {}", l - 1));
                }
            }
            for n in g.nodes() {
                if self.level_of(n).is_none_or(|lv| lv < l) {
                    return Err(format!("node {n} in layer {l} above its level"));
                }
            }
        }
        let inserted = self.inserted();
        if self.layers.first().map_or(0, LayerGraph::len) != inserted {
            return Err("layer 0 does not hold every inserted node".into());
        }
        if let Some(top) = self.top_layer() {
            if self.layers[top + 1..].iter().any(|g| !g.is_empty()) {
                return Err("node above the entry point's level".into());
            }
        }
        Ok(())
    }
}

/// Independent rng stream for `(seed, salt)`.
pub(crate) fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}

// ---------------------------------------------------------------------------
// Binary container
// ---------------------------------------------------------------------------

pub const INDEX_MAGIC: &[u8; 8] = b"GBQKIDX\0";
pub const INDEX_VERSION: u16 = 1;

fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}
fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Cursor over a byte slice whose errors carry the failing offset.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!(
                "unexpected end of input: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, limit: usize, what: &str) -> Result<usize> {
        let at = self.pos;
        let n = self.u64()?;
        if n > limit as u64 {
            return Err(Error::Parse {
                offset: at,
                message: format!("{what} count {n} exceeds {limit}"),
            });
        }
        Ok(n as usize)
    }

    fn scalar<S: Scalar>(&mut self) -> Result<S> {
        Ok(S::read_le(self.take(S::WIDTH as usize)?))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error("trailing bytes after container"));
        }
        Ok(())
    }
}

impl<S: Scalar> HierarchicalIndex<S> {
    /// Serializes to the versioned binary container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        put_u8(&mut out, S::WIDTH);

        let p = &self.params;
        put_u64(&mut out, p.max_neighbors as u64);
        put_u32(&mut out, p.encoding.bits);
        put_u64(&mut out, p.encoding.dim as u64);
        match p.backend {
            SimilarityBackend::Exact => put_u8(&mut out, 0),
            SimilarityBackend::Sampled { shots } => {
                put_u8(&mut out, 1);
                put_u64(&mut out, shots);
            }
        }
        match p.comparator {
            Comparator::Exact => put_u8(&mut out, 0),
            Comparator::FixedPoint { bits } => {
                put_u8(&mut out, 1);
                put_u32(&mut out, bits);
            }
        }
        put_u64(&mut out, p.seed);
        put_u8(&mut out, u8::from(p.full_layer_candidates));
        for c in [
            self.build_cost.similarity_evals,
            self.build_cost.comparisons,
            self.build_cost.qram_depth,
        ] {
            put_u64(&mut out, c);
        }

        put_u64(&mut out, self.balls.len() as u64);
        for (ball, level) in self.balls.iter().zip(&self.levels) {
            put_u32(&mut out, ball.label);
            put_u64(&mut out, ball.member_count as u64);
            ball.radius.write_le(&mut out);
            ball.purity.write_le(&mut out);
            for &c in &ball.center {
                c.write_le(&mut out);
            }
            match level {
                Some(l) => {
                    put_u8(&mut out, 1);
                    put_u32(&mut out, *l as u32);
                }
                None => put_u8(&mut out, 0),
            }
        }
        match self.entry {
            Some(e) => {
                put_u8(&mut out, 1);
                put_u64(&mut out, e as u64);
            }
            None => put_u8(&mut out, 0),
        }
        put_u32(&mut out, self.layers.len() as u32);
        for g in &self.layers {
            put_u64(&mut out, g.len() as u64);
            for n in g.nodes() {
                put_u64(&mut out, n as u64);
            }
            let edges: Vec<_> = g.edges().collect();
            put_u64(&mut out, edges.len() as u64);
            for (a, b) in edges {
                put_u64(&mut out, a as u64);
                put_u64(&mut out, b as u64);
            }
        }
        out
    }

    /// Parses a container written by [`to_bytes`](Self::to_bytes).
    ///
    /// Nothing is returned unless the whole container parses and the
    /// rebuilt index passes [`audit`](Self::audit).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != INDEX_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "bad magic: not an index file".into(),
            });
        }
        let version = r.u16()?;
        if version != INDEX_VERSION {
            return Err(r.error(format!("unsupported index version {version}")));
        }
        let width = r.u8()?;
        if width != S::WIDTH {
            return Err(r.error(format!(
                "scalar width {width} does not match reader width {}",
                S::WIDTH
            )));
        }
        let max_neighbors = r.u64()? as usize;
        let bits = r.u32()?;
        let dim = r.u64()? as usize;
        let backend = match r.u8()? {
            0 => SimilarityBackend::Exact,
            1 => SimilarityBackend::Sampled { shots: r.u64()? },
            t => return Err(r.error(format!("unknown backend tag {t}"))),
        };
        let comparator = match r.u8()? {
            0 => Comparator::Exact,
            1 => Comparator::FixedPoint { bits: r.u32()? },
            t => return Err(r.error(format!("unknown comparator tag {t}"))),
        };
        let seed = r.u64()?;
        let full_layer_candidates = match r.u8()? {
            0 => false,
            1 => true,
            t => return Err(r.error(format!("invalid flag {t}"))),
        };
        let encoding = EncodingParams { bits, dim };
        let params = IndexParams {
            max_neighbors,
            encoding,
            backend,
            comparator,
            seed,
            full_layer_candidates,
        };
        let at = r.position();
        params.validate().map_err(|e| Error::Parse {
            offset: at,
            message: format!("invalid parameters: {e}"),
        })?;
        let build_cost = Cost {
            similarity_evals: r.u64()?,
            comparisons: r.u64()?,
            qram_depth: r.u64()?,
        };

        let remaining = bytes.len() - r.position();
        let ball_count = r.len(remaining, "ball")?;
        let mut balls = Vec::with_capacity(ball_count);
        let mut levels = Vec::with_capacity(ball_count);
        for _ in 0..ball_count {
            let label = r.u32()?;
            let member_count = r.u64()? as usize;
            let radius = r.scalar()?;
            let purity = r.scalar()?;
            let center = (0..dim).map(|_| r.scalar()).collect::<Result<Vec<S>>>()?;
            balls.push(GranularBall::summary(
                center,
                radius,
                label,
                purity,
                member_count,
            ));
            levels.push(match r.u8()? {
                0 => None,
                1 => Some(r.u32()? as usize),
                t => return Err(r.error(format!("invalid level tag {t}"))),
            });
        }
        let entry = match r.u8()? {
            0 => None,
            1 => {
                let at = r.position();
                let e = r.u64()? as usize;
                if e >= ball_count {
                    return Err(Error::Parse {
                        offset: at,
                        message: format!("entry point {e} out of range"),
                    });
                }
                Some(e)
            }
            t => return Err(r.error(format!("invalid entry tag {t}"))),
        };
        let layer_count = r.u32()? as usize;
        if layer_count != floor_log2(ball_count) + 1 {
            return Err(r.error(format!(
                "layer count {layer_count} inconsistent with {ball_count} balls"
            )));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let mut g = LayerGraph::default();
            let n = r.len(ball_count, "node")?;
            for _ in 0..n {
                let at = r.position();
                let id = r.u64()? as usize;
                if id >= ball_count {
                    return Err(Error::Parse {
                        offset: at,
                        message: format!("node id {id} out of range"),
                    });
                }
                g.add_node(id);
            }
            let remaining = bytes.len() - r.position();
            let e = r.len(remaining / 16, "edge")?;
            for _ in 0..e {
                let at = r.position();
                let (a, b) = (r.u64()? as usize, r.u64()? as usize);
                if !g.contains(a) || !g.contains(b) || a == b {
                    return Err(Error::Parse {
                        offset: at,
                        message: format!("edge {a}-{b} does not join two layer members"),
                    });
                }
                g.link(a, b);
            }
            layers.push(g);
        }
        r.finish()?;

        let encoded = balls
            .iter()
            .map(|b| Self::encode_center(b, &encoding))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Parse {
                offset: bytes.len(),
                message: format!("ball center not encodable: {e}"),
            })?;
        let index = Self {
            params,
            balls,
            encoded,
            layers,
            levels,
            entry,
            build_cost,
        };
        index.audit().map_err(|message| Error::Parse {
            offset: bytes.len(),
            message,
        })?;
        Ok(index)
    }
}
