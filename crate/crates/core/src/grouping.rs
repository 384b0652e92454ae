//! Single-linkage agglomerative hierarchies over regions.
//!
//! The inter-region distance combines one similarity feature with the
//! squared distance between region centres. Each hierarchy node keeps
//! mergeable running statistics so ranking never revisits member regions.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::geom::BBox;
use crate::imageio::{ChannelId, PyramidLevel};
use crate::regionfeat::FEATURE_COUNT;

/// Lower clamp for the feature-volume ratio of a node.
pub const P_MIN: f64 = 1e-6;

/// Five region features plus centre x and y.
pub const STAT_DIMS: usize = FEATURE_COUNT + 2;

/// Similarity cue: which region feature drives the distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CueId {
    /// Major axis ("diameter").
    D,
    /// Foreground (region) intensity.
    F,
    /// Background (outer boundary) intensity.
    B,
    /// Border gradient magnitude.
    G,
    /// Stroke width.
    S,
}

impl CueId {
    pub const ALL: [CueId; 5] = [CueId::D, CueId::F, CueId::B, CueId::G, CueId::S];

    pub fn feature_index(self) -> usize {
        match self {
            CueId::F => 0,
            CueId::B => 1,
            CueId::D => 2,
            CueId::S => 3,
            CueId::G => 4,
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'D' => Some(CueId::D),
            'F' => Some(CueId::F),
            'B' => Some(CueId::B),
            'G' => Some(CueId::G),
            'S' => Some(CueId::S),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            CueId::D => 'D',
            CueId::F => 'F',
            CueId::B => 'B',
            CueId::G => 'G',
            CueId::S => 'S',
        }
    }
}

impl fmt::Display for CueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cue {
    pub id: CueId,
    /// Divisor applied to feature differences.
    pub feature_scale: f64,
}

impl Cue {
    pub fn new(id: CueId, feature_scale: f64) -> Result<Self> {
        if !(feature_scale.is_finite() && feature_scale > 0.0) {
            return arg_err(format!("feature scale for cue {id} must be positive, got {feature_scale}"));
        }
        Ok(Cue { id, feature_scale })
    }
}

/// Everything the clustering needs to know about a region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionRecord {
    pub features: [f64; FEATURE_COUNT],
    /// Centre in level-1 pixel coordinates.
    pub center: (f64, f64),
    /// Bounding box in level-1 pixel coordinates.
    pub bbox: BBox,
}

/// The metric space one hierarchy lives in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CueSpace {
    pub cue: Cue,
    /// Divisor applied to centre offsets (the level-1 image diagonal).
    pub coord_scale: f64,
    /// Level-1 image extent, used to normalize spatial volume.
    pub width: f64,
    pub height: f64,
}

impl CueSpace {
    /// Space for a `width` x `height` level-1 image with the diagonal as
    /// coordinate scale.
    pub fn for_image(cue: Cue, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        CueSpace {
            cue,
            coord_scale: (w * w + h * h).sqrt(),
            width: w,
            height: h,
        }
    }
}

/// `((fa - fb)/Sf)^2 + ((xa - xb)/norm)^2 + ((ya - yb)/norm)^2`.
#[inline]
pub fn pairwise_distance(a: &RegionRecord, b: &RegionRecord, cue: &Cue, norm: f64) -> f64 {
    let i = cue.id.feature_index();
    let df = (a.features[i] - b.features[i]) / cue.feature_scale;
    let dx = (a.center.0 - b.center.0) / norm;
    let dy = (a.center.1 - b.center.1) / norm;
    df * df + dx * dx + dy * dy
}

/// Count, mean, and sum of squared deviations of one scalar.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn single(v: f64) -> Self {
        RunningStats {
            count: 1,
            mean: v,
            m2: 0.0,
        }
    }

    pub fn from_values(values: &[f64]) -> Self {
        values
            .iter()
            .fold(RunningStats::default(), |acc, &v| merge_stats(&acc, &RunningStats::single(v)))
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }

    /// `sigma / mu`, with 0 when the mean is 0.
    pub fn coefficient_of_variation(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            self.std_dev() / self.mean
        }
    }
}

/// Parallel combination of two summaries (Chan et al.).
pub fn merge_stats(s1: &RunningStats, s2: &RunningStats) -> RunningStats {
    if s1.count == 0 {
        return *s2;
    }
    if s2.count == 0 {
        return *s1;
    }
    let (n1, n2) = (s1.count as f64, s2.count as f64);
    let n = n1 + n2;
    let delta = s2.mean - s1.mean;
    RunningStats {
        count: s1.count + s2.count,
        mean: s1.mean + delta * n2 / n,
        m2: s1.m2 + s2.m2 + delta * delta * n1 * n2 / n,
    }
}

/// Running statistics and extents over the seven node dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupStats {
    pub dims: [RunningStats; STAT_DIMS],
    pub min: [f64; STAT_DIMS],
    pub max: [f64; STAT_DIMS],
}

impl GroupStats {
    pub fn leaf(r: &RegionRecord) -> Self {
        let mut v = [0.0; STAT_DIMS];
        v[..FEATURE_COUNT].copy_from_slice(&r.features);
        v[FEATURE_COUNT] = r.center.0;
        v[FEATURE_COUNT + 1] = r.center.1;
        GroupStats {
            dims: v.map(RunningStats::single),
            min: v,
            max: v,
        }
    }

    pub fn merge(&self, other: &GroupStats) -> GroupStats {
        let mut out = *self;
        for d in 0..STAT_DIMS {
            out.dims[d] = merge_stats(&self.dims[d], &other.dims[d]);
            out.min[d] = self.min[d].min(other.min[d]);
            out.max[d] = self.max[d].max(other.max[d]);
        }
        out
    }

    pub fn count(&self) -> u64 {
        self.dims[0].count
    }

    /// Coefficients of variation of the five region features.
    pub fn feature_cv(&self) -> [f64; FEATURE_COUNT] {
        std::array::from_fn(|i| self.dims[i].coefficient_of_variation())
    }

    /// Volume of the member bounding hyperrectangle in the normalized
    /// (feature, x, y) space, clamped to `[P_MIN, 1]`.
    pub fn volume_ratio(&self, space: &CueSpace) -> f64 {
        let fi = space.cue.id.feature_index();
        let ext = |d: usize, s: f64| ((self.max[d] - self.min[d]) / s).clamp(0.0, 1.0);
        let v = ext(fi, space.cue.feature_scale)
            * ext(FEATURE_COUNT, space.width)
            * ext(FEATURE_COUNT + 1, space.height);
        v.clamp(P_MIN, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HierarchySource {
    pub channel: ChannelId,
    pub level: PyramidLevel,
    pub cue: CueId,
}

impl fmt::Display for HierarchySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.channel, self.level.number(), self.cue)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupNode {
    /// Child node indices, smaller minimum member first.
    pub children: Option<(usize, usize)>,
    pub size: usize,
    pub min_member: usize,
    /// Linkage distance at which the node was formed; 0 for leaves.
    pub merge_distance: f64,
    pub bbox: BBox,
    pub stats: GroupStats,
    pub feature_volume_ratio: f64,
}

/// A complete single-linkage dendrogram. Leaves occupy indices `0..n` in
/// region order; internal nodes follow in merge order; the root is last.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub nodes: Vec<GroupNode>,
    pub root: usize,
    pub leaf_count: usize,
    pub source: Option<HierarchySource>,
}

impl Hierarchy {
    /// Region indices under a node, ascending.
    pub fn members(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes[node].size);
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match self.nodes[n].children {
                None => out.push(n),
                Some((a, b)) => {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Node indices in breadth-first order from the root, left child first.
    pub fn breadth_first(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        order.push(self.root);
        let mut head = 0;
        while head < order.len() {
            if let Some((a, b)) = self.nodes[order[head]].children {
                order.push(a);
                order.push(b);
            }
            head += 1;
        }
        order
    }

    /// Internal nodes as `(min member of left, min member of right, distance)`.
    pub fn merge_sequence(&self) -> Vec<(usize, usize, f64)> {
        self.nodes[self.leaf_count..]
            .iter()
            .map(|n| {
                let (a, b) = n.children.expect("internal node");
                (self.nodes[a].min_member, self.nodes[b].min_member, n.merge_distance)
            })
            .collect()
    }
}

/// Incremental dendrogram assembly over union-find clusters.
struct Builder<'a> {
    records: &'a [RegionRecord],
    space: &'a CueSpace,
    nodes: Vec<GroupNode>,
    uf: Vec<usize>,
    /// Per union-find root: dendrogram node and member list.
    node_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl<'a> Builder<'a> {
    fn new(records: &'a [RegionRecord], space: &'a CueSpace) -> Self {
        let nodes = records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let stats = GroupStats::leaf(r);
                GroupNode {
                    children: None,
                    size: 1,
                    min_member: i,
                    merge_distance: 0.0,
                    bbox: r.bbox,
                    feature_volume_ratio: stats.volume_ratio(space),
                    stats,
                }
            })
            .collect();
        let n = records.len();
        Builder {
            records,
            space,
            nodes,
            uf: (0..n).collect(),
            node_of: (0..n).collect(),
            members: (0..n).map(|i| vec![i]).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.uf[x] != x {
            self.uf[x] = self.uf[self.uf[x]];
            x = self.uf[x];
        }
        x
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        pairwise_distance(&self.records[a], &self.records[b], &self.space.cue, self.space.coord_scale)
    }

    /// Merges the clusters rooted at `ra` and `rb`; returns the new root.
    fn merge(&mut self, ra: usize, rb: usize, distance: f64) -> usize {
        let (na, nb) = (self.node_of[ra], self.node_of[rb]);
        let (left, right) = if self.nodes[na].min_member <= self.nodes[nb].min_member {
            (na, nb)
        } else {
            (nb, na)
        };
        let (l, r) = (&self.nodes[left], &self.nodes[right]);
        let stats = l.stats.merge(&r.stats);
        let node = GroupNode {
            children: Some((left, right)),
            size: l.size + r.size,
            min_member: l.min_member.min(r.min_member),
            merge_distance: distance,
            bbox: l.bbox.union(&r.bbox),
            feature_volume_ratio: stats.volume_ratio(self.space),
            stats,
        };
        let id = self.nodes.len();
        self.nodes.push(node);

        let (big, small) = if self.members[ra].len() >= self.members[rb].len() {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.uf[small] = big;
        let moved = std::mem::take(&mut self.members[small]);
        self.members[big].extend(moved);
        self.node_of[big] = id;
        big
    }

    /// Applies a set of MST edges that share one distance, reproducing the
    /// merge order of naive single linkage: among all cluster pairs at that
    /// distance, the pair with the smallest (min member, min member) first.
    fn merge_tied(&mut self, edges: &[(f64, usize, usize)]) {
        let d = edges[0].0;
        let mut roots: Vec<usize> = Vec::new();
        for &(_, i, j) in edges {
            let (ri, rj) = (self.find(i), self.find(j));
            roots.push(ri);
            roots.push(rj);
        }
        roots.sort_unstable();
        roots.dedup();

        // components of the tie graph; cross-component pairs cannot be at `d`
        let index: HashMap<usize, usize> = roots.iter().enumerate().map(|(k, &r)| (r, k)).collect();
        let mut comp: Vec<usize> = (0..roots.len()).collect();
        fn cfind(c: &mut [usize], mut x: usize) -> usize {
            while c[x] != x {
                c[x] = c[c[x]];
                x = c[x];
            }
            x
        }
        for &(_, i, j) in edges {
            let (ri, rj) = (self.find(i), self.find(j));
            let (a, b) = (cfind(&mut comp, index[&ri]), cfind(&mut comp, index[&rj]));
            comp[a] = b;
        }

        // adjacency keyed by cluster minimum member
        let min_of = |b: &Self, r: usize| b.nodes[b.node_of[r]].min_member;
        let mut root_of_min: HashMap<usize, usize> = HashMap::new();
        let mut adj: HashMap<usize, BTreeSet<usize>> = HashMap::new();
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &r in &roots {
            root_of_min.insert(min_of(self, r), r);
        }
        for x in 0..roots.len() {
            for y in x + 1..roots.len() {
                if cfind(&mut comp, x) != cfind(&mut comp, y) {
                    continue;
                }
                let (rx, ry) = (roots[x], roots[y]);
                let touching = self.members[rx]
                    .iter()
                    .any(|&p| self.members[ry].iter().any(|&q| self.dist(p, q) == d));
                if touching {
                    let (mx, my) = (min_of(self, rx), min_of(self, ry));
                    let key = (mx.min(my), mx.max(my));
                    pairs.insert(key);
                    adj.entry(mx).or_default().insert(my);
                    adj.entry(my).or_default().insert(mx);
                }
            }
        }

        while let Some((a, b)) = pairs.pop_first() {
            let (ra, rb) = (root_of_min[&a], root_of_min[&b]);
            let merged = self.merge(ra, rb, d);
            root_of_min.remove(&b);
            root_of_min.insert(a, merged);
            let nb = adj.remove(&b).unwrap_or_default();
            if let Some(s) = adj.get_mut(&a) {
                s.remove(&b);
            }
            for c in nb {
                if c == a {
                    continue;
                }
                pairs.remove(&(b.min(c), b.max(c)));
                pairs.insert((a.min(c), a.max(c)));
                let sc = adj.entry(c).or_default();
                sc.remove(&b);
                sc.insert(a);
                adj.entry(a).or_default().insert(c);
            }
        }
    }
}

/// Builds the single-linkage hierarchy of `records` in `space`.
///
/// The minimum spanning tree is found with dense Prim in O(n^2) time and
/// O(n) extra memory; its edges, sorted by weight, give the merge order.
/// Equal-weight edges are resolved so the sequence matches a naive
/// closest-pair search with (min member, min member) tie-breaking.
pub fn slc_cluster(records: &[RegionRecord], space: &CueSpace) -> Result<Hierarchy> {
    let n = records.len();
    if n == 0 {
        return arg_err("cannot cluster an empty region set");
    }
    if !(space.coord_scale.is_finite() && space.coord_scale > 0.0) {
        return arg_err("coordinate scale must be positive");
    }
    let mut b = Builder::new(records, space);

    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n.saturating_sub(1));
    let mut outside: Vec<usize> = (1..n).collect();
    let mut best = vec![f64::INFINITY; n];
    let mut best_from = vec![0usize; n];
    let mut cur = 0usize;
    while !outside.is_empty() {
        let mut pick = 0usize;
        for (k, &j) in outside.iter().enumerate() {
            let d = b.dist(cur, j);
            if d < best[j] {
                best[j] = d;
                best_from[j] = cur;
            }
            let pj = outside[pick];
            if best[j] < best[pj] || (best[j] == best[pj] && j < pj) {
                pick = k;
            }
        }
        let j = outside.swap_remove(pick);
        let (u, v) = (best_from[j].min(j), best_from[j].max(j));
        edges.push((best[j], u, v));
        cur = j;
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut start = 0;
    while start < edges.len() {
        let mut end = start + 1;
        while end < edges.len() && edges[end].0 == edges[start].0 {
            end += 1;
        }
        if end - start == 1 {
            let (d, i, j) = edges[start];
            let (ri, rj) = (b.find(i), b.find(j));
            b.merge(ri, rj, d);
        } else {
            b.merge_tied(&edges[start..end]);
        }
        start = end;
    }

    let root = b.nodes.len() - 1;
    Ok(Hierarchy {
        nodes: b.nodes,
        root,
        leaf_count: n,
        source: None,
    })
}
