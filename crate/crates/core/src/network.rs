//! Functional map networks: topology over a collection plus maps on edges.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmaps::FunctionalMap;
use crate::spectral::ShapeDna;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Mst,
    Knn(usize),
    Clique,
    /// Visit order of the shapes (a permutation of `0..n`).
    Chain(Vec<usize>),
    Custom,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Mst => write!(f, "mst"),
            TopologyKind::Knn(k) => write!(f, "knn:{k}"),
            TopologyKind::Clique => write!(f, "clique"),
            TopologyKind::Chain(_) => write!(f, "chain"),
            TopologyKind::Custom => write!(f, "custom"),
        }
    }
}

/// Parses `mst`, `clique`, `chain` (identity order) or `knn:K`.
impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mst" => Ok(TopologyKind::Mst),
            "clique" => Ok(TopologyKind::Clique),
            "chain" => Ok(TopologyKind::Chain(Vec::new())),
            _ => s
                .strip_prefix("knn:")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(TopologyKind::Knn)
                .ok_or_else(|| Error::precondition(format!("unknown topology '{s}'"))),
        }
    }
}

/// Undirected edge list `i < j`, sorted; every edge stands for both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// Human-readable notes about repairs or saturation.
    pub notes: Vec<String>,
}

impl Topology {
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        Topology {
            kind: TopologyKind::Custom,
            num_nodes,
            edges,
            notes: Vec::new(),
        }
    }

    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect()
    }

    pub fn is_connected(&self) -> bool {
        connected(self.num_nodes, self.edges.iter().copied())
    }
}

fn connected(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    if n == 0 {
        return true;
    }
    let mut uf = UnionFind::new(n);
    let mut groups = n;
    for (i, j) in edges {
        if uf.union(i, j) {
            groups -= 1;
        }
    }
    groups == 1
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn distance_matrix(dnas: &[ShapeDna]) -> Vec<Vec<f64>> {
    dnas.iter().map(|a| dnas.iter().map(|b| a.distance(b)).collect()).collect()
}

/// Kruskal over Euclidean Shape-DNA distances; ties broken by `(i, j)`.
fn mst_edges(dist: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = dist.len();
    let mut all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    all.sort_by(|&(a, b), &(c, d)| dist[a][b].total_cmp(&dist[c][d]).then((a, b).cmp(&(c, d))));
    let mut uf = UnionFind::new(n);
    all.into_iter().filter(|&(i, j)| uf.union(i, j)).collect()
}

pub fn build_topology(dnas: &[ShapeDna], kind: TopologyKind) -> Result<Topology> {
    let n = dnas.len();
    if n < 2 {
        return Err(Error::InsufficientShapes { need: 2, got: n });
    }
    if dnas.iter().any(|d| d.len() != dnas[0].len()) {
        return Err(Error::DimensionMismatch("Shape-DNA vectors differ in length".into()));
    }
    let dist = distance_matrix(dnas);
    let mut notes = Vec::new();
    let edges: Vec<(usize, usize)> = match &kind {
        TopologyKind::Mst => mst_edges(&dist),
        TopologyKind::Clique => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        TopologyKind::Chain(order) => {
            let order: Vec<usize> = if order.is_empty() { (0..n).collect() } else { order.clone() };
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::precondition("chain order must be a permutation of the shapes"));
            }
            order.windows(2).map(|w| (w[0], w[1])).collect()
        }
        TopologyKind::Knn(k) => {
            if *k >= n - 1 {
                let note = format!("knn:{k} saturates on {n} shapes; equivalent to a clique");
                log::info!("{note}");
                notes.push(note);
            }
            let mut edges = Vec::new();
            for i in 0..n {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)));
                edges.extend(others.into_iter().take(*k).map(|j| (i, j)));
            }
            if !connected(n, edges.iter().copied()) {
                let note = format!("knn:{k} graph is disconnected; augmented with MST edges");
                log::warn!("{note}");
                notes.push(note);
                edges.extend(mst_edges(&dist));
            }
            edges
        }
        TopologyKind::Custom => {
            return Err(Error::precondition("custom topologies are built from explicit edges"))
        }
    };
    let mut topo = Topology::from_edges(n, edges);
    topo.kind = kind;
    topo.notes = notes;
    Ok(topo)
}

/// What the network keeps about each shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: String,
    pub eigenvalues: DVector<f64>,
    pub dna: ShapeDna,
    pub num_vertices: usize,
}

impl NetworkNode {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Symmetric, connected graph of shapes with a functional map on every directed edge.
#[derive(Debug, Clone)]
pub struct FMNetwork {
    pub nodes: Vec<NetworkNode>,
    pub topology: Topology,
    maps: BTreeMap<(usize, usize), FunctionalMap>,
}

impl FMNetwork {
    /// Validates symmetry, connectivity and map dimensions.
    pub fn new(
        nodes: Vec<NetworkNode>,
        topology: Topology,
        maps: BTreeMap<(usize, usize), FunctionalMap>,
    ) -> Result<Self> {
        let n = nodes.len();
        if topology.num_nodes != n {
            return Err(Error::InvalidNetwork(format!(
                "topology has {} nodes, network has {n}",
                topology.num_nodes
            )));
        }
        if !topology.is_connected() {
            return Err(Error::InvalidNetwork("graph is not connected".into()));
        }
        for &(i, j) in maps.keys() {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidNetwork(format!("bad edge ({i}, {j})")));
            }
            if !maps.contains_key(&(j, i)) {
                return Err(Error::InvalidNetwork(format!(
                    "edge {} -> {} has no reverse",
                    nodes[i].id, nodes[j].id
                )));
            }
        }
        for (i, j) in topology.directed_edges() {
            let map = maps.get(&(i, j)).ok_or_else(|| {
                Error::InvalidNetwork(format!("missing map {} -> {}", nodes[i].id, nodes[j].id))
            })?;
            if map.matrix.shape() != (nodes[j].k(), nodes[i].k()) {
                return Err(Error::DimensionMismatch(format!(
                    "map {} -> {} is {}x{}, expected {}x{}",
                    nodes[i].id,
                    nodes[j].id,
                    map.matrix.nrows(),
                    map.matrix.ncols(),
                    nodes[j].k(),
                    nodes[i].k()
                )));
            }
            if map.matrix.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "map {} -> {} has non-finite entries",
                    nodes[i].id, nodes[j].id
                )));
            }
        }
        if maps.len() != 2 * topology.edges.len() {
            return Err(Error::InvalidNetwork("maps present on edges outside the topology".into()));
        }
        Ok(FMNetwork { nodes, topology, maps })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn map(&self, from: usize, to: usize) -> Option<&FunctionalMap> {
        self.maps.get(&(from, to))
    }

    /// Directed edges with their maps, in `(from, to)` order.
    pub fn maps(&self) -> impl Iterator<Item = ((usize, usize), &FunctionalMap)> {
        self.maps.iter().map(|(&e, m)| (e, m))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn num_directed_edges(&self) -> usize {
        self.maps.len()
    }
}

/// Asks `provider` for the map on every directed edge of `topology`. Reverse
/// maps are requested separately, never inverted.
pub fn attach_maps<P>(nodes: Vec<NetworkNode>, topology: Topology, mut provider: P) -> Result<FMNetwork>
where
    P: FnMut(usize, usize) -> Result<FunctionalMap>,
{
    let mut maps = BTreeMap::new();
    for (i, j) in topology.directed_edges() {
        let map = provider(i, j).map_err(|e| Error::ProviderFailure {
            from: nodes[i].id.clone(),
            to: nodes[j].id.clone(),
            reason: e.to_string(),
        })?;
        maps.insert((i, j), map);
    }
    FMNetwork::new(nodes, topology, maps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleResidual {
    /// Node sequence; the cycle closes back to the first entry.
    pub cycle: Vec<usize>,
    /// `|C_cycle - I|_F` of the composed map.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub cycles: Vec<CycleResidual>,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Composition residuals over the fundamental cycles of a BFS spanning tree
/// (both orientations) and over every edge round trip `i -> j -> i`.
pub fn consistency_report(net: &FMNetwork) -> ConsistencyReport {
    let n = net.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in &net.topology.edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut depth = vec![0usize; n];
    let mut seen = vec![false; n];
    let mut tree = std::collections::BTreeSet::new();
    if n > 0 {
        seen[0] = true;
        let mut queue = VecDeque::from([0]);
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    parent[u] = Some(v);
                    depth[u] = depth[v] + 1;
                    tree.insert((v.min(u), v.max(u)));
                    queue.push_back(u);
                }
            }
        }
    }

    let mut cycles = Vec::new();
    for &(i, j) in &net.topology.edges {
        cycles.push(vec![i, j]);
        if tree.contains(&(i, j)) {
            continue;
        }
        // Tree paths from i and j up to their lowest common ancestor.
        let (mut a, mut b) = (i, j);
        let (mut up_a, mut up_b) = (vec![a], vec![b]);
        while a != b {
            if depth[a] >= depth[b] {
                a = parent[a].expect("tree parent");
                up_a.push(a);
            } else {
                b = parent[b].expect("tree parent");
                up_b.push(b);
            }
        }
        // i -> j, then j up to the ancestor, then down to i.
        let mut cycle = vec![i];
        cycle.extend(up_b.iter().copied().filter(|&x| x != i));
        if up_a.len() > 2 {
            cycle.extend(up_a[1..up_a.len() - 1].iter().rev().copied());
        }
        let mut reversed = cycle.clone();
        reversed[1..].reverse();
        cycles.push(cycle);
        cycles.push(reversed);
    }

    let results: Vec<CycleResidual> = cycles
        .into_iter()
        .map(|cycle| {
            let residual = cycle_residual(net, &cycle);
            CycleResidual { cycle, residual }
        })
        .collect();
    let values: Vec<f64> = results.iter().map(|c| c.residual).collect();
    let (min, max, mean) = if values.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (
            values.iter().copied().fold(f64::INFINITY, f64::min),
            values.iter().copied().fold(0.0, f64::max),
            values.iter().sum::<f64>() / values.len() as f64,
        )
    };
    ConsistencyReport {
        cycles: results,
        min,
        mean,
        max,
    }
}

fn cycle_residual(net: &FMNetwork, cycle: &[usize]) -> f64 {
    let start = cycle[0];
    let k = net.nodes[start].k();
    let mut composed = DMatrix::<f64>::identity(k, k);
    for w in 0..cycle.len() {
        let (a, b) = (cycle[w], cycle[(w + 1) % cycle.len()]);
        let map = net.map(a, b).expect("cycle follows network edges");
        composed = &map.matrix * composed;
    }
    (composed - DMatrix::<f64>::identity(k, k)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dna(v: f64) -> ShapeDna {
        ShapeDna(vec![0.0, v])
    }

    fn identity_nodes(n: usize, k: usize) -> Vec<NetworkNode> {
        (0..n)
            .map(|i| NetworkNode {
                id: format!("s{i}"),
                eigenvalues: DVector::from_fn(k, |r, _| r as f64),
                dna: dna(i as f64),
                num_vertices: k,
            })
            .collect()
    }

    fn identity_provider(k: usize) -> impl FnMut(usize, usize) -> Result<FunctionalMap> {
        move |i, j| {
            Ok(FunctionalMap {
                source_id: format!("s{i}"),
                target_id: format!("s{j}"),
                matrix: DMatrix::identity(k, k),
            })
        }
    }

    #[test]
    fn two_shapes_single_edge() {
        for kind in [TopologyKind::Mst, TopologyKind::Knn(3), TopologyKind::Clique, TopologyKind::Chain(vec![1, 0])] {
            let t = build_topology(&[dna(0.0), dna(1.0)], kind).unwrap();
            assert_eq!(t.edges, vec![(0, 1)]);
        }
    }

    #[test]
    fn collinear_mst_is_path() {
        let dnas = [dna(0.0), dna(2.0), dna(1.0), dna(3.0)];
        let t = build_topology(&dnas, TopologyKind::Mst).unwrap();
        assert_eq!(t.edges, vec![(0, 2), (1, 2), (1, 3)]);
    }

    #[test]
    fn clique_directed_count() {
        let dnas: Vec<ShapeDna> = (0..5).map(|i| dna(i as f64)).collect();
        let t = build_topology(&dnas, TopologyKind::Clique).unwrap();
        assert_eq!(t.directed_edges().len(), 20);
    }

    #[test]
    fn knn_saturation_and_repair() {
        let dnas: Vec<ShapeDna> = (0..4).map(|i| dna(i as f64)).collect();
        let t = build_topology(&dnas, TopologyKind::Knn(10)).unwrap();
        assert_eq!(t.edges.len(), 6);
        assert!(!t.notes.is_empty());

        let far = [dna(0.0), dna(0.1), dna(10.0), dna(10.1)];
        let t = build_topology(&far, TopologyKind::Knn(1)).unwrap();
        assert!(t.is_connected());
        assert!(t.notes.iter().any(|n| n.contains("augmented")));
    }

    #[test]
    fn insufficient_shapes() {
        assert!(matches!(
            build_topology(&[dna(0.0)], TopologyKind::Clique),
            Err(Error::InsufficientShapes { .. })
        ));
    }

    #[test]
    fn topology_parsing() {
        assert_eq!("knn:10".parse::<TopologyKind>().unwrap(), TopologyKind::Knn(10));
        assert_eq!("mst".parse::<TopologyKind>().unwrap(), TopologyKind::Mst);
        assert!("knn:x".parse::<TopologyKind>().is_err());
    }

    #[test]
    fn identity_network_is_consistent() {
        let dnas: Vec<ShapeDna> = (0..4).map(|i| dna(i as f64)).collect();
        let topo = build_topology(&dnas, TopologyKind::Clique).unwrap();
        let net = attach_maps(identity_nodes(4, 3), topo, identity_provider(3)).unwrap();
        assert_eq!(net.num_directed_edges(), 12);
        let report = consistency_report(&net);
        assert_eq!(report.max, 0.0);
        // 6 round trips plus 3 fundamental cycles in both orientations.
        assert_eq!(report.cycles.len(), 12);
        for c in &report.cycles {
            for w in 0..c.cycle.len() {
                assert!(net.map(c.cycle[w], c.cycle[(w + 1) % c.cycle.len()]).is_some());
            }
        }
    }

    #[test]
    fn provider_failure_names_edge() {
        let topo = Topology::from_edges(3, [(0, 1), (1, 2)]);
        let mut inner = identity_provider(2);
        let err = attach_maps(identity_nodes(3, 2), topo, |i, j| {
            if (i, j) == (2, 1) {
                Err(Error::precondition("boom"))
            } else {
                inner(i, j)
            }
        })
        .unwrap_err();
        match err {
            Error::ProviderFailure { from, to, .. } => assert_eq!((from.as_str(), to.as_str()), ("s2", "s1")),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn disconnected_network_rejected() {
        let topo = Topology::from_edges(4, [(0, 1), (2, 3)]);
        assert!(matches!(
            attach_maps(identity_nodes(4, 2), topo, identity_provider(2)),
            Err(Error::InvalidNetwork(_))
        ));
    }

    #[test]
    fn corrupted_edge_shows_in_cycles() {
        let topo = Topology::from_edges(3, [(0, 1), (0, 2), (1, 2)]);
        let mut inner = identity_provider(4);
        let net = attach_maps(identity_nodes(3, 4), topo, |i, j| {
            let mut m = inner(i, j)?;
            if (i, j) == (1, 2) {
                m.matrix[(0, 1)] += 0.1;
            }
            Ok(m)
        })
        .unwrap();
        assert!(consistency_report(&net).max >= 0.05);
    }
}
