use std::collections::{BTreeSet, HashMap};
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::KgError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for EntityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Default)]
pub(crate) struct ParseStats {
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

/// Immutable undirected graph in compressed-row form.
///
/// `neighbors(u)` is strictly increasing and `v ∈ neighbors(u) ⇔ u ∈ neighbors(v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    names: Vec<String>,
    index: HashMap<String, EntityId>,
    offsets: Vec<usize>,
    targets: Vec<EntityId>,
    /// Relation id per adjacency slot, parallel to `targets`.
    slot_relations: Vec<u32>,
    relations: Vec<String>,
    /// Self-referencing triples; kept so isolated entities survive a round trip.
    self_loops: Vec<(EntityId, u32)>,
}

impl KnowledgeGraph {
    /// Builds a graph from `(head, relation, tail)` triples. Later duplicates of
    /// an undirected edge are dropped; the first relation label wins.
    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        Self::build(triples.into_iter().collect()).0
    }

    pub(crate) fn parse_triples(text: &str, path: &Path) -> Result<(Self, ParseStats), KgError> {
        let mut triples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.trim().is_empty()) {
                return Err(KgError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: "empty field".into(),
                });
            }
            triples.push((fields[0], fields[1], fields[2]));
        }
        Ok(Self::build(triples))
    }

    fn build(triples: Vec<(&str, &str, &str)>) -> (Self, ParseStats) {
        let name_set: BTreeSet<&str> = triples.iter().flat_map(|(h, _, t)| [*h, *t]).collect();
        let names: Vec<String> = name_set.into_iter().map(str::to_string).collect();
        let index: HashMap<String, EntityId> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), EntityId(i as u32)))
            .collect();

        let relation_set: BTreeSet<&str> = triples.iter().map(|(_, r, _)| *r).collect();
        let relations: Vec<String> = relation_set.iter().map(|r| r.to_string()).collect();
        let relation_ids: HashMap<&str, u32> = relation_set
            .into_iter()
            .enumerate()
            .map(|(i, r)| (r, i as u32))
            .collect();
        let mut edges: HashMap<(EntityId, EntityId), u32> = HashMap::new();
        let mut self_loops = Vec::new();
        let mut stats = ParseStats::default();
        for (h, r, t) in triples {
            let rid = relation_ids[r];
            let (a, b) = (index[h], index[t]);
            if a == b {
                stats.self_loops += 1;
                if !self_loops.iter().any(|(e, _)| *e == a) {
                    self_loops.push((a, rid));
                }
                continue;
            }
            let key = if a < b { (a, b) } else { (b, a) };
            if edges.contains_key(&key) {
                stats.duplicate_edges += 1;
            } else {
                edges.insert(key, rid);
            }
        }

        let n = names.len();
        let mut lists: Vec<Vec<(EntityId, u32)>> = vec![Vec::new(); n];
        for (&(a, b), &rid) in &edges {
            lists[a.index()].push((b, rid));
            lists[b.index()].push((a, rid));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(edges.len() * 2);
        let mut slot_relations = Vec::with_capacity(edges.len() * 2);
        offsets.push(0);
        for list in &mut lists {
            list.sort_unstable();
            for (v, rid) in list.iter() {
                targets.push(*v);
                slot_relations.push(*rid);
            }
            offsets.push(targets.len());
        }
        self_loops.sort_unstable();
        let graph = Self {
            names,
            index,
            offsets,
            targets,
            slot_relations,
            relations,
            self_loops,
        };
        (graph, stats)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.names.len() as u32).map(EntityId)
    }

    pub fn id(&self, name: &str) -> Option<EntityId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: EntityId) -> &str {
        &self.names[id.index()]
    }

    pub fn check(&self, id: EntityId) -> Result<(), KgError> {
        if id.index() < self.len() {
            Ok(())
        } else {
            Err(KgError::InvalidEntity {
                id: id.index(),
                count: self.len(),
            })
        }
    }

    /// Ascending, duplicate-free neighbour list.
    pub fn neighbors(&self, u: EntityId) -> Result<&[EntityId], KgError> {
        self.check(u)?;
        Ok(self.neighbors_unchecked(u))
    }

    pub(crate) fn neighbors_unchecked(&self, u: EntityId) -> &[EntityId] {
        &self.targets[self.offsets[u.index()]..self.offsets[u.index() + 1]]
    }

    pub fn are_adjacent(&self, u: EntityId, v: EntityId) -> bool {
        u.index() < self.len() && self.neighbors_unchecked(u).binary_search(&v).is_ok()
    }

    /// Relation label attached to the edge `u – v`, if the edge exists.
    pub fn relation(&self, u: EntityId, v: EntityId) -> Option<&str> {
        if u.index() >= self.len() {
            return None;
        }
        let start = self.offsets[u.index()];
        let pos = self.neighbors_unchecked(u).binary_search(&v).ok()?;
        Some(&self.relations[self.slot_relations[start + pos] as usize])
    }

    /// Writes every undirected edge once as `head<TAB>relation<TAB>tail`, in
    /// ascending id order. Reloading the output reproduces this graph.
    pub fn write_triples<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (e, rid) in &self.self_loops {
            let name = self.name(*e);
            writeln!(out, "{name}\t{}\t{name}", self.relations[*rid as usize])?;
        }
        for u in self.entities() {
            let start = self.offsets[u.index()];
            for (i, v) in self.neighbors_unchecked(u).iter().enumerate() {
                if *v > u {
                    let rel = &self.relations[self.slot_relations[start + i] as usize];
                    writeln!(out, "{}\t{}\t{}", self.name(u), rel, self.name(*v))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(g: &KnowledgeGraph, names: &[&str]) -> Vec<EntityId> {
        names.iter().map(|n| g.id(n).unwrap()).collect()
    }

    #[test]
    fn line_graph_neighbors() {
        let g = KnowledgeGraph::from_triples([("a", "r", "b"), ("c", "r", "b")]);
        assert_eq!(g.neighbors(g.id("b").unwrap()).unwrap(), ids(&g, &["a", "c"]).as_slice());
        assert_eq!(g.relation(g.id("b").unwrap(), g.id("c").unwrap()), Some("r"));
    }

    #[test]
    fn isolated_and_out_of_range() {
        let g = KnowledgeGraph::from_triples([("a", "r", "b"), ("z", "self", "z")]);
        assert!(g.neighbors(g.id("z").unwrap()).unwrap().is_empty());
        assert!(matches!(
            g.neighbors(EntityId(3)),
            Err(KgError::InvalidEntity { id: 3, count: 3 })
        ));
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = KnowledgeGraph::parse_triples("# header\na\tr\tb\n\nbad line\n", Path::new("t.tsv")).unwrap_err();
        match err {
            KgError::Malformed { line, .. } => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> KnowledgeGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..n).map(|i| format!("n{i:03}")).collect();
        let mut triples = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random::<f64>() < p {
                    triples.push((names[i].as_str(), "rel", names[j].as_str()));
                }
            }
        }
        KnowledgeGraph::from_triples(triples)
    }

    #[test]
    fn symmetry_exhaustive_scan() {
        let g = random_graph(100, 0.04, 11);
        for u in g.entities() {
            let list = g.neighbors(u).unwrap();
            assert!(list.windows(2).all(|w| w[0] < w[1]));
            for v in g.entities() {
                let forward = list.contains(&v);
                let backward = g.neighbors(v).unwrap().contains(&u);
                assert_eq!(forward, backward, "{u} {v}");
            }
        }
    }

    #[test]
    fn round_trip_through_triples() {
        let g = random_graph(60, 0.05, 5);
        let extra = KnowledgeGraph::from_triples([("solo", "is", "solo"), ("n000", "rel", "n001")]);
        assert!(extra.neighbors(extra.id("solo").unwrap()).unwrap().is_empty());
        let mut buf = Vec::new();
        g.write_triples(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (again, _) = KnowledgeGraph::parse_triples(&text, Path::new("x")).unwrap();
        assert_eq!(g, again);

        let mut buf = Vec::new();
        extra.write_triples(&mut buf).unwrap();
        let (again, _) = KnowledgeGraph::parse_triples(std::str::from_utf8(&buf).unwrap(), Path::new("x")).unwrap();
        assert_eq!(extra, again);
        assert_eq!(again.len(), 3);
    }
}
