use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NpcProfile;
use crate::agents::memory::{MemoryKind, MemoryStream, SimTime};
use crate::oracle::{slots, Embedder, OracleClient, OracleError, PendingRequest, ResponseSchema};

/// Creation time of seed memories: one day before the simulation starts.
pub const SEED_MEMORY_TIME: SimTime = -1440;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationshipKind {
    Family,
    Coworker,
    Acquaintance,
    /// Formed during the simulation, e.g. after a first conversation.
    Emergent,
}

impl RelationshipKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationshipKind::Family => "family",
            RelationshipKind::Coworker => "coworker",
            RelationshipKind::Acquaintance => "acquaintance",
            RelationshipKind::Emergent => "emergent",
        }
    }
}

/// Undirected edge; `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relationship {
    pub a: String,
    pub b: String,
    pub kind: RelationshipKind,
    /// Shared context both seed memories mention.
    pub context: String,
    /// `(npc_id, memory_id)` of the seed memory on each side.
    pub seed_memory_refs: Vec<(String, u64)>,
}

impl Relationship {
    pub fn new(x: &str, y: &str, kind: RelationshipKind, context: &str) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        Self {
            a: a.to_string(),
            b: b.to_string(),
            kind,
            context: context.to_string(),
            seed_memory_refs: vec![],
        }
    }

    pub fn other(&self, npc: &str) -> Option<&str> {
        if self.a == npc {
            Some(&self.b)
        } else if self.b == npc {
            Some(&self.a)
        } else {
            None
        }
    }
}

/// Index-based view of the relationship graph.
#[derive(Debug, Clone)]
pub struct SocialGraph {
    pub ids: Vec<String>,
    pub adjacency: Vec<BTreeSet<usize>>,
}

impl SocialGraph {
    pub fn new(ids: &[String], relationships: &[Relationship]) -> Self {
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut adjacency = vec![BTreeSet::new(); ids.len()];
        for r in relationships {
            if let (Some(&i), Some(&j)) = (index.get(r.a.as_str()), index.get(r.b.as_str())) {
                if i != j {
                    adjacency[i].insert(j);
                    adjacency[j].insert(i);
                }
            }
        }
        Self {
            ids: ids.to_vec(),
            adjacency,
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(&j)
    }

    /// Hop counts from `start`; `None` when unreachable.
    pub fn bfs(&self, start: usize) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.ids.len()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

pub fn all_pairs_distances(graph: &SocialGraph) -> Vec<Vec<Option<u32>>> {
    (0..graph.ids.len()).map(|i| graph.bfs(i)).collect()
}

/// Largest hop count between any two NPCs, counted in edges. `None` if the
/// graph is disconnected; `Some(0)` for zero or one NPC.
pub fn diameter(graph: &SocialGraph) -> Option<u32> {
    let mut best = 0;
    for row in all_pairs_distances(graph) {
        for d in row {
            best = best.max(d?);
        }
    }
    Some(best)
}

struct SeedRequest {
    owner: usize,
    other: usize,
    edge: usize,
    context: String,
}

/// Writes one seed memory per endpoint of each relationship in `new_edges`,
/// asking for all of them in a single batch. Text that does not mention
/// the shared context is replaced by a template that does.
fn write_seed_memories(
    edges: &mut [Relationship],
    profiles: &[NpcProfile],
    oracle: &mut OracleClient,
    embedder: &dyn Embedder,
    streams: &mut BTreeMap<String, MemoryStream>,
) -> Result<(), OracleError> {
    let index: BTreeMap<&str, usize> = profiles.iter().enumerate().map(|(i, p)| (p.npc_id.as_str(), i)).collect();
    let mut requests = Vec::new();
    for (e, rel) in edges.iter().enumerate() {
        let (Some(&a), Some(&b)) = (index.get(rel.a.as_str()), index.get(rel.b.as_str())) else {
            continue;
        };
        for (owner, other) in [(a, b), (b, a)] {
            requests.push(SeedRequest {
                owner,
                other,
                edge: e,
                context: rel.context.clone(),
            });
        }
    }
    let pending = requests
        .iter()
        .map(|r| {
            PendingRequest::new(
                "seed_memory",
                slots([
                    ("npc", profiles[r.owner].full_name()),
                    ("other", profiles[r.other].full_name()),
                    ("context", r.context.clone()),
                    ("relation", edges[r.edge].kind.as_str().to_string()),
                ]),
                ResponseSchema::FreeText,
            )
        })
        .collect();
    let answers = oracle.ask_batch(pending);
    for (req, answer) in requests.iter().zip(answers) {
        let other = profiles[req.other].full_name();
        let text = match answer {
            Ok(r) if r.as_text().to_lowercase().contains(&req.context.to_lowercase()) => r.as_text().to_string(),
            Ok(_) | Err(OracleError::SchemaViolation { .. } | OracleError::MissingScriptEntry { .. }) => {
                format!("I know {other} through {}.", req.context)
            }
            Err(e) => return Err(e),
        };
        let owner = &profiles[req.owner].npc_id;
        let stream = streams.entry(owner.clone()).or_insert_with(|| MemoryStream::new(owner));
        let id = stream.add(MemoryKind::Seed, &text, SEED_MEMORY_TIME, MemoryKind::Seed.default_importance(), embedder)?;
        edges[req.edge].seed_memory_refs.push((owner.clone(), id));
    }
    Ok(())
}

/// Family and coworker cliques with their seed memories.
///
/// `workplace_names` maps a workplace building id to the phrase both
/// coworkers' memories must mention. Family members are not additionally
/// linked as coworkers.
pub fn seed_relationships(
    profiles: &[NpcProfile],
    surnames: &BTreeMap<String, String>,
    workplace_names: &BTreeMap<String, String>,
    oracle: &mut OracleClient,
    embedder: &dyn Embedder,
    streams: &mut BTreeMap<String, MemoryStream>,
) -> Result<Vec<Relationship>, OracleError> {
    let mut edges = Vec::new();
    for (i, p) in profiles.iter().enumerate() {
        for q in &profiles[i + 1..] {
            if p.family_id == q.family_id {
                let surname = surnames.get(&p.family_id).cloned().unwrap_or_else(|| p.surname.clone());
                edges.push(Relationship::new(&p.npc_id, &q.npc_id, RelationshipKind::Family, &format!("the {surname} family")));
            } else if let (Some(w), true) = (&p.workplace, p.workplace == q.workplace) {
                let name = workplace_names.get(w).cloned().unwrap_or_else(|| w.clone());
                edges.push(Relationship::new(&p.npc_id, &q.npc_id, RelationshipKind::Coworker, &name));
            }
        }
    }
    write_seed_memories(&mut edges, profiles, oracle, embedder, streams)?;
    Ok(edges)
}

/// Adds acquaintance edges until every pair is within `cap` hops.
///
/// Each round links a pair at the current maximum distance (unreachable
/// counts as infinite). Pairs with something in common, as reported by
/// `commonality`, are preferred; among those, the pair whose endpoints have
/// the largest combined eccentricity, since linking the periphery shrinks
/// the most paths. Remaining ties are broken by `rng`. Pairs without a
/// commonality meet through `fallback_context`.
///
/// Every round removes one pair at distance D (or joins two components), so
/// the loop ends after at most n(n-1)/2 rounds.
#[allow(clippy::too_many_arguments)]
pub fn ensure_connectedness<R: Rng + ?Sized>(
    profiles: &[NpcProfile],
    relationships: &mut Vec<Relationship>,
    cap: u32,
    commonality: &dyn Fn(&NpcProfile, &NpcProfile) -> Option<String>,
    fallback_context: &str,
    oracle: &mut OracleClient,
    embedder: &dyn Embedder,
    streams: &mut BTreeMap<String, MemoryStream>,
    rng: &mut R,
) -> Result<usize, OracleError> {
    let ids: Vec<String> = profiles.iter().map(|p| p.npc_id.clone()).collect();
    let n = ids.len();
    let mut added = 0;
    let mut new_edges = Vec::new();
    loop {
        let graph = SocialGraph::new(&ids, relationships);
        let dist = all_pairs_distances(&graph);
        let far = |d: Option<u32>| d.unwrap_or(u32::MAX);
        let mut max_d = 0;
        for row in &dist {
            for &d in row {
                max_d = max_d.max(far(d));
            }
        }
        if max_d <= cap.max(1) {
            break;
        }
        let ecc: Vec<u32> = dist.iter().map(|row| row.iter().filter_map(|d| *d).max().unwrap_or(0)).collect();
        let mut best: Vec<(usize, usize, Option<String>)> = Vec::new();
        let mut best_key = (false, 0);
        for i in 0..n {
            for j in i + 1..n {
                if far(dist[i][j]) != max_d {
                    continue;
                }
                let common = commonality(&profiles[i], &profiles[j]);
                let key = (common.is_some(), ecc[i] + ecc[j]);
                if best.is_empty() || key > best_key {
                    best.clear();
                    best_key = key;
                }
                if key == best_key {
                    best.push((i, j, common));
                }
            }
        }
        let (i, j, common) = best.swap_remove(rng.random_range(0..best.len()));
        let context = common.unwrap_or_else(|| fallback_context.to_string());
        let rel = Relationship::new(&ids[i], &ids[j], RelationshipKind::Acquaintance, &context);
        relationships.push(rel.clone());
        new_edges.push(relationships.len() - 1);
        added += 1;
    }
    let mut batch: Vec<Relationship> = new_edges.iter().map(|&k| relationships[k].clone()).collect();
    write_seed_memories(&mut batch, profiles, oracle, embedder, streams)?;
    for (k, rel) in new_edges.into_iter().zip(batch) {
        relationships[k] = rel;
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Tile;
    use crate::oracle::{HashEmbedder, ScriptTable};
    use crate::population::FamilyRole;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn person(id: &str, family: &str, workplace: Option<&str>) -> NpcProfile {
        NpcProfile {
            npc_id: id.into(),
            name: id.into(),
            surname: family.into(),
            family_id: family.into(),
            family_role: if workplace.is_some() { FamilyRole::Parent } else { FamilyRole::Child },
            individual_lore: String::new(),
            traits: vec!["kind".into()],
            work_role: workplace.map(String::from),
            workplace: workplace.map(String::from),
            home: String::new(),
            position: Tile::new(0, 0),
            evolution: vec![],
        }
    }

    fn oracle() -> OracleClient {
        OracleClient::scripted(ScriptTable::builtin_defaults())
    }

    #[test]
    fn cliques_and_reciprocal_memories() {
        let people = vec![
            person("a", "f1", Some("mill")),
            person("b", "f1", None),
            person("c", "f2", Some("mill")),
            person("d", "f3", Some("forge")),
        ];
        let mut streams = BTreeMap::new();
        let rels = seed_relationships(&people, &BTreeMap::new(), &BTreeMap::new(), &mut oracle(), &HashEmbedder::default(), &mut streams).unwrap();
        let kinds: Vec<_> = rels.iter().map(|r| (r.a.as_str(), r.b.as_str(), r.kind)).collect();
        assert_eq!(kinds, vec![("a", "b", RelationshipKind::Family), ("a", "c", RelationshipKind::Coworker)]);
        for r in &rels {
            assert_eq!(r.seed_memory_refs.len(), 2);
            for (owner, id) in &r.seed_memory_refs {
                let m = streams[owner].get(*id).unwrap();
                assert!(m.text.to_lowercase().contains(&r.context.to_lowercase()));
                assert_eq!(m.created_at, SEED_MEMORY_TIME);
            }
        }
        assert!(!streams.contains_key("d"));
    }

    #[test]
    fn off_topic_seed_text_is_replaced() {
        let mut s = ScriptTable::builtin_defaults();
        s.set_default("seed_memory", "We once shared a boat.");
        let people = vec![person("a", "f1", None), person("b", "f1", None)];
        let mut streams = BTreeMap::new();
        seed_relationships(&people, &BTreeMap::new(), &BTreeMap::new(), &mut OracleClient::scripted(s), &HashEmbedder::default(), &mut streams).unwrap();
        assert_eq!(streams["a"].entries[0].text, "I know b f1 through the f1 family.");
    }

    #[test]
    fn isolated_people_get_connected_within_cap() {
        let people: Vec<_> = (0..9).map(|i| person(&format!("p{i}"), &format!("f{i}"), None)).collect();
        let mut rels = Vec::new();
        let mut streams = BTreeMap::new();
        let none = |_: &NpcProfile, _: &NpcProfile| None;
        let added = ensure_connectedness(
            &people,
            &mut rels,
            3,
            &none,
            "the market",
            &mut oracle(),
            &HashEmbedder::default(),
            &mut streams,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let ids: Vec<String> = people.iter().map(|p| p.npc_id.clone()).collect();
        let d = diameter(&SocialGraph::new(&ids, &rels)).unwrap();
        assert!(d <= 3, "diameter {d}");
        assert_eq!(added, rels.len());
        assert!(rels.iter().all(|r| r.seed_memory_refs.len() == 2));
    }

    #[test]
    fn commonality_is_preferred() {
        let mut people: Vec<_> = (0..3).map(|i| person(&format!("p{i}"), &format!("f{i}"), None)).collect();
        people[2].work_role = Some("smith".into());
        people[1].work_role = Some("smith".into());
        let mut rels = vec![Relationship::new("p0", "p1", RelationshipKind::Family, "x")];
        let same_role = |a: &NpcProfile, b: &NpcProfile| match (&a.work_role, &b.work_role) {
            (Some(x), Some(y)) if x == y => Some(format!("the {x} trade")),
            _ => None,
        };
        ensure_connectedness(&people, &mut rels, 1, &same_role, "m", &mut oracle(), &HashEmbedder::default(), &mut BTreeMap::new(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // p2 is unreachable from both; the smith pair wins the first round
        assert_eq!((rels[1].a.as_str(), rels[1].b.as_str()), ("p1", "p2"));
        assert_eq!(rels[1].context, "the smith trade");
    }

    #[test]
    fn diameter_counts_edges() {
        let ids: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let path = vec![
            Relationship::new("a", "b", RelationshipKind::Family, ""),
            Relationship::new("b", "c", RelationshipKind::Family, ""),
        ];
        assert_eq!(diameter(&SocialGraph::new(&ids, &path)), Some(2));
        assert_eq!(diameter(&SocialGraph::new(&ids, &path[..1])), None);
    }
}
