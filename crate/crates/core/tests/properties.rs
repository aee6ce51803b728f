//! Invariants checked over generated inputs.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use worldsim_core::agents::conversation::is_valid_walk;
use worldsim_core::agents::{
    conversation_step, schedule_plan, start_conversation, Agent, Agents, ConversationEnv, Decision, MemoryKind, MemoryStream, Phase, Plan,
    PlanBook, PlanStatus, RoutineStore, ScoringWeights,
};
use worldsim_core::agents::{EntrySource, Location, RoutineEntry};
use worldsim_core::assets::{remove_background, unify_sprite, Sprite};
use worldsim_core::geom::{Rect, Tile};
use worldsim_core::oracle::{EmbeddingVector, HashEmbedder, OracleClient, ScriptTable};
use worldsim_core::population::{plan_families, FamilyRole, MemberPlan, NpcProfile, PopulationConfig, FamilyPlan};
use worldsim_core::settlement::{astar, derive_building_needs, dijkstra, is_two_opt_optimal, tsp_route, BuildingKind, CostGrid, MAX_BUILDINGS, MIN_BUILDINGS};
use worldsim_core::terrain::PerlinNoise;

fn grid_strategy() -> impl Strategy<Value = (u32, u32, Vec<Option<u32>>)> {
    (2u32..16, 2u32..16).prop_flat_map(|(w, h)| {
        let cell = prop_oneof![1 => Just(None), 4 => (1u32..20).prop_map(Some)];
        (Just(w), Just(h), proptest::collection::vec(cell, (w * h) as usize))
    })
}

fn person(id: &str, name: &str, x: i32) -> Agent {
    let profile = NpcProfile {
        npc_id: id.into(),
        name: name.into(),
        surname: "Reed".into(),
        family_id: "family-00".into(),
        family_role: FamilyRole::Adult,
        individual_lore: String::new(),
        traits: vec!["curious".into()],
        work_role: Some("potter".into()),
        workplace: Some("building-02".into()),
        home: "building-01".into(),
        position: Tile::new(x, 0),
        evolution: vec![],
    };
    Agent::new(profile, MemoryStream::new(id), 360, 1320)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn astar_matches_dijkstra((w, h, cells) in grid_strategy(), s in any::<prop::sample::Index>(), g in any::<prop::sample::Index>()) {
        let costs: Vec<Option<f64>> = cells.iter().map(|c| c.map(f64::from)).collect();
        let grid = CostGrid::new(w, h, costs);
        let n = (w * h) as usize;
        let (s, g) = (grid.tile_at(s.index(n)), grid.tile_at(g.index(n)));
        let reference = if grid.cost(s).is_some() { dijkstra(&grid, s)[grid.index(g)] } else { f64::INFINITY };
        match astar(&grid, s, g) {
            Ok(p) => {
                prop_assert_eq!(p.cost, reference);
                prop_assert_eq!(grid.path_cost(&p.tiles), Some(p.cost));
            }
            Err(_) => prop_assert!(reference.is_infinite() || grid.cost(g).is_none()),
        }
    }

    #[test]
    fn tours_are_two_opt_permutations(points in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 0..14)) {
        let tour = tsp_route(&points);
        let mut sorted = tour.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..points.len()).collect::<Vec<_>>());
        prop_assert!(is_two_opt_optimal(&points, &tour));
    }

    #[test]
    fn family_sizes_sum_to_target(target in 1u32..200, seed in any::<u64>()) {
        let mut oracle = OracleClient::scripted(ScriptTable::builtin_defaults());
        let plans = plan_families(target, "x", &mut oracle, &PopulationConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(plans.iter().map(|p| p.members.len() as u32).sum::<u32>(), target);
        for p in &plans {
            let adults = p.members.iter().filter(|m| m.role.is_adult()).count();
            prop_assert!(adults >= 1);
            prop_assert!(p.members.iter().all(|m| m.role.is_adult() == m.work_role.is_some()));
        }
    }

    #[test]
    fn building_roster_fits_bounds(sizes in proptest::collection::vec(1usize..6, 1..40), roles in 1usize..12) {
        let plans: Vec<FamilyPlan> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| FamilyPlan {
                index: i,
                members: (0..n)
                    .map(|k| MemberPlan {
                        role: if k < 2 { FamilyRole::Parent } else { FamilyRole::Child },
                        work_role: (k < 2).then(|| format!("role{}", (i + k) % roles)),
                    })
                    .collect(),
            })
            .collect();
        match derive_building_needs(&plans) {
            Ok(specs) => {
                prop_assert!((MIN_BUILDINGS..=MAX_BUILDINGS).contains(&specs.len()));
                for (i, p) in plans.iter().enumerate() {
                    let home = specs.iter().find(|s| s.family == Some(i)).expect("every family has a home");
                    prop_assert!(home.capacity as usize >= p.members.len());
                }
                let mut housed: Vec<&String> = specs.iter().filter(|s| s.kind == BuildingKind::Workplace).flat_map(|s| &s.roles).collect();
                housed.sort();
                housed.dedup();
                prop_assert_eq!(housed.len(), roles.min(plans.iter().flat_map(|p| &p.members).filter_map(|m| m.work_role.as_ref()).collect::<std::collections::BTreeSet<_>>().len()));
                prop_assert_eq!(specs.iter().filter(|s| s.kind == BuildingKind::Civic).count(), 1);
            }
            Err(_) => prop_assert!(plans.len() + 2 > MAX_BUILDINGS),
        }
    }

    #[test]
    fn retrieval_is_sorted_and_touches_only_results(
        items in proptest::collection::vec((0u8..4, 0u8..=4, -2000i64..2000), 0..60),
        q in 0u8..4,
        k in 1usize..10,
    ) {
        let dirs: Vec<EmbeddingVector> = (0..4).map(|i| {
            let mut v = vec![0.5; 4];
            v[i] = 2.0;
            EmbeddingVector::normalized(v)
        }).collect();
        let mut stream = MemoryStream::new("n");
        for (d, imp, at) in &items {
            stream.push(MemoryKind::Observation, "m", *at, f64::from(*imp) / 4.0, dirs[*d as usize].clone());
        }
        let w = ScoringWeights::default();
        let peeked = stream.peek(&dirs[q as usize], k, 3000, &w);
        let before = stream.clone();
        let got = stream.retrieve(&dirs[q as usize], k, 3000, &w);
        prop_assert_eq!(got.len(), k.min(items.len()));
        prop_assert_eq!(peeked.iter().map(|m| m.memory_id).collect::<Vec<_>>(), got.iter().map(|m| m.memory_id).collect::<Vec<_>>());
        for (old, new) in before.entries.iter().zip(&stream.entries) {
            let picked = got.iter().any(|m| m.memory_id == old.memory_id);
            prop_assert_eq!(new.last_access, if picked { 3000 } else { old.last_access });
        }
        prop_assert!(stream.validate().is_ok());
    }

    #[test]
    fn unified_sprites_fit_the_grid(
        (w, h, pixels) in (1u32..24, 1u32..24).prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<[u8; 4]>(), (w * h) as usize))),
        tiles in 1u32..4,
        palette in proptest::collection::vec(any::<[u8; 3]>(), 1..8),
    ) {
        let s = Sprite::new(w, h, pixels);
        let out = unify_sprite(&s, tiles, 8, &palette).unwrap();
        prop_assert_eq!((out.width, out.height), (tiles * 8, tiles * 8));
        prop_assert!(out.respects_palette());
        prop_assert!(out.pixels.iter().all(|p| p[3] == 0 || p[3] == 255));
    }

    #[test]
    fn background_removal_only_clears(
        (w, h, pixels) in (1u32..20, 1u32..20).prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<[u8; 4]>(), (w * h) as usize))),
        tol in 0u8..64,
    ) {
        let s = Sprite::new(w, h, pixels);
        let out = remove_background(&s, tol);
        prop_assert_eq!(out.pixels.len(), s.pixels.len());
        for (a, b) in s.pixels.iter().zip(&out.pixels) {
            prop_assert!(a == b || b[3] == 0);
        }
        prop_assert!(out.pixels.iter().any(|p| p[3] != 0) || s.pixels.iter().all(|p| p[3] == 0));
    }

    #[test]
    fn noise_stays_in_range(seed in any::<u64>(), x in -1e4f64..1e4, y in -1e4f64..1e4) {
        let v = PerlinNoise::new(seed).sample(x, y);
        prop_assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn rect_gap_is_symmetric(a in (-20i32..20, -20i32..20, 1i32..8, 1i32..8), b in (-20i32..20, -20i32..20, 1i32..8, 1i32..8)) {
        let (ra, rb) = (Rect::new(a.0, a.1, a.2, a.3), Rect::new(b.0, b.1, b.2, b.3));
        prop_assert_eq!(ra.chebyshev_gap(&rb), rb.chebyshev_gap(&ra));
        prop_assert_eq!(ra.chebyshev_gap(&rb) == 0, ra.intersects(&rb));
    }

    #[test]
    fn conversations_walk_the_phase_graph(
        detect in proptest::collection::vec(any::<bool>(), 1..4),
        accept in any::<bool>(),
        keep_talking in any::<bool>(),
        max_turns in 1u32..8,
    ) {
        let mut script = ScriptTable::builtin_defaults();
        script.set_default("detect_proposal", if detect[0] { "yes" } else { "no" });
        script.set_default("extract_plan", r#"{"activity": "a walk", "location": "the well", "start": "17:00", "end": "18:00"}"#);
        script.set_default("plan_decision", if accept { "accept" } else { "reject" });
        script.set_default("conversation_continue", if keep_talking { "continue" } else { "end" });
        let mut agents: Agents = [("npc-a", "Ada"), ("npc-b", "Bo"), ("npc-c", "Cy")]
            .iter()
            .enumerate()
            .map(|(i, (id, name))| (id.to_string(), person(id, name, i as i32)))
            .collect();
        let mut oracle = OracleClient::scripted(script);
        let embedder = HashEmbedder::default();
        let mut plans = PlanBook::default();
        let places = BTreeMap::from([("the well".to_string(), Location::Tile(Tile::new(3, 3)))]);
        let targets = if detect.len() > 1 { vec!["npc-b".to_string(), "npc-c".to_string()] } else { vec!["npc-b".to_string()] };
        let mut state = start_conversation("c", "npc-a", &targets, "the weather", &mut agents, 3, 0).unwrap();
        state.max_turns = max_turns;
        for t in 0..200 {
            let before = state.transcript.len();
            let mut env = ConversationEnv {
                agents: &mut agents,
                oracle: &mut oracle,
                embedder: &embedder,
                plans: &mut plans,
                places: &places,
                weights: ScoringWeights::default(),
                now: 600 + t,
                day: 0,
            };
            conversation_step(&mut state, &mut env);
            prop_assert!(state.transcript.len() <= before + 1);
            if state.phase == Phase::Ended {
                break;
            }
        }
        prop_assert_eq!(state.phase, Phase::Ended);
        prop_assert!(is_valid_walk(&state.history));
        prop_assert!(state.turn_count <= max_turns);
        for p in &state.participants {
            let a = &agents[p];
            prop_assert!(a.conversation.is_none());
            prop_assert_eq!(a.memory.entries.iter().filter(|m| m.kind == MemoryKind::ConversationSummary).count(), 1);
        }
        for plan in plans.plans.values() {
            let expected = if accept { PlanStatus::Proposed } else { PlanStatus::Cancelled };
            prop_assert_eq!(plan.status, expected);
        }
    }

    #[test]
    fn scheduling_keeps_routines_contiguous(
        slots in proptest::collection::vec((360u32..1300, 10u32..180, 0usize..3), 1..12),
    ) {
        let mut agents: Agents = [("npc-a", "Ada"), ("npc-b", "Bo"), ("npc-c", "Cy")]
            .iter()
            .enumerate()
            .map(|(i, (id, name))| (id.to_string(), person(id, name, i as i32)))
            .collect();
        let mut book = PlanBook::default();
        for (start, len, who) in slots {
            let end = (start + len).min(1320);
            let ids = ["npc-a", "npc-b", "npc-c"];
            let invitee = ids[(who + 1) % 3].to_string();
            let mut plan = Plan {
                plan_id: book.next_plan_id(),
                proposer: ids[who].into(),
                invitees: vec![invitee.clone()],
                decisions: BTreeMap::from([(invitee, Decision::Accepted)]),
                requested_day: None,
                scheduled_day: None,
                start,
                end,
                location: Location::Tile(Tile::new(0, 0)),
                activity: "x".into(),
                status: PlanStatus::Proposed,
                created_day: 0,
            };
            let r = schedule_plan(&mut plan, &mut agents, &mut book.buffer, 0, 3);
            if let Ok(Some(day)) = r {
                for p in plan.participants() {
                    let routine = agents.routine(&p, day).unwrap();
                    prop_assert_eq!(routine.plan_entries(&plan.plan_id).count(), 1);
                }
            }
            for a in agents.values() {
                for r in a.routines.values() {
                    prop_assert!(r.check_contiguity().is_ok());
                    let mut busy: Vec<&RoutineEntry> = r.entries.iter().filter(|e| matches!(e.source, EntrySource::Plan(_))).collect();
                    busy.sort_by_key(|e| e.start);
                    prop_assert!(busy.windows(2).all(|w| w[0].end <= w[1].start));
                }
            }
        }
    }
}
