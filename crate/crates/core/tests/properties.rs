//! Property tests for the loop, sim world, constraint grammar, scoring and
//! store invariants.

mod common;

use std::cell::Cell;
use std::collections::BTreeSet;
use std::time::Instant;

use proptest::prelude::*;
use proptest::sample::select;
use tir::backend::{scrub, with_retry, BackendError, RetryPolicy};
use tir::benchgen::{generate_llm_grounded_suite, Suite, Task};
use tir::constraints::{parse_constraints, Category, Color, Constraint, ConstraintSet, Location, ObjectRef};
use tir::eval::{aggregate, check_scene, cohens_kappa, detect_from_scene, AnnotationSet, CaseResult};
use tir::refine::{Refiner, SessionConfig};
use tir::sim::{sim_generate, violation_draw, ErrorModel, SimCritic, SimGenerator};
use tir::store::{BatchLayout, Store, StoreError};

use common::RecordingCritic;

fn suite() -> &'static Suite {
    static SUITE: std::sync::OnceLock<Suite> = std::sync::OnceLock::new();
    SUITE.get_or_init(|| generate_llm_grounded_suite(0))
}

fn constraint() -> impl Strategy<Value = Constraint> {
    let cat = select(Category::ALL);
    let col = select(Color::ALL);
    let obj = (proptest::option::of(select(Color::ALL)), select(Category::ALL)).prop_map(|(c, k)| ObjectRef::new(c, k));
    prop_oneof![
        cat.clone().prop_map(|category| Constraint::Presence { category }),
        cat.clone().prop_map(|category| Constraint::Absence { category }),
        (cat.clone(), 1u32..=5).prop_map(|(category, n)| Constraint::Count { category, n }),
        proptest::collection::vec((col, cat), 1..=3).prop_map(|pairs| Constraint::AttributeBinding { pairs }),
        (obj.clone(), select(&Location::ALL[..]), obj).prop_map(|(s, l, o)| Constraint::spatial(s, l, o)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loop_cardinality_history_and_determinism(k in 0u32..=6, case in 0usize..320, seed in any::<u64>()) {
        let case = &suite().cases[case];
        let generator = SimGenerator::new("sim", ErrorModel::uniform(0.6, 0.2));
        let mut runs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let store = Store::open(dir.path()).unwrap();
            let critic = RecordingCritic::new();
            let config = SessionConfig { max_iterations: k, seed, ..SessionConfig::default() };
            let traj = Refiner::new(&generator, &critic, &store).run(case.prompt.clone(), config).unwrap();
            prop_assert_eq!(traj.rounds.len(), k as usize + 1);
            prop_assert_eq!(traj.feedback_count(), k as usize);
            for (i, text) in critic.taken().iter().enumerate() {
                let slot = text.split("Original User Prompt:").nth(1).unwrap();
                prop_assert!(slot.trim_start().trim_start_matches('-').trim_start().starts_with(case.prompt.as_str()));
                for earlier in &traj.rounds[..=i] {
                    prop_assert!(text.contains(earlier.prompt.as_str()));
                }
            }
            runs.push(serde_json::to_vec(&traj).unwrap());
        }
        prop_assert_eq!(&runs[0], &runs[1]);
    }

    #[test]
    fn resume_after_kill_neither_skips_nor_repeats(kill_after in 1usize..=4, case in 0usize..320, seed in any::<u64>()) {
        let case = &suite().cases[case];
        let generator = SimGenerator::new("sim", ErrorModel::uniform(0.6, 0.2));
        let critic = SimCritic::new("sim");
        let config = SessionConfig { max_iterations: 3, seed, ..SessionConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let store = Store::open(dir.path()).unwrap();
            let refiner = Refiner::new(&generator, &critic, &store);
            let mut t = refiner.start(case.prompt.clone(), config.clone()).unwrap();
            while t.rounds.len() < kill_after {
                t = refiner.step(&t).unwrap();
            }
            t.session_id
        };
        let store = Store::open(dir.path()).unwrap();
        let resumed = Refiner::new(&generator, &critic, &store).resume(&id).unwrap();
        let indices: Vec<usize> = resumed.rounds.iter().map(|r| r.index).collect();
        prop_assert_eq!(indices, vec![0, 1, 2, 3]);

        let other = tempfile::tempdir().unwrap();
        let fresh = Store::open(other.path()).unwrap();
        let whole = Refiner::new(&generator, &critic, &fresh).run(case.prompt.clone(), config).unwrap();
        prop_assert_eq!(resumed.rounds, whole.rounds);
    }

    #[test]
    fn certain_errors_without_discount_resolve_in_one_refinement(case in 0usize..320, seed in any::<u64>()) {
        let case = &suite().cases[case];
        let generator = SimGenerator::new("sim", ErrorModel::uniform(1.0, 0.0));
        let critic = SimCritic::new("sim");
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let config = SessionConfig { max_iterations: 1, seed, ..SessionConfig::default() };
        let traj = Refiner::new(&generator, &critic, &store).run(case.prompt.clone(), config).unwrap();
        let scored: Vec<CaseResult> = traj
            .rounds
            .iter()
            .map(|r| {
                let bytes = store.get_blob(&r.image.blob_id).unwrap().1;
                check_scene(&case.id, &tir::sim::scene_from_svg(&bytes).unwrap(), &case.ground_truth)
            })
            .collect();
        prop_assert!(!scored[0].case_pass);
        prop_assert!(scored[1].case_pass, "{:?}", scored[1]);
    }
}

proptest! {
    #[test]
    fn retry_accounting(
        failures in proptest::collection::vec(select(vec![0u8, 1, 2, 3]), 0..6),
        max_attempts in 1u32..5,
    ) {
        let policy = RetryPolicy { max_attempts, base_delay_ms: 1, backoff_factor: 2.0, timeout_ms: 1000 };
        let calls = Cell::new(0u32);
        let started = Instant::now();
        let result = with_retry(&policy, |_| {
            let i = calls.get() as usize;
            calls.set(calls.get() + 1);
            match failures.get(i) {
                None => Ok(()),
                Some(0) => Err(BackendError::Timeout),
                Some(1) => Err(BackendError::Unavailable { status: 503 }),
                Some(2) => Err(BackendError::RateLimited { retry_after: None }),
                Some(_) => Err(BackendError::AuthFailure { status: 401 }),
            }
        });
        let wall = started.elapsed();
        let attempts = calls.get();
        prop_assert!(attempts <= max_attempts);
        match &result {
            Ok((_, stats)) => prop_assert_eq!(stats.attempts, attempts),
            Err(e) => prop_assert_eq!(e.attempts, attempts),
        }
        let scheduled: std::time::Duration = (2..=attempts).map(|a| policy.delay_before(a)).sum();
        prop_assert!(wall >= scheduled.saturating_sub(std::time::Duration::from_millis(1)));
    }

    #[test]
    fn scrubbing_removes_every_occurrence(key in "[A-Za-z0-9]{8,24}", pre in ".{0,20}", post in ".{0,20}") {
        let text = format!("{pre}{key}{post}{key}");
        prop_assert!(!scrub(&text, &[&key]).contains(&key));
    }

    #[test]
    fn violation_draws_depend_only_on_seed_and_constraint(seed in any::<u64>(), a in constraint(), b in constraint()) {
        let alone = violation_draw(seed, &a);
        let _ = violation_draw(seed, &b);
        prop_assert_eq!(alone, violation_draw(seed, &a));
        prop_assert!((0.0..1.0).contains(&alone));
        if a.canonical_form() != b.canonical_form() {
            prop_assert_ne!(alone, violation_draw(seed, &b));
        }
    }

    #[test]
    fn canonical_rendering_is_idempotent(cs in proptest::collection::vec(constraint(), 1..6)) {
        let mut set = ConstraintSet::new("");
        for c in cs {
            set.insert(c);
        }
        let parsed = parse_constraints(&set.canonical_rendering());
        prop_assert!(parsed.warnings.is_empty(), "{:?}", parsed.warnings);
        prop_assert_eq!(&parsed.constraints, &set.constraints);
        let again = parse_constraints(&parsed.canonical_rendering());
        prop_assert_eq!(again.constraints, parsed.constraints);
    }

    #[test]
    fn parser_is_total(text in "\\PC{0,80}") {
        let set = parse_constraints(&text);
        if set.is_empty() && !text.trim().is_empty() {
            prop_assert!(!set.warnings.is_empty());
        }
    }

    #[test]
    fn suites_cover_every_object_and_use_opposite_locations(seed in any::<u64>()) {
        let suite = generate_llm_grounded_suite(seed);
        for task in Task::LLM_GROUNDED {
            let seen: BTreeSet<Category> = suite
                .cases
                .iter()
                .filter(|c| c.task == task)
                .flat_map(|c| c.ground_truth.mentioned_categories())
                .collect();
            prop_assert_eq!(seen.len(), Category::ALL.len(), "{}", task.name());
        }
        for case in suite.cases.iter().filter(|c| c.task == Task::Spatial) {
            let spatial = case.ground_truth.iter().find_map(|c| match c {
                Constraint::SpatialRelation { location, .. } => Some(*location),
                _ => None,
            });
            let location = spatial.expect("spatial constraint");
            let text = case.prompt.as_str();
            let want = format!("on the {} and ", location.name());
            let tail = format!("on the {}", location.opposite().name());
            prop_assert!(text.contains(&want) && text.ends_with(&tail), "{}", text);
        }
    }

    #[test]
    fn aggregation_ignores_case_order(seed in any::<u64>(), passes in proptest::collection::vec(any::<bool>(), 320)) {
        let suite = suite();
        let mut results: Vec<CaseResult> = suite
            .cases
            .iter()
            .zip(&passes)
            .map(|(c, p)| CaseResult::new(c.id.clone(), vec![("x".into(), *p)]))
            .collect();
        let report = aggregate(&results, suite).unwrap();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        results.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(aggregate(&results, suite).unwrap(), report);
    }

    #[test]
    fn kappa_bounds_identity_and_symmetry(pairs in proptest::collection::vec((0u8..=1, 0u8..=1), 1..60)) {
        let set = |id: &str, pick: fn(&(u8, u8)) -> u8| AnnotationSet {
            annotator_id: id.into(),
            scores: pairs.iter().enumerate().map(|(i, p)| (format!("c{i}"), pick(p))).collect(),
        };
        let a = set("a", |p| p.0);
        let b = set("b", |p| p.1);
        let k = cohens_kappa(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
        prop_assert_eq!(k, cohens_kappa(&b, &a).unwrap());
        let identical = pairs.iter().all(|(x, y)| x == y);
        let ones = pairs.iter().filter(|p| p.0 == 1).count();
        let degenerate = ones == 0 || ones == pairs.len();
        if !degenerate {
            prop_assert_eq!((k - 1.0).abs() < 1e-12, identical);
        }
        prop_assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn raising_the_threshold_never_adds_detections(case in 0usize..320, seed in any::<u64>(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let scene = sim_generate(suite().cases[case].prompt.as_str(), &ErrorModel::uniform(0.7, 0.5), seed);
        let low = detect_from_scene(&scene, lo);
        let high = detect_from_scene(&scene, hi);
        for cat in Category::ALL {
            let count = |d: &tir::eval::Detections| d.items.iter().filter(|x| x.category == cat.name()).count();
            prop_assert!(count(&high) <= count(&low));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_log_prefix_is_a_valid_trajectory(case in 0usize..320, seed in any::<u64>(), cut in 0usize..4096) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let generator = SimGenerator::new("sim", ErrorModel::uniform(0.6, 0.2));
        let critic = SimCritic::new("sim");
        let config = SessionConfig { max_iterations: 3, seed, ..SessionConfig::default() };
        let whole = Refiner::new(&generator, &critic, &store).run(suite().cases[case].prompt.clone(), config).unwrap();
        let log = dir.path().join("sessions").join(format!("{}.log", whole.session_id));
        let bytes = std::fs::read(&log).unwrap();
        let cut = cut % (bytes.len() + 1);

        let copy = tempfile::tempdir().unwrap();
        let copied = Store::open(copy.path()).unwrap();
        let target = copy.path().join("sessions").join(format!("{}.log", whole.session_id));
        std::fs::create_dir_all(target.parent().unwrap()).unwrap();
        std::fs::write(&target, &bytes[..cut]).unwrap();
        let at_boundary = cut == 0 || bytes[cut - 1] == b'\n';
        match copied.load_trajectory(&whole.session_id) {
            Ok(t) => {
                prop_assert!(at_boundary && cut > 0);
                prop_assert!(t.rounds.len() <= whole.rounds.len());
                prop_assert_eq!(&t.rounds[..], &whole.rounds[..t.rounds.len()]);
                for (i, r) in t.rounds.iter().enumerate() {
                    prop_assert_eq!(r.index, i);
                }
            }
            Err(StoreError::CorruptLog { .. }) => prop_assert!(!at_boundary),
            Err(StoreError::NotFound(_)) => prop_assert_eq!(cut, 0),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn appends_never_rewrite_history(case in 0usize..320, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let generator = SimGenerator::new("sim", ErrorModel::uniform(0.6, 0.2));
        let critic = SimCritic::new("sim");
        let refiner = Refiner::new(&generator, &critic, &store);
        let config = SessionConfig { max_iterations: 3, seed, ..SessionConfig::default() };
        let mut t = refiner.start(suite().cases[case].prompt.clone(), config).unwrap();
        let log = dir.path().join("sessions").join(format!("{}.log", t.session_id));
        let mut before = std::fs::read(&log).unwrap();
        let mut blobs: Vec<(String, Vec<u8>)> = Vec::new();
        while !t.is_complete() {
            t = refiner.step(&t).unwrap();
            let now = std::fs::read(&log).unwrap();
            prop_assert!(now.starts_with(&before));
            before = now;
            for r in &t.rounds {
                let bytes = store.get_blob(&r.image.blob_id).unwrap().1;
                if let Some((_, old)) = blobs.iter().find(|(id, _)| *id == r.image.blob_id) {
                    prop_assert_eq!(old, &bytes);
                } else {
                    blobs.push((r.image.blob_id.clone(), bytes));
                }
            }
        }
    }

    #[test]
    fn blinded_batches_hide_round_identity(seed in any::<u64>(), n in 1usize..6) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let generator = SimGenerator::new("sim", ErrorModel::uniform(0.6, 0.2));
        let critic = SimCritic::new("sim");
        let refiner = Refiner::new(&generator, &critic, &store);
        let mut ids = Vec::new();
        for case in suite().cases.iter().step_by(53).take(n) {
            let config = SessionConfig { max_iterations: 2, seed, ..SessionConfig::default() };
            ids.push(refiner.run(case.prompt.clone(), config).unwrap().session_id);
        }
        let out = dir.path().join("batch");
        let batch = store.export_annotation_batch(&ids, BatchLayout::BaseVsFinal, seed, &out).unwrap();
        prop_assert_eq!(batch.items.len(), n);
        let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
        prop_assert!(!mentions_round(&manifest), "{manifest}");
        let key: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("assignment.json")).unwrap()).unwrap();
        for (item, k) in batch.items.iter().zip(key["items"].as_array().unwrap()) {
            let traj = store.load_trajectory(k["session_id"].as_str().unwrap()).unwrap();
            for (image, round) in item.images.iter().zip(k["rounds"].as_array().unwrap()) {
                let round = round.as_u64().unwrap() as usize;
                prop_assert_eq!(&image.blob_id, &traj.rounds[round].image.blob_id);
            }
        }
        let again = store.export_annotation_batch(&ids, BatchLayout::BaseVsFinal, seed, &dir.path().join("again")).unwrap();
        prop_assert_eq!(again, batch);
    }
}

fn mentions_round(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Object(map) => map.iter().any(|(k, v)| k.contains("round") || mentions_round(v)),
        serde_json::Value::Array(items) => items.iter().any(mentions_round),
        _ => false,
    }
}
