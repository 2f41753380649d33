//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Criteria with stated runtime budgets assert them.
//!
//! Run with `cargo test -p augmed --test acceptance -- --nocapture` to see
//! the per-criterion lines.

mod common;

use std::panic::AssertUnwindSafe;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use augmed::corpus::Dataset;
use augmed::gating::{decide_parts, FallbackPolicy, GateConfig, RejectReason};
use augmed::generalist::{BackendConfig, FaultyMockConfig};
use augmed::metrics::{evaluate_pair, hallucination_rate, normalize, preservation_rate};
use augmed::pipeline::{augment_dataset, RunConfig, RunOutput};
use augmed::prompting::{build_prompt, builtin_template, TEMPLATE_EXPERT};
use augmed::synth::{generate, SynthSpec};
use augmed::weak_expert::{save_gazetteer, to_entity_set, EntitySet, Gazetteer, GazetteerEntry};
use augmed::Note;

fn criterion<F: FnOnce()>(number: u32, name: &str, body: F) {
    let result = std::panic::catch_unwind(AssertUnwindSafe(body));
    match &result {
        Ok(()) => println!("ACCEPTANCE {number:02} {name}: PASS"),
        Err(_) => println!("ACCEPTANCE {number:02} {name}: FAIL"),
    }
    if let Err(panic) = result {
        std::panic::resume_unwind(panic);
    }
}

fn assert_budget(elapsed: Duration, budget: Duration, what: &str) {
    assert!(
        elapsed <= budget,
        "{what} took {elapsed:?}, over the {budget:?} budget"
    );
}

/// Synthetic run scaffolding: corpus + gazetteer on disk + run config
/// pointing at temp output paths.
fn synth_run(
    dir: &tempfile::TempDir,
    n_notes: usize,
    entities_per_note: (usize, usize),
    seed: u64,
) -> (Dataset, Vec<GazetteerEntry>, RunConfig) {
    let spec = SynthSpec {
        n_notes,
        entities_per_note,
        seed,
        ..SynthSpec::default()
    };
    let out = generate(&spec).expect("synth generation");
    let gaz_path = dir.path().join("gazetteer.tsv");
    save_gazetteer(&out.gazetteer, &gaz_path).expect("write gazetteer");
    let config = RunConfig {
        gazetteer: gaz_path,
        records_path: dir.path().join("records.jsonl"),
        audit_path: dir.path().join("audit.jsonl"),
        report_path: dir.path().join("report.json"),
        ..RunConfig::default()
    };
    (out.dataset, out.gazetteer, config)
}

#[test]
fn acceptance_01_metric_identity_suite() {
    criterion(1, "metric identity vs set oracle", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
        let pool: Vec<String> = (0..30).map(|i| format!("entity {i}")).collect();
        for case in 0..1000 {
            let orig_len = rng.random_range(0..=12);
            let orig: Vec<String> = pool.choose_multiple(&mut rng, orig_len).cloned().collect();
            let aug_len = rng.random_range(0..=12);
            let aug: Vec<String> = pool.choose_multiple(&mut rng, aug_len).cloned().collect();
            let orig_set = EntitySet::from_surfaces(orig.iter());
            let aug_set = EntitySet::from_surfaces(aug.iter());
            let pr = preservation_rate(&orig_set, &aug_set);
            let hr = hallucination_rate(&orig_set, &aug_set);
            assert_eq!(
                pr,
                common::set_oracle::preservation_rate(&orig, &aug),
                "case {case}"
            );
            assert_eq!(
                hr,
                common::set_oracle::hallucination_rate(&orig, &aug),
                "case {case}"
            );
            assert!((0.0..=1.0).contains(&pr));
            assert!(hr >= 0.0);
            assert_eq!(preservation_rate(&orig_set, &orig_set), 1.0);
            assert_eq!(hallucination_rate(&orig_set, &orig_set), 0.0);

            // monotonicity: adding an original member never hurts, adding
            // an outsider never helps
            if let Some(member) = orig.first() {
                let mut grown = aug_set.clone();
                grown.insert(member);
                assert!(preservation_rate(&orig_set, &grown) >= pr);
                assert_eq!(hallucination_rate(&orig_set, &grown), hr);
            }
            let mut polluted = aug_set.clone();
            polluted.insert("outsider entity");
            assert_eq!(preservation_rate(&orig_set, &polluted), pr);
            assert!(hallucination_rate(&orig_set, &polluted) >= hr);
        }
        assert_budget(
            started.elapsed(),
            Duration::from_secs(5),
            "metric identity suite",
        );
    });
}

#[test]
fn acceptance_02_matcher_oracle_equivalence() {
    criterion(2, "matcher equals naive leftmost-longest scan", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xB2);
        const TEXT_ALPHABET: &[char] = &[
            'a', 'b', 'c', 'A', 'B', 'C', '1', '2', ' ', ' ', '.', ',', '-', '\n', '\t',
        ];
        const PATTERN_ALPHABET: &[char] = &['a', 'b', 'c', '1', '2'];
        let mut mismatches = 0usize;
        for case in 0..1000 {
            let text_len = rng.random_range(0..=200);
            let text: String = (0..text_len)
                .map(|_| *TEXT_ALPHABET.choose(&mut rng).unwrap())
                .collect();
            let n_patterns = rng.random_range(1..=20);
            let patterns: Vec<String> = (0..n_patterns)
                .map(|_| {
                    let words = rng.random_range(1..=3);
                    (0..words)
                        .map(|_| {
                            let len = rng.random_range(1..=3);
                            (0..len)
                                .map(|_| *PATTERN_ALPHABET.choose(&mut rng).unwrap())
                                .collect::<String>()
                        })
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();

            let entries: Vec<GazetteerEntry> = patterns
                .iter()
                .map(|p| GazetteerEntry::new(p.clone(), "x"))
                .collect();
            let gazetteer = Gazetteer::compile(&entries).expect("compile");
            let got: Vec<(usize, usize)> = gazetteer
                .extract(&text)
                .iter()
                .map(|s| (s.start, s.end))
                .collect();
            let want = common::scan_oracle::extract(&text, &patterns);
            if got != want {
                mismatches += 1;
                eprintln!(
                    "case {case}: text {text:?} patterns {patterns:?}\n got {got:?}\nwant {want:?}"
                );
            }
        }
        assert_eq!(mismatches, 0, "matcher diverged from the oracle");
        assert_budget(
            started.elapsed(),
            Duration::from_secs(10),
            "matcher oracle equivalence",
        );
    });
}

#[test]
fn acceptance_03_preserving_mock_end_to_end() {
    criterion(
        3,
        "preserving mock accepts everything at the strict gate",
        || {
            let started = Instant::now();
            let dir = tempfile::tempdir().unwrap();
            let (dataset, _gazetteer, mut config) = synth_run(&dir, 200, (1, 5), 0x3333);
            config.backend = BackendConfig::MockPreserving;
            config.gate = GateConfig {
                tau_pr: 1.0,
                tau_hr: 0.0,
                ..GateConfig::default()
            };
            let output = augment_dataset(&dataset, &config).expect("run");
            assert_eq!(output.records.len(), 200);
            assert_eq!(output.report.accept_rate, 1.0);
            let quality = output.report.quality.as_ref().expect("quality report");
            assert_eq!(quality.n, 200);
            assert_eq!(quality.mean_pr, 1.0);
            assert_eq!(quality.mean_hr, 0.0);
            assert_budget(
                started.elapsed(),
                Duration::from_secs(30),
                "preserving-mock run",
            );
        },
    );
}

#[test]
fn acceptance_04_faulty_mock_calibration() {
    criterion(
        4,
        "faulty mock reproduces the deletion/injection profile",
        || {
            let started = Instant::now();
            let dir = tempfile::tempdir().unwrap();
            // k = 4 entities per note; floor(0.51 * 4) = 2 deletions and
            // floor(0.75 * 4) = 3 injections per note
            let (dataset, _gazetteer, mut config) = synth_run(&dir, 300, (4, 4), 0x4444);
            config.backend = BackendConfig::MockFaulty(FaultyMockConfig {
                deletion_fraction: 0.51,
                injection_fraction: 0.75,
                distractors: Vec::new(),
            });
            // permissive gate so the report aggregates every candidate
            config.gate = GateConfig {
                tau_pr: 0.0,
                tau_hr: 1000.0,
                max_attempts: 1,
                ..GateConfig::default()
            };
            let output = augment_dataset(&dataset, &config).expect("run");
            let quality = output.report.quality.as_ref().expect("quality report");
            assert_eq!(quality.n, 300);
            assert!(
                (quality.mean_pr - 0.49).abs() <= 0.05,
                "mean PR {} outside 0.49 +/- 0.05",
                quality.mean_pr
            );
            assert!(
                (quality.mean_hr - 0.75).abs() <= 0.05,
                "mean HR {} outside 0.75 +/- 0.05",
                quality.mean_hr
            );
            assert_budget(
                started.elapsed(),
                Duration::from_secs(30),
                "faulty-mock calibration run",
            );
        },
    );
}

#[test]
fn acceptance_05_gate_boundaries_and_monotonicity() {
    criterion(5, "gate boundaries inclusive, thresholds monotone", || {
        let empty = EntitySet::new();
        let gate = GateConfig {
            tau_pr: 0.9,
            tau_hr: 0.1,
            ..GateConfig::default()
        };
        // boundary equality passes on both sides
        assert!(decide_parts(0.9, 0.05, &empty, &gate).accepted);
        assert!(decide_parts(0.95, 0.1, &empty, &gate).accepted);
        // one-sided violations carry the right reason
        let low_pr = decide_parts(0.89, 0.05, &empty, &gate);
        assert!(!low_pr.accepted);
        assert_eq!(low_pr.reasons, vec![RejectReason::PrBelowThreshold]);
        let high_hr = decide_parts(0.95, 0.11, &empty, &gate);
        assert!(!high_hr.accepted);
        assert_eq!(high_hr.reasons, vec![RejectReason::HrAboveThreshold]);

        let mut rng = ChaCha8Rng::seed_from_u64(0x55);
        for _ in 0..200 {
            let pr: f64 = rng.random_range(0.0..=1.0);
            let hr: f64 = rng.random_range(0.0..=2.0);
            let tau_pr: f64 = rng.random_range(0.0..=1.0);
            let tau_hr: f64 = rng.random_range(0.0..=2.0);
            let strict = GateConfig {
                tau_pr,
                tau_hr,
                ..GateConfig::default()
            };
            let loose = GateConfig {
                tau_pr: (tau_pr - rng.random_range(0.0..=1.0)).max(0.0),
                tau_hr: tau_hr + rng.random_range(0.0..=1.0),
                ..GateConfig::default()
            };
            let strict_decision = decide_parts(pr, hr, &empty, &strict);
            assert_eq!(strict_decision.accepted, strict_decision.reasons.is_empty());
            if strict_decision.accepted {
                assert!(
                    decide_parts(pr, hr, &empty, &loose).accepted,
                    "loosening ({tau_pr}, {tau_hr}) flipped an accept"
                );
            }
        }
    });
}

#[test]
fn acceptance_06_run_determinism() {
    criterion(
        6,
        "identical config and seed give byte-identical outputs",
        || {
            let dir = tempfile::tempdir().unwrap();
            let (dataset, _gazetteer, mut config) = synth_run(&dir, 40, (1, 4), 0x6666);
            config.backend = BackendConfig::MockFaulty(FaultyMockConfig {
                deletion_fraction: 0.3,
                injection_fraction: 0.4,
                distractors: Vec::new(),
            });
            config.base_seed = 97;
            config.parallelism = 4;

            // two runs of the identical config must write identical bytes
            let mut snapshots: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = Vec::new();
            for _ in 0..2 {
                let output = augment_dataset(&dataset, &config).expect("run");
                output.write_files().expect("write outputs");
                snapshots.push((
                    std::fs::read(&config.records_path).unwrap(),
                    std::fs::read(&config.audit_path).unwrap(),
                    std::fs::read(&config.report_path).unwrap(),
                ));
            }
            assert_eq!(snapshots[0].0, snapshots[1].0, "records differ across runs");
            assert_eq!(
                snapshots[0].1, snapshots[1].1,
                "audit logs differ across runs"
            );
            assert_eq!(snapshots[0].2, snapshots[1].2, "reports differ across runs");

            // worker count must not leak into results either (the config echo
            // records it, so compare with that one field pinned)
            let mut variants: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = Vec::new();
            for parallelism in [1usize, 8] {
                config.parallelism = parallelism;
                let output = augment_dataset(&dataset, &config).expect("run");
                let mut report = output.report.clone();
                report.config.parallelism = 0;
                let normalized = RunOutput {
                    records: output.records,
                    audit: output.audit,
                    report,
                };
                normalized.write_files().expect("write outputs");
                variants.push((
                    std::fs::read(&config.records_path).unwrap(),
                    std::fs::read(&config.audit_path).unwrap(),
                    std::fs::read(&config.report_path).unwrap(),
                ));
            }
            assert_eq!(variants[0], variants[1], "results depend on worker count");
        },
    );
}

#[test]
fn acceptance_07_audit_replay() {
    criterion(
        7,
        "replaying logged scores reproduces logged decisions",
        || {
            let dir = tempfile::tempdir().unwrap();
            let (dataset, gazetteer, mut config) = synth_run(&dir, 60, (1, 6), 0x7777);
            config.backend = BackendConfig::MockFaulty(FaultyMockConfig {
                deletion_fraction: 0.3,
                injection_fraction: 0.3,
                distractors: Vec::new(),
            });
            // require one concrete lexicon entity so the third reject reason is
            // exercised too
            config.gate.required_entities =
                EntitySet::from_surfaces([gazetteer[0].surface.as_str()]);
            let output = augment_dataset(&dataset, &config).expect("run");

            let mut replayed = 0usize;
            for event in &output.audit {
                let (Some(pr), Some(hr), Some(e_aug), Some(accepted)) =
                    (event.pr, event.hr, event.e_aug.as_ref(), event.accepted)
                else {
                    panic!("unexpected error event in a mock run: {event:?}");
                };
                let e_aug = EntitySet::from_surfaces(e_aug.iter());
                let decision = decide_parts(pr, hr, &e_aug, &output.report.config.gate);
                assert_eq!(decision.accepted, accepted, "replay diverged for {event:?}");
                assert_eq!(
                    decision.reasons, event.reasons,
                    "replay reasons diverged for {event:?}"
                );
                replayed += 1;
            }
            assert!(replayed > 0);

            for record in &output.records {
                let events = output
                    .audit
                    .iter()
                    .filter(|e| e.note_id == record.source_id)
                    .count();
                assert_eq!(
                    events as u32, record.attempts,
                    "event count != attempts for {}",
                    record.id
                );
            }
        },
    );
}

#[test]
fn acceptance_08_label_and_fallback_invariants() {
    criterion(
        8,
        "labels are copied and exhausted notes fall back to the original",
        || {
            let dir = tempfile::tempdir().unwrap();
            let (dataset, _gazetteer, mut config) = synth_run(&dir, 50, (1, 4), 0x8888);
            config.backend = BackendConfig::MockFaulty(FaultyMockConfig {
                deletion_fraction: 1.0,
                injection_fraction: 0.0,
                distractors: Vec::new(),
            });
            config.gate.fallback = FallbackPolicy::CopyOriginal;
            let output = augment_dataset(&dataset, &config).expect("run");
            assert_eq!(output.records.len(), dataset.len());
            for (record, note) in output.records.iter().zip(&dataset.notes) {
                assert_eq!(record.source_id, note.id);
                assert_eq!(record.label, note.label, "label changed for {}", note.id);
                assert!(record.fallback, "expected fallback for {}", note.id);
                assert!(!record.accepted);
                assert_eq!(
                    record.text, note.text,
                    "fallback text must equal the original"
                );
            }

            // labels are also preserved on accepted rewrites
            let (dataset, _gazetteer, config) = synth_run(&dir, 30, (1, 4), 0x8889);
            let output = augment_dataset(&dataset, &config).expect("run");
            for (record, note) in output.records.iter().zip(&dataset.notes) {
                assert_eq!(record.label, note.label);
            }
        },
    );
}

#[test]
fn acceptance_09_prompt_fidelity() {
    criterion(
        9,
        "expert prompt carries the verbatim instructions and constraints",
        || {
            let template = builtin_template(TEMPLATE_EXPERT).expect("builtin expert template");
            let gazetteer = Gazetteer::compile(&[
                GazetteerEntry::new("metformin", "medication"),
                GazetteerEntry::new("type 2 diabetes", "disease_disorder"),
                GazetteerEntry::new("500 mg", "measurement"),
            ])
            .unwrap();
            let note = Note {
                id: "n1".into(),
                text: "Started metformin 500 mg for type 2 diabetes.".into(),
                label: augmed::Label::from("1"),
                meta: None,
            };
            let entities = to_entity_set(&gazetteer.extract(&note.text));
            assert_eq!(entities.len(), 3);
            let rendered = build_prompt(&note, &entities, &template).expect("render");

            let combined = format!("{}\n{}", rendered.system, rendered.user);
            assert!(combined.contains("preserve all medical entities exactly as they appear"));
            assert!(combined.contains("Do not list the entities separately"));
            assert!(rendered.system.contains("complete medical accuracy"));
            for surface in entities.iter() {
                assert!(
                    rendered.user.contains(surface),
                    "constraint {surface:?} missing from prompt"
                );
            }
            assert!(rendered.user.contains(&note.text));
        },
    );
}

#[test]
fn acceptance_10_preference_pair_validity() {
    criterion(10, "exported pairs dominate and re-score exactly", || {
        let dir = tempfile::tempdir().unwrap();
        let (dataset, gazetteer_entries, mut config) = synth_run(&dir, 40, (2, 6), 0xAAAA);
        let gazetteer = Gazetteer::compile(&gazetteer_entries).unwrap();

        config.gate = GateConfig {
            tau_pr: 1.0,
            tau_hr: 0.0,
            ..GateConfig::default()
        };
        let expert_run = augment_dataset(&dataset, &config).expect("expert run");

        config.template = "naive".into();
        config.backend = BackendConfig::MockFaulty(FaultyMockConfig {
            deletion_fraction: 0.5,
            injection_fraction: 0.5,
            distractors: Vec::new(),
        });
        config.gate = GateConfig {
            tau_pr: 0.0,
            tau_hr: 1000.0,
            max_attempts: 1,
            ..GateConfig::default()
        };
        config.records_path = dir.path().join("naive-records.jsonl");
        config.audit_path = dir.path().join("naive-audit.jsonl");
        config.report_path = dir.path().join("naive-report.json");
        let naive_run = augment_dataset(&dataset, &config).expect("naive run");

        let build = augmed::prefpairs::build_pairs(
            &dataset,
            &expert_run.records,
            &naive_run.records,
            &gazetteer,
        )
        .expect("build pairs");
        assert!(!build.pairs.is_empty(), "no pairs were built");
        assert_eq!(build.pairs.len() + build.skipped_dominance, dataset.len());

        let pairs_path = dir.path().join("pairs.jsonl");
        augmed::prefpairs::export_pairs(&build.pairs, &pairs_path).expect("export");
        let reloaded = augmed::prefpairs::load_pairs(&pairs_path).expect("reload");
        assert_eq!(reloaded, build.pairs);

        let notes_by_id: std::collections::BTreeMap<&str, &Note> =
            dataset.notes.iter().map(|n| (n.id.as_str(), n)).collect();
        for pair in &reloaded {
            assert!(
                pair.dominance_holds(),
                "dominance broken for {}",
                pair.note_id
            );
            let note = notes_by_id[pair.note_id.as_str()];
            let chosen = evaluate_pair(&note.text, &pair.chosen, &gazetteer).unwrap();
            let rejected = evaluate_pair(&note.text, &pair.rejected, &gazetteer).unwrap();
            assert_eq!(chosen.pr, pair.chosen_pr);
            assert_eq!(chosen.hr, pair.chosen_hr);
            assert_eq!(rejected.pr, pair.rejected_pr);
            assert_eq!(rejected.hr, pair.rejected_hr);
            // the pair prompt is the naive rendering over the source note
            assert!(pair.prompt.contains(&note.text));
            for surface in chosen.e_orig.iter() {
                assert_eq!(
                    normalize(surface),
                    surface,
                    "entity sets must stay normalized"
                );
            }
        }
    });
}
