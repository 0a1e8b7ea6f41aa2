//! Deterministic stand-in for the published dataset: 71 flaky and 71
//! non-flaky cases over the twelve studied repositories, with fix commits and
//! file payloads so that code context is recovered by the real pipeline.
//!
//! Report texts carry tokens understood by
//! [`MarkerMockProvider`](crate::inference::MarkerMockProvider), so an
//! offline experiment produces known, non-trivial metrics.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::codectx::{build_code_context, ContextLevel, ContextOptions};
use crate::corpus::{ArtifactKind, CaseArtifact, Comment, CommitRecord, PayloadKey, RepositoryRef, Snapshot};
use crate::evaluator::PUBLISHED_REPO_TABLE;
use crate::inference::{CORRUPT_MARKER, FLAKY_MARKER, ROOT_CAUSE_HINT};
use crate::store::{DatasetCase, LabeledCase, Provenance, ProvenanceSource};
use crate::taxonomy::{FixPattern, RootCause, RootCauseClass};

pub const DEFAULT_SEED: u64 = 20_250_101;

/// Flaky cases per repository in the replica. The published rows sum to
/// 70 against a stated total of 71; the extra case goes to `qiskit`.
pub const REPLICA_FLAKY_PER_REPO: [(&str, &str, u64); 12] = [
    ("Qiskit", "qiskit", 30),
    ("Qiskit", "qiskit-aer", 3),
    ("Qiskit", "qiskit-ibm-runtime", 3),
    ("Qiskit", "qiskit-ibm-provider", 8),
    ("Qiskit Community", "qiskit-nature", 1),
    ("Qiskit Community", "qiskit-experiments", 3),
    ("Qiskit Community", "qiskit-machine-learning", 4),
    ("Microsoft", "azure-quantum-python", 3),
    ("Microsoft", "QuantumLibraries", 4),
    ("Microsoft", "Quantum", 4),
    ("TensorFlow", "quantum", 1),
    ("NetKet", "netket", 7),
];

const QSHARP_REPOS: [&str; 2] = ["QuantumLibraries", "Quantum"];

/// How the fix of a flaky case touches code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixShape {
    /// Python change inside a function: both context levels present.
    Method,
    /// Python change at module level: no enclosing function.
    ModuleLevel,
    /// Configuration or requirements change.
    Config,
    /// Q# change.
    QSharp,
    /// No fix commit at all.
    NoCode,
}

pub struct Replica {
    pub snapshot: Snapshot,
    pub dataset: Vec<DatasetCase>,
    /// Closed issue counts keyed by `platform/name`.
    pub repo_totals: BTreeMap<String, u64>,
    /// Fix shape of every flaky case.
    pub shapes: BTreeMap<crate::corpus::CaseId, FixShape>,
}

struct LabelSpec {
    causes: Vec<RootCause>,
    fixes: Vec<FixPattern>,
}

fn spec(pairs: &[(RootCause, FixPattern)]) -> LabelSpec {
    LabelSpec {
        causes: pairs.iter().map(|p| p.0).collect(),
        fixes: pairs.iter().map(|p| p.1).collect(),
    }
}

fn class(c: RootCauseClass) -> RootCause {
    RootCause::Class(c)
}

/// The 71 label sets: 73 (cause, fix) pairs, two cases carrying two.
fn label_specs() -> Vec<LabelSpec> {
    use FixPattern as F;
    use RootCauseClass::*;
    let mut out = Vec::new();
    let mut push = |n: usize, c: RootCause, f: FixPattern| {
        for _ in 0..n {
            out.push(spec(&[(c, f)]));
        }
    };
    push(11, class(Randomness), F::FixSeed);
    push(2, class(Randomness), F::Others);
    push(5, class(SoftwareEnvironment), F::AlterSoftwareEnv);
    push(3, class(SoftwareEnvironment), F::Others);
    push(4, class(MultiThreading), F::MakeSingleThread);
    push(5, class(MultiThreading), F::Others);
    push(4, class(FloatingPoint), F::AdjustTolerance);
    push(2, class(FloatingPoint), F::Others);
    push(4, class(Visualization), F::Others);
    push(4, class(UnhandledExceptions), F::AddExceptionHandler);
    push(1, class(Network), F::Synchronize);
    push(4, class(Network), F::Others);
    push(1, class(UnorderedCollection), F::UseKeysForOrder);
    push(12, class(Others), F::Others);
    push(7, RootCause::Unknown, F::Others);
    out.push(spec(&[
        (class(Randomness), F::FixSeed),
        (class(FloatingPoint), F::AdjustTolerance),
    ]));
    out.push(spec(&[(class(MultiThreading), F::Others), (class(Network), F::Others)]));
    out
}

fn first_index(specs: &[LabelSpec], taken: &[Option<FixShape>], pred: impl Fn(&LabelSpec) -> bool) -> usize {
    (0..specs.len())
        .find(|&i| taken[i].is_none() && pred(&specs[i]))
        .expect("label table has room for every shape")
}

fn is(spec: &LabelSpec, cause: RootCause, fix: FixPattern) -> bool {
    spec.causes.len() == 1 && spec.causes[0] == cause && spec.fixes[0] == fix
}

/// 44 method-level fixes, 8 Q#, 8 config, 4 module-level, 7 without code.
fn assign_shapes(specs: &[LabelSpec]) -> Vec<FixShape> {
    use FixPattern as F;
    use RootCauseClass::*;
    let mut shapes: Vec<Option<FixShape>> = vec![None; specs.len()];
    let take = |shapes: &mut Vec<Option<FixShape>>, n: usize, shape: FixShape, cause: RootCause, fix: FixPattern| {
        for _ in 0..n {
            let i = first_index(specs, shapes, |s| is(s, cause, fix));
            shapes[i] = Some(shape);
        }
    };
    take(&mut shapes, 7, FixShape::NoCode, RootCause::Unknown, F::Others);
    take(
        &mut shapes,
        5,
        FixShape::Config,
        class(SoftwareEnvironment),
        F::AlterSoftwareEnv,
    );
    take(
        &mut shapes,
        3,
        FixShape::Config,
        class(MultiThreading),
        F::MakeSingleThread,
    );
    take(&mut shapes, 4, FixShape::QSharp, class(Others), F::Others);
    take(&mut shapes, 2, FixShape::QSharp, class(Randomness), F::Others);
    take(&mut shapes, 2, FixShape::QSharp, class(FloatingPoint), F::Others);
    take(&mut shapes, 2, FixShape::ModuleLevel, class(Visualization), F::Others);
    take(
        &mut shapes,
        2,
        FixShape::ModuleLevel,
        class(SoftwareEnvironment),
        F::Others,
    );
    shapes.into_iter().map(|s| s.unwrap_or(FixShape::Method)).collect()
}

fn sha(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())[..40].to_string()
}

fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 3, 1, 9, 0, 0).unwrap()
}

fn topic(cause: RootCause) -> (&'static str, &'static str) {
    use RootCauseClass::*;
    match cause.class() {
        Some(Randomness) => (
            "random circuit",
            "The generated circuits differ between runs and the comparison sometimes fails.",
        ),
        Some(FloatingPoint) => (
            "numerical tolerance",
            "The assertion compares floats with a tolerance of 1e-5 and occasionally misses it.",
        ),
        Some(SoftwareEnvironment) => (
            "dependency version",
            "Only fails on the CI runner with the latest numpy release installed.",
        ),
        Some(MultiThreading) => (
            "parallel jobs",
            "Several worker processes race on the same resource and the job errors out.",
        ),
        Some(Visualization) => (
            "image comparison",
            "The rendered figure differs by a few pixels from the reference image.",
        ),
        Some(UnhandledExceptions) => (
            "intermittent exception",
            "An exception escapes from a retry helper every few runs.",
        ),
        Some(Network) => (
            "remote backend",
            "The request to the remote service times out now and then.",
        ),
        Some(UnorderedCollection) => ("dictionary ordering", "The result depends on set iteration order."),
        Some(Others) => (
            "sporadic failure",
            "The test failed on one CI run and passed after a rerun.",
        ),
        None => (
            "intermittent CI failure",
            "We have seen this fail a couple of times but could not find the cause.",
        ),
    }
}

const PLAIN_TOPICS: [(&str, &str); 12] = [
    (
        "Transpiler drops barrier before measurement",
        "Running transpile on a circuit with a barrier removes it at optimization level 3.",
    ),
    (
        "Add support for custom gate labels in drawer",
        "It would be useful to pass a label through to the text drawer.",
    ),
    (
        "Docs: broken link in installation guide",
        "The link to the conda instructions returns 404.",
    ),
    (
        "Incorrect qubit count after circuit composition",
        "compose with a smaller circuit reports the wrong number of qubits.",
    ),
    (
        "Deprecation warning from scipy.sparse",
        "Importing the module emits a deprecation warning with the newest scipy.",
    ),
    (
        "Job status not refreshed after cancel",
        "After cancelling, status still reports RUNNING until a manual refresh.",
    ),
    (
        "Pulse schedule duration off by one sample",
        "The duration reported for aligned schedules is one sample too long.",
    ),
    (
        "Feature request: expose optimizer callback",
        "Please allow passing a callback to observe optimizer iterations.",
    ),
    (
        "Serialization of parameter expressions fails",
        "Dumping a circuit with a bound parameter expression raises TypeError.",
    ),
    (
        "Wrong sign in expectation value helper",
        "The helper returns -<Z> for single qubit states.",
    ),
    (
        "Simulator ignores noise model on reset",
        "Reset instructions are executed ideally even with a noise model.",
    ),
    (
        "Typo in error message of backend lookup",
        "The message says 'backed' instead of 'backend'.",
    ),
];

fn comment(author: &str, at: DateTime<Utc>, body: impl Into<String>) -> Comment {
    Comment {
        author: author.into(),
        created_at: at,
        body: body.into(),
    }
}

struct Texts {
    description: String,
    comments: Vec<Comment>,
    code_marker_in_method: bool,
    code_marker_in_file: bool,
}

struct Repo {
    repo: RepositoryRef,
    next_number: u64,
}

fn python_test_file(
    func: &str,
    seeded: bool,
    marker_in_method: bool,
    marker_in_file: bool,
    corrupt_rq5: bool,
) -> String {
    let call = if seeded {
        "random_circuit(num_qubits[0], depth, seed=4200)"
    } else {
        "random_circuit(num_qubits[0], depth)"
    };
    let mut s = String::from("import unittest\n\nfrom qiskit.circuit.random import random_circuit\n\n");
    if marker_in_file {
        s.push_str(&format!("# {FLAKY_MARKER}\n"));
    }
    if corrupt_rq5 {
        s.push_str(&format!("# {CORRUPT_MARKER}rq5\n"));
    }
    s.push_str("\nclass TestCase(unittest.TestCase):\n    def setUp(self):\n        self.depth = 3\n\n");
    s.push_str(&format!("    def {func}(self, num_qubits=(2, 3)):\n"));
    if marker_in_method {
        s.push_str(&format!("        # {FLAKY_MARKER}\n"));
    }
    s.push_str(&format!(
        "        depth = self.depth\n        first_circuit = {call}\n        self.assertEqual(first_circuit.num_qubits, num_qubits[0])\n\n"
    ));
    s.push_str("    def test_unrelated(self):\n        self.assertTrue(True)\n");
    s
}

/// Listing-style test: the seedless `random_circuit` calls inside
/// `test_append_circuit`.
pub fn listing_one_before() -> String {
    "import unittest\n\nfrom qiskit.circuit.random import random_circuit\n\n\nclass TestCircuitOperations(unittest.TestCase):\n    def test_compose_circuit(self):\n        self.assertTrue(True)\n\n    def test_append_circuit(self, num_qubits=(2, 3, 4)):\n        depth = 3\n        first_circuit = random_circuit(num_qubits[0], depth)\n        total = first_circuit.copy()\n        for num in num_qubits[1:]:\n            circuit = random_circuit(num, depth)\n            total.append(circuit, range(num))\n        self.assertEqual(total.num_qubits, num_qubits[-1])\n".to_string()
}

pub fn listing_one_after() -> String {
    listing_one_before().replace("depth)", "depth, seed=4200)")
}

fn module_level_file(marker: bool, before: bool) -> String {
    let tol = if before { "1e-5" } else { "1e-4" };
    let mut s = format!("import numpy as np\n\nATOL = {tol}\n");
    if marker {
        s.push_str(&format!("# {FLAKY_MARKER}\n"));
    }
    s.push_str("\n\ndef check_close(a, b):\n    return np.allclose(a, b, atol=ATOL)\n");
    s
}

fn tox_file(before: bool, corrupt_rq5: bool) -> String {
    let jobs = if before { " -j auto" } else { "" };
    let mut s = String::from("[tox]\nenvlist = py39, py310, docs\n\n");
    if corrupt_rq5 {
        s.push_str(&format!("# {CORRUPT_MARKER}rq5\n"));
    }
    s.push_str(&format!(
        "[testenv:docs]\ncommands = sphinx-build -W -b html{jobs} docs/ docs/_build/html {{posargs}}\n"
    ));
    s
}

fn requirements_file(before: bool) -> String {
    let mut s = String::from("scipy>=1.5\n");
    if before {
        s.push_str("numpy!=1.19\n");
    } else {
        s.push_str("numpy\n");
    }
    s.push_str("matplotlib>=3.3\n");
    s
}

fn qsharp_file(before: bool) -> String {
    let tol = if before { "1e-5" } else { "1e-3" };
    format!(
        "namespace Microsoft.Quantum.Tests {{\n    open Microsoft.Quantum.Diagnostics;\n\n    @Test(\"QuantumSimulator\")\n    operation CheckEstimate() : Unit {{\n        let estimate = EstimateFrequency(PrepareState, Measure, 1000);\n        NearEqualityFactD(estimate, 0.5, {tol});\n    }}\n}}\n"
    )
}

/// Builds the replica from `seed`. Labels, fix shapes and per-repository
/// counts are fixed; texts, marker placement and numbering vary with the seed.
pub fn build_replica(seed: u64) -> Replica {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = base_time();
    let mut snapshot = Snapshot::empty(t0 + Duration::days(400));
    let mut repos: BTreeMap<&str, Repo> = BTreeMap::new();
    for (platform, name, _) in REPLICA_FLAKY_PER_REPO {
        let repo = RepositoryRef::new(platform, name);
        snapshot.repositories.push(repo.clone());
        repos.insert(
            name,
            Repo {
                repo,
                next_number: 1000,
            },
        );
    }

    let specs = label_specs();
    let shapes = assign_shapes(&specs);

    // repository slots for flaky cases; Q# fixes go to the Q# repositories
    let mut qsharp_slots: Vec<&str> = QSHARP_REPOS.iter().flat_map(|r| [*r; 4]).collect();
    let mut python_slots: Vec<&str> = REPLICA_FLAKY_PER_REPO
        .iter()
        .filter(|(_, n, _)| !QSHARP_REPOS.contains(n))
        .flat_map(|(_, n, k)| std::iter::repeat_n(*n, *k as usize))
        .collect();
    // the listing case is pinned to qiskit below
    let pinned = python_slots.iter().position(|n| *n == "qiskit").unwrap();
    python_slots.remove(pinned);
    python_slots.shuffle(&mut rng);
    let mut provenance: Vec<ProvenanceSource> = std::iter::repeat_n(ProvenanceSource::OriginalDataset, 46)
        .chain(std::iter::repeat_n(ProvenanceSource::ExpansionIter(1), 15))
        .chain(std::iter::repeat_n(ProvenanceSource::ExpansionIter(2), 10))
        .collect();
    provenance.shuffle(&mut rng);
    qsharp_slots.shuffle(&mut rng);

    // listing case: first plain Randomness / Fix Seed method fix
    let listing = (0..specs.len())
        .find(|&i| {
            shapes[i] == FixShape::Method && is(&specs[i], class(RootCauseClass::Randomness), FixPattern::FixSeed)
        })
        .expect("a seeded fix exists");
    // unparseable RQ5 reply: planted in the tox.ini of one config fix
    let corrupt_rq5 = (0..specs.len())
        .find(|&i| shapes[i] == FixShape::Config && specs[i].causes[0] == class(RootCauseClass::MultiThreading))
        .expect("a tox.ini fix exists");

    // a few cases get no comment thread at all: 6 method-level, 2 others
    let method_idx: Vec<usize> = (0..specs.len())
        .filter(|&i| shapes[i] == FixShape::Method && i != listing)
        .collect();
    let other_code_idx: Vec<usize> = (0..specs.len())
        .filter(|&i| {
            matches!(shapes[i], FixShape::Config | FixShape::ModuleLevel | FixShape::QSharp) && i != corrupt_rq5
        })
        .collect();
    let mut silent: Vec<usize> = method_idx.choose_multiple(&mut rng, 6).copied().collect();
    silent.extend(other_code_idx.choose_multiple(&mut rng, 2).copied());
    // unparseable RQ4 reply: planted in a comment of one method-level fix
    let corrupt_rq4 = *method_idx.iter().find(|i| !silent.contains(i)).unwrap();

    let mut dataset_inputs: Vec<(CaseArtifact, bool, &LabelSpec, ProvenanceSource)> = Vec::new();
    let mut shape_by_id = BTreeMap::new();
    let mut python_iter = python_slots.into_iter();
    let mut qsharp_iter = qsharp_slots.into_iter();

    for (i, spec) in specs.iter().enumerate() {
        let shape = shapes[i];
        let repo_name = if i == listing {
            "qiskit"
        } else if shape == FixShape::QSharp {
            qsharp_iter.next().unwrap()
        } else {
            python_iter.next().unwrap()
        };
        let r = repos.get_mut(repo_name).unwrap();
        let number = if i == listing {
            5217
        } else {
            r.next_number += rng.gen_range(3..40);
            r.next_number
        };
        let repo = r.repo.clone();
        let opened = t0 + Duration::hours(i as i64 * 53);

        let texts = flaky_texts(&mut rng, spec, i, shape, silent.contains(&i), i == corrupt_rq4, opened);
        let (title_topic, _) = topic(spec.causes[0]);
        let title = if i == listing {
            "test_append_circuit fails randomly".to_string()
        } else {
            format!("{} test fails intermittently ({title_topic})", repo.name)
        };
        let mut case = CaseArtifact::new(&repo, ArtifactKind::Issue, number, title, texts.description.clone());
        case.comments = texts.comments;

        if shape != FixShape::NoCode {
            let fix = sha(&[&case.id.to_string(), "fix"]);
            let parent = sha(&[&case.id.to_string(), "parent"]);
            let func = if i == listing {
                "test_append_circuit".to_string()
            } else {
                format!("test_case_{i}")
            };
            let (path, before, after) = match shape {
                FixShape::Method if i == listing => (
                    "test/python/circuit/test_circuit_operations.py".to_string(),
                    listing_one_before(),
                    listing_one_after(),
                ),
                FixShape::Method => (
                    format!("test/python/test_case_{i}.py"),
                    python_test_file(
                        &func,
                        false,
                        texts.code_marker_in_method,
                        texts.code_marker_in_file,
                        false,
                    ),
                    python_test_file(
                        &func,
                        true,
                        texts.code_marker_in_method,
                        texts.code_marker_in_file,
                        false,
                    ),
                ),
                FixShape::ModuleLevel => (
                    format!("test/utils_{i}.py"),
                    module_level_file(texts.code_marker_in_file, true),
                    module_level_file(texts.code_marker_in_file, false),
                ),
                FixShape::Config if spec.causes[0] == class(RootCauseClass::MultiThreading) => (
                    "tox.ini".to_string(),
                    tox_file(true, i == corrupt_rq5),
                    tox_file(false, i == corrupt_rq5),
                ),
                FixShape::Config => (
                    "requirements.txt".to_string(),
                    requirements_file(true),
                    requirements_file(false),
                ),
                FixShape::QSharp => (format!("Tests/Estimates{i}.qs"), qsharp_file(true), qsharp_file(false)),
                FixShape::NoCode => unreachable!(),
            };
            snapshot.commits.push(CommitRecord {
                repo: repo.slug(),
                sha: fix.clone(),
                parents: vec![parent.clone()],
                committed_at: opened + Duration::days(3),
                files: vec![path.clone()],
            });
            snapshot
                .file_payloads
                .insert(PayloadKey::new(&parent, &path), before.into_bytes());
            snapshot
                .file_payloads
                .insert(PayloadKey::new(&fix, &path), after.into_bytes());
            case.linked_commits.push(fix);
        }
        shape_by_id.insert(case.id.clone(), shape);
        dataset_inputs.push((case, true, spec, provenance[i]));
    }

    let repo_names: Vec<&str> = REPLICA_FLAKY_PER_REPO.iter().map(|r| r.1).collect();
    let empty = LabelSpec {
        causes: Vec::new(),
        fixes: Vec::new(),
    };
    for j in 0..71usize {
        let name = repo_names[j % repo_names.len()];
        let r = repos.get_mut(name).unwrap();
        r.next_number += rng.gen_range(3..40);
        let (title, body) = PLAIN_TOPICS[j % PLAIN_TOPICS.len()];
        let opened = t0 + Duration::hours(j as i64 * 61 + 7);
        let mut description = format!("{body}\n\nSteps to reproduce are in the attached snippet.");
        if rng.gen_bool(0.08) {
            description.push_str(&format!("\n\nSeen together with {FLAKY_MARKER} in the log."));
        }
        let mut case = CaseArtifact::new(&r.repo, ArtifactKind::Issue, r.next_number, title, description);
        for k in 0..rng.gen_range(0..3) {
            let mut text = format!("Thanks, I can reproduce this on version 0.{}.", 20 + k);
            if rng.gen_bool(0.06) {
                text.push_str(&format!(" Also {FLAKY_MARKER}."));
            }
            case.comments
                .push(comment("maintainer", opened + Duration::hours(5 + k as i64), text));
        }
        let source = if j % 7 == 3 {
            ProvenanceSource::HardNegative
        } else {
            ProvenanceSource::NegativeSampling
        };
        dataset_inputs.push((case, false, &empty, source));
    }

    for (case, _, _, _) in &dataset_inputs {
        snapshot.artifacts.push(case.clone());
    }
    snapshot.canonicalize();

    let options = ContextOptions::default();
    let mut dataset: Vec<DatasetCase> = dataset_inputs
        .into_iter()
        .map(|(case, flaky, spec, source)| {
            let partial = build_code_context(&case, ContextLevel::Partial, &snapshot, &options);
            let full = build_code_context(&case, ContextLevel::Full, &snapshot, &options);
            let reviewed_at = case.comments.last().map_or(t0, |c| c.created_at) + Duration::days(30);
            let mut case = case;
            case.sort_comments();
            DatasetCase {
                labeled: LabeledCase {
                    case,
                    flaky,
                    root_causes: spec.causes.clone(),
                    fix_patterns: spec.fixes.clone(),
                    provenance: Provenance {
                        source,
                        reviewer_ids: if flaky {
                            vec!["reviewer-a".into(), "reviewer-b".into()]
                        } else {
                            vec!["reviewer-a".into()]
                        },
                        reviewed_at,
                    },
                },
                partial,
                full,
            }
        })
        .collect();
    dataset.sort_by(|a, b| a.id().cmp(b.id()));

    let repo_totals = PUBLISHED_REPO_TABLE
        .iter()
        .map(|r| (format!("{}/{}", r.platform, r.repository), r.t))
        .collect();
    Replica {
        snapshot,
        dataset,
        repo_totals,
        shapes: shape_by_id,
    }
}

fn flaky_texts(
    rng: &mut ChaCha8Rng,
    spec: &LabelSpec,
    i: usize,
    shape: FixShape,
    silent: bool,
    corrupt_rq4: bool,
    opened: DateTime<Utc>,
) -> Texts {
    let (_, symptom) = topic(spec.causes[0]);
    let mut description = format!("{symptom}\n\nObserved on CI in build {}.", 4000 + i * 17);
    let mut comment_bodies: Vec<String> = Vec::new();
    if !silent {
        let n = rng.gen_range(1..4);
        for k in 0..n {
            comment_bodies.push(match k {
                0 => "I re-ran the job and it passed this time.".to_string(),
                1 => "Same failure on my fork yesterday.".to_string(),
                _ => "Closing since the fix was merged.".to_string(),
            });
        }
    }

    // binary signal
    let roll: f64 = rng.gen();
    let mut marker_in_method = false;
    let mut marker_in_file = false;
    if roll < 0.78 {
        description.push_str(&format!("\n\nLooks like {FLAKY_MARKER} behaviour."));
    } else if roll < 0.9 && !comment_bodies.is_empty() {
        comment_bodies[0].push_str(&format!(" Definitely {FLAKY_MARKER}."));
    } else if shape == FixShape::Method && rng.gen_bool(0.5) {
        marker_in_method = true;
    } else if matches!(shape, FixShape::Method | FixShape::ModuleLevel) {
        marker_in_file = true;
    }

    // root-cause hint
    let classes: Vec<RootCauseClass> = spec.causes.iter().filter_map(|c| c.class()).collect();
    if let Some(first) = classes.first() {
        let named = classes.last().copied().unwrap_or(*first);
        let roll: f64 = rng.gen();
        let hint = |c: RootCauseClass| format!("\n{ROOT_CAUSE_HINT} {}", c.canonical_name());
        if roll < 0.72 {
            description.push_str(&hint(named));
        } else if roll < 0.84 {
            let wrong = RootCauseClass::ALL[rng.gen_range(0..RootCauseClass::ALL.len())];
            description.push_str(&hint(wrong));
        } else if roll < 0.94 && !comment_bodies.is_empty() {
            let last = comment_bodies.len() - 1;
            comment_bodies[last].push_str(&hint(named));
        }
    }

    if corrupt_rq4 && !comment_bodies.is_empty() {
        comment_bodies[0].push_str(&format!("\n{CORRUPT_MARKER}rq4"));
    }

    let authors = ["alice-dev", "bob-q", "ci-watcher"];
    let comments = comment_bodies
        .into_iter()
        .enumerate()
        .map(|(k, body)| {
            comment(
                authors[k % authors.len()],
                opened + Duration::hours(2 + 9 * k as i64),
                body,
            )
        })
        .collect();
    Texts {
        description,
        comments,
        code_marker_in_method: marker_in_method,
        code_marker_in_file: marker_in_file,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_table_shape() {
        let specs = label_specs();
        assert_eq!(specs.len(), 71);
        assert_eq!(specs.iter().map(|s| s.causes.len()).sum::<usize>(), 73);
        let shapes = assign_shapes(&specs);
        let n = |s: FixShape| shapes.iter().filter(|x| **x == s).count();
        assert_eq!(
            (
                n(FixShape::Method),
                n(FixShape::QSharp),
                n(FixShape::Config),
                n(FixShape::ModuleLevel),
                n(FixShape::NoCode)
            ),
            (44, 8, 8, 4, 7)
        );
    }

    #[test]
    fn replica_is_deterministic() {
        let a = build_replica(7);
        let b = build_replica(7);
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.snapshot, b.snapshot);
    }
}
