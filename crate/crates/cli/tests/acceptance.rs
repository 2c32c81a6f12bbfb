//! One PASS/FAIL line per acceptance criterion. Exits non-zero on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfsynth::analysis::build_self_icl_prompt;
use selfsynth::backend::MockBackend;
use selfsynth::filters::{compute_length_stats, filter_inputs, filter_pairs, token_count, FilterConfig};
use selfsynth::metrics::{l1_distance, label_distribution, rouge_l, rouge_l_tokens, LabelDistribution};
use selfsynth::prompt::{template_digest, ConjunctionVariant, PromptEngine, PromptTemplateId};
use selfsynth::synthesis::{generate_inputs, SynthesisParams};
use selfsynth::task::{Example, Provenance, TaskKind, TaskSpec};
use selfsynth::tuner::{random_search, ParamSpace, RealDim};

type Outcome = Result<String, String>;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/golden");

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, id: &str, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail} ({elapsed:.2?})"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL {id} {name}: {detail} ({elapsed:.2?})");
            }
        }
    }
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(GOLDEN).join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn review_task() -> TaskSpec {
    TaskSpec::new(
        "review_polarity",
        "Decide whether the review is positive or negative.",
        TaskKind::Classification {
            labels: vec!["positive".into(), "negative".into()],
        },
        vec![
            Example::seed("Loved every minute.", "positive"),
            Example::seed("Terrible service.", "negative"),
            Example::seed("Would buy again.", "positive"),
        ],
    )
    .unwrap()
}

fn c1_templates() -> Outcome {
    let engine = PromptEngine::default();
    let rewrite = TaskSpec::new(
        "rewrite",
        "Rewrite the sentence so it keeps its meaning.",
        TaskKind::Generation,
        vec![
            Example::seed("The cat sat on the mat.", "A cat was sitting on the mat."),
            Example::seed("It rained all day.", "The rain lasted the whole day."),
        ],
    )
    .unwrap();
    let review = review_task();
    let rendered = [
        (
            "input_generation",
            engine
                .render_input_prompt(&rewrite, &rewrite.demo_inputs(), &["Birds fly south in winter."], None)
                .map_err(|e| e.to_string())?,
        ),
        (
            "input_classification",
            engine
                .render_input_prompt(&review, &review.demo_inputs()[..2], &[], Some("negative"))
                .map_err(|e| e.to_string())?,
        ),
        (
            "output_annotation",
            engine
                .render_annotation_prompt(&review, "The food was cold.", ConjunctionVariant::EqualsNewline)
                .map_err(|e| e.to_string())?,
        ),
    ];
    for (name, prompt) in &rendered {
        ensure!(
            *prompt == golden(&format!("{name}.golden")),
            "{name} differs from its golden file"
        );
    }
    let pinned = [
        (
            PromptTemplateId::InputGenForGeneration,
            "d71037438d5c6fe723697d90fc8889dacf498d937abf69c219c17f3489d1027f",
        ),
        (
            PromptTemplateId::InputGenForClassification,
            "a3bb23e70750c56aba728c1c430e3181e9cf617c53b45aaf5f2b2d1533bc1539",
        ),
        (
            PromptTemplateId::OutputAnnotation,
            "974c757c99e53ace60c8681b3fe270ad2d38d42940f79f118bbc879e16fe38d5",
        ),
    ];
    for (id, digest) in pinned {
        ensure!(template_digest(id) == digest, "{id:?} digest drifted");
    }
    Ok("3 prompts byte-identical, 3 digests pinned".into())
}

/// Longest common subsequence by trying every subsequence of the shorter side.
fn brute_force_lcs(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subsequence = |picked: &[u8]| {
        let mut it = long.iter();
        picked.iter().all(|x| it.any(|y| y == x))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let picked: Vec<u8> = (0..short.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| short[i])
            .collect();
        if picked.len() > best && is_subsequence(&picked) {
            best = picked.len();
        }
    }
    best
}

fn oracle_f1(candidate: &[u8], reference: &[u8]) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let lcs = brute_force_lcs(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn c2_rouge() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut seq = || -> Vec<u8> {
            let n = rng.random_range(0..=12);
            (0..n).map(|_| rng.random_range(0..5)).collect()
        };
        let (a, b) = (seq(), seq());
        let got = rouge_l_tokens(&a, &b);
        let want = oracle_f1(&a, &b);
        worst = worst.max((got - want).abs());
        ensure!(
            (got - want).abs() <= 1e-12,
            "pair {a:?} / {b:?}: {got} vs oracle {want}"
        );
    }
    let example = rouge_l("the cat sat on the mat", "the cat is on the mat");
    ensure!((example - 5.0 / 6.0).abs() <= 1e-9, "worked example gave {example}");
    Ok(format!("1000 pairs, max error {worst:e}; worked example {example:.4}"))
}

/// Mean and population standard deviation, computed independently of the library.
fn mean_sd(values: &[usize]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

fn oracle_band(lengths: &[usize]) -> (f64, f64) {
    let (mu, sd) = mean_sd(lengths);
    let s = sd.max(0.05 * mu).max(1.0);
    (mu - 2.0 * s, mu + 2.0 * s)
}

fn words(n: usize, rng: &mut ChaCha8Rng) -> String {
    (0..n)
        .map(|_| format!("w{}", rng.random_range(0..9)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn c3_filters() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let terms = FilterConfig::default().noise_terms;
    let mut kept_total = 0;
    let mut rejected_total = 0;
    for fixture in 0..500 {
        let demos: Vec<Example> = (0..rng.random_range(1..=3))
            .map(|_| {
                let (i, o) = (rng.random_range(1..25), rng.random_range(1..25));
                Example::seed(words(i, &mut rng), words(o, &mut rng))
            })
            .collect();
        let in_band = oracle_band(&demos.iter().map(|d| token_count(&d.input)).collect::<Vec<_>>());
        let out_band = oracle_band(&demos.iter().map(|d| token_count(&d.output)).collect::<Vec<_>>());
        let pairs: Vec<Example> = (0..rng.random_range(0..30))
            .map(|_| {
                let mut input = words(rng.random_range(1..40), &mut rng);
                if rng.random_bool(0.2) {
                    input = format!("{} {input}", terms[rng.random_range(0..terms.len())]);
                }
                Example::new(input, words(rng.random_range(1..40), &mut rng), Provenance::Synthetic)
            })
            .collect();
        let stats = compute_length_stats(&demos).map_err(|e| e.to_string())?;
        let config = FilterConfig::default();
        let outcome = filter_pairs(pairs.clone(), &stats, &config, None);
        ensure!(
            outcome.kept.len() + outcome.rejected.len() == pairs.len(),
            "fixture {fixture}: partition sizes do not add up"
        );
        let mut union: Vec<&Example> = outcome
            .kept
            .iter()
            .chain(outcome.rejected.iter().map(|r| &r.item))
            .collect();
        union.sort_by(|a, b| (&a.input, &a.output).cmp(&(&b.input, &b.output)));
        let mut all: Vec<&Example> = pairs.iter().collect();
        all.sort_by(|a, b| (&a.input, &a.output).cmp(&(&b.input, &b.output)));
        ensure!(union == all, "fixture {fixture}: kept and rejected are not a partition");

        let noisy = |t: &str| terms.iter().any(|term| t.to_lowercase().contains(&term.to_lowercase()));
        for e in &outcome.kept {
            let (li, lo) = (token_count(&e.input) as f64, token_count(&e.output) as f64);
            ensure!(
                in_band.0 < li && li < in_band.1,
                "fixture {fixture}: kept input length {li} outside {in_band:?}"
            );
            ensure!(
                out_band.0 < lo && lo < out_band.1,
                "fixture {fixture}: kept output length {lo} outside {out_band:?}"
            );
            ensure!(
                !noisy(&e.input) && !noisy(&e.output),
                "fixture {fixture}: kept a noisy item"
            );
        }
        // Every rejection is justified by the oracle.
        for r in &outcome.rejected {
            let (li, lo) = (token_count(&r.item.input) as f64, token_count(&r.item.output) as f64);
            let inside = in_band.0 < li && li < in_band.1 && out_band.0 < lo && lo < out_band.1;
            ensure!(
                !inside || noisy(&r.item.input) || noisy(&r.item.output),
                "fixture {fixture}: unjustified rejection"
            );
        }

        let mut more_noise = config.clone();
        more_noise.noise_terms.push("w4".into());
        let fewer = filter_pairs(pairs.clone(), &stats, &more_noise, None).kept;
        ensure!(
            fewer.iter().all(|e| outcome.kept.contains(e)),
            "fixture {fixture}: noise growth added items"
        );
        let mut wider = config.clone();
        wider.sigma_floor_tokens += rng.random_range(0.0..5.0);
        let more = filter_pairs(pairs.clone(), &stats, &wider, None).kept;
        ensure!(
            outcome.kept.iter().all(|e| more.contains(e)),
            "fixture {fixture}: band widening removed items"
        );

        let inputs: Vec<&str> = pairs.iter().map(|p| p.input.as_str()).collect();
        let input_stage = filter_inputs(inputs.clone(), &stats, &config);
        ensure!(
            input_stage.kept.len() + input_stage.rejected.len() == inputs.len(),
            "fixture {fixture}: input-stage partition sizes"
        );
        kept_total += outcome.kept.len();
        rejected_total += outcome.rejected.len();
    }
    Ok(format!("500 fixtures, {kept_total} kept / {rejected_total} rejected"))
}

fn c4_length_stats() -> Outcome {
    let demos: Vec<Example> = [10, 12, 14]
        .iter()
        .map(|&n| Example::seed(vec!["x"; n].join(" "), "y"))
        .collect();
    let stats = compute_length_stats(&demos).map_err(|e| e.to_string())?;
    let sigma = (8.0f64 / 3.0).sqrt();
    ensure!(stats.mu_input == 12.0, "mu = {}", stats.mu_input);
    ensure!(
        (stats.sigma_input - sigma).abs() <= 1e-9,
        "sigma = {}",
        stats.sigma_input
    );
    let band = stats.input_band(&FilterConfig::default());
    ensure!(
        (band.low - 8.73).abs() < 0.005 && (band.high - 15.27).abs() < 0.005,
        "band {band}"
    );

    let flat: Vec<Example> = (0..3).map(|_| Example::seed("a b c d e", "y")).collect();
    let flat_stats = compute_length_stats(&flat).map_err(|e| e.to_string())?;
    let flat_band = flat_stats.input_band(&FilterConfig::default());
    ensure!(
        flat_band.low == 3.0 && flat_band.high == 7.0,
        "floored band {flat_band}"
    );
    Ok(format!(
        "sigma {:.9}, band {band}, floored band {flat_band}",
        stats.sigma_input
    ))
}

fn tune_tasks(ids: &[&str]) -> Vec<TaskSpec> {
    ids.iter()
        .map(|id| TaskSpec::new(*id, "Do it.", TaskKind::Generation, vec![Example::seed("x", "y")]).unwrap())
        .collect()
}

fn c5_tuner() -> Outcome {
    let temps_in = [0.5, 0.7, 1.0];
    let temps_out = [0.0, 0.3];
    let sizes = [50usize, 100];
    let repos = [2usize, 3];
    let space = ParamSpace {
        input_temperature: RealDim::Choices(temps_in.to_vec()),
        output_temperature: RealDim::Choices(temps_out.to_vec()),
        n_raw_inputs_choices: sizes.to_vec(),
        repo_sample_size_choices: repos.to_vec(),
    };
    let points = temps_in.len() * temps_out.len() * sizes.len() * repos.len();
    let tasks = tune_tasks(&["t1", "t2", "t3"]);
    let base = SynthesisParams::default();
    let pos = |xs: &[f64], x: f64| xs.iter().position(|&v| v == x).unwrap();
    let key = |p: &SynthesisParams| {
        (
            pos(&temps_in, p.input_temperature),
            pos(&temps_out, p.output_temperature),
            sizes.iter().position(|&v| v == p.n_raw_inputs).unwrap(),
            repos.iter().position(|&v| v == p.repo_sample_size).unwrap(),
        )
    };

    for table_seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + table_seed);
        let mut scores = BTreeMap::new();
        for a in 0..3 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        for t in &tasks {
                            scores.insert(((a, b, c, d), t.id.clone()), rng.random_range(0.0..100.0));
                        }
                    }
                }
            }
        }
        let baseline: BTreeMap<String, f64> = tasks
            .iter()
            .map(|t| (t.id.clone(), rng.random_range(20.0..60.0)))
            .collect();

        // Exhaustive worst-task argmax.
        let mut best: Option<((usize, usize, usize, usize), f64)> = None;
        for a in 0..3 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        let worst = tasks
                            .iter()
                            .map(|t| scores[&((a, b, c, d), t.id.clone())] - baseline[&t.id])
                            .fold(f64::INFINITY, f64::min);
                        if best.is_none_or(|(_, v)| worst > v) {
                            best = Some(((a, b, c, d), worst));
                        }
                    }
                }
            }
        }
        let (want, want_value) = best.unwrap();
        let outcome = random_search(&tasks, &baseline, &space, &base, points, table_seed, |p, t| {
            Ok(scores[&(key(p), t.id.clone())])
        })
        .map_err(|e| e.to_string())?;
        ensure!(
            key(&outcome.best.params) == want && (outcome.best.objective - want_value).abs() < 1e-9,
            "table {table_seed}: search picked {:?}, exhaustive argmax {want:?}",
            key(&outcome.best.params)
        );
    }

    let pair_space = ParamSpace {
        input_temperature: RealDim::Choices(vec![0.7, 1.0]),
        output_temperature: RealDim::Choices(vec![0.0]),
        n_raw_inputs_choices: vec![100],
        repo_sample_size_choices: vec![3],
    };
    let tasks = tune_tasks(&["a", "b"]);
    let zero: BTreeMap<String, f64> = [("a".into(), 0.0), ("b".into(), 0.0)].into();
    let forced = random_search(&tasks, &zero, &pair_space, &base, 2, 5, |p, t| {
        Ok(match (p.input_temperature == 0.7, t.id.as_str()) {
            (true, "a") => 5.0,
            (true, _) => -2.0,
            (false, "a") => 3.0,
            (false, _) => 1.0,
        })
    })
    .map_err(|e| e.to_string())?;
    ensure!(
        forced.best.params.input_temperature == 1.0 && forced.best.objective == 1.0,
        "forced case picked {:?}",
        forced.best.per_task_delta
    );
    Ok(format!(
        "10 tables over {points} points matched exhaustive search; [5,-2] vs [3,1] picked [3,1]"
    ))
}

fn c6_label_balance() -> Outcome {
    let labels = ["entailment", "neutral", "contradiction", "unrelated"];
    let task = TaskSpec::new(
        "nli",
        "Decide how the two sentences relate.",
        TaskKind::Classification {
            labels: labels.iter().map(|l| l.to_string()).collect(),
        },
        vec![
            Example::seed("A man sleeps. A person rests.", "entailment"),
            Example::seed("A dog runs. The dog is old.", "neutral"),
            Example::seed("It is sunny. It is raining hard.", "contradiction"),
        ],
    )
    .map_err(|e| e.to_string())?;
    let backend = MockBackend::from_fn(|r| Ok(format!("Sentence pair number {} here.", r.seed.unwrap_or(0))));
    let params = SynthesisParams {
        n_raw_inputs: 400,
        rng_seed: 6,
        ..SynthesisParams::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let generation = runtime
        .block_on(generate_inputs(&PromptEngine::default(), &task, &params, &backend))
        .map_err(|e| e.to_string())?;
    ensure!(
        generation.entries.len() == 400,
        "{} inputs generated",
        generation.entries.len()
    );
    let mut counts = BTreeMap::new();
    for entry in &generation.entries {
        *counts
            .entry(entry.requested_label.clone().unwrap_or_default())
            .or_insert(0usize) += 1;
    }
    for label in labels {
        let n = counts.get(label).copied().unwrap_or(0);
        ensure!((70..=130).contains(&n), "{label} requested {n} times");
    }
    Ok(format!("per-label counts {counts:?}"))
}

fn selfsynth(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_selfsynth"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("selfsynth {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn fixture_workspace() -> Result<tempfile::TempDir, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for name in ["mock.toml", "task_sentiment.json", "task_paraphrase.json"] {
        fs::copy(Path::new(FIXTURES).join(name), dir.path().join(name)).map_err(|e| e.to_string())?;
    }
    Ok(dir)
}

fn c7_determinism() -> Outcome {
    let runs = [fixture_workspace()?, fixture_workspace()?];
    for ws in &runs {
        selfsynth(ws.path(), &["-c", "mock.toml", "synthesize"])?;
    }
    let files = [
        "out/synthesize/manifest.json",
        "out/synthesize/task_sentiment/dataset.jsonl",
        "out/synthesize/task_paraphrase/dataset.jsonl",
        "out/synthesize/task_sentiment/rejections.jsonl",
        "out/synthesize/task_paraphrase/rejections.jsonl",
    ];
    for file in files {
        let a = fs::read(runs[0].path().join(file)).map_err(|e| format!("{file}: {e}"))?;
        let b = fs::read(runs[1].path().join(file)).map_err(|e| format!("{file}: {e}"))?;
        ensure!(a == b, "{file} differs between runs");
        ensure!(!a.is_empty() || file.ends_with("rejections.jsonl"), "{file} is empty");
    }
    Ok(format!("{} files byte-identical across two runs", files.len()))
}

/// `report --kind <kind>` on a fixture; returns `(category, columns)` of the Avg rows.
fn report_averages(kind: &str, fixture: &str) -> Result<BTreeMap<String, Vec<f64>>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = Path::new(FIXTURES).join(fixture);
    selfsynth(
        dir.path(),
        &[
            "--output-dir",
            "out",
            "report",
            "--kind",
            kind,
            "--input",
            input.to_str().unwrap(),
        ],
    )?;
    let csv = fs::read_to_string(dir.path().join(format!("out/report/{kind}.csv"))).map_err(|e| e.to_string())?;
    Ok(csv
        .lines()
        .filter(|l| l.starts_with("Avg,"))
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let values = cells[2..cells.len() - 1]
                .iter()
                .map(|c| c.parse().unwrap_or(f64::NAN))
                .collect();
            (cells[1].to_string(), values)
        })
        .collect())
}

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 0.05
}

fn c8_score_tables() -> Outcome {
    let scores = report_averages("scores", "heldout_scores.csv")?;
    let expect = [
        ("classification", [33.2, 47.7, 14.5]),
        ("generation", [41.6, 59.4, 17.9]),
    ];
    for (category, want) in expect {
        let got = scores.get(category).ok_or(format!("no {category} Avg row"))?;
        ensure!(
            got.len() == 3 && got.iter().zip(want).all(|(&g, w)| close(g, w)),
            "{category}: got {got:?}, want {want:?}"
        );
    }
    let conj = report_averages("sensitivity", "conjunction_scores.csv")?;
    let got = conj.get("classification").ok_or("no classification Avg row")?;
    ensure!(close(got[3], 8.1), "classification mean diff {}", got[3]);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = Path::new(FIXTURES).join("conjunction_scores.csv");
    selfsynth(
        dir.path(),
        &[
            "--output-dir",
            "out",
            "report",
            "--kind",
            "sensitivity",
            "--input",
            input.to_str().unwrap(),
        ],
    )?;
    let csv = fs::read_to_string(dir.path().join("out/report/sensitivity.csv")).map_err(|e| e.to_string())?;
    let row = csv
        .lines()
        .find(|l| l.starts_with("task190,"))
        .ok_or("no task190 row")?;
    let diff: f64 = row
        .split(',')
        .nth(5)
        .and_then(|c| c.parse().ok())
        .ok_or("bad task190 row")?;
    ensure!(close(diff, 7.2), "task190 diff {diff}");
    Ok(format!(
        "classification {:?}, generation {:?}, task190 diff {diff}",
        scores["classification"], scores["generation"]
    ))
}

fn c9_distributions() -> Outcome {
    let labels = vec!["a".to_string(), "b".to_string()];
    let dist = |xs: &[&str]| label_distribution(xs, &labels).map_err(|e| e.to_string());
    let l1 = |p: &LabelDistribution, q: &LabelDistribution| l1_distance(p, q).map_err(|e| e.to_string());
    let mixed_gold = dist(&["a", "a", "b", "b"])?;
    ensure!(l1(&mixed_gold, &mixed_gold)? == 0.0, "identity is not 0");
    ensure!(
        l1(&dist(&["a", "a"])?, &dist(&["b", "b"])?)? == 2.0,
        "disjoint is not 2"
    );
    let mixed = l1(&dist(&["a", "a", "a", "a"])?, &mixed_gold)?;
    ensure!(mixed == 1.0, "mixed fixture gave {mixed}");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pool = ["a", "b", "A ", "zz", "", "b."];
    for _ in 0..200 {
        let outs: Vec<&str> = (0..rng.random_range(1..50))
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        let d = dist(&outs)?;
        ensure!((d.total() - 1.0).abs() <= 1e-9, "masses sum to {}", d.total());
    }
    let off = dist(&["maybe", "unsure", "c"])?;
    ensure!(
        off.irrelevant() == 1.0,
        "all-off-label irrelevant ratio {}",
        off.irrelevant()
    );
    Ok("identity 0, disjoint 2, mixed 1, masses sum to 1, all-off-label ratio 1".into())
}

fn c10_self_icl() -> Outcome {
    let engine = PromptEngine::default();
    let task = review_task();
    let variant = ConjunctionVariant::EqualsNewline;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0;
    for _ in 0..300 {
        let dataset: Vec<Example> = (0..rng.random_range(1..15))
            .map(|_| {
                let input = words(rng.random_range(1..30), &mut rng);
                Example::new(input, "positive", Provenance::Synthetic)
            })
            .collect();
        let budget = rng.random_range(300..3000);
        let Ok(packed) = build_self_icl_prompt(&engine, &task, &dataset, budget, "query text", variant) else {
            continue;
        };
        checked += 1;
        let len = packed.prompt.chars().count();
        ensure!(len <= budget, "prompt of {len} chars over budget {budget}");
        if packed.k_used < dataset.len() {
            // Maximal: the prompt with one more example is over budget.
            let demos: Vec<(&str, &str)> = task
                .demonstrations
                .iter()
                .chain(&dataset[..=packed.k_used])
                .map(|e| (e.input.as_str(), e.output.as_str()))
                .collect();
            let longer = engine
                .render_annotation_with(&task.instruction, &demos, "query text", variant)
                .map_err(|e| e.to_string())?;
            ensure!(
                longer.chars().count() > budget,
                "k_used {} is not maximal",
                packed.k_used
            );
        }
    }
    let seven: Vec<Example> = (0..7)
        .map(|i| Example::new(format!("synthetic review {i}"), "negative", Provenance::Synthetic))
        .collect();
    let huge =
        build_self_icl_prompt(&engine, &task, &seven, usize::MAX, "query text", variant).map_err(|e| e.to_string())?;
    ensure!(huge.k_used == 7, "huge budget packed {}", huge.k_used);
    Ok(format!(
        "{checked} random budgets respected and maximal; huge budget k=7"
    ))
}

fn c11_live() -> Outcome {
    let Ok(url) = std::env::var("SELFSYNTH_LIVE_URL") else {
        return Ok("live smoke test skipped: SELFSYNTH_LIVE_URL not set".into());
    };
    let model = std::env::var("SELFSYNTH_LIVE_MODEL").unwrap_or_else(|_| "default".into());
    let ws = fixture_workspace()?;
    let config = format!(
        "task_paths = [\"task_paraphrase.json\"]\n\n[backend]\nkind = \"http\"\nendpoint_url = \"{url}\"\nmodel_name = \"{model}\"\nmax_parallel_requests = 4\n\n[params]\nn_raw_inputs = 20\nrng_seed = 1\n"
    );
    fs::write(ws.path().join("live.toml"), config).map_err(|e| e.to_string())?;
    selfsynth(ws.path(), &["-c", "live.toml", "synthesize"])?;
    let dataset = fs::read_to_string(ws.path().join("out/synthesize/task_paraphrase/dataset.jsonl"))
        .map_err(|e| e.to_string())?;
    let n = dataset.lines().count();
    ensure!(n > 0, "live synthesize produced an empty dataset");
    Ok(format!("live synthesize kept {n} examples"))
}

fn main() {
    let start = Instant::now();
    let mut suite = Suite { failures: 0 };
    suite.check("C1", "template fidelity", Duration::from_secs(1), c1_templates);
    suite.check("C2", "rouge-l oracle equivalence", Duration::from_secs(10), c2_rouge);
    suite.check("C3", "filter correctness", Duration::from_secs(5), c3_filters);
    suite.check("C4", "length-stats arithmetic", Duration::from_secs(1), c4_length_stats);
    suite.check("C5", "worst-task tuner", Duration::from_secs(10), c5_tuner);
    suite.check("C6", "label balancing", Duration::from_secs(10), c6_label_balance);
    suite.check("C7", "pipeline determinism", Duration::from_secs(30), c7_determinism);
    suite.check(
        "C8",
        "score-table arithmetic",
        Duration::from_secs(30),
        c8_score_tables,
    );
    suite.check("C9", "distribution metrics", Duration::from_secs(5), c9_distributions);
    suite.check("C10", "self-icl packing", Duration::from_secs(10), c10_self_icl);
    let offline = start.elapsed();
    suite.check("C11", "offline suite under 2 minutes", Duration::from_secs(120), || {
        Ok(format!("criteria 1-10 took {offline:.2?}"))
    });
    suite.check(
        "C11-live",
        "live endpoint smoke test",
        Duration::from_secs(600),
        c11_live,
    );
    if suite.failures > 0 {
        println!("{} criteria failed", suite.failures);
        std::process::exit(1);
    }
}
