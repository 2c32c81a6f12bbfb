use std::collections::{BTreeMap, BTreeSet};

use selfsynth::analysis::{
    apply_ablation, build_self_icl_prompt, distribution_report, generate_raw, randomize_demo_labels, randomize_labels,
    run_filter_ablation, sensitivity_diff, AblationConfig,
};
use selfsynth::backend::MockBackend;
use selfsynth::filters::FilterConfig;
use selfsynth::prompt::{ConjunctionVariant, PromptEngine};
use selfsynth::synthesis::SynthesisParams;
use selfsynth::task::{CreatedCounts, Example, Provenance, SyntheticDataset, TaskKind, TaskSpec};

fn sentiment() -> TaskSpec {
    TaskSpec::new(
        "sentiment",
        "Is the review positive or negative?",
        TaskKind::Classification {
            labels: vec!["positive".into(), "negative".into(), "neutral".into()],
        },
        vec![
            Example::seed("I really enjoyed this film a lot", "positive"),
            Example::seed("The plot was dull and far too slow", "negative"),
            Example::seed("It was fine, nothing special at all", "neutral"),
        ],
    )
    .unwrap()
}

/// Inputs vary in length and some carry noise; annotations are sometimes off-label.
fn mixed_backend() -> MockBackend {
    MockBackend::from_fn(|r| {
        let s = r.seed.unwrap_or(0);
        if r.prompt.starts_with("As an InputGenerator") {
            let words = 3 + (s % 12) as usize;
            let body = (0..words)
                .map(|i| format!("t{}", (s as usize + i) % 97))
                .collect::<Vec<_>>()
                .join(" ");
            Ok(if s % 5 == 0 { format!("Sure! {body}") } else { body })
        } else {
            Ok(match s % 4 {
                0 => "positive",
                1 => "negative",
                2 => "neutral",
                _ => "positive, clearly and without any doubt at all",
            }
            .to_string())
        }
    })
}

fn params() -> SynthesisParams {
    SynthesisParams {
        n_raw_inputs: 60,
        rng_seed: 4,
        ..SynthesisParams::default()
    }
}

#[tokio::test]
async fn ablation_variants_share_raw_generations() {
    let run = run_filter_ablation(
        &PromptEngine::default(),
        &sentiment(),
        &params(),
        &mixed_backend(),
        &FilterConfig::default(),
        &AblationConfig::ALL,
    )
    .await
    .unwrap();
    let digest = run.raw.digest();
    let kept: BTreeMap<AblationConfig, BTreeSet<usize>> = run
        .variants
        .iter()
        .map(|v| {
            assert_eq!(v.raw_digest, digest);
            assert_eq!(v.dataset.created_counts.raw_inputs, 60);
            assert_eq!(v.kept_indices.len(), v.dataset.len());
            (v.variant, v.kept_indices.iter().copied().collect())
        })
        .collect();
    let both = &kept[&AblationConfig::WithBoth];
    let no_noise = &kept[&AblationConfig::WithoutNoise];
    let no_length = &kept[&AblationConfig::WithoutLength];
    let neither = &kept[&AblationConfig::WithoutBoth];
    assert!(both.is_subset(no_noise) && both.is_subset(no_length));
    assert!(no_noise.is_subset(neither) && no_length.is_subset(neither));
    assert_eq!(
        &no_noise.intersection(no_length).copied().collect::<BTreeSet<_>>(),
        both
    );
    // The fixture is built so every filter has something to remove.
    assert!(both.len() < no_noise.len() && both.len() < no_length.len() && no_length.len() < neither.len());
}

#[tokio::test]
async fn reapplying_a_variant_is_stable() {
    let engine = PromptEngine::default();
    let raw = generate_raw(&engine, &sentiment(), &params(), &mixed_backend())
        .await
        .unwrap();
    let again = generate_raw(&engine, &sentiment(), &params(), &mixed_backend())
        .await
        .unwrap();
    assert_eq!(raw.digest(), again.digest());
    let a = apply_ablation(
        &sentiment(),
        &params(),
        &raw,
        &FilterConfig::default(),
        AblationConfig::WithBoth,
    )
    .unwrap();
    let b = apply_ablation(
        &sentiment(),
        &params(),
        &again,
        &FilterConfig::default(),
        AblationConfig::WithBoth,
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn randomized_dataset_is_near_uniform() {
    let task = sentiment();
    let dataset = SyntheticDataset {
        task_id: task.id.clone(),
        examples: (0..300)
            .map(|i| Example::new(format!("review {i}"), "positive", Provenance::Synthetic))
            .collect(),
        params: SynthesisParams::default(),
        created_counts: CreatedCounts::default(),
    };
    let randomized = randomize_labels(&dataset, task.labels(), 17).unwrap();
    assert!(randomized
        .examples
        .iter()
        .all(|e| e.provenance == Provenance::Randomized));
    for label in task.labels().unwrap() {
        let n = randomized.examples.iter().filter(|e| &e.output == label).count();
        assert!((65..=135).contains(&n), "{label}: {n}");
    }
    assert_eq!(randomized, randomize_labels(&dataset, task.labels(), 17).unwrap());
    assert!(randomize_labels(&dataset, None, 17).is_err());
}

#[test]
fn randomized_demonstration_labels_are_uniform_across_seeds() {
    let task = sentiment();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for seed in 0..1000 {
        let randomized = randomize_demo_labels(&task, seed).unwrap();
        assert_eq!(randomized.demo_inputs(), task.demo_inputs());
        for demo in &randomized.demonstrations {
            *counts.entry(demo.output.clone()).or_default() += 1;
        }
    }
    // 3000 draws over 3 labels: 1000 expected, sd about 26.
    for label in task.labels().unwrap() {
        let n = counts[label];
        assert!((900..=1100).contains(&n), "{label}: {n}");
    }
}

#[test]
fn self_icl_with_a_huge_budget_packs_everything() {
    let task = sentiment();
    let dataset: Vec<Example> = (0..7)
        .map(|i| Example::new(format!("synthetic review {i}"), "positive", Provenance::Synthetic))
        .collect();
    let packed = build_self_icl_prompt(
        &PromptEngine::default(),
        &task,
        &dataset,
        1_000_000,
        "a new review",
        ConjunctionVariant::EqualsNewline,
    )
    .unwrap();
    assert_eq!(packed.k_used, 7);
    assert_eq!(packed.prompt.matches("USER : [input] =").count(), 10);
    assert!(packed.prompt.ends_with("a new review\nASSISTANT:"));
}

#[test]
fn distribution_report_tracks_off_label_outputs() {
    let task = sentiment();
    let golds: Vec<String> = ["positive", "negative", "neutral", "positive"]
        .map(String::from)
        .to_vec();
    let off: Vec<String> = ["great", "meh", "bad", "wow"].map(String::from).to_vec();
    let row = distribution_report(&task, &off, &golds, &golds).unwrap();
    assert_eq!(row.baseline.irrelevant, 1.0);
    assert_eq!(row.baseline.accuracy, 0.0);
    assert!((row.baseline.l1 - 2.0).abs() < 1e-12);
    assert_eq!(row.self_guide.irrelevant, 0.0);
    assert_eq!(row.self_guide.l1, 0.0);
    assert_eq!(row.self_guide.accuracy, 1.0);
}

#[test]
fn sensitivity_spread() {
    assert!((sensitivity_diff(&[19.8, 27.0, 21.3]).unwrap() - 7.2).abs() < 1e-9);
    assert!(sensitivity_diff(&[1.0]).is_err());
}
