use selfsynth::prompt::{template_digest, ConjunctionVariant, PromptEngine, PromptTemplateId};
use selfsynth::task::{Example, TaskKind, TaskSpec};

const GOLDEN_GENERATION: &str = include_str!("golden/input_generation.golden");
const GOLDEN_CLASSIFICATION: &str = include_str!("golden/input_classification.golden");
const GOLDEN_ANNOTATION: &str = include_str!("golden/output_annotation.golden");

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

#[test]
fn generation_prompt_matches_golden() {
    let task = TaskSpec::new(
        "rewrite",
        "Rewrite the sentence so it keeps its meaning.",
        TaskKind::Generation,
        vec![
            Example::seed("The cat sat on the mat.", "A cat was sitting on the mat."),
            Example::seed("It rained all day.", "The rain lasted the whole day."),
        ],
    )
    .unwrap();
    let prompt = PromptEngine::default()
        .render_input_prompt(&task, &task.demo_inputs(), &["Birds fly south in winter."], None)
        .unwrap();
    assert_eq!(prompt, GOLDEN_GENERATION);
}

#[test]
fn classification_prompt_matches_golden() {
    let task = review_task();
    let prompt = PromptEngine::default()
        .render_input_prompt(&task, &task.demo_inputs()[..2], &[], Some("negative"))
        .unwrap();
    assert_eq!(prompt, GOLDEN_CLASSIFICATION);
}

#[test]
fn annotation_prompt_matches_golden() {
    let prompt = PromptEngine::default()
        .render_annotation_prompt(&review_task(), "The food was cold.", ConjunctionVariant::EqualsNewline)
        .unwrap();
    assert_eq!(prompt, GOLDEN_ANNOTATION);
}

#[test]
fn embedded_template_digests_are_pinned() {
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
    let engine = PromptEngine::default();
    for (id, digest) in pinned {
        assert_eq!(template_digest(id), digest, "{id:?}");
        assert_eq!(engine.digest(id), digest, "{id:?}");
    }
}

#[test]
fn template_override_changes_digest_only_for_that_template() {
    let dir = tempfile::tempdir().unwrap();
    let custom = PromptEngine::default()
        .template(PromptTemplateId::OutputAnnotation)
        .replace("concise answers", "short answers");
    std::fs::write(dir.path().join("output_annotation.txt"), custom).unwrap();
    let engine = PromptEngine::from_dir(dir.path()).unwrap();
    assert_ne!(
        engine.digest(PromptTemplateId::OutputAnnotation),
        template_digest(PromptTemplateId::OutputAnnotation)
    );
    assert_eq!(
        engine.digest(PromptTemplateId::InputGenForGeneration),
        template_digest(PromptTemplateId::InputGenForGeneration)
    );
}

#[test]
fn missing_slot_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("input_generation.txt"), "no slots here").unwrap();
    let err = PromptEngine::from_dir(dir.path()).unwrap_err();
    assert!(err.to_string().contains("{instruction}"), "{err}");
}
