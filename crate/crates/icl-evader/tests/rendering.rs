//! Byte-exact golden tests for the prompt renderer, pinning the layout
//! documented in `RENDERING.md`, plus the structural rule that warning text
//! only ever appears at section seams — never inside a demonstration block.

use icl_evader::eval::{harden_from_config, ExperimentConfig};
use icl_evader::prompt::{
    default_task, render_prompt, IclPrompt, Label, LabeledSample, PromptTemplate, TaskSpec,
    WarningMessage, WarningPosition, WarningVariant, WARNING_LONG, WARNING_MEDIUM, WARNING_SHORT,
};
use icl_evader::recipe::parse_recipe;

/// A toxicity task with a short fixed instruction so goldens stay readable.
fn tiny_task() -> TaskSpec {
    let mut task = default_task("toxicity").unwrap();
    task.instruction = "Classify the message.".to_string();
    task
}

fn demo(text: &str, label: &str) -> LabeledSample {
    LabeledSample::new(text.to_string(), Label::new(label).unwrap()).unwrap()
}

#[test]
fn zero_shot_layout_is_byte_exact() {
    let p = IclPrompt::new(
        tiny_task(),
        PromptTemplate::default(),
        vec![],
        "brand new text",
    )
    .unwrap();
    let rendered = render_prompt(&p);
    assert_eq!(
        rendered,
        "Classify the message.\n\nQuestion: brand new text\nAnswer: "
    );
    assert!(rendered.ends_with("Answer: "), "must end with answer prefix");
    assert!(!rendered.ends_with('\n'), "no trailing newline");
}

#[test]
fn multi_shot_layout_is_byte_exact() {
    let p = IclPrompt::new(
        tiny_task(),
        PromptTemplate::default(),
        vec![demo("good day", "benign"), demo("you filth", "toxic")],
        "is this fine",
    )
    .unwrap();
    assert_eq!(
        render_prompt(&p),
        "Classify the message.\n\n\
         Question: good day\nAnswer: benign\
         \n==\n\
         Question: you filth\nAnswer: toxic\
         \n==\n\
         Question: is this fine\nAnswer: "
    );
}

#[test]
fn custom_template_layout_is_byte_exact() {
    let template = PromptTemplate {
        sample_prefix: "IN: ".to_string(),
        answer_prefix: "OUT: ".to_string(),
        separator: "---".to_string(),
        test_tag: None,
    };
    let p = IclPrompt::new(
        tiny_task(),
        template,
        vec![demo("alpha", "benign")],
        "omega",
    )
    .unwrap();
    assert_eq!(
        render_prompt(&p),
        "Classify the message.\n\nIN: alpha\nOUT: benign\n---\nIN: omega\nOUT: "
    );
}

#[test]
fn test_tag_wraps_only_the_test_sample() {
    let template = PromptTemplate {
        test_tag: Some("T".to_string()),
        ..PromptTemplate::default()
    };
    let p = IclPrompt::new(
        tiny_task(),
        template,
        vec![demo("good day", "benign")],
        "is this fine",
    )
    .unwrap();
    assert_eq!(
        render_prompt(&p),
        "Classify the message.\n\n\
         Question: good day\nAnswer: benign\
         \n==\n\
         <T>is this fine</T>\nAnswer: "
    );
}

#[test]
fn warnings_render_at_their_seams() {
    let mut p = IclPrompt::new(
        tiny_task(),
        PromptTemplate::default(),
        vec![demo("good day", "benign"), demo("you filth", "toxic")],
        "is this fine",
    )
    .unwrap();
    p.warnings = vec![
        (
            WarningMessage::builtin(WarningVariant::Short),
            WarningPosition::InstructionDemos,
        ),
        (
            WarningMessage::builtin(WarningVariant::Medium),
            WarningPosition::DemosTest,
        ),
    ];
    assert_eq!(
        render_prompt(&p),
        format!(
            "Classify the message.\n\n\
             {WARNING_SHORT}\n\n\
             Question: good day\nAnswer: benign\
             \n==\n\
             Question: you filth\nAnswer: toxic\
             \n==\n\
             {WARNING_MEDIUM}\n\n\
             Question: is this fine\nAnswer: "
        )
    );
}

#[test]
fn both_position_renders_the_message_twice() {
    let mut p = IclPrompt::new(
        tiny_task(),
        PromptTemplate::default(),
        vec![demo("good day", "benign")],
        "is this fine",
    )
    .unwrap();
    p.warnings = vec![(
        WarningMessage::builtin(WarningVariant::Long),
        WarningPosition::Both,
    )];
    let rendered = render_prompt(&p);
    assert_eq!(rendered.matches(WARNING_LONG).count(), 2);
    assert_eq!(
        rendered,
        format!(
            "Classify the message.\n\n\
             {WARNING_LONG}\n\n\
             Question: good day\nAnswer: benign\
             \n==\n\
             {WARNING_LONG}\n\n\
             Question: is this fine\nAnswer: "
        )
    );
}

#[test]
fn zero_shot_with_warnings_keeps_seam_order() {
    // With no demonstrations the two seams are adjacent: instruction-seam
    // warnings come first, then test-seam warnings, then the test block.
    let mut p = IclPrompt::new(
        tiny_task(),
        PromptTemplate::default(),
        vec![],
        "is this fine",
    )
    .unwrap();
    p.warnings = vec![(
        WarningMessage::builtin(WarningVariant::Short),
        WarningPosition::Both,
    )];
    assert_eq!(
        render_prompt(&p),
        format!(
            "Classify the message.\n\n\
             {WARNING_SHORT}\n\n\
             {WARNING_SHORT}\n\n\
             Question: is this fine\nAnswer: "
        )
    );
}

#[test]
fn rendering_is_a_pure_function() {
    let mut p = IclPrompt::new(
        tiny_task(),
        PromptTemplate::default(),
        vec![demo("good day", "benign"), demo("you filth", "toxic")],
        "is this fine",
    )
    .unwrap();
    p.warnings = vec![(
        WarningMessage::builtin(WarningVariant::Medium),
        WarningPosition::Both,
    )];
    let a = render_prompt(&p);
    let b = render_prompt(&p.clone());
    assert_eq!(a, b);
}

/// Warning text must never end up inside a demonstration block, even after a
/// full hardening pass rewrites the prompt (adversarial demos injected, random
/// template applied, warning appended).
#[test]
fn hardening_keeps_warnings_out_of_demo_blocks() {
    let cfg = ExperimentConfig {
        task_name: "toxicity".to_string(),
        n_shots: 32,
        master_seed: 42,
        defense: Some(parse_recipe("p10_CWmessage1_CWpos2").unwrap()),
        ..ExperimentConfig::default()
    };
    let out = harden_from_config(&cfg, None).unwrap();
    let hardened = &out.hardened;

    assert_eq!(hardened.warnings.len(), 1);
    assert_eq!(hardened.warnings[0].0.text, WARNING_MEDIUM);
    assert_eq!(hardened.warnings[0].1, WarningPosition::Both);

    for d in &hardened.demonstrations {
        assert!(
            !d.text.contains(WARNING_MEDIUM),
            "warning text leaked into a demonstration: {:?}",
            d.text
        );
    }
    assert!(!hardened.test_sample.contains(WARNING_MEDIUM));
    assert!(!hardened.task.instruction.contains(WARNING_MEDIUM));

    let rendered = render_prompt(hardened);
    assert_eq!(rendered.matches(WARNING_MEDIUM).count(), 2);

    // Positional check: the first copy sits before every demonstration, the
    // second after all of them but before the test block.
    let first = rendered.find(WARNING_MEDIUM).unwrap();
    let second = rendered.rfind(WARNING_MEDIUM).unwrap();
    let first_demo_at = rendered.find(&hardened.demonstrations[0].text).unwrap();
    let last_demo = &hardened.demonstrations[hardened.demonstrations.len() - 1];
    let last_demo_at = rendered.rfind(&last_demo.text).unwrap();
    let test_at = rendered.rfind(&hardened.test_sample).unwrap();
    assert!(first < first_demo_at);
    assert!(second > last_demo_at);
    assert!(second < test_at);
}
