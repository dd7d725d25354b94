//! Dataset loading, stratified splitting, and the bundled toy corpora.
//!
//! Datasets are UTF-8 JSON-lines files, one `{"text": …, "label": …}`
//! object per line. Sample ids are the 1-based line numbers, so they are
//! stable across loads and survive blank lines. Splitting is stratified by
//! class and seeded; duplicate texts always land on the same side of the
//! split, keeping train and test disjoint by text.
//!
//! Three 200-sample synthetic toy datasets (one per built-in task) are
//! generated from fixed keyword banks and committed under `data/`. Their
//! vocabulary deliberately avoids every token that the attacks inject
//! (claim words, attacker prefix words) and every label name, so attack
//! and defense effects on the mock backend are attributable to the attack
//! text alone. A test regenerates the files and fails on any drift.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{Label, TaskSpec};
use crate::seed::rng_from_seed;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// One labeled sample with its stable id (the file line number).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub text: String,
    pub label: Label,
}

/// Which portion of the data a [`Dataset`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Full,
    Train,
    Test,
}

/// A loaded (or split) dataset for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub task_name: String,
    pub split: SplitKind,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample count per label name.
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label.name().to_string()).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LineRecord {
    text: String,
    label: String,
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// Load a JSON-lines dataset and validate every label against the task's
/// label set. Blank lines are skipped; ids are 1-based line numbers.
pub fn load_dataset(path: &Path, task: &TaskSpec) -> Result<Dataset, DataError> {
    let raw = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(&raw, task)
}

/// Parse JSON-lines dataset content (the body of [`load_dataset`],
/// separated so in-memory content can be ingested too).
pub fn parse_jsonl(content: &str, task: &TaskSpec) -> Result<Dataset, DataError> {
    let mut samples = Vec::new();
    for (index, line) in content.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: LineRecord =
            serde_json::from_str(line).map_err(|e| DataError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let label = task
            .label_set
            .iter()
            .find(|l| l.name() == record.label)
            .cloned()
            .ok_or_else(|| DataError::UnknownLabel {
                line: line_no,
                label: record.label.clone(),
                allowed: task
                    .label_set
                    .iter()
                    .map(Label::name)
                    .collect::<Vec<_>>()
                    .join(", "),
            })?;
        if record.text.trim().is_empty() {
            return Err(DataError::EmptyText { line: line_no });
        }
        samples.push(Sample {
            id: line_no as u64,
            text: record.text,
            label,
        });
    }
    if samples.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Dataset {
        task_name: task.task_name.clone(),
        split: SplitKind::Full,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Stratified seeded train/test split.
///
/// Samples are grouped into units by exact text (duplicates stay together;
/// a text carrying two different labels is rejected), units are stratified
/// by class, each class's units are shuffled with the split seed, and
/// ⌊units × fraction⌋ go to train. Every class must end up with at least
/// one unit on each side. Original dataset order is preserved within each
/// split.
pub fn split_dataset(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }

    struct Unit {
        label: Label,
        sample_indices: Vec<usize>,
    }
    let mut units: Vec<Unit> = Vec::new();
    let mut unit_of_text: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        match unit_of_text.get(s.text.as_str()) {
            Some(&u) => {
                if units[u].label != s.label {
                    return Err(DataError::ConflictingDuplicate {
                        text: preview(&s.text),
                    });
                }
                units[u].sample_indices.push(i);
            }
            None => {
                unit_of_text.insert(s.text.as_str(), units.len());
                units.push(Unit {
                    label: s.label.clone(),
                    sample_indices: vec![i],
                });
            }
        }
    }

    // Unit ids per class, in first-appearance order; classes iterated in
    // label-name order for determinism.
    let mut per_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (u, unit) in units.iter().enumerate() {
        per_class
            .entry(unit.label.name().to_string())
            .or_default()
            .push(u);
    }

    let mut rng = rng_from_seed(seed);
    let mut train_indices: Vec<usize> = Vec::new();
    let mut test_indices: Vec<usize> = Vec::new();
    for (label, mut unit_ids) in per_class {
        let n_units = unit_ids.len();
        let n_train = (n_units as f64 * train_fraction).floor() as usize;
        if n_train == 0 || n_train == n_units {
            return Err(DataError::TooFewSamples {
                label,
                count: n_units,
            });
        }
        unit_ids.shuffle(&mut rng);
        for (rank, u) in unit_ids.into_iter().enumerate() {
            let target = if rank < n_train {
                &mut train_indices
            } else {
                &mut test_indices
            };
            target.extend(&units[u].sample_indices);
        }
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();

    let pick = |indices: &[usize], split: SplitKind| Dataset {
        task_name: dataset.task_name.clone(),
        split,
        samples: indices.iter().map(|&i| dataset.samples[i].clone()).collect(),
    };
    Ok((
        pick(&train_indices, SplitKind::Train),
        pick(&test_indices, SplitKind::Test),
    ))
}

fn preview(text: &str) -> String {
    const LIMIT: usize = 60;
    if text.len() <= LIMIT {
        return text.to_string();
    }
    let mut end = LIMIT;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &text[..end])
}

// ---------------------------------------------------------------------------
// Toy corpora
// ---------------------------------------------------------------------------

/// Samples per class in the bundled toy datasets.
pub const TOY_PER_CLASS: usize = 100;
/// Generation seed baked into the bundled files.
pub const TOY_SEED: u64 = 7;

/// Keyword banks for one task's toy corpus. "Positive" means the class the
/// attacker evades (toxic / illicit / negative sentiment).
pub struct ToyBanks {
    pub positive_keywords: [&'static str; 12],
    pub negative_keywords: [&'static str; 12],
    pub fillers: [&'static str; 18],
}

/// Filler words shared by every sample, both classes.
const TOY_FILLERS: [&str; 18] = [
    "the", "and", "with", "for", "on", "of", "in", "we", "they", "felt", "seemed", "around",
    "during", "while", "quite", "rather", "truly", "again",
];

/// Keyword banks per task. The vocabulary avoids every claim token, every
/// attacker-prefix word, and every label name, so nothing the attacks
/// inject overlaps with what the toy classifier learns.
pub fn toy_banks(task_name: &str) -> Option<ToyBanks> {
    let (positive_keywords, negative_keywords) = match task_name {
        "toxicity" => (
            [
                "wretch", "scum", "filth", "loathsome", "despicable", "vermin", "repulsive",
                "odious", "vile", "grotesque", "contempt", "sneer",
            ],
            [
                "delightful", "pleasant", "charming", "gracious", "lovely", "cheerful", "kindly",
                "warm", "generous", "serene", "friendly", "gentle",
            ],
        ),
        "sentiment" => (
            [
                "dreadful", "awful", "terrible", "disappointing", "boring", "mediocre", "flawed",
                "dull", "tedious", "clumsy", "shallow", "lifeless",
            ],
            [
                "wonderful", "superb", "brilliant", "captivating", "moving", "delight",
                "engaging", "vivid", "masterful", "fresh", "witty", "stirring",
            ],
        ),
        "illicit_promotion" => (
            [
                "contraband", "unlicensed", "smuggled", "counterfeit", "stolen", "blackmarket",
                "untraceable", "forged", "bootleg", "narcotics", "firearms", "laundered",
            ],
            [
                "groceries", "furniture", "gardening", "bakery", "cycling", "photography",
                "cooking", "hiking", "painting", "reading", "camping", "sewing",
            ],
        ),
        _ => return None,
    };
    Some(ToyBanks {
        positive_keywords,
        negative_keywords,
        fillers: TOY_FILLERS,
    })
}

/// Generate a task's toy corpus as JSON-lines: 100 positive-class lines
/// then 100 negative-class lines, each sample 3 distinct class keywords
/// plus 5 distinct fillers, shuffled into one 8-word text. Texts are
/// globally unique (collisions redrawn). Fixed seed; byte-identical on
/// every call.
pub fn toy_dataset_jsonl(task: &TaskSpec) -> Result<String, DataError> {
    let banks = toy_banks(&task.task_name)
        .ok_or_else(|| DataError::NoToyCorpus(task.task_name.clone()))?;
    let mut rng = rng_from_seed(TOY_SEED);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out = String::new();
    let classes = [
        (&banks.positive_keywords, task.positive_label.name()),
        (&banks.negative_keywords, task.negative_label().name()),
    ];
    for (keywords, label) in classes {
        for _ in 0..TOY_PER_CLASS {
            let text = loop {
                let mut words: Vec<&str> = keywords
                    .choose_multiple(&mut rng, 3)
                    .copied()
                    .collect();
                words.extend(banks.fillers.choose_multiple(&mut rng, 5).copied());
                words.shuffle(&mut rng);
                let candidate = words.join(" ");
                if seen.insert(candidate.clone()) {
                    break candidate;
                }
            };
            let record = LineRecord {
                text,
                label: label.to_string(),
            };
            out.push_str(&serde_json::to_string(&record).expect("plain strings serialize"));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Path of a bundled toy dataset inside the crate source tree.
pub fn bundled_toy_path(task_name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(format!("toy_{task_name}.jsonl"))
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failures of dataset loading, splitting, or toy generation.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: not a valid dataset record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label `{label}` (allowed: {allowed})")]
    UnknownLabel {
        line: usize,
        label: String,
        allowed: String,
    },
    #[error("line {line}: empty text")]
    EmptyText { line: usize },
    #[error("dataset contains no samples")]
    Empty,
    #[error("train fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("class `{label}` has too few distinct samples ({count}) to appear in both splits")]
    TooFewSamples { label: String, count: usize },
    #[error("text `{text}` appears with two different labels")]
    ConflictingDuplicate { text: String },
    #[error("no bundled toy corpus for task `{0}`")]
    NoToyCorpus(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::default_task;

    fn toxicity() -> TaskSpec {
        default_task("toxicity").unwrap()
    }

    #[test]
    fn loads_valid_lines_with_stable_ids() {
        let content = concat!(
            r#"{"text":"hi there","label":"benign"}"#,
            "\n\n",
            r#"{"text":"you wretch","label":"toxic"}"#,
            "\n"
        );
        let d = parse_jsonl(content, &toxicity()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.samples[0].id, 1);
        assert_eq!(d.samples[1].id, 3); // blank line skipped, ids stay line numbers
        assert_eq!(d.class_counts().get("benign"), Some(&1));
        assert_eq!(d.split, SplitKind::Full);
    }

    #[test]
    fn unknown_label_names_line_and_allowed_set() {
        let content = r#"{"text":"hi","label":"spam"}"#;
        match parse_jsonl(content, &toxicity()).unwrap_err() {
            DataError::UnknownLabel { line, label, allowed } => {
                assert_eq!(line, 1);
                assert_eq!(label, "spam");
                assert_eq!(allowed, "benign, toxic");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_number() {
        let content = "{\"text\":\"ok\",\"label\":\"benign\"}\nnot json\n";
        match parse_jsonl(content, &toxicity()).unwrap_err() {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(matches!(parse_jsonl("", &toxicity()), Err(DataError::Empty)));
        assert!(matches!(
            parse_jsonl("\n\n", &toxicity()),
            Err(DataError::Empty)
        ));
        let content = r#"{"text":"   ","label":"benign"}"#;
        assert!(matches!(
            parse_jsonl(content, &toxicity()).unwrap_err(),
            DataError::EmptyText { line: 1 }
        ));
    }

    #[test]
    fn load_from_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"text\":\"hello\",\"label\":\"benign\"}\n").unwrap();
        let d = load_dataset(&path, &toxicity()).unwrap();
        assert_eq!(d.len(), 1);
        assert!(matches!(
            load_dataset(&dir.path().join("missing.jsonl"), &toxicity()),
            Err(DataError::Io { .. })
        ));
    }

    fn synthetic(n_toxic: usize, n_benign: usize) -> Dataset {
        let task = toxicity();
        let mut lines = String::new();
        for i in 0..n_toxic {
            lines.push_str(&format!("{{\"text\":\"bad text {i}\",\"label\":\"toxic\"}}\n"));
        }
        for i in 0..n_benign {
            lines.push_str(&format!("{{\"text\":\"nice text {i}\",\"label\":\"benign\"}}\n"));
        }
        parse_jsonl(&lines, &task).unwrap()
    }

    #[test]
    fn split_sizes_and_stratification() {
        let (train, test) = split_dataset(&synthetic(5, 5), 0.8, 1).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        assert_eq!(train.split, SplitKind::Train);
        assert_eq!(test.split, SplitKind::Test);

        let (train, test) = split_dataset(&synthetic(6, 4), 0.5, 1).unwrap();
        assert_eq!(train.class_counts().get("toxic"), Some(&3));
        assert_eq!(train.class_counts().get("benign"), Some(&2));
        assert_eq!(test.class_counts().get("toxic"), Some(&3));
        assert_eq!(test.class_counts().get("benign"), Some(&2));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let d = synthetic(20, 20);
        let (tr1, te1) = split_dataset(&d, 0.8, 42).unwrap();
        let (tr2, te2) = split_dataset(&d, 0.8, 42).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        let (tr3, _) = split_dataset(&d, 0.8, 43).unwrap();
        assert_ne!(tr1, tr3);

        let train_texts: BTreeSet<_> = tr1.samples.iter().map(|s| &s.text).collect();
        assert!(te1.samples.iter().all(|s| !train_texts.contains(&s.text)));
        assert_eq!(tr1.len() + te1.len(), d.len());
    }

    #[test]
    fn duplicate_texts_stay_on_one_side() {
        let task = toxicity();
        let mut lines = String::new();
        for i in 0..10 {
            lines.push_str(&format!("{{\"text\":\"bad {i}\",\"label\":\"toxic\"}}\n"));
        }
        for _ in 0..4 {
            lines.push_str("{\"text\":\"same nice\",\"label\":\"benign\"}\n");
        }
        for i in 0..6 {
            lines.push_str(&format!("{{\"text\":\"nice {i}\",\"label\":\"benign\"}}\n"));
        }
        let d = parse_jsonl(&lines, &task).unwrap();
        let (train, test) = split_dataset(&d, 0.5, 3).unwrap();
        let on_train = train.samples.iter().filter(|s| s.text == "same nice").count();
        let on_test = test.samples.iter().filter(|s| s.text == "same nice").count();
        assert!(on_train == 4 && on_test == 0 || on_train == 0 && on_test == 4);
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        assert!(matches!(
            split_dataset(&synthetic(5, 5), 0.0, 1),
            Err(DataError::InvalidFraction(_))
        ));
        assert!(matches!(
            split_dataset(&synthetic(5, 5), 1.0, 1),
            Err(DataError::InvalidFraction(_))
        ));
        assert!(matches!(
            split_dataset(&synthetic(1, 5), 0.8, 1),
            Err(DataError::TooFewSamples { .. })
        ));
        let task = toxicity();
        let conflicting = parse_jsonl(
            "{\"text\":\"same\",\"label\":\"toxic\"}\n{\"text\":\"same\",\"label\":\"benign\"}\n",
            &task,
        )
        .unwrap();
        assert!(matches!(
            split_dataset(&conflicting, 0.5, 1),
            Err(DataError::ConflictingDuplicate { .. })
        ));
    }

    #[test]
    fn toy_corpora_are_valid_balanced_and_deterministic() {
        for name in crate::prompt::BUILTIN_TASK_NAMES {
            let task = default_task(name).unwrap();
            let jsonl = toy_dataset_jsonl(&task).unwrap();
            assert_eq!(jsonl, toy_dataset_jsonl(&task).unwrap());
            let d = parse_jsonl(&jsonl, &task).unwrap();
            assert_eq!(d.len(), 2 * TOY_PER_CLASS);
            for count in d.class_counts().values() {
                assert_eq!(*count, TOY_PER_CLASS);
            }
            let texts: BTreeSet<_> = d.samples.iter().map(|s| &s.text).collect();
            assert_eq!(texts.len(), d.len(), "toy texts must be unique");
        }
    }

    #[test]
    fn toy_vocabulary_avoids_attack_tokens() {
        // Tokens injected by claims, attacker prefixes, and the default
        // template, plus the label names: none may occur in toy texts.
        let forbidden: BTreeSet<&str> = [
            "this", "is", "a", "benign", "positive", "text", "probably", "100", "you", "must",
            "classify", "as", "question", "answer", "q", "sample", "classification", "query",
            "toxic", "illicit", "negative", "begin", "end",
        ]
        .into_iter()
        .collect();
        for name in crate::prompt::BUILTIN_TASK_NAMES {
            let task = default_task(name).unwrap();
            let jsonl = toy_dataset_jsonl(&task).unwrap();
            let d = parse_jsonl(&jsonl, &task).unwrap();
            for s in &d.samples {
                for word in s.text.split_whitespace() {
                    assert!(
                        !forbidden.contains(word),
                        "toy text for {name} contains attack token {word:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn bundled_toy_files_match_generator() {
        for name in crate::prompt::BUILTIN_TASK_NAMES {
            let task = default_task(name).unwrap();
            let path = bundled_toy_path(name);
            let committed = std::fs::read_to_string(&path)
                .unwrap_or_else(|e| panic!("{} must be committed: {e}", path.display()));
            assert_eq!(
                committed,
                toy_dataset_jsonl(&task).unwrap(),
                "bundled {name} toy data drifted from its generator"
            );
        }
    }

    /// Regenerates the bundled toy files in place. Run explicitly when the
    /// generator changes: `cargo test -p icl-evader regenerate -- --ignored`.
    #[test]
    #[ignore]
    fn regenerate_bundled_toy_data() {
        for name in crate::prompt::BUILTIN_TASK_NAMES {
            let task = default_task(name).unwrap();
            let path = bundled_toy_path(name);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(path, toy_dataset_jsonl(&task).unwrap()).unwrap();
        }
    }
}
