//! Experiment orchestration: clean, attack, and defense evaluations.
//!
//! One `ExperimentConfig` drives a whole run. Every random choice derives
//! from `master_seed` through the domain-separated seed tree — the split,
//! the demonstration draw, each sample's attack, each adversarial-pool
//! entry, and the hardening — so a run is a pure function of its config,
//! and reports are byte-identical at any parallelism level.
//!
//! Evaluation discipline:
//! * demonstrations and benign pools come from the train split only, and a
//!   violation of train/eval text disjointness is a hard error;
//! * adversarial recall is computed over exactly the positive samples whose
//!   clean recall is computed (paired cells in one row);
//! * attacked texts are generated once, against the vanilla configuration,
//!   and reused verbatim when scoring the hardened configuration;
//! * benign pools are screened with the run's own demonstrations: train
//!   negatives the classifier already flags as positive are excluded.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    default_claim, AttackConfig, AttackError, AttackKind, BenignPool, FakeClaimConfig,
    HideFormat, HighlightFormat, InsertLocation, InsertPosition, NeedleConfig,
    TemplateAttackConfig,
};
use crate::backend::{classify, Backend, BackendConfig, BackendError, BackendKind,
    ClassificationResult};
use crate::data::{load_dataset, parse_jsonl, split_dataset, toy_dataset_jsonl, DataError, Sample};
use crate::defense::{harden, DefenseError};
use crate::metrics::{DEFAULT_AD_THRESHOLD, DEFAULT_LAMBDA};
use crate::prompt::{
    default_task, render_prompt, IclPrompt, LabeledSample, PromptError, PromptTemplate, TaskSpec,
};
use crate::recipe::DefenseRecipe;
use crate::report::{
    compute_aggregates, ConfigEcho, DefenseParams, PredCell, ReportError, RunMode, RunReport,
    SampleRow,
};
use crate::seed::{derive_seed, rng_from_seed, sample_seed, SeedDomain};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Everything a run needs. Maps 1:1 onto the TOML config file; unknown keys
/// are rejected so typos fail loudly. All fields have defaults, so an empty
/// config is a valid clean evaluation of the bundled toy data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One of the built-in task names.
    pub task_name: String,
    /// JSONL dataset path; `None` uses the bundled toy corpus for the task.
    pub data_path: Option<PathBuf>,
    /// Demonstrations per prompt.
    pub n_shots: u32,
    /// Train share of the stratified split, in (0, 1).
    pub train_fraction: f64,
    /// Root of the run's seed tree.
    pub master_seed: u64,
    /// Worker threads for sample-level parallelism (results are identical
    /// at any value).
    pub parallelism: usize,
    /// Cap on evaluated samples (clean/defense: the evaluation set; attack:
    /// the positive samples).
    pub sample_limit: Option<usize>,
    pub backend: BackendConfig,
    /// Prompt template override; `None` uses the default template.
    pub template: Option<PromptTemplate>,
    /// Present ⇒ attack evaluation (or defense evaluation when `defense` is
    /// also present).
    pub attack: Option<AttackConfig>,
    /// Present ⇒ defense evaluation; requires `attack`.
    pub defense: Option<DefenseRecipe>,
    /// Accuracy-drop weight in the defense-effect score.
    pub lambda: f64,
    /// Maximum admissible accuracy drop, in points.
    pub ad_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task_name: "toxicity".to_string(),
            data_path: None,
            n_shots: 32,
            train_fraction: 0.8,
            master_seed: 0,
            parallelism: 1,
            sample_limit: None,
            backend: BackendConfig::default(),
            template: None,
            attack: None,
            defense: None,
            lambda: DEFAULT_LAMBDA,
            ad_threshold: DEFAULT_AD_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_shots == 0 {
            return Err(EvalError::Config("n_shots must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(EvalError::Config("parallelism must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(EvalError::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(EvalError::Config("lambda must be finite and ≥ 0".into()));
        }
        if !self.ad_threshold.is_finite() || self.ad_threshold < 0.0 {
            return Err(EvalError::Config("ad_threshold must be finite and ≥ 0".into()));
        }
        default_task(&self.task_name)?;
        if let Some(t) = &self.template {
            // Deserialized templates bypass the constructor; re-validate.
            PromptTemplate::new(
                t.sample_prefix.clone(),
                t.answer_prefix.clone(),
                t.separator.clone(),
                t.test_tag.clone(),
            )?;
        }
        Ok(())
    }

    fn effective_template(&self) -> PromptTemplate {
        self.template.clone().unwrap_or_default()
    }
}

// ---------------------------------------------------------------------------
// Parallel map
// ---------------------------------------------------------------------------

/// Map `f` over `items` with up to `parallelism` scoped threads, preserving
/// input order in the result. Items are dealt to workers in contiguous
/// chunks, so output assembly is a deterministic concatenation no matter
/// how the threads interleave.
pub fn parallel_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk_size = items.len().div_ceil(workers);
    let mut chunks_out: Vec<Vec<R>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk_size)
            .map(|chunk| scope.spawn(|| chunk.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        chunks_out = handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect();
    });
    chunks_out.into_iter().flatten().collect()
}

// ---------------------------------------------------------------------------
// Run preparation
// ---------------------------------------------------------------------------

struct Prepared {
    task: TaskSpec,
    backend: Backend,
    train: Vec<Sample>,
    /// Full test split in dataset order (runners slice it per mode).
    test: Vec<Sample>,
    demo_texts: BTreeSet<String>,
    base_prompt: IclPrompt,
}

impl Prepared {
    fn positive(&self) -> &str {
        self.task.positive_label.name()
    }

    fn classify_text(
        &self,
        backend: &Backend,
        prompt: &IclPrompt,
        text: &str,
    ) -> Result<ClassificationResult, BackendError> {
        let mut p = prompt.clone();
        p.test_sample = text.to_string();
        classify(backend, &render_prompt(&p), &self.task.label_set)
    }
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, EvalError> {
    cfg.validate()?;
    let task = default_task(&cfg.task_name)?;
    let template = cfg.effective_template();

    let dataset = match &cfg.data_path {
        Some(path) => load_dataset(path, &task)?,
        None => parse_jsonl(&toy_dataset_jsonl(&task)?, &task)?,
    };
    let (train, test) = split_dataset(
        &dataset,
        cfg.train_fraction,
        derive_seed(cfg.master_seed, SeedDomain::Split, 0),
    )?;

    let n_shots = cfg.n_shots as usize;
    if train.len() < n_shots {
        return Err(EvalError::NotEnoughDemos {
            needed: n_shots,
            available: train.len(),
        });
    }
    let mut indices: Vec<usize> = (0..train.len()).collect();
    indices.shuffle(&mut rng_from_seed(derive_seed(
        cfg.master_seed,
        SeedDomain::Demos,
        0,
    )));
    indices.truncate(n_shots);
    let demos: Vec<LabeledSample> = indices
        .iter()
        .map(|&i| LabeledSample::new(train.samples[i].text.clone(), train.samples[i].label.clone()))
        .collect::<Result<_, _>>()?;
    let demo_texts: BTreeSet<String> = demos.iter().map(|d| d.text.clone()).collect();

    // Train/eval disjointness by text is an invariant of the split; a
    // violation here means the inputs are corrupt, so fail hard.
    let eval_texts: BTreeSet<&str> = test.samples.iter().map(|s| s.text.as_str()).collect();
    if let Some(overlap) = demo_texts.iter().find(|t| eval_texts.contains(t.as_str())) {
        return Err(EvalError::Disjointness {
            what: "demonstration",
            text: overlap.clone(),
        });
    }

    let backend = Backend::from_config(&cfg.backend, &template)?;
    let base_prompt = IclPrompt::new(task.clone(), template, demos, "placeholder")?;
    Ok(Prepared {
        task,
        backend,
        train: train.samples,
        test: test.samples,
        demo_texts,
        base_prompt,
    })
}

pub(crate) fn config_echo(cfg: &ExperimentConfig) -> ConfigEcho {
    ConfigEcho {
        task: cfg.task_name.clone(),
        n_shots: cfg.n_shots,
        master_seed: cfg.master_seed,
        backend: cfg.backend.kind,
        model: match cfg.backend.kind {
            BackendKind::Mock => None,
            BackendKind::Http => cfg.backend.model_name.clone(),
        },
        train_fraction: cfg.train_fraction,
        sample_limit: cfg.sample_limit,
        attack: cfg.attack.clone(),
        recipe: cfg.defense.clone(),
    }
}

fn limited(samples: &[Sample], limit: Option<usize>) -> &[Sample] {
    match limit {
        Some(k) => &samples[..k.min(samples.len())],
        None => samples,
    }
}

// ---------------------------------------------------------------------------
// Benign pool
// ---------------------------------------------------------------------------

/// Train negatives, minus the prompt's demonstrations, minus candidates the
/// classifier (with this run's demonstrations) already predicts positive.
/// Screening failures are hard errors: a silently shrunken pool would bias
/// every pool-consuming attack.
fn screened_benign_pool(
    p: &Prepared,
    cfg: &ExperimentConfig,
) -> Result<BenignPool, EvalError> {
    let candidates: Vec<&Sample> = p
        .train
        .iter()
        .filter(|s| s.label != p.task.positive_label && !p.demo_texts.contains(&s.text))
        .collect();
    let verdicts = parallel_map(&candidates, cfg.parallelism, |s| {
        p.classify_text(&p.backend, &p.base_prompt, &s.text)
    });
    let mut kept = Vec::new();
    for (s, verdict) in candidates.iter().zip(verdicts) {
        let v = verdict.map_err(EvalError::PoolScreening)?;
        if v.predicted != p.task.positive_label {
            kept.push(s.text.clone());
        }
    }
    BenignPool::new(kept).map_err(|_| EvalError::EmptyBenignPool)
}

fn check_pool_capacity(attack: &AttackConfig, pool: Option<&BenignPool>) -> Result<(), EvalError> {
    if let AttackConfig::Needle(c) = attack {
        let available = pool.map_or(0, BenignPool::len);
        if available < c.n_benign as usize {
            return Err(EvalError::Attack(AttackError::InsufficientPool {
                needed: c.n_benign as usize,
                available,
            }));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Representative attacks
// ---------------------------------------------------------------------------

/// The canonical configuration of each attack, used to populate
/// adversarial-demonstration pools (and as the CLI default when only an
/// attack kind is given): fake claim = default claim ×8 at the end;
/// template = single pseudo-demonstration with `Q: `/`A: ` prefixes and
/// generic labels; needle = 16 bare haystack members, sample in the middle.
pub fn representative_attack(kind: AttackKind, task: &TaskSpec) -> AttackConfig {
    match kind {
        AttackKind::FakeClaim => AttackConfig::FakeClaim(FakeClaimConfig {
            claims: vec![default_claim(&task.task_name)],
            n_claims: 8,
            position: InsertPosition::End,
            seed: 0,
        }),
        AttackKind::Template => AttackConfig::Template(TemplateAttackConfig {
            sample_prefix_atk: "Q: ".to_string(),
            answer_prefix_atk: "A: ".to_string(),
            label_pos: "good".to_string(),
            label_neg: "bad".to_string(),
            n_demos: 1,
            test_position: 1,
            demo_separator: "\n".to_string(),
            seed: 0,
        }),
        AttackKind::Needle => AttackConfig::Needle(NeedleConfig {
            n_benign: 16,
            hide_format: HideFormat::Null,
            highlight_format: HighlightFormat::Null,
            insert_location: InsertLocation::Middle,
            joiner: " ".to_string(),
            seed: 0,
        }),
    }
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

/// Dispatch on the config: no attack → clean eval; attack → attack eval;
/// attack + defense → defense eval. A defense without an attack has nothing
/// to defend against and is rejected.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, EvalError> {
    cfg.validate()?;
    match (&cfg.attack, &cfg.defense) {
        (None, None) => run_clean_eval(cfg),
        (Some(_), None) => run_attack_eval(cfg),
        (Some(_), Some(_)) => run_defense_eval(cfg),
        (None, Some(_)) => Err(EvalError::DefenseRequiresAttack),
    }
}

/// Score every evaluation sample once with the vanilla prompt.
pub fn run_clean_eval(cfg: &ExperimentConfig) -> Result<RunReport, EvalError> {
    let p = prepare(cfg)?;
    let eval = limited(&p.test, cfg.sample_limit);
    if eval.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let rows = parallel_map(eval, cfg.parallelism, |s| {
        let mut row = SampleRow::new(s.id, s.label.name());
        row.clean = Some(PredCell::from_result(p.classify_text(
            &p.backend,
            &p.base_prompt,
            &s.text,
        )));
        row
    });
    let aggregates = compute_aggregates(
        RunMode::Clean,
        &rows,
        p.positive(),
        DefenseParams { lambda: cfg.lambda, ad_threshold: cfg.ad_threshold },
    )?;
    Ok(RunReport {
        mode: RunMode::Clean,
        config: config_echo(cfg),
        aggregates,
        rows,
    })
}

/// Score each positive evaluation sample clean and attacked, with the same
/// demonstrations, and aggregate the paired recalls into an attack report.
pub fn run_attack_eval(cfg: &ExperimentConfig) -> Result<RunReport, EvalError> {
    let attack = cfg.attack.clone().ok_or(EvalError::MissingAttack)?;
    let p = prepare(cfg)?;

    let positives: Vec<Sample> = p
        .test
        .iter()
        .filter(|s| s.label == p.task.positive_label)
        .cloned()
        .collect();
    let eval = limited(&positives, cfg.sample_limit);
    if eval.is_empty() {
        return Err(EvalError::EmptyPositiveClass);
    }

    let pool = if attack.needs_pool() {
        Some(screened_benign_pool(&p, cfg)?)
    } else {
        None
    };
    check_pool_capacity(&attack, pool.as_ref())?;

    let rows: Vec<Result<SampleRow, EvalError>> = parallel_map(eval, cfg.parallelism, |s| {
        let adv_text = attack
            .with_seed(sample_seed(cfg.master_seed, s.id))
            .apply(&s.text, pool.as_ref())?;
        let mut row = SampleRow::new(s.id, s.label.name());
        row.clean = Some(PredCell::from_result(p.classify_text(
            &p.backend,
            &p.base_prompt,
            &s.text,
        )));
        row.adv = Some(PredCell::from_result(p.classify_text(
            &p.backend,
            &p.base_prompt,
            &adv_text,
        )));
        Ok(row)
    });
    let rows: Vec<SampleRow> = rows.into_iter().collect::<Result<_, _>>()?;
    let aggregates = compute_aggregates(
        RunMode::Attack,
        &rows,
        p.positive(),
        DefenseParams { lambda: cfg.lambda, ad_threshold: cfg.ad_threshold },
    )?;
    Ok(RunReport {
        mode: RunMode::Attack,
        config: config_echo(cfg),
        aggregates,
        rows,
    })
}

/// The adversarial-demonstration pools a recipe needs for a prompt with
/// `n_shots` demonstrations: each attack kind with a non-zero demonstration
/// count, populated by attacking every eligible train positive with the
/// representative attack of that kind (true labels preserved).
fn build_adv_pools(
    p: &Prepared,
    cfg: &ExperimentConfig,
    recipe: &DefenseRecipe,
    n_shots: usize,
    benign_pool: Option<&BenignPool>,
) -> Result<BTreeMap<AttackKind, Vec<LabeledSample>>, EvalError> {
    let mut pools = BTreeMap::new();
    let Some(adv_cfg) = &recipe.adv_demo else {
        return Ok(pools);
    };
    let kinds: Vec<AttackKind> = adv_cfg
        .counts(n_shots)
        .into_iter()
        .filter(|(_, c)| *c > 0)
        .map(|(k, _)| k)
        .collect();
    if kinds.is_empty() {
        return Ok(pools);
    }
    let sources: Vec<&Sample> = p
        .train
        .iter()
        .filter(|s| s.label == p.task.positive_label && !p.demo_texts.contains(&s.text))
        .collect();
    if sources.is_empty() {
        return Err(EvalError::EmptyAdvPool);
    }
    for kind in kinds {
        let rep = representative_attack(kind, &p.task);
        check_pool_capacity(&rep, benign_pool)?;
        let mut entries = Vec::with_capacity(sources.len());
        for src in &sources {
            let attacked = rep
                .with_seed(derive_seed(cfg.master_seed, SeedDomain::AdvPool, src.id))
                .apply(&src.text, benign_pool)?;
            entries.push(LabeledSample::new(attacked, src.label.clone())?);
        }
        pools.insert(kind, entries);
    }
    Ok(pools)
}

/// Four passes under one master seed: clean and attacked samples, each
/// against the vanilla and the hardened prompt. Attacked texts are
/// generated once (vanilla pools, per-sample seeds) and reused for the
/// hardened pass.
pub fn run_defense_eval(cfg: &ExperimentConfig) -> Result<RunReport, EvalError> {
    let attack = cfg.attack.clone().ok_or(EvalError::MissingAttack)?;
    let recipe = cfg.defense.clone().ok_or(EvalError::MissingRecipe)?;
    if recipe.is_empty() {
        return Err(EvalError::Defense(DefenseError::EmptyRecipe));
    }
    let p = prepare(cfg)?;

    let eval = limited(&p.test, cfg.sample_limit);
    if eval.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    if !eval.iter().any(|s| s.label == p.task.positive_label) {
        return Err(EvalError::EmptyPositiveClass);
    }
    let eval_texts: BTreeSet<&str> = eval.iter().map(|s| s.text.as_str()).collect();

    // Benign pool: needed by the evaluated attack and/or by representative
    // pool-consuming attacks that populate the adversarial pools.
    let pool_kinds_need_benign = recipe.adv_demo.as_ref().is_some_and(|a| {
        a.counts(cfg.n_shots as usize)
            .into_iter()
            .any(|(k, c)| c > 0 && k != AttackKind::FakeClaim)
    });
    let benign_pool = if attack.needs_pool() || pool_kinds_need_benign {
        let pool = screened_benign_pool(&p, cfg)?;
        if let Some(t) = pool.samples().iter().find(|t| eval_texts.contains(t.as_str())) {
            return Err(EvalError::Disjointness { what: "benign pool", text: t.clone() });
        }
        Some(pool)
    } else {
        None
    };
    check_pool_capacity(&attack, benign_pool.as_ref())?;

    let adv_pools = build_adv_pools(&p, cfg, &recipe, cfg.n_shots as usize, benign_pool.as_ref())?;
    let clean_pool: Vec<LabeledSample> = p
        .train
        .iter()
        .map(|s| LabeledSample::new(s.text.clone(), s.label.clone()))
        .collect::<Result<_, _>>()?;
    if let Some(s) = clean_pool.iter().find(|s| eval_texts.contains(s.text.as_str())) {
        return Err(EvalError::Disjointness { what: "clean pool", text: s.text.clone() });
    }

    let hardened = harden(&p.base_prompt, &recipe, &clean_pool, &adv_pools, cfg.master_seed)?;
    let hardened_backend = p.backend.with_template(&hardened.template);

    let rows: Vec<Result<SampleRow, EvalError>> = parallel_map(eval, cfg.parallelism, |s| {
        let mut row = SampleRow::new(s.id, s.label.name());
        row.clean = Some(PredCell::from_result(p.classify_text(
            &p.backend,
            &p.base_prompt,
            &s.text,
        )));
        row.clean_hardened = Some(PredCell::from_result(p.classify_text(
            &hardened_backend,
            &hardened,
            &s.text,
        )));
        if s.label == p.task.positive_label {
            let adv_text = attack
                .with_seed(sample_seed(cfg.master_seed, s.id))
                .apply(&s.text, benign_pool.as_ref())?;
            row.adv = Some(PredCell::from_result(p.classify_text(
                &p.backend,
                &p.base_prompt,
                &adv_text,
            )));
            row.adv_hardened = Some(PredCell::from_result(p.classify_text(
                &hardened_backend,
                &hardened,
                &adv_text,
            )));
        }
        Ok(row)
    });
    let rows: Vec<SampleRow> = rows.into_iter().collect::<Result<_, _>>()?;
    let aggregates = compute_aggregates(
        RunMode::Defense,
        &rows,
        p.positive(),
        DefenseParams { lambda: cfg.lambda, ad_threshold: cfg.ad_threshold },
    )?;
    Ok(RunReport {
        mode: RunMode::Defense,
        config: config_echo(cfg),
        aggregates,
        rows,
    })
}

/// The vanilla prompt a configuration prepares and the hardened prompt its
/// defense recipe produces from it.
#[derive(Debug, Clone)]
pub struct HardenedPrompts {
    pub base: IclPrompt,
    pub hardened: IclPrompt,
}

/// Run the hardening pipeline for a configuration without scoring anything:
/// prepare demonstrations from the dataset, screen the benign pool when a
/// pool-consuming attack kind participates in the adversarial quotas,
/// populate the adversarial pools, and apply the recipe.
///
/// `base_override` substitutes a caller-supplied prompt for the prepared one
/// (demonstration and adversarial pools still come from the configured
/// dataset); the override's own demonstration count drives the
/// adversarial-demonstration quotas.
pub fn harden_from_config(
    cfg: &ExperimentConfig,
    base_override: Option<IclPrompt>,
) -> Result<HardenedPrompts, EvalError> {
    let recipe = cfg.defense.clone().ok_or(EvalError::MissingRecipe)?;
    if recipe.is_empty() {
        return Err(EvalError::Defense(DefenseError::EmptyRecipe));
    }
    let p = prepare(cfg)?;
    let base = base_override.unwrap_or_else(|| p.base_prompt.clone());
    let n_shots = base.demonstrations.len();

    let pool_kinds_need_benign = recipe.adv_demo.as_ref().is_some_and(|a| {
        a.counts(n_shots)
            .into_iter()
            .any(|(k, c)| c > 0 && k != AttackKind::FakeClaim)
    });
    let benign_pool = if pool_kinds_need_benign {
        Some(screened_benign_pool(&p, cfg)?)
    } else {
        None
    };
    let adv_pools = build_adv_pools(&p, cfg, &recipe, n_shots, benign_pool.as_ref())?;
    let clean_pool: Vec<LabeledSample> = p
        .train
        .iter()
        .map(|s| LabeledSample::new(s.text.clone(), s.label.clone()))
        .collect::<Result<_, _>>()?;
    let hardened = harden(&base, &recipe, &clean_pool, &adv_pools, cfg.master_seed)?;
    Ok(HardenedPrompts { base, hardened })
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failures of experiment orchestration.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("benign-pool screening failed: {0}")]
    PoolScreening(BackendError),
    #[error("train split has {available} samples, need {needed} demonstrations")]
    NotEnoughDemos { needed: usize, available: usize },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("no positive-class samples to attack")]
    EmptyPositiveClass,
    #[error("benign pool is empty after exclusions and screening")]
    EmptyBenignPool,
    #[error("no train positives available for adversarial-demonstration pools")]
    EmptyAdvPool,
    #[error("attack evaluation requires an attack config")]
    MissingAttack,
    #[error("defense evaluation requires a defense recipe")]
    MissingRecipe,
    #[error("defense evaluation requires an attack to defend against")]
    DefenseRequiresAttack,
    #[error("{what} text overlaps evaluation set: {text:?}")]
    Disjointness { what: &'static str, text: String },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipe::parse_recipe;
    use crate::report::{audit_report, report_to_json};

    fn toy_cfg() -> ExperimentConfig {
        ExperimentConfig {
            task_name: "toxicity".to_string(),
            n_shots: 8,
            master_seed: 42,
            sample_limit: Some(20),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<u64> = (0..23).collect();
        let expected: Vec<u64> = items.iter().map(|x| x * x).collect();
        for par in [1, 2, 5, 8, 64] {
            assert_eq!(parallel_map(&items, par, |x| x * x), expected);
        }
        assert_eq!(parallel_map(&Vec::<u64>::new(), 4, |x| *x), Vec::<u64>::new());
    }

    #[test]
    fn clean_eval_is_accurate_and_parallelism_invariant() {
        let mut cfg = toy_cfg();
        // Eight demonstrations cover too little of the toy keyword banks for a
        // reliable accuracy floor; the 32-shot default sees nearly every
        // keyword and classifies the toy corpus almost perfectly.
        cfg.n_shots = 32;
        let r1 = run(&cfg).unwrap();
        cfg.parallelism = 3;
        let r3 = run(&cfg).unwrap();
        assert_eq!(report_to_json(&r1), report_to_json(&r3));
        assert_eq!(r1.mode, RunMode::Clean);
        assert_eq!(r1.rows.len(), 20);
        assert!(r1.rows.windows(2).all(|w| w[0].sample_id < w[1].sample_id));
        let acc = r1.aggregates.clean.unwrap().accuracy.unwrap();
        assert!(acc >= 0.9, "toy clean accuracy {acc} unexpectedly low");
        audit_report(&r1, "toxic").unwrap();
    }

    #[test]
    fn identity_attack_has_zero_asr() {
        // A single empty claim appends one space: token stream unchanged,
        // so clean and adversarial verdicts agree exactly.
        let mut cfg = toy_cfg();
        cfg.attack = Some(AttackConfig::FakeClaim(FakeClaimConfig {
            claims: vec![String::new()],
            n_claims: 1,
            position: InsertPosition::End,
            seed: 0,
        }));
        let r = run(&cfg).unwrap();
        assert_eq!(r.mode, RunMode::Attack);
        let atk = r.aggregates.attack.unwrap();
        assert_eq!(atk.asr, 0.0);
        assert!(r.rows.iter().all(|row| row.true_label == "toxic"));
    }

    #[test]
    fn fake_claim_attack_evades_on_toy_data() {
        let mut cfg = toy_cfg();
        let task = default_task("toxicity").unwrap();
        cfg.attack = Some(representative_attack(AttackKind::FakeClaim, &task));
        let r = run(&cfg).unwrap();
        let atk = r.aggregates.attack.unwrap();
        assert!(atk.asr > 0.0, "expected positive ASR, got {}", atk.asr);
        audit_report(&r, "toxic").unwrap();
    }

    #[test]
    fn attack_rows_pair_clean_and_adv() {
        let mut cfg = toy_cfg();
        cfg.sample_limit = Some(5);
        let task = default_task("toxicity").unwrap();
        cfg.attack = Some(representative_attack(AttackKind::Needle, &task));
        let r = run(&cfg).unwrap();
        assert_eq!(r.rows.len(), 5);
        for row in &r.rows {
            assert!(row.clean.as_ref().unwrap().is_ok());
            assert!(row.adv.as_ref().unwrap().is_ok());
            assert!(row.clean_hardened.is_none());
        }
    }

    #[test]
    fn defense_eval_populates_all_passes() {
        let mut cfg = toy_cfg();
        cfg.sample_limit = Some(16);
        let task = default_task("toxicity").unwrap();
        cfg.attack = Some(representative_attack(AttackKind::FakeClaim, &task));
        cfg.defense = Some(parse_recipe("p25_length6_CWmessage1_CWpos1").unwrap());
        let r = run(&cfg).unwrap();
        assert_eq!(r.mode, RunMode::Defense);
        for row in &r.rows {
            assert!(row.clean.is_some() && row.clean_hardened.is_some());
            let positive = row.true_label == "toxic";
            assert_eq!(row.adv.is_some(), positive);
            assert_eq!(row.adv_hardened.is_some(), positive);
        }
        let agg = &r.aggregates;
        assert!(agg.defense.is_some());
        assert!(agg.clean.is_some() && agg.clean_hardened.is_some());
        assert!(agg.attack.is_some() && agg.attack_hardened.is_some());
        audit_report(&r, "toxic").unwrap();
    }

    #[test]
    fn defense_eval_is_parallelism_invariant() {
        let mut cfg = toy_cfg();
        cfg.sample_limit = Some(12);
        let task = default_task("toxicity").unwrap();
        cfg.attack = Some(representative_attack(AttackKind::Template, &task));
        cfg.defense = Some(parse_recipe("p25_length6_CWmessage1_CWpos1").unwrap());
        let a = run(&cfg).unwrap();
        cfg.parallelism = 7;
        let b = run(&cfg).unwrap();
        assert_eq!(report_to_json(&a), report_to_json(&b));
    }

    #[test]
    fn config_dispatch_errors() {
        let mut cfg = toy_cfg();
        cfg.defense = Some(parse_recipe("p10").unwrap());
        assert!(matches!(run(&cfg), Err(EvalError::DefenseRequiresAttack)));

        let mut cfg = toy_cfg();
        cfg.n_shots = 1000;
        assert!(matches!(
            run(&cfg),
            Err(EvalError::NotEnoughDemos { needed: 1000, available: 160 })
        ));

        let mut cfg = toy_cfg();
        cfg.train_fraction = 1.5;
        assert!(matches!(run(&cfg), Err(EvalError::Config(_))));

        let mut cfg = toy_cfg();
        cfg.task_name = "astrology".to_string();
        assert!(matches!(run(&cfg), Err(EvalError::Prompt(_))));
    }

    #[test]
    fn needle_pool_shortfall_is_a_hard_error() {
        let mut cfg = toy_cfg();
        let task = default_task("toxicity").unwrap();
        cfg.attack = Some(AttackConfig::Needle(NeedleConfig {
            n_benign: 1000,
            hide_format: HideFormat::Null,
            highlight_format: HighlightFormat::Null,
            insert_location: InsertLocation::Middle,
            joiner: " ".to_string(),
            seed: 0,
        }));
        let _ = task;
        assert!(matches!(
            run(&cfg),
            Err(EvalError::Attack(AttackError::InsufficientPool { .. }))
        ));
    }
}
