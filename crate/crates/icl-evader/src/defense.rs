//! Prompt-hardening defenses and the joint hardener.
//!
//! Three composable defense components:
//!
//! - [`adv_demo_augment`] — rebuild the demonstration list so a configured
//!   share of it consists of attacked texts carrying their true labels,
//!   teaching the classifier what evasion attempts look like.
//! - [`cautionary_warning_insert`] — add a vigilance message at the
//!   instruction/demonstrations seam, the demonstrations/test seam, or both.
//! - [`random_template_apply`] — replace the predictable sample/answer
//!   prefixes with random alphanumeric strings (optionally tagging the test
//!   block) so attacker-crafted pseudo-demonstrations no longer match the
//!   template, and announce the new prefixes in the instruction.
//!
//! [`harden`] applies any subset of the three in the fixed order
//! AdvDemo → Random Template → Cautionary Warning: the template change must
//! see the final demonstration list, and warnings attach to seams defined
//! after templating. Each component draws from its own sub-seed derived
//! from the single `seed` argument.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::AttackKind;
use crate::prompt::{
    IclPrompt, LabeledSample, PromptError, PromptTemplate, WarningMessage, WarningPosition,
};
use crate::recipe::DefenseRecipe;
use crate::seed::{derive_seed, rng_from_seed, SeedDomain};

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

/// Where the adversarial demonstrations sit within the demonstration list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvPlacement {
    /// Uniform shuffle of the combined list.
    Random,
    /// Contiguous block at the front.
    Begin,
    /// Contiguous block starting at half the clean count.
    Middle,
    /// Contiguous block at the back.
    End,
}

/// Parameters of adversarial-demonstration augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvDemoConfig {
    /// Share of the demonstration budget given to each attack kind, each in
    /// [0, 1] with the shares summing to at most 1.
    pub ratio_per_attack: BTreeMap<AttackKind, f64>,
    pub placement: AdvPlacement,
    pub seed: u64,
}

impl AdvDemoConfig {
    /// Equal share `r` for every attack kind.
    pub fn uniform(r: f64, placement: AdvPlacement, seed: u64) -> Self {
        let ratio_per_attack = AttackKind::ALL.iter().map(|k| (*k, r)).collect();
        Self {
            ratio_per_attack,
            placement,
            seed,
        }
    }

    /// Per-kind shares in canonical order (fake claim, template, needle).
    pub fn per_kind(fake_claim: f64, template: f64, needle: f64, placement: AdvPlacement, seed: u64) -> Self {
        let ratio_per_attack = [
            (AttackKind::FakeClaim, fake_claim),
            (AttackKind::Template, template),
            (AttackKind::Needle, needle),
        ]
        .into_iter()
        .collect();
        Self {
            ratio_per_attack,
            placement,
            seed,
        }
    }

    /// Adversarial demonstration count per kind for a total budget of `n`:
    /// ⌊r·n⌋ each, in canonical kind order.
    pub fn counts(&self, n: usize) -> Vec<(AttackKind, usize)> {
        AttackKind::ALL
            .iter()
            .map(|k| {
                let r = self.ratio_per_attack.get(k).copied().unwrap_or(0.0);
                (*k, (r * n as f64).floor() as usize)
            })
            .collect()
    }

    /// Check every share is in [0, 1] and the shares sum to at most 1.
    pub fn validate(&self) -> Result<(), DefenseError> {
        let mut sum = 0.0;
        for (&kind, &r) in &self.ratio_per_attack {
            if !(0.0..=1.0).contains(&r) {
                return Err(DefenseError::InvalidRatio { kind, ratio: r });
            }
            sum += r;
        }
        if sum > 1.0 + 1e-9 {
            return Err(DefenseError::RatioSumExceedsOne { sum });
        }
        Ok(())
    }
}

/// Parameters of prefix randomization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomTemplateConfig {
    /// Length of each random alphanumeric string (typically 6, 10, or 20).
    pub length: u32,
    /// Additionally wrap the test sample in a random `<T>…</T>` tag instead
    /// of giving it a sample prefix.
    pub use_tag: bool,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// AdvDemo
// ---------------------------------------------------------------------------

/// Rebuild a demonstration list of size `n` with ⌊r_k·n⌋ adversarial
/// members per attack kind (true labels retained) and clean members filling
/// the rest.
///
/// Documented draw sequence: with `rng = ChaCha8Rng::seed_from_u64(cfg.seed)`,
/// each attack kind in canonical order (fake claim, template, needle) with a
/// non-zero count shuffles its pool's indices once and takes the first
/// ⌊r_k·n⌋ (kinds with a zero count consume no randomness); the clean pool's
/// indices are then shuffled and the first `n − Σ⌊r_k·n⌋` taken; finally,
/// Random placement shuffles the assembled list once, while Begin/Middle/End
/// splice the adversarial block (in kind order) into the clean sequence at
/// the front, at index ⌊clean_count/2⌋, or at the back.
///
/// The multiset of selected demonstrations is therefore independent of
/// `cfg.placement`; only the order differs.
pub fn adv_demo_augment(
    clean: &[LabeledSample],
    adv_pools: &BTreeMap<AttackKind, Vec<LabeledSample>>,
    n: usize,
    cfg: &AdvDemoConfig,
) -> Result<Vec<LabeledSample>, DefenseError> {
    cfg.validate()?;
    let counts = cfg.counts(n);
    let n_adv: usize = counts.iter().map(|(_, c)| c).sum();
    if n_adv > n {
        return Err(DefenseError::AdversarialBudgetExceeded { adv: n_adv, total: n });
    }
    let n_clean = n - n_adv;

    let mut rng = rng_from_seed(cfg.seed);
    static EMPTY: Vec<LabeledSample> = Vec::new();
    let mut adv_block: Vec<LabeledSample> = Vec::with_capacity(n_adv);
    for (kind, count) in counts {
        if count == 0 {
            continue;
        }
        let pool = adv_pools.get(&kind).unwrap_or(&EMPTY);
        if pool.len() < count {
            return Err(DefenseError::PoolExhausted {
                kind,
                needed: count,
                available: pool.len(),
            });
        }
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        indices.shuffle(&mut rng);
        adv_block.extend(indices[..count].iter().map(|&i| pool[i].clone()));
    }

    if clean.len() < n_clean {
        return Err(DefenseError::CleanPoolExhausted {
            needed: n_clean,
            available: clean.len(),
        });
    }
    let mut clean_indices: Vec<usize> = (0..clean.len()).collect();
    clean_indices.shuffle(&mut rng);
    let clean_block: Vec<LabeledSample> = clean_indices[..n_clean]
        .iter()
        .map(|&i| clean[i].clone())
        .collect();

    let mut demos = match cfg.placement {
        AdvPlacement::Random => {
            let mut all = adv_block;
            all.extend(clean_block);
            all.shuffle(&mut rng);
            all
        }
        AdvPlacement::Begin => {
            let mut all = adv_block;
            all.extend(clean_block);
            all
        }
        AdvPlacement::End => {
            let mut all = clean_block;
            all.extend(adv_block);
            all
        }
        AdvPlacement::Middle => {
            let mut all = clean_block;
            let at = n_clean / 2;
            all.splice(at..at, adv_block);
            all
        }
    };
    demos.truncate(n);
    debug_assert_eq!(demos.len(), n);
    Ok(demos)
}

// ---------------------------------------------------------------------------
// Cautionary warning
// ---------------------------------------------------------------------------

/// Add a warning message at the chosen seam(s). Re-inserting an identical
/// (text, position) pair is a no-op, so repeated hardening cannot stack
/// duplicate warnings.
pub fn cautionary_warning_insert(
    prompt: &IclPrompt,
    msg: &WarningMessage,
    pos: WarningPosition,
) -> IclPrompt {
    let mut out = prompt.clone();
    let duplicate = out
        .warnings
        .iter()
        .any(|(m, p)| m.text == msg.text && *p == pos);
    if !duplicate {
        out.warnings.push((msg.clone(), pos));
    }
    out
}

// ---------------------------------------------------------------------------
// Random template
// ---------------------------------------------------------------------------

/// Alphanumeric charset used for random prefixes and tags, in draw order.
const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

fn random_alnum(rng: &mut impl Rng, len: usize) -> String {
    (0..len)
        .map(|_| ALNUM[rng.gen_range(0..ALNUM.len())] as char)
        .collect()
}

/// Replace the prompt's sample/answer prefixes with fresh random
/// alphanumeric strings of `cfg.length` characters (rendered with a
/// trailing `": "`), optionally tag the test block, and append a sentence
/// announcing the new prefixes to the instruction.
///
/// Documented draw sequence: with `rng = ChaCha8Rng::seed_from_u64(cfg.seed)`,
/// draw the sample-prefix stem, then the answer-prefix stem (redrawn in the
/// astronomically unlikely event it equals the sample stem), then — only
/// when `use_tag` — the tag name. Each stem draws `length` independent
/// uniform indices into `[A-Za-z0-9]` (uppercase, lowercase, digits, in
/// that order).
///
/// Demonstration texts, labels, and the test sample text are never
/// modified.
pub fn random_template_apply(
    prompt: &IclPrompt,
    cfg: &RandomTemplateConfig,
) -> Result<IclPrompt, DefenseError> {
    if cfg.length == 0 {
        return Err(DefenseError::InvalidTemplateLength);
    }
    let len = cfg.length as usize;
    let mut rng = rng_from_seed(cfg.seed);
    let sample_stem = random_alnum(&mut rng, len);
    let mut answer_stem = random_alnum(&mut rng, len);
    while answer_stem == sample_stem {
        answer_stem = random_alnum(&mut rng, len);
    }
    let tag = cfg.use_tag.then(|| random_alnum(&mut rng, len));

    let mut out = prompt.clone();
    out.template = PromptTemplate::new(
        format!("{sample_stem}: "),
        format!("{answer_stem}: "),
        out.template.separator.clone(),
        tag,
    )?;
    out.task.instruction = format!(
        "{}\nPlease note that the example prefix is {} and the label prefix is {}.",
        out.task.instruction, sample_stem, answer_stem
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// Joint hardener
// ---------------------------------------------------------------------------

/// Apply a defense recipe to a prompt.
///
/// Components run in the fixed order AdvDemo → Random Template → Cautionary
/// Warning. Component seeds are derived from `seed` (payload 0 for AdvDemo,
/// 1 for Random Template), so the seeds stored inside the recipe's component
/// configs are ignored — one seed governs the whole hardening.
///
/// `clean_pool` supplies replacement clean demonstrations and `adv_pools`
/// the attacked-but-true-labeled demonstrations; both may be empty when the
/// recipe has no AdvDemo component.
pub fn harden(
    prompt: &IclPrompt,
    recipe: &DefenseRecipe,
    clean_pool: &[LabeledSample],
    adv_pools: &BTreeMap<AttackKind, Vec<LabeledSample>>,
    seed: u64,
) -> Result<IclPrompt, DefenseError> {
    if recipe.is_empty() {
        return Err(DefenseError::EmptyRecipe);
    }
    let mut out = prompt.clone();

    if let Some(adv_cfg) = &recipe.adv_demo {
        let mut cfg = adv_cfg.clone();
        cfg.seed = derive_seed(seed, SeedDomain::Harden, 0);
        let demos = adv_demo_augment(clean_pool, adv_pools, out.demonstrations.len(), &cfg)?;
        let mut rebuilt = IclPrompt::new(
            out.task.clone(),
            out.template.clone(),
            demos,
            out.test_sample.clone(),
        )?;
        rebuilt.warnings = out.warnings.clone();
        out = rebuilt;
    }

    if let Some(rt_cfg) = &recipe.random_template {
        let mut cfg = *rt_cfg;
        cfg.seed = derive_seed(seed, SeedDomain::Harden, 1);
        out = random_template_apply(&out, &cfg)?;
    }

    if let Some((msg, pos)) = &recipe.cw {
        out = cautionary_warning_insert(&out, msg, *pos);
    }

    Ok(out)
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failures of defense construction or application.
#[derive(Debug, Error, PartialEq)]
pub enum DefenseError {
    #[error("adversarial pool for {kind} too small: need {needed}, have {available}")]
    PoolExhausted {
        kind: AttackKind,
        needed: usize,
        available: usize,
    },
    #[error("clean demonstration pool too small: need {needed}, have {available}")]
    CleanPoolExhausted { needed: usize, available: usize },
    #[error("adversarial shares request {adv} of {total} demonstrations")]
    AdversarialBudgetExceeded { adv: usize, total: usize },
    #[error("share for {kind} out of range: {ratio}")]
    InvalidRatio { kind: AttackKind, ratio: f64 },
    #[error("attack shares sum to {sum}, exceeding 1")]
    RatioSumExceedsOne { sum: f64 },
    #[error("random template length must be at least 1")]
    InvalidTemplateLength,
    #[error("defense recipe has no components")]
    EmptyRecipe,
    #[error(transparent)]
    Prompt(#[from] PromptError),
}
