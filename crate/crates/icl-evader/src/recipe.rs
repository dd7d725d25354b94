//! Compact joint-defense recipe codes.
//!
//! A recipe code is an underscore-separated string selecting and
//! parameterizing the defense components, e.g.
//! `p10_15_10_length10_CWmessage1_CWpos0`:
//!
//! ```text
//! p<int>[_<int>[_<int>]]          adversarial-demonstration percentages
//! [_length<int>]                  random-template prefix length
//! [_CWmessage<0|1|2>_CWpos<0|1|2>] warning message strength and seam
//! ```
//!
//! One percentage applies to every attack kind; two map to (fake claim,
//! template) with needle at zero; three map positionally to (fake claim,
//! template, needle). `CWmessage` 0/1/2 select the short/medium/long
//! built-in message; `CWpos` 0/1/2 select the instruction–demonstrations
//! seam, the demonstrations–test seam, or both. Integers are canonical
//! decimal (no leading zeros). All parse failures carry the byte offset of
//! the offending token.
//!
//! Component seeds inside a parsed recipe are placeholders (0): the
//! hardener derives real sub-seeds from its own seed argument.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defense::{AdvDemoConfig, AdvPlacement, RandomTemplateConfig};
use crate::prompt::{WarningMessage, WarningPosition, WarningVariant};

// ---------------------------------------------------------------------------
// Recipe
// ---------------------------------------------------------------------------

/// A parsed joint-defense configuration: any subset of adversarial
/// demonstrations, a cautionary warning, and prefix randomization.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DefenseRecipe {
    #[serde(default)]
    pub adv_demo: Option<AdvDemoConfig>,
    #[serde(default)]
    pub cw: Option<(WarningMessage, WarningPosition)>,
    #[serde(default)]
    pub random_template: Option<RandomTemplateConfig>,
    /// Percent values exactly as written in the parsed code (1–3 entries);
    /// empty for programmatically built recipes. Preserved so formatting a
    /// parsed recipe reproduces the original code byte for byte.
    #[serde(default)]
    pub p_values: Vec<u32>,
}

impl DefenseRecipe {
    /// No components selected (not a valid recipe to apply).
    pub fn is_empty(&self) -> bool {
        self.adv_demo.is_none() && self.cw.is_none() && self.random_template.is_none()
    }

    /// A warning-only recipe (not expressible as a code).
    pub fn cw_only(msg: WarningMessage, pos: WarningPosition) -> Self {
        Self {
            cw: Some((msg, pos)),
            ..Self::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// A canonical decimal integer: digits only, no leading zeros (except "0").
fn parse_canonical_int(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if s.len() > 1 && s.starts_with('0') {
        return None;
    }
    s.parse().ok()
}

fn err(offset: usize, kind: RecipeErrorKind) -> RecipeError {
    RecipeError { offset, kind }
}

/// Parse a recipe code. Percentages become per-attack ratios (placement
/// defaults to Random), `length` becomes a prefix-randomization config
/// (tagging is config-file-only and never encoded in codes), and the CW
/// pair selects a built-in warning and seam.
pub fn parse_recipe(code: &str) -> Result<DefenseRecipe, RecipeError> {
    if code.is_empty() {
        return Err(err(0, RecipeErrorKind::Empty));
    }
    // Tokens with their byte offsets.
    let mut toks: Vec<(usize, &str)> = Vec::new();
    let mut off = 0;
    for part in code.split('_') {
        toks.push((off, part));
        off += part.len() + 1;
    }

    // Leading percent token.
    let (first_off, first) = toks[0];
    let p1 = first
        .strip_prefix('p')
        .and_then(parse_canonical_int)
        .ok_or_else(|| {
            err(
                first_off,
                RecipeErrorKind::Malformed {
                    token: first.to_string(),
                    expected: "leading 'p<percent>' token",
                },
            )
        })?;
    let mut p_values = vec![p1];
    let mut last_percent_off = first_off;

    // Up to two further bare percents.
    let mut idx = 1;
    while idx < toks.len() {
        let (t_off, t) = toks[idx];
        let Some(v) = parse_canonical_int(t) else { break };
        if p_values.len() == 3 {
            return Err(err(t_off, RecipeErrorKind::TooManyPercents));
        }
        p_values.push(v);
        last_percent_off = t_off;
        idx += 1;
    }
    for (i, &v) in p_values.iter().enumerate() {
        if v > 100 {
            let off = toks[i].0;
            return Err(err(off, RecipeErrorKind::PercentOutOfRange { value: v }));
        }
    }
    let effective: [u32; 3] = match p_values.as_slice() {
        [p] => [*p, *p, *p],
        [a, b] => [*a, *b, 0],
        [a, b, c] => [*a, *b, *c],
        _ => unreachable!("1..=3 percents enforced above"),
    };
    let sum: u32 = effective.iter().sum();
    if sum > 100 {
        return Err(err(last_percent_off, RecipeErrorKind::PercentSumExceeds { sum }));
    }

    // Optional length token.
    let mut length: Option<u32> = None;
    if idx < toks.len() {
        let (t_off, t) = toks[idx];
        if let Some(rest) = t.strip_prefix("length") {
            let l = parse_canonical_int(rest).filter(|&l| l >= 1).ok_or_else(|| {
                err(
                    t_off,
                    RecipeErrorKind::Malformed {
                        token: t.to_string(),
                        expected: "'length<positive int>'",
                    },
                )
            })?;
            length = Some(l);
            idx += 1;
        }
    }

    // Optional CWmessage + CWpos pair.
    let mut cw: Option<(WarningMessage, WarningPosition)> = None;
    if idx < toks.len() {
        let (t_off, t) = toks[idx];
        if let Some(rest) = t.strip_prefix("CWmessage") {
            let variant = match rest {
                "0" => WarningVariant::Short,
                "1" => WarningVariant::Medium,
                "2" => WarningVariant::Long,
                _ => {
                    return Err(err(
                        t_off,
                        RecipeErrorKind::Malformed {
                            token: t.to_string(),
                            expected: "'CWmessage<0|1|2>'",
                        },
                    ))
                }
            };
            idx += 1;
            let Some(&(p_off, p_tok)) = toks.get(idx) else {
                return Err(err(code.len(), RecipeErrorKind::MissingCwPos));
            };
            let Some(rest) = p_tok.strip_prefix("CWpos") else {
                return Err(err(p_off, RecipeErrorKind::MissingCwPos));
            };
            let position = match rest {
                "0" => WarningPosition::InstructionDemos,
                "1" => WarningPosition::DemosTest,
                "2" => WarningPosition::Both,
                _ => {
                    return Err(err(
                        p_off,
                        RecipeErrorKind::Malformed {
                            token: p_tok.to_string(),
                            expected: "'CWpos<0|1|2>'",
                        },
                    ))
                }
            };
            idx += 1;
            cw = Some((WarningMessage::builtin(variant), position));
        }
    }

    // Anything left over is an error; diagnose duplicates specifically.
    if idx < toks.len() {
        let (t_off, t) = toks[idx];
        let kind = if t.starts_with("length") && length.is_some() {
            RecipeErrorKind::DuplicateComponent { component: "length" }
        } else if (t.starts_with("CWmessage") || t.starts_with("CWpos")) && cw.is_some() {
            RecipeErrorKind::DuplicateComponent {
                component: "cautionary warning",
            }
        } else if t.starts_with("CWpos") {
            RecipeErrorKind::CwPosWithoutMessage
        } else {
            RecipeErrorKind::Malformed {
                token: t.to_string(),
                expected: "end of code",
            }
        };
        return Err(err(t_off, kind));
    }

    let adv_demo = Some(AdvDemoConfig::per_kind(
        f64::from(effective[0]) / 100.0,
        f64::from(effective[1]) / 100.0,
        f64::from(effective[2]) / 100.0,
        AdvPlacement::Random,
        0,
    ));
    let random_template = length.map(|l| RandomTemplateConfig {
        length: l,
        use_tag: false,
        seed: 0,
    });
    Ok(DefenseRecipe {
        adv_demo,
        cw,
        random_template,
        p_values,
    })
}

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

/// Render a recipe back to its code. Uses the verbatim percent list when
/// the recipe came from [`parse_recipe`]; otherwise derives percentages
/// from the ratio map (single value when all kinds share one ratio).
/// Recipes without an adversarial-demonstration component have no code
/// form.
pub fn format_recipe(recipe: &DefenseRecipe) -> Result<String, RecipeError> {
    let Some(adv) = &recipe.adv_demo else {
        return Err(err(0, RecipeErrorKind::NotCodeRepresentable));
    };
    let percents: Vec<u32> = if recipe.p_values.is_empty() {
        let per_kind: Vec<u32> = crate::attack::AttackKind::ALL
            .iter()
            .map(|k| {
                let r = adv.ratio_per_attack.get(k).copied().unwrap_or(0.0);
                (r * 100.0).round() as u32
            })
            .collect();
        if per_kind.iter().all(|&v| v == per_kind[0]) {
            vec![per_kind[0]]
        } else {
            per_kind
        }
    } else {
        recipe.p_values.clone()
    };

    let mut out = format!("p{}", percents[0]);
    for v in &percents[1..] {
        out.push_str(&format!("_{v}"));
    }
    if let Some(rt) = &recipe.random_template {
        out.push_str(&format!("_length{}", rt.length));
    }
    if let Some((msg, pos)) = &recipe.cw {
        let m = match msg.variant {
            WarningVariant::Short => 0,
            WarningVariant::Medium => 1,
            WarningVariant::Long => 2,
        };
        let p = match pos {
            WarningPosition::InstructionDemos => 0,
            WarningPosition::DemosTest => 1,
            WarningPosition::Both => 2,
        };
        out.push_str(&format!("_CWmessage{m}_CWpos{p}"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// A recipe-code failure pinned to the byte offset of the offending token.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("recipe code error at byte {offset}: {kind}")]
pub struct RecipeError {
    pub offset: usize,
    pub kind: RecipeErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecipeErrorKind {
    #[error("empty code")]
    Empty,
    #[error("unexpected token `{token}`, expected {expected}")]
    Malformed { token: String, expected: &'static str },
    #[error("percentage {value} exceeds 100")]
    PercentOutOfRange { value: u32 },
    #[error("per-attack percentages sum to {sum}, exceeding 100")]
    PercentSumExceeds { sum: u32 },
    #[error("more than three percent values")]
    TooManyPercents,
    #[error("duplicate {component} component")]
    DuplicateComponent { component: &'static str },
    #[error("CWmessage must be followed by CWpos")]
    MissingCwPos,
    #[error("CWpos without a preceding CWmessage")]
    CwPosWithoutMessage,
    #[error("recipe has no adversarial-demonstration component, which codes require")]
    NotCodeRepresentable,
}
