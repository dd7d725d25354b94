//! Grid sweeps over attack parameters or defense recipes, with an
//! append-only journal for crash-safe resume.
//!
//! Cells are enumerated in a fixed order and executed sequentially (the
//! parallelism budget goes to samples inside each cell), each under its own
//! seed derived from the grid master seed and the cell index. The journal
//! is JSON-lines: a header describing the sweep, then one line per
//! completed cell carrying its aggregates. Interrupting and re-running with
//! the same output directory recomputes only the missing cells, and the
//! final report is byte-identical to an uninterrupted run's.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{claim_candidates, AttackConfig, FakeClaimConfig, InsertPosition};
use crate::eval::{config_echo, run, EvalError, ExperimentConfig};
use crate::prompt::default_task;
use crate::recipe::{parse_recipe, RecipeError};
use crate::report::{Aggregates, ConfigEcho};
use crate::seed::cell_seed;

// ---------------------------------------------------------------------------
// Grid specs and cells
// ---------------------------------------------------------------------------

/// Which sweep to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GridSpec {
    /// Fake claim: n ∈ {1,2,4,8,16,32,64,128} × {Begin, End} × 6 claim
    /// options (each single claim, plus the full mixed set) — 96 cells.
    FakeClaimFull,
    /// Fake claim: n ∈ {1,2,4,8} × {Begin, End} with the default claim —
    /// 8 cells.
    FakeClaimMini,
    /// One cell per defense recipe code, evaluated against the base
    /// config's attack.
    DefenseRecipes(Vec<String>),
}

impl GridSpec {
    pub fn name(&self) -> &'static str {
        match self {
            GridSpec::FakeClaimFull => "fake_claim_full",
            GridSpec::FakeClaimMini => "fake_claim_mini",
            GridSpec::DefenseRecipes(_) => "defense_recipes",
        }
    }

    fn is_defense(&self) -> bool {
        matches!(self, GridSpec::DefenseRecipes(_))
    }
}

/// One point of a sweep. Exactly one of `attack` / `recipe_code` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub cell_id: String,
    pub cell_index: u64,
    pub attack: Option<AttackConfig>,
    pub recipe_code: Option<String>,
}

/// Enumerate a sweep's cells in their canonical order.
pub fn grid_cells(spec: &GridSpec, task_name: &str) -> Result<Vec<GridCell>, GridError> {
    match spec {
        GridSpec::FakeClaimFull => Ok(fake_claim_cells(task_name, true)),
        GridSpec::FakeClaimMini => Ok(fake_claim_cells(task_name, false)),
        GridSpec::DefenseRecipes(codes) => {
            if codes.is_empty() {
                return Err(GridError::EmptyAxis);
            }
            codes
                .iter()
                .enumerate()
                .map(|(i, code)| {
                    parse_recipe(code)?; // validate every axis value up front
                    Ok(GridCell {
                        cell_id: format!("defense_{code}"),
                        cell_index: i as u64,
                        attack: None,
                        recipe_code: Some(code.clone()),
                    })
                })
                .collect()
        }
    }
}

fn fake_claim_cells(task_name: &str, full: bool) -> Vec<GridCell> {
    let candidates = claim_candidates(task_name);
    let ns: &[u32] = if full {
        &[1, 2, 4, 8, 16, 32, 64, 128]
    } else {
        &[1, 2, 4, 8]
    };
    // Claim axis: each candidate alone, then the whole set mixed; the mini
    // grid fixes the default claim.
    let claim_options: Vec<(String, Vec<String>)> = if full {
        let mut options: Vec<(String, Vec<String>)> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("c{}", i + 1), vec![c.clone()]))
            .collect();
        options.push(("mix".to_string(), candidates.clone()));
        options
    } else {
        vec![(
            "default".to_string(),
            vec![crate::attack::default_claim(task_name)],
        )]
    };

    let mut cells = Vec::new();
    let mut index = 0u64;
    for &n in ns {
        for position in [InsertPosition::Begin, InsertPosition::End] {
            let pos_tag = match position {
                InsertPosition::Begin => "begin",
                InsertPosition::End => "end",
            };
            for (tag, claims) in &claim_options {
                cells.push(GridCell {
                    cell_id: format!("fake_claim_n{n}_{pos_tag}_{tag}"),
                    cell_index: index,
                    attack: Some(AttackConfig::FakeClaim(FakeClaimConfig {
                        claims: claims.clone(),
                        n_claims: n,
                        position,
                        seed: 0,
                    })),
                    recipe_code: None,
                });
                index += 1;
            }
        }
    }
    cells
}

// ---------------------------------------------------------------------------
// Journal
// ---------------------------------------------------------------------------

/// First line of a journal file: identifies the sweep so a directory cannot
/// silently mix results from different grids or base configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalHeader {
    pub grid: String,
    pub config: ConfigEcho,
}

/// One completed cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub cell_id: String,
    pub cell_index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe_code: Option<String>,
    pub aggregates: Aggregates,
}

fn journal_path(out_dir: &Path) -> PathBuf {
    out_dir.join("journal.jsonl")
}

fn report_path(out_dir: &Path) -> PathBuf {
    out_dir.join("grid_report.json")
}

fn read_journal(path: &Path) -> Result<Option<(JournalHeader, Vec<JournalEntry>)>, GridError> {
    let raw = match std::fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(source) => return Err(GridError::Io { path: path.to_path_buf(), source }),
    };
    let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, first)) = lines.next() else {
        return Ok(None);
    };
    let header: JournalHeader =
        serde_json::from_str(first).map_err(|e| GridError::Journal { line: 1, message: e.to_string() })?;
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let entry: JournalEntry = serde_json::from_str(line)
            .map_err(|e| GridError::Journal { line: idx + 1, message: e.to_string() })?;
        entries.push(entry);
    }
    Ok(Some((header, entries)))
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// The final product of a sweep: every cell's aggregates, sorted best-first
/// (highest attack success for attack grids, highest defense effect for
/// defense grids; ties broken by cell id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub grid: String,
    pub config: ConfigEcho,
    pub entries: Vec<JournalEntry>,
}

/// Summary returned by [`run_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridRunSummary {
    pub report: GridReport,
    pub cells_total: usize,
    pub cells_computed: usize,
    pub report_file: PathBuf,
    pub journal_file: PathBuf,
}

fn sort_key(entry: &JournalEntry) -> f64 {
    if entry.recipe_code.is_some() {
        entry.aggregates.defense.map(|d| d.de).unwrap_or(f64::MIN)
    } else {
        entry.aggregates.attack.map(|a| a.asr).unwrap_or(f64::MIN)
    }
}

fn sorted_entries(mut entries: Vec<JournalEntry>) -> Vec<JournalEntry> {
    entries.sort_by(|a, b| {
        sort_key(b)
            .partial_cmp(&sort_key(a))
            .expect("metric keys are finite")
            .then_with(|| a.cell_id.cmp(&b.cell_id))
    });
    entries
}

/// Canonical grid-report serialization: pretty JSON plus trailing newline.
pub fn grid_report_to_json(report: &GridReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("grid report serializes");
    s.push('\n');
    s
}

/// Rebuild the sorted grid report from a journal alone (the `report`
/// subcommand): no cells are re-run.
pub fn rebuild_grid_report(journal: &Path) -> Result<GridReport, GridError> {
    let Some((header, entries)) = read_journal(journal)? else {
        return Err(GridError::Io {
            path: journal.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "journal is missing or empty"),
        });
    };
    Ok(GridReport {
        grid: header.grid,
        config: header.config,
        entries: sorted_entries(entries),
    })
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Run a sweep, journaling each completed cell to `out_dir/journal.jsonl`
/// and writing the sorted report to `out_dir/grid_report.json`.
///
/// Cells run sequentially, each with master seed
/// `cell_seed(base master, cell index)`; sample-level parallelism inside a
/// cell follows the base config. Completed cells found in an existing
/// journal are reused, so an interrupted sweep resumes where it stopped —
/// the journal header must match the current sweep exactly.
pub fn run_grid(
    base: &ExperimentConfig,
    spec: &GridSpec,
    out_dir: &Path,
) -> Result<GridRunSummary, GridError> {
    if spec.is_defense() && base.attack.is_none() {
        return Err(GridError::MissingAttack);
    }
    let cells = grid_cells(spec, &base.task_name)?;
    // Fail on unknown tasks before touching the filesystem.
    default_task(&base.task_name).map_err(EvalError::from)?;

    std::fs::create_dir_all(out_dir).map_err(|source| GridError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let journal_file = journal_path(out_dir);
    let header = JournalHeader {
        grid: spec.name().to_string(),
        config: config_echo(base),
    };

    let mut done: BTreeMap<String, JournalEntry> = BTreeMap::new();
    match read_journal(&journal_file)? {
        Some((existing_header, entries)) => {
            if existing_header != header {
                return Err(GridError::JournalMismatch {
                    path: journal_file.clone(),
                    reason: "journal belongs to a different sweep or base config".to_string(),
                });
            }
            let known: BTreeMap<&str, u64> =
                cells.iter().map(|c| (c.cell_id.as_str(), c.cell_index)).collect();
            for e in entries {
                match known.get(e.cell_id.as_str()) {
                    Some(&idx) if idx == e.cell_index => {
                        done.insert(e.cell_id.clone(), e);
                    }
                    _ => {
                        return Err(GridError::JournalMismatch {
                            path: journal_file.clone(),
                            reason: format!("journal cell `{}` is not part of this sweep", e.cell_id),
                        });
                    }
                }
            }
        }
        None => {
            let mut f = std::fs::File::create(&journal_file).map_err(|source| GridError::Io {
                path: journal_file.clone(),
                source,
            })?;
            writeln!(f, "{}", serde_json::to_string(&header).expect("header serializes"))
                .map_err(|source| GridError::Io { path: journal_file.clone(), source })?;
        }
    }

    let mut journal = std::fs::OpenOptions::new()
        .append(true)
        .open(&journal_file)
        .map_err(|source| GridError::Io { path: journal_file.clone(), source })?;

    let mut results: Vec<JournalEntry> = Vec::with_capacity(cells.len());
    let mut computed = 0usize;
    for cell in &cells {
        if let Some(entry) = done.get(&cell.cell_id) {
            results.push(entry.clone());
            continue;
        }
        let mut cfg = base.clone();
        cfg.master_seed = cell_seed(base.master_seed, cell.cell_index);
        if let Some(attack) = &cell.attack {
            cfg.attack = Some(attack.clone());
            cfg.defense = None;
        }
        if let Some(code) = &cell.recipe_code {
            cfg.defense = Some(parse_recipe(code)?);
        }
        let report = run(&cfg)?;
        let entry = JournalEntry {
            cell_id: cell.cell_id.clone(),
            cell_index: cell.cell_index,
            attack: cell.attack.clone(),
            recipe_code: cell.recipe_code.clone(),
            aggregates: report.aggregates,
        };
        writeln!(journal, "{}", serde_json::to_string(&entry).expect("entry serializes"))
            .and_then(|()| journal.flush())
            .map_err(|source| GridError::Io { path: journal_file.clone(), source })?;
        results.push(entry);
        computed += 1;
    }

    let report = GridReport {
        grid: header.grid,
        config: header.config,
        entries: sorted_entries(results),
    };
    let report_file = report_path(out_dir);
    std::fs::write(&report_file, grid_report_to_json(&report))
        .map_err(|source| GridError::Io { path: report_file.clone(), source })?;
    Ok(GridRunSummary {
        report,
        cells_total: cells.len(),
        cells_computed: computed,
        report_file,
        journal_file,
    })
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failures of sweep enumeration, journaling, or execution.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },
    #[error("{path}: {reason}")]
    JournalMismatch { path: PathBuf, reason: String },
    #[error("grid axis is empty")]
    EmptyAxis,
    #[error("defense sweeps need an attack in the base config")]
    MissingAttack,
    #[error(transparent)]
    Recipe(#[from] RecipeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
