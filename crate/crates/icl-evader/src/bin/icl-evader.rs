//! Command-line front end: transform samples with evasion attacks, harden
//! prompts with defense recipes, run evaluations and grid sweeps, and
//! re-aggregate reports from journals.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use icl_evader::attack::{AttackConfig, AttackKind, BenignPool, InsertLocation, InsertPosition};
use icl_evader::backend::BackendKind;
use icl_evader::config::load_config;
use icl_evader::data::{load_dataset, parse_jsonl, toy_dataset_jsonl, Dataset};
use icl_evader::eval::{
    harden_from_config, representative_attack, run, ExperimentConfig, HardenedPrompts,
};
use icl_evader::grid::{grid_report_to_json, rebuild_grid_report, run_grid, GridReport, GridSpec};
use icl_evader::prompt::{default_task, render_prompt, IclPrompt, TaskSpec};
use icl_evader::recipe::parse_recipe;
use icl_evader::report::{
    audit_report, load_report_json, write_report_json, write_rows_csv, RunMode, RunReport,
};
use icl_evader::seed::sample_seed;

/// Evasion attacks, prompt-hardening defenses, and a deterministic
/// evaluation harness for in-context-learning text classifiers.
#[derive(Parser)]
#[command(name = "icl-evader", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Transform a text or the positive samples of a dataset with an attack.
    Attack(AttackCmd),
    /// Apply a defense recipe to a prompt and print the hardened result.
    Harden(HardenCmd),
    /// Run a clean, attack, or defense evaluation and write its report.
    Eval(EvalCmd),
    /// Run a grid sweep with journaled resume.
    Grid(GridCmd),
    /// Rebuild a grid report from its journal, or audit a run report.
    Report(ReportCmd),
}

/// Flags shared by every experiment-shaped subcommand. Each one overrides
/// the corresponding field of the TOML config (or of the default config
/// when no file is given).
#[derive(Args)]
struct CommonOpts {
    /// Experiment configuration TOML file; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Task name: sentiment, toxicity, or illicit_promotion.
    #[arg(long)]
    task: Option<String>,
    /// Master seed for every derived random choice.
    #[arg(long)]
    seed: Option<u64>,
    /// Model backend.
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    /// Joint-defense recipe code, e.g. p10_length10_CWmessage1_CWpos1.
    #[arg(long, value_name = "CODE")]
    recipe: Option<String>,
    /// Cap on evaluated samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Worker threads for sample-level parallelism.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Dataset JSONL file ("text" and "label" fields, one object per line);
    /// defaults to the bundled toy corpus for the task.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum BackendChoice {
    Mock,
    Http,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum KindChoice {
    #[value(name = "fake_claim")]
    FakeClaim,
    Template,
    Needle,
}

impl From<KindChoice> for AttackKind {
    fn from(k: KindChoice) -> Self {
        match k {
            KindChoice::FakeClaim => AttackKind::FakeClaim,
            KindChoice::Template => AttackKind::Template,
            KindChoice::Needle => AttackKind::Needle,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum PositionChoice {
    Begin,
    Middle,
    End,
}

#[derive(Copy, Clone, ValueEnum)]
enum GridChoice {
    #[value(name = "fake_claim_mini")]
    FakeClaimMini,
    #[value(name = "fake_claim_full")]
    FakeClaimFull,
    #[value(name = "defense_recipes")]
    DefenseRecipes,
}

#[derive(Args)]
struct AttackCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// Attack kind; overrides (or stands in for) the config's [attack].
    #[arg(long, value_enum)]
    kind: Option<KindChoice>,
    /// Strength knob: claims for fake_claim, pseudo-demonstrations for
    /// template, benign carriers for needle.
    #[arg(long)]
    n: Option<u32>,
    /// Insertion position: begin/end for fake_claim, begin/middle/end for
    /// needle.
    #[arg(long, value_enum)]
    position: Option<PositionChoice>,
    /// Transform this single text instead of a dataset.
    #[arg(long)]
    text: Option<String>,
    /// Dataset whose negative samples form the benign pool for template and
    /// needle (unscreened; defaults to the --data negatives).
    #[arg(long, value_name = "FILE")]
    pool_data: Option<PathBuf>,
    /// Directory to write adversarial output files into (default: stdout).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HardenCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// Base prompt JSON file; defaults to a prompt prepared from the
    /// configured dataset (demonstration pools always come from the
    /// dataset).
    #[arg(long, value_name = "FILE")]
    prompt_file: Option<PathBuf>,
    /// Test sample text to place in the rendered prompt.
    #[arg(long)]
    test_text: Option<String>,
    /// Print the hardened prompt as JSON instead of rendered text.
    #[arg(long)]
    json: bool,
    /// Directory to write hardened_prompt.txt and hardened_prompt.json into.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// Directory for report.json and rows.csv.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GridCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// Which sweep to run.
    #[arg(long, value_enum)]
    grid: GridChoice,
    /// Comma-separated recipe codes (defense_recipes grid only).
    #[arg(long, value_delimiter = ',', value_name = "CODES")]
    recipes: Vec<String>,
    /// Directory holding journal.jsonl and grid_report.json; an existing
    /// journal from the same sweep resumes it.
    #[arg(long, value_name = "DIR", default_value = "grid_out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportCmd {
    /// Grid journal to re-aggregate into a sorted grid report.
    #[arg(long, value_name = "FILE", required_unless_present = "run", conflicts_with = "run")]
    journal: Option<PathBuf>,
    /// Single-run report to audit: recompute every aggregate from the
    /// per-sample rows and fail on any mismatch.
    #[arg(long, value_name = "FILE")]
    run: Option<PathBuf>,
    /// Directory to write the rebuilt grid_report.json into.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    // Die silently on a closed pipe (`icl-evader ... | head`) like other
    // line-oriented tools instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match Cli::parse().cmd {
        Cmd::Attack(a) => cmd_attack(a),
        Cmd::Harden(a) => cmd_harden(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Grid(a) => cmd_grid(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

/// Load the config file (or the default config) and fold the shared flag
/// overrides into it.
fn load_cfg(opts: &CommonOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &opts.config {
        Some(path) => load_config(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(task) = &opts.task {
        cfg.task_name = task.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.master_seed = seed;
    }
    if let Some(backend) = opts.backend {
        cfg.backend.kind = match backend {
            BackendChoice::Mock => BackendKind::Mock,
            BackendChoice::Http => BackendKind::Http,
        };
    }
    if let Some(code) = &opts.recipe {
        cfg.defense = Some(parse_recipe(code)?);
    }
    if let Some(limit) = opts.limit {
        cfg.sample_limit = Some(limit);
    }
    if let Some(par) = opts.parallelism {
        cfg.parallelism = par;
    }
    if let Some(data) = &opts.data {
        cfg.data_path = Some(data.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_cli_dataset(path: Option<&Path>, task: &TaskSpec) -> Result<Dataset> {
    match path {
        Some(p) => {
            load_dataset(p, task).with_context(|| format!("loading dataset {}", p.display()))
        }
        None => Ok(parse_jsonl(&toy_dataset_jsonl(task)?, task)?),
    }
}

/// All negative-class texts of a dataset, as an attack pool. Unlike the
/// evaluation harness, no classifier screening is applied here: this is the
/// pure transformation tool.
fn pool_from_dataset(ds: &Dataset, task: &TaskSpec) -> Result<BenignPool> {
    let neg = task.negative_label().clone();
    let texts: Vec<String> = ds
        .samples
        .iter()
        .filter(|s| s.label == neg)
        .map(|s| s.text.clone())
        .collect();
    Ok(BenignPool::new(texts)?)
}

fn apply_attack_overrides(
    mut atk: AttackConfig,
    n: Option<u32>,
    position: Option<PositionChoice>,
) -> Result<AttackConfig> {
    match &mut atk {
        AttackConfig::FakeClaim(c) => {
            if let Some(n) = n {
                c.n_claims = n;
            }
            if let Some(p) = position {
                c.position = match p {
                    PositionChoice::Begin => InsertPosition::Begin,
                    PositionChoice::End => InsertPosition::End,
                    PositionChoice::Middle => {
                        bail!("fake_claim inserts at begin or end, not middle")
                    }
                };
            }
        }
        AttackConfig::Template(c) => {
            if let Some(n) = n {
                c.n_demos = n;
            }
            if position.is_some() {
                bail!("--position does not apply to the template attack; set test_position in the config file");
            }
        }
        AttackConfig::Needle(c) => {
            if let Some(n) = n {
                c.n_benign = n;
            }
            if let Some(p) = position {
                c.insert_location = match p {
                    PositionChoice::Begin => InsertLocation::Begin,
                    PositionChoice::Middle => InsertLocation::Middle,
                    PositionChoice::End => InsertLocation::End,
                };
            }
        }
    }
    Ok(atk)
}

fn cmd_attack(args: AttackCmd) -> Result<()> {
    let cfg = load_cfg(&args.common)?;
    let task = default_task(&cfg.task_name)?;

    let base = match (cfg.attack.clone(), args.kind) {
        (Some(a), Some(k)) if a.kind() == AttackKind::from(k) => a,
        (_, Some(k)) => representative_attack(k.into(), &task),
        (Some(a), None) => a,
        (None, None) => bail!("no attack configured: pass --kind or a config file with [attack]"),
    };
    let attack = apply_attack_overrides(base, args.n, args.position)?;

    let pool = if attack.needs_pool() {
        let pool_path = args.pool_data.as_deref().or(cfg.data_path.as_deref());
        let ds = load_cli_dataset(pool_path, &task)?;
        Some(pool_from_dataset(&ds, &task)?)
    } else {
        None
    };

    if let Some(text) = &args.text {
        let adversarial = attack.with_seed(cfg.master_seed).apply(text, pool.as_ref())?;
        match &args.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join("adversarial.txt");
                fs::write(&path, format!("{adversarial}\n"))?;
                println!("wrote {}", path.display());
            }
            None => println!("{adversarial}"),
        }
        return Ok(());
    }

    // Dataset mode: transform every positive sample, seeding each
    // transformation from (master seed, sample id) exactly as the harness
    // does.
    let ds = load_cli_dataset(cfg.data_path.as_deref(), &task)?;
    let positives: Vec<_> = ds
        .samples
        .iter()
        .filter(|s| s.label == task.positive_label)
        .collect();
    if positives.is_empty() {
        bail!("dataset has no {} samples to attack", task.positive_label);
    }
    let limit = cfg.sample_limit.unwrap_or(positives.len());
    let mut lines = String::new();
    for s in positives.into_iter().take(limit) {
        let adversarial = attack
            .with_seed(sample_seed(cfg.master_seed, s.id))
            .apply(&s.text, pool.as_ref())?;
        let line = serde_json::json!({
            "id": s.id,
            "label": s.label.name(),
            "text": s.text,
            "adversarial": adversarial,
        });
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("adversarial.jsonl");
            fs::write(&path, lines)?;
            println!("wrote {}", path.display());
        }
        None => print!("{lines}"),
    }
    Ok(())
}

fn cmd_harden(args: HardenCmd) -> Result<()> {
    let cfg = load_cfg(&args.common)?;
    if cfg.defense.is_none() {
        bail!("no defense recipe: pass --recipe or a config file with [defense]");
    }
    let base_override = match &args.prompt_file {
        Some(path) => {
            let raw = fs::read_to_string(path)
                .with_context(|| format!("reading prompt file {}", path.display()))?;
            let prompt: IclPrompt = serde_json::from_str(&raw)
                .with_context(|| format!("parsing prompt file {}", path.display()))?;
            if prompt.task.task_name != cfg.task_name {
                bail!(
                    "prompt file is for task {} but the configuration selects {}; pass --task {}",
                    prompt.task.task_name,
                    cfg.task_name,
                    prompt.task.task_name
                );
            }
            Some(prompt)
        }
        None => None,
    };

    let keep_file_test = args.prompt_file.is_some();
    let HardenedPrompts { mut hardened, .. } = harden_from_config(&cfg, base_override)?;
    match &args.test_text {
        Some(text) => hardened.test_sample = text.clone(),
        // The prepared prompt carries an internal placeholder; render an
        // empty test slot instead so the output is ready to receive a sample.
        None if !keep_file_test => hardened.test_sample.clear(),
        None => {}
    }

    let rendered = render_prompt(&hardened);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&hardened)?);
    } else {
        println!("{rendered}");
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let txt = dir.join("hardened_prompt.txt");
        fs::write(&txt, &rendered)?;
        let json = dir.join("hardened_prompt.json");
        fs::write(&json, serde_json::to_string_pretty(&hardened)? + "\n")?;
        eprintln!("wrote {} and {}", txt.display(), json.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalCmd) -> Result<()> {
    let cfg = load_cfg(&args.common)?;
    let report = run(&cfg)?;
    fs::create_dir_all(&args.out)?;
    let report_path = args.out.join("report.json");
    write_report_json(&report, &report_path)?;
    let csv_path = args.out.join("rows.csv");
    write_rows_csv(&report, &csv_path)?;
    print_run_summary(&report);
    println!("report: {}", report_path.display());
    println!("rows:   {}", csv_path.display());
    Ok(())
}

fn cmd_grid(args: GridCmd) -> Result<()> {
    let cfg = load_cfg(&args.common)?;
    let spec = match args.grid {
        GridChoice::FakeClaimMini => GridSpec::FakeClaimMini,
        GridChoice::FakeClaimFull => GridSpec::FakeClaimFull,
        GridChoice::DefenseRecipes => {
            if args.recipes.is_empty() {
                bail!("--grid defense_recipes requires --recipes code1,code2,...");
            }
            GridSpec::DefenseRecipes(args.recipes.clone())
        }
    };
    if !matches!(spec, GridSpec::DefenseRecipes(_)) && !args.recipes.is_empty() {
        bail!("--recipes only applies to --grid defense_recipes");
    }
    let summary = run_grid(&cfg, &spec, &args.out)?;
    println!(
        "grid {}: {} cells, {} computed this run",
        summary.report.grid, summary.cells_total, summary.cells_computed
    );
    print_grid_entries(&summary.report);
    println!("journal: {}", summary.journal_file.display());
    println!("report:  {}", summary.report_file.display());
    Ok(())
}

fn cmd_report(args: ReportCmd) -> Result<()> {
    if let Some(path) = &args.run {
        let report = load_report_json(path)?;
        let task = default_task(&report.config.task)?;
        audit_report(&report, task.positive_label.name())?;
        println!("audit ok: every aggregate matches its per-sample rows");
        print_run_summary(&report);
        return Ok(());
    }
    let journal = args.journal.as_deref().expect("clap enforces --journal or --run");
    let report = rebuild_grid_report(journal)?;
    println!("grid {}: {} cells", report.grid, report.entries.len());
    print_grid_entries(&report);
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let path = dir.join("grid_report.json");
        fs::write(&path, grid_report_to_json(&report))?;
        println!("report:  {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Summary printing
// ---------------------------------------------------------------------------

fn fmt_opt(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(x) => format!("{x:.precision$}"),
        None => "n/a".to_string(),
    }
}

fn print_run_summary(r: &RunReport) {
    let mode = match r.mode {
        RunMode::Clean => "clean",
        RunMode::Attack => "attack",
        RunMode::Defense => "defense",
    };
    let backend = match r.config.backend {
        BackendKind::Mock => "mock",
        BackendKind::Http => "http",
    };
    println!(
        "{mode} evaluation: task {}, backend {backend}, seed {}",
        r.config.task, r.config.master_seed
    );
    let a = &r.aggregates;
    if a.n_error_rows > 0 {
        println!("rows: {} scored, {} dropped for errors", a.n_rows, a.n_error_rows);
    } else {
        println!("rows: {} scored", a.n_rows);
    }
    if let Some(c) = &a.clean {
        println!(
            "clean:             accuracy {}, recall {}, f1 {}",
            fmt_opt(c.accuracy, 3),
            fmt_opt(c.recall, 3),
            fmt_opt(c.f1, 3)
        );
    }
    if let Some(c) = &a.clean_hardened {
        println!(
            "clean (hardened):  accuracy {}, recall {}, f1 {}",
            fmt_opt(c.accuracy, 3),
            fmt_opt(c.recall, 3),
            fmt_opt(c.f1, 3)
        );
    }
    let kind = r
        .config
        .attack
        .as_ref()
        .map(|at| at.kind().as_str())
        .unwrap_or("attack");
    if let Some(at) = &a.attack {
        println!(
            "{kind}:        recall {:.3} -> {:.3}, ASR {:.1} pts, rASR {}",
            at.recall_clean,
            at.recall_adv,
            at.asr,
            fmt_opt(at.rasr, 3)
        );
    }
    if let Some(at) = &a.attack_hardened {
        println!(
            "{kind} (hardened): recall {:.3} -> {:.3}, ASR {:.1} pts",
            at.recall_clean, at.recall_adv, at.asr
        );
    }
    if let (Some(d), Some(p)) = (&a.defense, &a.defense_params) {
        println!(
            "defense:           ASRR {:.1} pts, AD {:.1} pts, DE {:.1}, admissible {} (lambda {}, AD <= {})",
            d.asrr_abs,
            d.ad,
            d.de,
            if d.admissible { "yes" } else { "no" },
            p.lambda,
            p.ad_threshold
        );
    }
}

/// Print the top entries of a sorted grid report (all of them up to 12, then
/// a count of the rest).
fn print_grid_entries(report: &GridReport) {
    const SHOWN: usize = 12;
    for e in report.entries.iter().take(SHOWN) {
        if e.recipe_code.is_some() {
            match &e.aggregates.defense {
                Some(d) => println!(
                    "  {}: DE {:.1} (ASRR {:.1}, AD {:.1}, admissible {})",
                    e.cell_id,
                    d.de,
                    d.asrr_abs,
                    d.ad,
                    if d.admissible { "yes" } else { "no" }
                ),
                None => println!("  {}: no defense aggregate", e.cell_id),
            }
        } else {
            match &e.aggregates.attack {
                Some(at) => println!(
                    "  {}: ASR {:.1} pts (recall {:.3} -> {:.3})",
                    e.cell_id, at.asr, at.recall_clean, at.recall_adv
                ),
                None => println!("  {}: no attack aggregate", e.cell_id),
            }
        }
    }
    if report.entries.len() > SHOWN {
        println!("  ... and {} more cells", report.entries.len() - SHOWN);
    }
}
