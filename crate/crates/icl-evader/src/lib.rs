//! Evasion attacks, defenses, and evaluation for in-context-learning text
//! classifiers.
//!
//! The crate models the full red/blue loop around a prompted classifier:
//!
//! * [`prompt`] — tasks, templates, and byte-exact prompt rendering;
//! * [`attack`] — three zero-query evasion attacks (fake claim, template,
//!   needle-in-a-haystack) on the test sample's text;
//! * [`defense`] — prompt-side hardening (adversarial demonstrations,
//!   cautionary warnings, randomized templates) and the joint hardener;
//! * [`recipe`] — the compact defense-recipe codes and their parser;
//! * [`metrics`] — attack-success and defense-effect arithmetic;
//! * [`backend`] — classification backends: a deterministic mock and an
//!   OpenAI-compatible HTTP client;
//! * [`data`] — JSONL datasets, stratified splits, and bundled toy corpora;
//! * [`eval`] — clean/attack/defense evaluation under one seed tree;
//! * [`grid`] — parameter sweeps with journaled resume;
//! * [`report`] — per-sample rows, auditable aggregates, JSON/CSV output;
//! * [`config`] — the TOML experiment-config file;
//! * [`seed`] — the domain-separated deterministic seed tree.
//!
//! Everything a run does derives from one master seed, so any evaluation is
//! reproducible byte-for-byte at any parallelism level.

pub mod attack;
pub mod backend;
pub mod config;
pub mod data;
pub mod defense;
pub mod eval;
pub mod grid;
pub mod metrics;
pub mod prompt;
pub mod recipe;
pub mod report;
pub mod seed;
