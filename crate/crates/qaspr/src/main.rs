//! `qaspr` command line: mine-rules, train, eval, ablate, inspect-mask,
//! grad-check, gen-synth. Logging verbosity comes from `QASPR_LOG`
//! (error, info, debug; default info). Errors exit nonzero with a single
//! `error: ...` line on stderr.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qaspr::config::{PartialConfig, RunConfig};
use qaspr::pipeline;
use qaspr::synth::SynthOptions;

#[derive(Parser)]
#[command(name = "qaspr", version, about = "Inductive knowledge-graph completion engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every data-touching command; each overrides the matching
/// config-file field.
#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// JSON config file (presets live in presets/)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_dir: Option<String>,
    #[arg(long)]
    ind_dir: Option<String>,
    /// Output directory for artifacts
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Evaluation-time masking: sampled | none
    #[arg(long)]
    eval_mask: Option<String>,
    /// Comma-separated p_e values for the ablation sweep
    #[arg(long, value_delimiter = ',')]
    pe_grid: Option<Vec<f64>>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    version_tag: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    path_len: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    p_e: Option<f64>,
    #[arg(long)]
    p_tau: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    shared_transform: Option<bool>,
    /// Keep the pruning scorer separate from the loss scorer (it is then
    /// frozen at initialization)
    #[arg(long)]
    separate_scorers: Option<bool>,
}

impl CommonArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let file = match &self.config {
            Some(path) => Some(PartialConfig::load(path)?),
            None => None,
        };
        Ok(RunConfig::resolve(file, self.overrides())?)
    }

    /// Just the CLI-flag layer, as a partial config.
    fn overrides(&self) -> PartialConfig {
        PartialConfig {
            dataset: self.dataset.clone(),
            version: self.version_tag.clone(),
            train_dir: self.train_dir.clone(),
            ind_dir: self.ind_dir.clone(),
            out_dir: self.out.clone(),
            dim: self.dim,
            path_len: self.path_len,
            top_k: self.top_k,
            p_e: self.p_e,
            p_tau: self.p_tau,
            mask_eps: None,
            relu: None,
            shared_transform: self.shared_transform,
            separate_scorers: self.separate_scorers,
            scoring: None,
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            eval_every: self.eval_every,
            seed: self.seed,
            eval_seed: self.eval_seed,
            threads: self.threads,
            eval_mask: self.eval_mask.clone(),
            pe_grid: self.pe_grid.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Mine the rule-confidence table from the training graph into CSV
    MineRules(CommonArgs),
    /// Train with early stopping; writes best.ckpt, curve.jsonl, and
    /// valid_metrics.json
    Train(CommonArgs),
    /// Evaluate a checkpoint on the inductive test queries
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also dump per-query ranks as CSV
        #[arg(long)]
        dump_ranks: Option<PathBuf>,
    },
    /// Train and evaluate the ablation grid (full, no-mask, no-score, and
    /// the p_e sweep), or a single --variant
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// full | no-mask | no-score | pe-<value>
        #[arg(long)]
        variant: Option<String>,
    },
    /// Print one query's per-hop candidates, confidences, removal
    /// probabilities, and retained relations as JSON
    InspectMask {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        head: String,
        #[arg(long)]
        rel: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check analytic gradients against central finite differences on a
    /// built-in toy problem
    GradCheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
    },
    /// Generate a synthetic planted-rule split under <out>/synth/
    GenSynth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100)]
        entities: usize,
        #[arg(long, default_value_t = 140)]
        rule_pairs: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::MineRules(common) => {
            let cfg = common.resolve()?;
            let path = pipeline::cmd_mine_rules(&cfg)?;
            println!("{}", path.display());
        }
        Cmd::Train(common) => {
            let cfg = common.resolve()?;
            let artifacts = pipeline::cmd_train(&cfg)?;
            println!("{}", artifacts.checkpoint.display());
        }
        Cmd::Eval { common, checkpoint, dump_ranks } => {
            let cfg = {
                // eval inherits the checkpoint's training config, then
                // applies CLI overrides
                let (_, meta) = qaspr::checkpoint::load(&checkpoint)?;
                let mut base = meta.config;
                if let Some(path) = &common.config {
                    PartialConfig::load(path)?.apply(&mut base);
                }
                common.overrides().apply(&mut base);
                base.validate()?;
                base
            };
            let path = pipeline::cmd_eval(&cfg, &checkpoint, dump_ranks.as_deref())?;
            println!("{}", path.display());
        }
        Cmd::Ablate { common, variant } => {
            let cfg = common.resolve()?;
            let paths = pipeline::cmd_ablate(&cfg, variant.as_deref())?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Cmd::InspectMask { common, head, rel, checkpoint } => {
            let cfg = common.resolve()?;
            let json = pipeline::cmd_inspect_mask(&cfg, &head, &rel, checkpoint.as_deref())?;
            println!("{json}");
        }
        Cmd::GradCheck { tolerance, fd_step } => {
            let outcome = pipeline::cmd_grad_check(tolerance, fd_step)?;
            for t in &outcome.report.tensors {
                println!(
                    "{}: max_rel_err={:.3e} max_abs_err={:.3e} ({} coords)",
                    t.name, t.max_rel_err, t.max_abs_err, t.n_coords
                );
            }
            if outcome.passed() {
                println!("gradient check passed (tolerance {tolerance:.0e})");
            } else {
                anyhow::bail!(
                    "gradient check failed: max relative error {:.3e} exceeds {tolerance:.0e}",
                    outcome.report.max_rel_err()
                );
            }
        }
        Cmd::GenSynth { common, entities, rule_pairs, noise } => {
            let cfg = common.resolve()?;
            let opts = SynthOptions {
                train_entities: entities,
                ind_entities: entities,
                rule_pairs,
                noise_fraction: noise,
                seed: cfg.seed,
                ..SynthOptions::default()
            };
            let artifacts = pipeline::cmd_gen_synth(&cfg, &opts)?;
            println!("{}", artifacts.train_dir.display());
            println!("{}", artifacts.ind_dir.display());
        }
    }
    Ok(())
}

fn main() {
    let env = env_logger::Env::new().filter_or("QASPR_LOG", "info");
    env_logger::Builder::from_env(env).format_timestamp(None).format_target(false).init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
