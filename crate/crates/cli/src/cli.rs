//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{self, ConfigError, ExperimentSpec, Mode, ScalingName};
use crate::modes::{self, RunContext};

#[derive(Debug, Parser)]
#[command(name = "branchflow", version, about = "Branching-particle Monte Carlo for semilinear parabolic equations")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true, value_name = "N", env = "BRANCHFLOW_THREADS")]
    pub threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the mode named in the config.
    Run,
    /// Convergence sweep over beta (or over n_trees with mode = "converge-n").
    Converge,
    /// Print the nonlinearity a rule represents and its beta-series.
    Psi(RuleArgs),
    /// Check that a rule is an admissible branching law.
    ValidateRule(RuleArgs),
    /// Monte Carlo check of the renewal identity.
    Lemma,
    /// Solve the reference equation on a grid.
    Oracle,
    /// Integral-equation residual of the grid solution.
    Residual,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScalingArg {
    Scaling1,
    Scaling2,
    Unit,
}

/// Rule selection without a config file.
#[derive(Debug, Args)]
pub struct RuleArgs {
    /// Built-in rule: kpp, power-alpha, eq3.3 (derivative-binary), eq3.11 (signed-cubic).
    #[arg(long)]
    pub rule: Option<String>,
    /// Exponent for power-alpha, e.g. 3/2 or 2.5.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingArg>,
}

fn mode_for(cmd: &Command, spec: &ExperimentSpec) -> Option<Mode> {
    match cmd {
        Command::Run => None,
        Command::Converge => Some(if spec.mode == Some(Mode::ConvergeN) { Mode::ConvergeN } else { Mode::ConvergeBeta }),
        Command::Psi(_) => Some(Mode::Psi),
        Command::ValidateRule(_) => Some(Mode::ValidateRule),
        Command::Lemma => Some(Mode::Lemma),
        Command::Oracle => Some(Mode::Oracle),
        Command::Residual => Some(Mode::Residual),
    }
}

fn context(cli: &Cli) -> Result<RunContext, ConfigError> {
    let (mut spec, text, base_dir) = match &cli.config {
        Some(path) => {
            let loaded = config::load(path)?;
            (loaded.spec, loaded.text, loaded.base_dir)
        }
        None => (ExperimentSpec::default(), String::new(), PathBuf::from(".")),
    };
    if let Command::Psi(args) | Command::ValidateRule(args) = &cli.command {
        if let Some(name) = &args.rule {
            spec.rule = Some(config::rule_override(name, args.alpha.as_deref())?);
        } else if args.alpha.is_some() {
            return Err(ConfigError::field("--alpha", "needs --rule power-alpha"));
        }
        if let Some(s) = args.scaling {
            spec.scaling = Some(match s {
                ScalingArg::Scaling1 => ScalingName::Scaling1,
                ScalingArg::Scaling2 => ScalingName::Scaling2,
                ScalingArg::Unit => ScalingName::Unit,
            });
        }
    }
    let mode = mode_for(&cli.command, &spec);
    RunContext::new(spec, text, base_dir, mode, cli.seed, cli.threads, cli.out.clone())
}

/// Parses `args`, runs, and returns the process exit code:
/// 0 success, 1 acceptance failed or rule rejected, 2 config error,
/// 3 compute or IO error.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
            } else {
                let _ = write!(stdout, "{rendered}");
            }
            return code;
        }
    };
    let ctx = match context(&cli) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "config error: {e}");
            return 2;
        }
    };
    match modes::run(&ctx, stdout) {
        Ok(report) => {
            for f in &report.files {
                let _ = writeln!(stderr, "wrote {}", f.display());
            }
            report.status.exit_code()
        }
        Err(e) => {
            let kind = if e.exit_code() == 2 { "config error" } else { "error" };
            let _ = writeln!(stderr, "{kind}: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = main_with(std::iter::once("branchflow").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn psi_for_kpp() {
        let (code, out, _) = run(&["psi", "--rule", "kpp"]);
        assert_eq!(code, 0);
        assert!(out.contains("psi = u^2 - u\n"), "{out}");
        assert!(out.contains("psi_beta = "), "{out}");
    }

    #[test]
    fn validate_rejects_alpha_above_two() {
        let (code, out, _) = run(&["validate-rule", "--rule", "power-alpha", "--alpha", "2.5"]);
        assert_eq!(code, 1);
        assert!(out.contains("positivity"), "{out}");
        let (code, out, _) = run(&["validate-rule", "--rule", "power-alpha", "--alpha", "3/2"]);
        assert_eq!(code, 0, "{out}");
    }

    #[test]
    fn run_without_mode_is_a_config_error() {
        let (code, _, err) = run(&["run"]);
        assert_eq!(code, 2);
        assert!(err.contains("mode"), "{err}");
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let (code, _, err) = run(&["psi", "--bogus"]);
        assert_eq!(code, 2);
        assert!(!err.is_empty());
    }
}
