//! Command-line entry points tying the pipeline together: dataset
//! generation, training, evaluation, context sweeps, latent consistency,
//! goal-reaching runs, and the multi-model comparison table.
//!
//! Every command is a pure function of (config, input files, seed); reruns
//! reproduce output files byte-for-byte. Sub-seeds are derived by hashing a
//! command/purpose label into the configured seed.

mod commands;
mod config;

pub use config::Options;

use std::fmt;

/// One-line, machine-parsable failure: `error code=<slug> msg="..."`.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub msg: String,
    pub usage: bool,
}

impl CliError {
    pub fn new(code: impl Into<String>, msg: impl Into<String>) -> CliError {
        CliError {
            code: code.into(),
            msg: msg.into(),
            usage: false,
        }
    }

    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError {
            code: "usage".into(),
            msg: msg.into(),
            usage: true,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self.msg.replace(['\n', '\r'], " ");
        write!(f, "error code={} msg=\"{}\"", self.code, flat)
    }
}

impl From<iida_core::CoreError> for CliError {
    fn from(e: iida_core::CoreError) -> CliError {
        use iida_core::CoreError as E;
        let code = match &e {
            E::ShapeMismatch { .. } => "shape-mismatch",
            E::InvalidOperand { .. } => "invalid-operand",
            E::NonScalarLoss { .. } => "non-scalar-loss",
            E::NonFinite { .. } => "non-finite",
            E::BadParameter { .. } => "bad-parameter",
            E::FactorOutOfRange { .. } => "factor-out-of-range",
            E::ActionOutOfRange { .. } => "action-out-of-range",
            E::FamilyMismatch { .. } => "family-mismatch",
            E::MalformedRecord { .. } => "malformed-record",
            E::NanLoss { .. } => "nan-loss",
            E::Invalid(_) => "invalid",
            E::Io(_) => "io",
            E::Json(_) => "serialization",
        };
        CliError::new(code, e.to_string())
    }
}

pub const USAGE: &str = "usage: iida <command> [--flag value]...
commands:
  gen-data     --family F --seed S --out FILE [--train-envs N --val-envs N --test-envs N --actions N --eval-actions N]
  train        --dataset FILE --encoder E --seed S --out FILE [--context-n N --epochs N --batch N --lr X --loss mse|l2]
  eval         --checkpoint FILE --dataset FILE --seed S [--split train|val|test --context-n N --out FILE]
  sweep        --checkpoint FILE --dataset FILE --seed S --out FILE [--sizes 2,4,8,16 --split S --eval-seeds N]
  consistency  --checkpoint FILE --dataset FILE --seed S --out DIR [--split S --envs N --subsamples N --context-n N]
  slide        --checkpoint FILE[,FILE...] --dataset FILE --seed S --out FILE [--oracle true --envs N --goals N --split S]
  table1       --dataset FILE --seed S --out FILE [--seeds N --epochs N --context-n N]
a `--config FILE` of `key = value` lines may supply any flag; flags win";

/// Dispatch a full argv (without the program name).
pub fn run(args: &[String]) -> Result<(), CliError> {
    let (command, rest) = args
        .split_first()
        .ok_or_else(|| CliError::usage("no command given"))?;
    let opts = Options::from_args(rest)?;
    match command.as_str() {
        "gen-data" => commands::gen_data(&opts),
        "train" => commands::train(&opts),
        "eval" => commands::eval(&opts),
        "sweep" => commands::sweep(&opts),
        "consistency" => commands::consistency(&opts),
        "slide" => commands::slide(&opts),
        "table1" => commands::table1(&opts),
        other => Err(CliError::usage(format!("unknown command '{other}'"))),
    }
}
