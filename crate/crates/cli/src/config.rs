//! Flag and config-file resolution. Every setting comes from the flag if
//! given, then the `--config` JSON file, then the built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pllbench_core::backend::onnx::OnnxModel;
use pllbench_core::backend::ModelKind;
use pllbench_core::{
    Backend, Engine, EngineOptions, ErrorPolicy, HashTokenizer, MaskingStrategy, NeuralBackend, ReferenceBackend,
    ReferenceBackendConfig, Tokenizer, TokenizerSpec, VocabTokenizer,
};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_VOCAB_SIZE: usize = 8192;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_MAX_SEQ_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Reference,
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindChoice {
    Masked,
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyChoice {
    FailFast,
    SkipAndLog,
}

impl From<PolicyChoice> for ErrorPolicy {
    fn from(p: PolicyChoice) -> Self {
        match p {
            PolicyChoice::FailFast => ErrorPolicy::FailFast,
            PolicyChoice::SkipAndLog => ErrorPolicy::SkipAndLog,
        }
    }
}

/// Contents of a `--config` file. Keys mirror the long flag names with
/// underscores.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backend: Option<BackendChoice>,
    pub seed: Option<u64>,
    pub vocab_size: Option<usize>,
    pub piece_chars: Option<usize>,
    pub tokenizer_spec: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub kind: Option<KindChoice>,
    pub max_seq_len: Option<usize>,
    pub strategy: Option<String>,
    pub batch_size: Option<usize>,
    pub error_policy: Option<PolicyChoice>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
        serde_json::from_str(&text).map_err(|e| CliError::input("ConfigError", format!("{}: {e}", path.display())))
    }
}

pub fn parse_strategy(s: &str) -> Result<MaskingStrategy, String> {
    s.parse().map_err(|e: pllbench_core::Error| e.to_string())
}

/// Which tokenizer to use: a spec file, or the built-in hash tokenizer.
#[derive(Debug, Clone, Args)]
pub struct TokenizerArgs {
    /// TokenizerSpec JSON; without it a hash tokenizer is used
    #[arg(long)]
    pub tokenizer_spec: Option<PathBuf>,

    /// Vocabulary size of the hash tokenizer and reference backend
    #[arg(long)]
    pub vocab_size: Option<usize>,

    /// Characters per hash-tokenizer piece
    #[arg(long)]
    pub piece_chars: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,

    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,

    /// Seed of the reference backend
    #[arg(long)]
    pub seed: Option<u64>,

    /// Exported ONNX graph (neural backend)
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Architecture of the exported graph
    #[arg(long, value_enum)]
    pub kind: Option<KindChoice>,

    #[arg(long)]
    pub max_seq_len: Option<usize>,

    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<MaskingStrategy>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long, value_enum)]
    pub error_policy: Option<PolicyChoice>,
}

pub struct TokenizerSettings {
    pub spec_path: Option<PathBuf>,
    pub vocab_size: usize,
    pub piece_chars: usize,
}

impl TokenizerSettings {
    pub fn resolve(args: &TokenizerArgs, cfg: &RunConfig) -> Self {
        TokenizerSettings {
            spec_path: args.tokenizer_spec.clone().or_else(|| cfg.tokenizer_spec.clone()),
            vocab_size: args.vocab_size.or(cfg.vocab_size).unwrap_or(DEFAULT_VOCAB_SIZE),
            piece_chars: args
                .piece_chars
                .or(cfg.piece_chars)
                .unwrap_or(HashTokenizer::DEFAULT_PIECE_CHARS),
        }
    }

    pub fn build(&self) -> CliResult<Box<dyn Tokenizer>> {
        Ok(match &self.spec_path {
            Some(path) => Box::new(VocabTokenizer::new(load_spec(path)?)),
            None => Box::new(HashTokenizer::new(self.vocab_size, self.piece_chars)?),
        })
    }
}

fn load_spec(path: &Path) -> CliResult<TokenizerSpec> {
    TokenizerSpec::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

pub type DynEngine = Engine<Box<dyn Backend>>;

pub struct Settings {
    pub tokenizer: TokenizerSettings,
    pub backend: BackendChoice,
    pub seed: u64,
    pub model: Option<PathBuf>,
    pub kind: Option<KindChoice>,
    pub max_seq_len: usize,
    pub strategy: MaskingStrategy,
    pub options: EngineOptions,
}

impl Settings {
    pub fn resolve(args: &ModelArgs, cfg: &RunConfig) -> CliResult<Self> {
        let strategy = match (args.strategy, &cfg.strategy) {
            (Some(s), _) => s,
            (None, Some(s)) => s.parse()?,
            (None, None) => MaskingStrategy::Original,
        };
        let backend = args.backend.or(cfg.backend).unwrap_or(BackendChoice::Reference);
        let model = args.model.clone().or_else(|| cfg.model.clone());
        let kind = args.kind.or(cfg.kind);
        let tokenizer = TokenizerSettings::resolve(&args.tokenizer, cfg);
        if backend == BackendChoice::Neural {
            if model.is_none() {
                return Err(CliError::input("ConfigError", "--backend neural needs --model"));
            }
            if tokenizer.spec_path.is_none() {
                return Err(CliError::input(
                    "ConfigError",
                    "--backend neural needs --tokenizer-spec",
                ));
            }
        } else if model.is_some() {
            return Err(CliError::input(
                "ConfigError",
                "--model is only used with --backend neural",
            ));
        }
        let batch_size = args.batch_size.or(cfg.batch_size).unwrap_or(DEFAULT_BATCH_SIZE);
        let policy = args
            .error_policy
            .or(cfg.error_policy)
            .map_or(ErrorPolicy::FailFast, Into::into);
        Ok(Settings {
            tokenizer,
            backend,
            seed: args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
            model,
            kind,
            max_seq_len: args.max_seq_len.or(cfg.max_seq_len).unwrap_or(DEFAULT_MAX_SEQ_LEN),
            strategy,
            options: EngineOptions { batch_size, policy },
        })
    }

    /// Builds the tokenizer and an engine over the selected backend. The
    /// reference backend takes its vocabulary size from the tokenizer.
    pub fn build(&self) -> CliResult<(Box<dyn Tokenizer>, DynEngine)> {
        let tokenizer = self.tokenizer.build()?;
        let spec = tokenizer.spec();
        let backend: Box<dyn Backend> = match self.backend {
            BackendChoice::Reference => {
                let mut config = ReferenceBackendConfig::new(spec.vocab_size(), self.seed);
                config.max_sequence_length = self.max_seq_len;
                config.bos_id = spec.special.bos;
                Box::new(ReferenceBackend::new(config)?)
            }
            BackendChoice::Neural => {
                let path = self.model.as_ref().expect("checked in resolve");
                if !path.is_file() {
                    return Err(CliError::input(
                        "IoError",
                        format!("model file {} not found", path.display()),
                    ));
                }
                let kind = match self.kind {
                    Some(KindChoice::Masked) => ModelKind::Masked,
                    Some(KindChoice::Causal) => ModelKind::Causal,
                    None if self.strategy.is_masked() => ModelKind::Masked,
                    None => ModelKind::Causal,
                };
                let model = OnnxModel::load(path, kind, spec.vocab_size(), self.max_seq_len)?;
                Box::new(NeuralBackend::new(model, spec.clone(), self.options.batch_size.max(1))?)
            }
        };
        let special = spec.special;
        Ok((tokenizer, Engine::new(backend, special).with_options(self.options)?))
    }
}
