//! Run configuration: one JSON file plus flag overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use llmar::dataset::GeneratorConfig;
use llmar::llm::{CompletionProvider, HttpProvider, MockProvider};
use llmar::training::TrainingConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub model: String,
    /// Overrides the endpoint from the environment.
    pub base_url: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            model: "deepseek-chat".into(),
            base_url: None,
            timeout_secs: 120,
            max_retries: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub provider: ProviderKind,
    pub seed: u64,
    pub n_folds: usize,
    /// Partition index used by `train`.
    pub partition: usize,
    pub training: TrainingConfig,
    pub mock: MockProvider,
    pub remote: RemoteConfig,
    /// Feature names; taken from the dataset header when absent.
    pub vocabulary: Option<Vec<String>>,
    pub generator: Option<GeneratorConfig>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            provider: ProviderKind::Mock,
            seed: 0,
            n_folds: 4,
            partition: 0,
            training: TrainingConfig::default(),
            mock: MockProvider::default(),
            remote: RemoteConfig::default(),
            vocabulary: None,
            generator: None,
            out: None,
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_flags(
        &mut self,
        seed: Option<u64>,
        provider: Option<ProviderKind>,
        beta: Option<f64>,
        grid_step: Option<f64>,
        jobs: Option<usize>,
        out: Option<PathBuf>,
    ) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(p) = provider {
            self.provider = p;
        }
        if let Some(b) = beta {
            self.training.beta = b;
        }
        if let Some(g) = grid_step {
            self.training.grid_step = g;
        }
        if jobs.is_some() {
            self.jobs = jobs;
        }
        if out.is_some() {
            self.out = out;
        }
    }

    pub fn set_data(&mut self, data: Option<PathBuf>) {
        if data.is_some() {
            self.data = data;
        }
    }

    pub fn provider(&self) -> Result<Box<dyn CompletionProvider>, CliError> {
        match self.provider {
            ProviderKind::Mock => Ok(Box::new(self.mock.clone())),
            ProviderKind::Remote => {
                let mut p = match &self.remote.base_url {
                    Some(url) => HttpProvider {
                        base_url: url.clone(),
                        api_key: std::env::var(llmar::llm::API_KEY_ENV).ok(),
                        model: self.remote.model.clone(),
                        timeout: Duration::from_secs(120),
                        max_retries: 4,
                        initial_backoff: Duration::from_millis(500),
                    },
                    None => HttpProvider::from_env(&self.remote.model).map_err(|e| CliError::Config(e.to_string()))?,
                };
                p.timeout = Duration::from_secs(self.remote.timeout_secs);
                p.max_retries = self.remote.max_retries;
                Ok(Box::new(p))
            }
        }
    }
}
