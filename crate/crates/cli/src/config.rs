//! Run configuration: one TOML file, `${VAR}` expanded in string values,
//! command-line flags applied on top.

use std::env;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use conlink::embedding::EmbeddingClientConfig;
use conlink::llm::{LlmClientConfig, Price, PriceTable, RateLimits};
use conlink::orchestrator::{Mode, PipelineConfig};
use conlink::retry::RetryPolicy;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Script for the mock provider. Defaults to `mock_script.json` in the
    /// dataset directory.
    pub mock_script: Option<PathBuf>,
    pub endpoint: String,
    /// Literal key, usually written as `"${SOME_VAR}"`.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    /// Environment variable holding the key when `api_key` is not set.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
    pub tokens_per_minute: Option<u64>,
    pub retry: RetryPolicy,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            mock_script: None,
            endpoint: conlink::llm::OpenAiConfig::default().endpoint,
            api_key: None,
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            max_in_flight: 8,
            requests_per_minute: None,
            tokens_per_minute: None,
            retry: RetryPolicy::default(),
        }
    }
}

impl ProviderConfig {
    pub fn client_config(&self) -> LlmClientConfig {
        LlmClientConfig {
            retry: self.retry.clone(),
            limits: RateLimits {
                requests_per_minute: self.requests_per_minute,
                tokens_per_minute: self.tokens_per_minute,
            },
            max_in_flight: self.max_in_flight.max(1),
        }
    }

    pub fn resolve_api_key(&self) -> Result<String> {
        if let Some(k) = self.api_key.as_ref().filter(|k| !k.is_empty()) {
            return Ok(k.clone());
        }
        env::var(&self.api_key_env).with_context(|| {
            format!(
                "remote provider needs an API key: set {} or provider.api_key",
                self.api_key_env
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
    /// Directory with replacement prompt templates.
    pub templates: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub provider: ProviderConfig,
    /// Added to, or replacing entries of, the built-in price table.
    pub prices: std::collections::BTreeMap<String, Price>,
    pub embedding: EmbeddingClientConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            out: None,
            seed: 0,
            jobs: 8,
            templates: None,
            pipeline: PipelineConfig::default(),
            provider: ProviderConfig::default(),
            prices: Default::default(),
            embedding: EmbeddingClientConfig::default(),
        }
    }
}

/// Replaces every `${NAME}` in `s` with the value of environment variable
/// `NAME`, failing on unset variables. `$$` stands for a literal `$`.
pub fn interpolate(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('$') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(t) = tail.strip_prefix("$$") {
            out.push('$');
            rest = t;
        } else if let Some(t) = tail.strip_prefix("${") {
            let Some(end) = t.find('}') else {
                bail!("unterminated `${{` in {s:?}")
            };
            let name = &t[..end];
            match lookup(name) {
                Some(v) => out.push_str(&v),
                None => bail!("environment variable {name} is not set"),
            }
            rest = &t[end + 1..];
        } else {
            out.push('$');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn expand(v: &mut toml::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    match v {
        toml::Value::String(s) => *s = interpolate(s, lookup)?,
        toml::Value::Array(a) => a.iter_mut().try_for_each(|x| expand(x, lookup))?,
        toml::Value::Table(t) => t.iter_mut().try_for_each(|(_, x)| expand(x, lookup))?,
        _ => {}
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        let mut value: toml::Value = toml::from_str::<toml::Table>(text)?.into();
        expand(&mut value, lookup)?;
        Ok(value.try_into()?)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        let mut cfg = RunConfig::parse(&text, &|k| env::var(k).ok()).with_context(|| format!("{}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.dataset,
            &mut cfg.out,
            &mut cfg.templates,
            &mut cfg.provider.mock_script,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn price_table(&self) -> PriceTable {
        let mut t = PriceTable::default();
        for (model, price) in &self.prices {
            t.set(model.clone(), *price);
        }
        t
    }

    pub fn dataset(&self) -> Result<&Path> {
        match &self.dataset {
            Some(d) if d.is_dir() => Ok(d),
            Some(d) => bail!("{}: dataset directory does not exist", d.display()),
            None => bail!("no dataset given (use --dataset or `dataset` in the config)"),
        }
    }

    pub fn out(&self) -> Result<&Path> {
        let out = self.out.as_deref().unwrap_or(Path::new("out"));
        std::fs::create_dir_all(out).with_context(|| format!("{}", out.display()))?;
        Ok(out)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.pipeline.mode = mode;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(k: &str) -> Option<String> {
        (k == "KEY").then(|| "s3cret".to_string())
    }

    #[test]
    fn interpolation() {
        assert_eq!(interpolate("a ${KEY} b", &env).unwrap(), "a s3cret b");
        assert_eq!(interpolate("$$5 and $x", &env).unwrap(), "$5 and $x");
        assert!(interpolate("${MISSING}", &env)
            .unwrap_err()
            .to_string()
            .contains("MISSING"));
        assert!(interpolate("${KEY", &env).is_err());
    }

    #[test]
    fn parses_full_config() {
        let text = r#"
            dataset = "data"
            seed = 3
            [pipeline]
            k = 7
            mode = "stage2_only"
            [provider]
            kind = "remote"
            api_key = "${KEY}"
            requests_per_minute = 100
            [provider.retry]
            max_attempts = 2
            [prices.my-model]
            prompt = 1e-6
            completion = 2e-6
            [embedding]
            batch_size = 16
            # a comment with ${NOT_EXPANDED}
        "#;
        let cfg = RunConfig::parse(text, &env).unwrap();
        assert_eq!(cfg.pipeline.k, 7);
        assert_eq!(cfg.pipeline.n, 5);
        assert_eq!(cfg.pipeline.mode, Mode::Stage2Only);
        assert_eq!(cfg.provider.kind, ProviderKind::Remote);
        assert_eq!(cfg.provider.resolve_api_key().unwrap(), "s3cret");
        assert_eq!(cfg.provider.client_config().limits.requests_per_minute, Some(100));
        assert_eq!(cfg.provider.retry.max_attempts, 2);
        assert_eq!(cfg.embedding.batch_size, 16);
        let prices = cfg.price_table();
        assert!(prices.get("my-model").is_some() && prices.get("gpt-4").is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("datset = \"x\"", &env).is_err());
        assert!(RunConfig::parse("[pipeline]\nk = \"ten\"", &env).is_err());
    }

    #[test]
    fn key_never_serialized() {
        let cfg = RunConfig::parse("[provider]\napi_key = \"${KEY}\"", &env).unwrap();
        let s = toml::to_string(&cfg).unwrap();
        assert!(!s.contains("s3cret"));
    }
}
