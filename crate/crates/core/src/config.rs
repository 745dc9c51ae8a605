//! Pipeline configuration and the key-value config file format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::classify::ClassifierKind;
use crate::kg::DEFAULT_TRIPLE_CAP;
use crate::ranking::DEFAULT_K;
use crate::web::DEFAULT_N_MAX;

pub const DEFAULT_BUDGET: Duration = Duration::from_secs(60);
pub const DEFAULT_SPARQL_ENDPOINT: &str = "https://dbpedia.org/sparql";
pub const DEFAULT_CHAT_BASE: &str = "https://api.openai.com/v1";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4o-mini";

/// Keys that hold credentials. These are read from the environment only.
pub const SECRET_KEYS: [&str; 3] = ["chat_api_key", "search_api_key", "search_engine_id"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid value for {key}: {message}")]
    InvalidValue { key: String, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("{0} is a secret and may only be set through the environment")]
    SecretInFile(String),
    #[error("config file line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("cannot read config file: {0}")]
    Io(String),
    #[error("{0}")]
    Missing(String),
}

/// Which stages a run may use. `Full` is the normal pipeline; the other two
/// exist for ablation baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    #[default]
    Full,
    KgOnly,
    WebOnly,
}

impl std::str::FromStr for StageMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Self::Full),
            "kg_only" | "kg" => Ok(Self::KgOnly),
            "web_only" | "web" => Ok(Self::WebOnly),
            other => Err(format!("unknown stage mode {other:?} (expected full, kg_only or web_only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub sparql: String,
    pub linker: Option<String>,
    pub linker_fallback: Option<String>,
    pub scorer: Option<String>,
    pub nli: Option<String>,
    pub chat_base: String,
    pub chat_model: String,
    pub search: Option<String>,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            sparql: DEFAULT_SPARQL_ENDPOINT.into(),
            linker: None,
            linker_fallback: None,
            scorer: None,
            nli: None,
            chat_base: DEFAULT_CHAT_BASE.into(),
            chat_model: DEFAULT_CHAT_MODEL.into(),
            search: None,
        }
    }
}

#[derive(Clone, Default, PartialEq)]
pub struct Secrets {
    pub chat_api_key: Option<String>,
    pub search_api_key: Option<String>,
    pub search_engine_id: Option<String>,
}

impl fmt::Debug for Secrets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |v: &Option<String>| if v.is_some() { "<set>" } else { "<unset>" };
        f.debug_struct("Secrets")
            .field("chat_api_key", &mark(&self.chat_api_key))
            .field("search_api_key", &mark(&self.search_api_key))
            .field("search_engine_id", &mark(&self.search_engine_id))
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub kg_classifier: ClassifierKind,
    pub web_classifier: ClassifierKind,
    pub k: usize,
    pub n_max: usize,
    pub triple_cap: usize,
    pub budget_ms: u64,
    pub stages: StageMode,
    /// Search requests per second; 0 disables the limiter.
    pub search_rate: f64,
    /// Upper bound on concurrent requests per HTTP backend.
    pub max_in_flight: usize,
    pub http_timeout_ms: u64,
    /// Score with word overlap when the remote cross-encoder is down.
    pub lexical_fallback: bool,
    /// When set, every backend replays recordings from this directory.
    pub fixture_dir: Option<PathBuf>,
    pub blacklist: Option<PathBuf>,
    pub endpoints: Endpoints,
    #[serde(skip)]
    pub secrets: Secrets,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kg_classifier: ClassifierKind::Llm,
            web_classifier: ClassifierKind::Llm,
            k: DEFAULT_K,
            n_max: DEFAULT_N_MAX,
            triple_cap: DEFAULT_TRIPLE_CAP,
            budget_ms: DEFAULT_BUDGET.as_millis() as u64,
            stages: StageMode::Full,
            search_rate: 5.0,
            max_in_flight: 8,
            http_timeout_ms: 10_000,
            lexical_fallback: false,
            fixture_dir: None,
            blacklist: None,
            endpoints: Endpoints::default(),
            secrets: Secrets::default(),
        }
    }
}

/// Env var name for each config key that may come from the environment.
pub const ENV_KEYS: [(&str, &str); 7] = [
    ("CHAT_API_KEY", "chat_api_key"),
    ("SEARCH_API_KEY", "search_api_key"),
    ("SEARCH_ENGINE_ID", "search_engine_id"),
    ("SPARQL_ENDPOINT", "sparql_endpoint"),
    ("SCORER_URL", "scorer_url"),
    ("NLI_URL", "nli_url"),
    ("FIXTURE_DIR", "fixture_dir"),
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.into(),
        message: e.to_string(),
    })
}

fn opt(value: &str) -> Option<String> {
    let v = value.trim();
    (!v.is_empty()).then(|| v.to_string())
}

impl PipelineConfig {
    pub fn fixture_mode(&self) -> bool {
        self.fixture_dir.is_some()
    }

    pub fn budget(&self) -> Duration {
        Duration::from_millis(self.budget_ms)
    }

    pub fn http_timeout(&self) -> Duration {
        Duration::from_millis(self.http_timeout_ms)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: &str| ConfigError::InvalidValue {
            key: key.into(),
            message: message.into(),
        };
        if self.k < 1 {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.n_max < 1 {
            return Err(invalid("n_max", "must be at least 1"));
        }
        if self.triple_cap < 1 {
            return Err(invalid("triple_cap", "must be at least 1"));
        }
        if self.budget_ms == 0 {
            return Err(invalid("budget_ms", "must be positive"));
        }
        if !(self.search_rate.is_finite() && self.search_rate >= 0.0) {
            return Err(invalid("search_rate", "must be a non-negative number"));
        }
        if self.max_in_flight < 1 {
            return Err(invalid("max_in_flight", "must be at least 1"));
        }
        Ok(())
    }

    /// Sets one key. Accepts every non-secret key of the config file plus the
    /// secret keys, which callers must only feed from the environment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let invalid = |message: String| ConfigError::InvalidValue {
            key: key.into(),
            message,
        };
        match key {
            "kg_classifier" => self.kg_classifier = value.parse().map_err(invalid)?,
            "web_classifier" => self.web_classifier = value.parse().map_err(invalid)?,
            "k" => self.k = parse_num(key, value)?,
            "n_max" => self.n_max = parse_num(key, value)?,
            "triple_cap" => self.triple_cap = parse_num(key, value)?,
            "budget_ms" => self.budget_ms = parse_num(key, value)?,
            "stages" => self.stages = value.parse().map_err(invalid)?,
            "search_rate" => self.search_rate = parse_num(key, value)?,
            "max_in_flight" => self.max_in_flight = parse_num(key, value)?,
            "http_timeout_ms" => self.http_timeout_ms = parse_num(key, value)?,
            "lexical_fallback" => self.lexical_fallback = parse_num(key, value)?,
            "fixture_dir" => self.fixture_dir = opt(value).map(PathBuf::from),
            "blacklist" => self.blacklist = opt(value).map(PathBuf::from),
            "sparql_endpoint" => self.endpoints.sparql = value.to_string(),
            "linker_url" => self.endpoints.linker = opt(value),
            "linker_fallback_url" => self.endpoints.linker_fallback = opt(value),
            "scorer_url" => self.endpoints.scorer = opt(value),
            "nli_url" => self.endpoints.nli = opt(value),
            "chat_base_url" => self.endpoints.chat_base = value.to_string(),
            "chat_model" => self.endpoints.chat_model = value.to_string(),
            "search_url" => self.endpoints.search = opt(value),
            "chat_api_key" => self.secrets.chat_api_key = opt(value),
            "search_api_key" => self.secrets.search_api_key = opt(value),
            "search_engine_id" => self.secrets.search_engine_id = opt(value),
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are ignored.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: "expected key = value".into(),
                });
            };
            let key = key.trim();
            if SECRET_KEYS.contains(&key) {
                return Err(ConfigError::SecretInFile(key.into()));
            }
            let value = value.trim().trim_matches('"');
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        self.apply_file_text(&text)
    }

    /// Applies the recognized environment variables from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for (var, key) in ENV_KEYS {
            if let Some(value) = lookup(var) {
                self.set(key, &value)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!((c.k, c.n_max, c.budget()), (5, 100, Duration::from_secs(60)));
        assert!(!c.fixture_mode());
    }

    #[test]
    fn file_then_env_precedence() {
        let mut c = PipelineConfig::default();
        c.apply_file_text("# comment\nk = 3\nsparql_endpoint = \"http://file/sparql\"\nstages = kg-only\n")
            .unwrap();
        c.apply_env(|v| (v == "SPARQL_ENDPOINT").then(|| "http://env/sparql".to_string()))
            .unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.stages, StageMode::KgOnly);
        assert_eq!(c.endpoints.sparql, "http://env/sparql");
    }

    #[test]
    fn secrets_rejected_in_files() {
        let mut c = PipelineConfig::default();
        assert_eq!(
            c.apply_file_text("chat_api_key = sk-123"),
            Err(ConfigError::SecretInFile("chat_api_key".into()))
        );
        c.apply_env(|v| (v == "CHAT_API_KEY").then(|| "sk-123".to_string())).unwrap();
        assert_eq!(c.secrets.chat_api_key.as_deref(), Some("sk-123"));
        assert!(!format!("{c:?}").contains("sk-123"));
        assert!(!serde_json::to_string(&c).unwrap().contains("sk-123"));
    }

    #[test]
    fn validation() {
        let mut c = PipelineConfig::default();
        assert!(matches!(c.set("k", "x"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(c.set("nope", "1"), Err(ConfigError::UnknownKey(_))));
        c.k = 0;
        assert!(c.validate().is_err());
        assert!(matches!(
            PipelineConfig::default().apply_file_text("just words"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }
}
