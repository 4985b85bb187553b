//! Deployment configuration, loaded from TOML with environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::federated::TrainConfig;
use crate::feedback::FeedbackPolicy;
use crate::filtering::{FilterSettings, RankWeights};
use crate::persona::{PersonaWeights, ReadabilityRules, SentimentLexicon, TextResources, WordList};
use crate::Error;

pub const ENV_PORT: &str = "FEDFEED_PORT";
pub const ENV_STATE_PATH: &str = "FEDFEED_STATE_PATH";
pub const ENV_CONFIG: &str = "FEDFEED_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub port: u16,
    pub state_path: Option<PathBuf>,
    /// Allowed CORS origins; `"*"` allows any.
    pub cors_origins: Vec<String>,
    pub lexicon_path: Option<PathBuf>,
    pub common_words_path: Option<PathBuf>,
    pub persona: PersonaWeights,
    pub readability: ReadabilityRules,
    pub ranking: RankWeights,
    pub filter: FilterSettings,
    pub feedback: FeedbackPolicy,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            port: 8080,
            state_path: None,
            cors_origins: vec!["*".into()],
            lexicon_path: None,
            common_words_path: None,
            persona: PersonaWeights::default(),
            readability: ReadabilityRules::default(),
            ranking: RankWeights::default(),
            filter: FilterSettings::default(),
            feedback: FeedbackPolicy::default(),
            train: TrainConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(src: &str) -> Result<Self, Error> {
        let cfg: Config = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Loads `path` (or `$FEDFEED_CONFIG`, or defaults), then applies env overrides.
    pub fn resolve(path: Option<&Path>) -> Result<Self, Error> {
        let env_path = std::env::var_os(ENV_CONFIG).map(PathBuf::from);
        let mut cfg = match path.map(Path::to_path_buf).or(env_path) {
            Some(p) => Self::load(&p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), Error> {
        if let Some(p) = get(ENV_PORT) {
            self.port = p.parse().map_err(|_| Error::Config(format!("{ENV_PORT}={p:?} is not a port")))?;
        }
        if let Some(p) = get(ENV_STATE_PATH) {
            self.state_path = Some(PathBuf::from(p));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.persona.validate()?;
        self.ranking.validate().map_err(Error::Config)?;
        self.filter.validate().map_err(Error::Config)?;
        self.feedback.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Lexicon and word list from the configured paths, or the bundled defaults.
    pub fn text_resources(&self) -> Result<TextResources, Error> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())));
        let lexicon = match &self.lexicon_path {
            Some(p) => SentimentLexicon::parse(&read(p)?)?,
            None => SentimentLexicon::default(),
        };
        let common_words = match &self.common_words_path {
            Some(p) => WordList::parse(&read(p)?),
            None => WordList::default(),
        };
        Ok(TextResources { lexicon, common_words, rules: self.readability.clone() })
    }
}
