//! Bot registry files: which bots exist, how to build them and which
//! example messages bootstrap their selection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::VectorTable;
use crate::retrieval::{build_store, read_pairs, PairStore, RetrievalError};

use super::{
    Bot, FillerBot, FixtureRestaurants, FixtureWeather, Gazetteer, HttpBot, ProviderError,
    RestaurantBot, RestaurantProvider, RetrievalBot, WeatherBot, WeatherProvider,
};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("duplicate bot id {0}")]
    Duplicate(String),
    #[error("registry file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("pairs for {bot}: {source}")]
    Pairs { bot: String, source: RetrievalError },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("bot {0} is supplied in code and cannot be built from a file")]
    NotBuildable(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum BotKind {
    Filler {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fillers: Option<Vec<String>>,
    },
    /// Retrieval over pairs collected from this deployment's own
    /// conversations.
    Chorus {
        #[serde(default = "default_chorus_k")]
        k: usize,
    },
    /// Retrieval over a fixed pair file.
    Interview {
        pairs: PathBuf,
        #[serde(default = "default_interview_k")]
        k: usize,
    },
    Weather,
    Restaurant,
    Http {
        endpoint: String,
    },
    /// A bot supplied in code rather than built from a file.
    Custom,
}

fn default_chorus_k() -> usize {
    2
}

fn default_interview_k() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BotSpec {
    pub bot_id: String,
    #[serde(flatten)]
    pub kind: BotKind,
    #[serde(default)]
    pub example_messages: Vec<String>,
}

impl BotSpec {
    pub fn new(bot_id: &str, kind: BotKind, examples: &[&str]) -> Self {
        Self {
            bot_id: bot_id.to_string(),
            kind,
            example_messages: examples.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Shared resources the built-in bots draw on.
#[derive(Clone)]
pub struct BuildContext {
    pub table: Arc<VectorTable>,
    pub chorus_store: Arc<RwLock<PairStore>>,
    pub gazetteer: Arc<Gazetteer>,
    pub weather: Arc<dyn WeatherProvider>,
    pub restaurants: Arc<dyn RestaurantProvider>,
    /// Relative pair-file paths resolve against this directory.
    pub base_dir: PathBuf,
}

impl BuildContext {
    pub fn new(table: Arc<VectorTable>) -> Self {
        let dim = table.dim();
        Self {
            table,
            chorus_store: Arc::new(RwLock::new(PairStore::new(dim))),
            gazetteer: Arc::new(Gazetteer::builtin()),
            weather: Arc::new(FixtureWeather::builtin()),
            restaurants: Arc::new(FixtureRestaurants::builtin()),
            base_dir: PathBuf::from("."),
        }
    }
}

pub struct RegisteredBot {
    pub spec: BotSpec,
    pub bot: Arc<dyn Bot>,
}

#[derive(Default)]
pub struct Registry {
    bots: BTreeMap<String, RegisteredBot>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse_specs(text: &str) -> Result<Vec<BotSpec>, RegistryError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a registry file and builds every bot it lists. Relative paths
    /// resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>, ctx: &BuildContext) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let specs = Self::parse_specs(&fs::read_to_string(path)?)?;
        let mut ctx = ctx.clone();
        if let Some(dir) = path.parent() {
            ctx.base_dir = dir.to_path_buf();
        }
        Self::from_specs(specs, &ctx)
    }

    pub fn from_specs(specs: Vec<BotSpec>, ctx: &BuildContext) -> Result<Self, RegistryError> {
        let mut reg = Self::new();
        for spec in specs {
            let bot = build(&spec, ctx)?;
            reg.insert(spec, bot)?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, spec: BotSpec, bot: Arc<dyn Bot>) -> Result<(), RegistryError> {
        if self.bots.contains_key(&spec.bot_id) {
            return Err(RegistryError::Duplicate(spec.bot_id));
        }
        self.bots
            .insert(spec.bot_id.clone(), RegisteredBot { spec, bot });
        Ok(())
    }

    pub fn get(&self, bot_id: &str) -> Option<&Arc<dyn Bot>> {
        self.bots.get(bot_id).map(|r| &r.bot)
    }

    pub fn specs(&self) -> impl Iterator<Item = &BotSpec> {
        self.bots.values().map(|r| &r.spec)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.bots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.bots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bots.is_empty()
    }

    /// The Phase 2 line-up: three chatterbots and the two task bots.
    pub fn default_specs() -> Vec<BotSpec> {
        vec![
            BotSpec::new("chorus", BotKind::Chorus { k: 2 }, &[]),
            BotSpec::new("filler", BotKind::Filler { fillers: None }, &[]),
            BotSpec::new(
                "restaurant",
                BotKind::Restaurant,
                &[
                    "Any restaurant recommendations in NYC?",
                    "Find me a sushi restaurant in Seattle!",
                    "Where should I go for dinner tonight?",
                ],
            ),
            BotSpec::new(
                "weather",
                BotKind::Weather,
                &[
                    "What's the weather like in Pittsburgh?",
                    "Will it rain tomorrow?",
                    "Is it going to be sunny this weekend?",
                ],
            ),
        ]
    }
}

fn build(spec: &BotSpec, ctx: &BuildContext) -> Result<Arc<dyn Bot>, RegistryError> {
    Ok(match &spec.kind {
        BotKind::Filler { fillers } => Arc::new(match fillers {
            Some(list) => FillerBot::new(list.clone()),
            None => FillerBot::default(),
        }),
        BotKind::Chorus { k } => Arc::new(RetrievalBot::new(
            Arc::clone(&ctx.chorus_store),
            Arc::clone(&ctx.table),
            *k,
        )),
        BotKind::Interview { pairs, k } => {
            let path = if pairs.is_absolute() {
                pairs.clone()
            } else {
                ctx.base_dir.join(pairs)
            };
            let loaded = read_pairs(&path).map_err(|source| RegistryError::Pairs {
                bot: spec.bot_id.clone(),
                source,
            })?;
            let store = build_store(loaded, &ctx.table).store;
            Arc::new(RetrievalBot::new(
                Arc::new(RwLock::new(store)),
                Arc::clone(&ctx.table),
                *k,
            ))
        }
        BotKind::Weather => Arc::new(WeatherBot::new(
            Arc::clone(&ctx.gazetteer),
            Arc::clone(&ctx.weather),
        )),
        BotKind::Restaurant => Arc::new(RestaurantBot::new(
            Arc::clone(&ctx.gazetteer),
            Arc::clone(&ctx.restaurants),
        )),
        BotKind::Http { endpoint } => Arc::new(HttpBot::new(endpoint)),
        BotKind::Custom => return Err(RegistryError::NotBuildable(spec.bot_id.clone())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bots::{invoke, BotContext, BotReply, WEATHER_FALLBACK};

    #[test]
    fn parses_registry_records() {
        let text = r#"[
            {"bot_id": "filler", "builtin": "filler"},
            {"bot_id": "cb", "builtin": "http", "endpoint": "http://localhost:9/x",
             "example_messages": ["hi"]},
            {"bot_id": "chorus", "builtin": "chorus"}
        ]"#;
        let specs = Registry::parse_specs(text).unwrap();
        assert_eq!(
            specs[1].kind,
            BotKind::Http {
                endpoint: "http://localhost:9/x".into()
            }
        );
        assert_eq!(specs[1].example_messages, vec!["hi".to_string()]);
        assert_eq!(specs[2].kind, BotKind::Chorus { k: 2 });
        let round: Vec<BotSpec> =
            serde_json::from_str(&serde_json::to_string(&specs).unwrap()).unwrap();
        assert_eq!(round, specs);
    }

    #[test]
    fn builds_default_lineup() {
        let ctx = BuildContext::new(Arc::new(VectorTable::new(2)));
        let reg = Registry::from_specs(Registry::default_specs(), &ctx).unwrap();
        assert_eq!(
            reg.ids().collect::<Vec<_>>(),
            ["chorus", "filler", "restaurant", "weather"]
        );
        let r = invoke(
            reg.get("weather").unwrap().as_ref(),
            &BotContext::single("hm"),
            0,
        );
        assert_eq!(
            r,
            BotReply::Text {
                text: WEATHER_FALLBACK.into(),
                confidence: None
            }
        );
        let dup = vec![
            BotSpec::new("a", BotKind::Weather, &[]),
            BotSpec::new("a", BotKind::Restaurant, &[]),
        ];
        assert!(matches!(
            Registry::from_specs(dup, &ctx),
            Err(RegistryError::Duplicate(_))
        ));
    }

    #[test]
    fn interview_pairs_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("pairs.jsonl"),
            "{\"query\":\"hello\",\"response\":\"good evening\"}\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("bots.json"),
            r#"[{"bot_id": "interview", "builtin": "interview", "pairs": "pairs.jsonl"}]"#,
        )
        .unwrap();
        let table = VectorTable::from_entries(1, [("hello", vec![1.0])]).unwrap();
        let ctx = BuildContext::new(Arc::new(table));
        let reg = Registry::load(dir.path().join("bots.json"), &ctx).unwrap();
        let r = invoke(
            reg.get("interview").unwrap().as_ref(),
            &BotContext::single("hello"),
            0,
        );
        assert_eq!(
            r,
            BotReply::Text {
                text: "good evening".into(),
                confidence: None
            }
        );
    }
}
