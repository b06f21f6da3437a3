//! Task bots that answer weather and restaurant questions for a city named
//! in the user's message.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Bot, BotContext, BotError, BotResponse};

pub const WEATHER_FALLBACK: &str = "Which city's weather would you like to know?";
pub const RESTAURANT_FALLBACK: &str = "You're looking for a restaurant. What city are you in?";

const BUILTIN_GAZETTEER: &str = "\
# name,country[,alias...]
Kabul,Afghanistan
Seattle,United States
New York,United States,NYC,New York City
York,United Kingdom
Pittsburgh,United States
San Francisco,United States,SF
Los Angeles,United States,LA
Chicago,United States
Boston,United States
Austin,United States
London,United Kingdom
Paris,France
Berlin,Germany
Madrid,Spain
Rome,Italy
Tokyo,Japan
Taipei,Taiwan
Beijing,China
Seoul,South Korea
Mumbai,India
Sydney,Australia
Toronto,Canada
Mexico City,Mexico
Cairo,Egypt
";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no data for {0}")]
    NotFound(String),
    #[error("provider timed out")]
    Timeout,
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("gazetteer line {line}: {reason}")]
    Gazetteer { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct City {
    pub name: String,
    pub country: String,
}

impl City {
    pub fn key(&self) -> String {
        self.name.to_lowercase()
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// City lookup by case-insensitive, longest word-sequence match.
#[derive(Clone, Debug, Default)]
pub struct Gazetteer {
    names: HashMap<Vec<String>, City>,
    longest: usize,
}

impl Gazetteer {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_GAZETTEER).expect("builtin gazetteer parses")
    }

    /// One city per line: `name,country[,alias...]`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        let mut g = Gazetteer::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
                return Err(ProviderError::Gazetteer {
                    line: i + 1,
                    reason: "expected name,country".into(),
                });
            }
            let city = City {
                name: fields[0].to_string(),
                country: fields[1].to_string(),
            };
            for name in std::iter::once(fields[0]).chain(fields[2..].iter().copied()) {
                g.insert(name, city.clone());
            }
        }
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, name: &str, city: City) {
        let key = words(name);
        if key.is_empty() {
            return;
        }
        self.longest = self.longest.max(key.len());
        self.names.entry(key).or_insert(city);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// The longest city name in `text`; the earliest wins among equals.
    pub fn find(&self, text: &str) -> Option<&City> {
        let w = words(text);
        let mut best: Option<(usize, &City)> = None;
        for start in 0..w.len() {
            let max = self.longest.min(w.len() - start);
            for len in (1..=max).rev() {
                if best.is_some_and(|(l, _)| l >= len) {
                    break;
                }
                if let Some(c) = self.names.get(&w[start..start + len]) {
                    best = Some((len, c));
                    break;
                }
            }
        }
        best.map(|(_, c)| c)
    }

    pub fn cities(&self) -> Vec<City> {
        let mut out: Vec<City> = self.names.values().cloned().collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeatherReport {
    pub day: String,
    pub summary: String,
}

pub trait WeatherProvider: Send + Sync {
    fn forecast(&self, city: &City) -> Result<WeatherReport, ProviderError>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Restaurant {
    pub name: String,
    pub cuisine: String,
}

pub trait RestaurantProvider: Send + Sync {
    fn suggestions(&self, city: &City) -> Result<Vec<Restaurant>, ProviderError>;
}

const DAYS: [&str; 7] = [
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
];

const SKIES: [&str; 5] = [
    "Sunny",
    "Partly cloudy",
    "Cloudy with a few showers",
    "Overcast",
    "Light rain",
];

fn name_hash(s: &str) -> usize {
    s.bytes()
        .fold(7usize, |h, b| h.wrapping_mul(31).wrapping_add(b as usize))
}

/// Weather lookups from a fixture keyed by lowercase city name. Cities
/// missing from the fixture are synthesised from the name when
/// `synthesize` is set.
#[derive(Clone, Debug, Default)]
pub struct FixtureWeather {
    pub reports: BTreeMap<String, WeatherReport>,
    pub synthesize: bool,
}

impl FixtureWeather {
    pub fn builtin() -> Self {
        let mut reports = BTreeMap::new();
        reports.insert(
            "kabul".to_string(),
            WeatherReport {
                day: "Friday".into(),
                summary: "Cloudy with a few showers. High 79F. Winds NW at 5 to 10 mph. \
                          Chance of rain 30%."
                    .into(),
            },
        );
        Self {
            reports,
            synthesize: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        Ok(Self {
            reports: serde_json::from_str(text)?,
            synthesize: false,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl WeatherProvider for FixtureWeather {
    fn forecast(&self, city: &City) -> Result<WeatherReport, ProviderError> {
        if let Some(r) = self.reports.get(&city.key()) {
            return Ok(r.clone());
        }
        if !self.synthesize {
            return Err(ProviderError::NotFound(city.name.clone()));
        }
        let h = name_hash(&city.key());
        Ok(WeatherReport {
            day: DAYS[h % DAYS.len()].to_string(),
            summary: format!(
                "{}. High {}F. Winds at {} mph.",
                SKIES[h % SKIES.len()],
                50 + h % 40,
                5 + h % 10
            ),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct FixtureRestaurants {
    pub lists: BTreeMap<String, Vec<Restaurant>>,
    pub synthesize: bool,
}

impl FixtureRestaurants {
    pub fn builtin() -> Self {
        let seattle = [
            ("Shiro's Sushi", "sushi"),
            ("Canlis", "american"),
            ("Pike Place Chowder", "seafood"),
        ];
        let mut lists = BTreeMap::new();
        lists.insert(
            "seattle".to_string(),
            seattle
                .iter()
                .map(|(n, c)| Restaurant {
                    name: n.to_string(),
                    cuisine: c.to_string(),
                })
                .collect(),
        );
        Self {
            lists,
            synthesize: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        Ok(Self {
            lists: serde_json::from_str(text)?,
            synthesize: false,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl RestaurantProvider for FixtureRestaurants {
    fn suggestions(&self, city: &City) -> Result<Vec<Restaurant>, ProviderError> {
        if let Some(r) = self.lists.get(&city.key()) {
            return Ok(r.clone());
        }
        if !self.synthesize {
            return Err(ProviderError::NotFound(city.name.clone()));
        }
        Ok(["Bistro", "Noodle House", "Grill"]
            .iter()
            .map(|kind| Restaurant {
                name: format!("{} {}", city.name, kind),
                cuisine: kind.to_lowercase(),
            })
            .collect())
    }
}

pub fn format_weather(city: &City, r: &WeatherReport) -> String {
    format!(
        "{}'s weather forecast for [{}, {}]: {}",
        r.day, city.name, city.country, r.summary
    )
}

/// Lists up to three suggestions, moving those whose cuisine appears in
/// the message to the front.
pub fn format_restaurants(city: &City, list: &[Restaurant], message: &str) -> String {
    let w = words(message);
    let mut ordered: Vec<&Restaurant> = list.iter().collect();
    ordered.sort_by_key(|r| !w.contains(&r.cuisine.to_lowercase()));
    let names: Vec<String> = ordered
        .iter()
        .take(3)
        .map(|r| format!("{} ({})", r.name, r.cuisine))
        .collect();
    format!(
        "Here are some restaurants in [{}, {}]: {}",
        city.name,
        city.country,
        names.join(", ")
    )
}

#[derive(Clone)]
pub struct WeatherBot {
    gazetteer: Arc<Gazetteer>,
    provider: Arc<dyn WeatherProvider>,
}

impl WeatherBot {
    pub fn new(gazetteer: Arc<Gazetteer>, provider: Arc<dyn WeatherProvider>) -> Self {
        Self {
            gazetteer,
            provider,
        }
    }
}

impl Default for WeatherBot {
    fn default() -> Self {
        Self::new(
            Arc::new(Gazetteer::builtin()),
            Arc::new(FixtureWeather::builtin()),
        )
    }
}

impl Bot for WeatherBot {
    fn respond(&self, ctx: &BotContext, _rng: &mut ChaCha8Rng) -> Result<BotResponse, BotError> {
        let Some(city) = self.gazetteer.find(&ctx.user_message) else {
            return Ok(BotResponse::text(WEATHER_FALLBACK));
        };
        let report = self.provider.forecast(city)?;
        Ok(BotResponse::text(format_weather(city, &report)))
    }
}

#[derive(Clone)]
pub struct RestaurantBot {
    gazetteer: Arc<Gazetteer>,
    provider: Arc<dyn RestaurantProvider>,
}

impl RestaurantBot {
    pub fn new(gazetteer: Arc<Gazetteer>, provider: Arc<dyn RestaurantProvider>) -> Self {
        Self {
            gazetteer,
            provider,
        }
    }
}

impl Default for RestaurantBot {
    fn default() -> Self {
        Self::new(
            Arc::new(Gazetteer::builtin()),
            Arc::new(FixtureRestaurants::builtin()),
        )
    }
}

impl Bot for RestaurantBot {
    fn respond(&self, ctx: &BotContext, _rng: &mut ChaCha8Rng) -> Result<BotResponse, BotError> {
        let Some(city) = self.gazetteer.find(&ctx.user_message) else {
            return Ok(BotResponse::text(RESTAURANT_FALLBACK));
        };
        let list = self.provider.suggestions(city)?;
        if list.is_empty() {
            return Ok(BotResponse::decline());
        }
        Ok(BotResponse::text(format_restaurants(
            city,
            &list,
            &ctx.user_message,
        )))
    }
}
