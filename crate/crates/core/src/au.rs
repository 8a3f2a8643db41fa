//! Action-unit catalog, emotion membership and AU ranking.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, LANDMARK_COUNT};

/// Catalog shipped with the crate.
pub const DEFAULT_CATALOG_TOML: &str = include_str!("../assets/au_catalog.toml");

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 3;

const CATALOG_VERSION: u32 = 1;

/// The seven basic emotion categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmotionLabel {
    Surprise,
    Fear,
    Disgust,
    Anger,
    Happiness,
    Sadness,
    Neutral,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Surprise,
        EmotionLabel::Fear,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
        EmotionLabel::Happiness,
        EmotionLabel::Sadness,
        EmotionLabel::Neutral,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EmotionLabel::Surprise => "Surprise",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Disgust => "Disgust",
            EmotionLabel::Anger => "Anger",
            EmotionLabel::Happiness => "Happiness",
            EmotionLabel::Sadness => "Sadness",
            EmotionLabel::Neutral => "Neutral",
        }
    }

    /// Position in [`EmotionLabel::ALL`].
    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown emotion label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for EmotionLabel {
    type Err = UnknownLabel;

    /// Case-insensitive match on the canonical names only.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        EmotionLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read catalog {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse catalog: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported catalog version {0} (expected {CATALOG_VERSION})")]
    Version(u32),
    #[error("duplicate AU id {0} in catalog")]
    DuplicateId(u32),
    #[error("AU{au_id}: {reason}")]
    InvalidEntry { au_id: u32, reason: String },
    #[error("AU{0} is not in the catalog")]
    Missing(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuCatalogEntry {
    #[serde(rename = "id")]
    pub au_id: u32,
    pub name: String,
    #[serde(rename = "landmarks")]
    pub landmark_indices: Vec<usize>,
    #[serde(rename = "emotions")]
    pub member_emotions: BTreeSet<EmotionLabel>,
    #[serde(default = "default_source")]
    pub source: String,
}

fn default_source() -> String {
    "table".to_string()
}

#[derive(Deserialize)]
struct CatalogFile {
    version: u32,
    #[serde(rename = "au")]
    entries: Vec<AuCatalogEntry>,
}

/// Immutable AU catalog, keyed by AU id.
#[derive(Debug, Clone, PartialEq)]
pub struct AuCatalog {
    entries: BTreeMap<u32, AuCatalogEntry>,
}

impl Default for AuCatalog {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_CATALOG_TOML).expect("bundled AU catalog is valid")
    }
}

impl AuCatalog {
    pub fn from_toml_str(text: &str) -> Result<Self, CatalogError> {
        let file: CatalogFile = toml::from_str(text)?;
        if file.version != CATALOG_VERSION {
            return Err(CatalogError::Version(file.version));
        }
        let mut entries = BTreeMap::new();
        for entry in file.entries {
            if entry.au_id == 0 {
                return Err(CatalogError::InvalidEntry {
                    au_id: 0,
                    reason: "id must be positive".into(),
                });
            }
            if entry.landmark_indices.is_empty() {
                return Err(CatalogError::InvalidEntry {
                    au_id: entry.au_id,
                    reason: "landmark list is empty".into(),
                });
            }
            if let Some(bad) = entry.landmark_indices.iter().find(|&&i| i >= LANDMARK_COUNT) {
                return Err(CatalogError::InvalidEntry {
                    au_id: entry.au_id,
                    reason: format!("landmark index {bad} out of range 0..{LANDMARK_COUNT}"),
                });
            }
            let id = entry.au_id;
            if entries.insert(id, entry).is_some() {
                return Err(CatalogError::DuplicateId(id));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn get(&self, au_id: u32) -> Option<&AuCatalogEntry> {
        self.entries.get(&au_id)
    }

    pub fn name(&self, au_id: u32) -> Option<&str> {
        self.get(au_id).map(|e| e.name.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = &AuCatalogEntry> {
        self.entries.values()
    }

    /// AU ids involved in `emotion`. Neutral has none.
    pub fn aus_for_emotion(&self, emotion: EmotionLabel) -> BTreeSet<u32> {
        self.entries
            .values()
            .filter(|e| e.member_emotions.contains(&emotion))
            .map(|e| e.au_id)
            .collect()
    }

    /// Picks the most prominent AUs for display.
    ///
    /// With a hint, only AUs belonging to that emotion are candidates. The
    /// candidates scoring at least `tau` are returned highest first, cut to
    /// `k`. If that leaves nothing, the top `k` of all catalogued scores are
    /// returned instead, regardless of `tau`. Ties break on ascending AU id.
    /// Scores for AU ids outside the catalog are ignored.
    pub fn rank_aus(
        &self,
        scores: &HashMap<u32, f64>,
        hint: Option<EmotionLabel>,
        tau: f64,
        k: usize,
    ) -> RankedAus {
        let ordered: BTreeMap<u32, f64> = scores.iter().map(|(&id, &s)| (id, s)).collect();
        self.rank_sorted(&ordered, hint, tau, k)
    }

    /// [`AuCatalog::rank_aus`] over an already ordered map.
    pub fn rank_sorted(
        &self,
        scores: &BTreeMap<u32, f64>,
        hint: Option<EmotionLabel>,
        tau: f64,
        k: usize,
    ) -> RankedAus {
        let known: Vec<(u32, f64)> = scores
            .iter()
            .filter(|(id, _)| self.entries.contains_key(id))
            .map(|(&id, &s)| (id, s))
            .collect();

        let allowed = hint.map(|h| self.aus_for_emotion(h));
        let mut primary: Vec<(u32, f64)> = known
            .iter()
            .copied()
            .filter(|(id, s)| *s >= tau && allowed.as_ref().is_none_or(|a| a.contains(id)))
            .collect();

        if primary.is_empty() {
            primary = known;
        }
        // BTreeMap iteration is id-ascending and the sort is stable, so equal
        // scores stay in id order.
        primary.sort_by(|a, b| b.1.total_cmp(&a.1));
        primary.truncate(k);
        RankedAus(
            primary
                .into_iter()
                .map(|(au_id, score)| RankedAu { au_id, score })
                .collect(),
        )
    }

    /// Centroid of the AU's landmark region, used to place its tag.
    pub fn au_anchor(&self, au_id: u32, landmarks: &[Point]) -> Result<Point, CatalogError> {
        let entry = self.get(au_id).ok_or(CatalogError::Missing(au_id))?;
        if landmarks.len() != LANDMARK_COUNT {
            return Err(CatalogError::InvalidEntry {
                au_id,
                reason: format!(
                    "expected {LANDMARK_COUNT} landmarks, got {}",
                    landmarks.len()
                ),
            });
        }
        let n = entry.landmark_indices.len() as f64;
        let (sx, sy) = entry
            .landmark_indices
            .iter()
            .map(|&i| landmarks[i])
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Ok(Point::new(sx / n, sy / n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedAu {
    pub au_id: u32,
    pub score: f64,
}

/// AUs in display order: scores non-increasing, ids distinct.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedAus(pub Vec<RankedAu>);

impl RankedAus {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn iter(&self) -> std::slice::Iter<'_, RankedAu> {
        self.0.iter()
    }
    pub fn ids(&self) -> Vec<u32> {
        self.0.iter().map(|r| r.au_id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::*;

    fn set(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    fn scores(pairs: &[(u32, f64)]) -> HashMap<u32, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn label_parsing_is_case_insensitive() {
        assert_eq!("happiness".parse::<EmotionLabel>().unwrap(), Happiness);
        assert_eq!(" NEUTRAL ".parse::<EmotionLabel>().unwrap(), Neutral);
        assert!("joyful".parse::<EmotionLabel>().is_err());
    }

    #[test]
    fn emotion_sets() {
        let c = AuCatalog::default();
        assert_eq!(c.aus_for_emotion(Happiness), set(&[6, 12, 25]));
        assert_eq!(c.aus_for_emotion(Sadness), set(&[1, 4, 15]));
        assert!(c.aus_for_emotion(Neutral).is_empty());
    }

    #[test]
    fn anger_lip_tightener_is_flagged() {
        let c = AuCatalog::default();
        let e = c.get(23).unwrap();
        assert_eq!(e.name, "Lip Tightener");
        assert_eq!(e.source, "facs");
    }

    #[test]
    fn rank_with_hint_filters_membership() {
        let c = AuCatalog::default();
        let r = c.rank_aus(
            &scores(&[(6, 0.9), (12, 0.8), (25, 0.6), (4, 0.7)]),
            Some(Happiness),
            0.5,
            3,
        );
        assert_eq!(
            r.0,
            vec![
                RankedAu { au_id: 6, score: 0.9 },
                RankedAu { au_id: 12, score: 0.8 },
                RankedAu { au_id: 25, score: 0.6 },
            ]
        );
    }

    #[test]
    fn rank_falls_back_to_top_k() {
        let c = AuCatalog::default();
        let s = scores(&[(12, 0.0), (1, 0.0), (9, 0.0), (4, 0.0), (26, 0.0)]);
        let r = c.rank_aus(&s, Some(Sadness), 0.5, 3);
        assert_eq!(r.ids(), vec![1, 4, 9]);
    }

    #[test]
    fn neutral_hint_uses_fallback() {
        let c = AuCatalog::default();
        let r = c.rank_aus(&scores(&[(12, 0.9), (6, 0.95)]), Some(Neutral), 0.5, 3);
        assert_eq!(r.ids(), vec![6, 12]);
    }

    #[test]
    fn rank_singleton_and_empty() {
        let c = AuCatalog::default();
        let r = c.rank_aus(&scores(&[(1, 1.0)]), None, 0.0, 1);
        assert_eq!(r.0, vec![RankedAu { au_id: 1, score: 1.0 }]);
        assert!(c.rank_aus(&HashMap::new(), Some(Anger), 0.5, 3).is_empty());
    }

    #[test]
    fn unknown_au_ids_are_ignored() {
        let c = AuCatalog::default();
        let r = c.rank_aus(&scores(&[(43, 1.0), (12, 0.6)]), None, 0.5, 3);
        assert_eq!(r.ids(), vec![12]);
    }

    #[test]
    fn anchor_is_centroid() {
        let c = AuCatalog::default();
        let same = vec![Point::new(10.0, 10.0); 68];
        assert_eq!(c.au_anchor(1, &same).unwrap(), Point::new(10.0, 10.0));

        let mut lm = vec![Point::new(100.0, 100.0); 68];
        for (k, i) in (20..=25).enumerate() {
            lm[i] = Point::new(2.0 * k as f64, 0.0);
        }
        // mean of {0,2,4,6,8,10} = 5
        assert_eq!(c.au_anchor(1, &lm).unwrap(), Point::new(5.0, 0.0));

        assert!(matches!(c.au_anchor(99, &same), Err(CatalogError::Missing(99))));
    }

    #[test]
    fn catalog_rejects_bad_files() {
        let dup = "version = 1\n[[au]]\nid = 1\nname = \"a\"\nlandmarks = [1]\nemotions = []\n[[au]]\nid = 1\nname = \"b\"\nlandmarks = [2]\nemotions = []\n";
        assert!(matches!(AuCatalog::from_toml_str(dup), Err(CatalogError::DuplicateId(1))));
        let range = "version = 1\n[[au]]\nid = 1\nname = \"a\"\nlandmarks = [68]\nemotions = []\n";
        assert!(AuCatalog::from_toml_str(range).is_err());
        let empty = "version = 1\n[[au]]\nid = 1\nname = \"a\"\nlandmarks = []\nemotions = []\n";
        assert!(AuCatalog::from_toml_str(empty).is_err());
        let label = "version = 1\n[[au]]\nid = 1\nname = \"a\"\nlandmarks = [1]\nemotions = [\"Joy\"]\n";
        assert!(AuCatalog::from_toml_str(label).is_err());
        assert!(matches!(
            AuCatalog::from_toml_str("version = 2\nau = []\n"),
            Err(CatalogError::Version(2))
        ));
    }
}
