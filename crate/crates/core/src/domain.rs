//! Domain model: tracks, artists, playlists, users and attribute tasks.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::features::FeatureSchema;

/// Names of the per-track audio descriptors, in schema order.
pub const AUDIO_FEATURE_NAMES: [&str; 9] = [
    "danceability",
    "energy",
    "loudness",
    "speechiness",
    "acousticness",
    "instrumentalness",
    "liveness",
    "valence",
    "tempo",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioFeatures {
    pub danceability: f64,
    pub energy: f64,
    pub loudness: f64,
    pub speechiness: f64,
    pub acousticness: f64,
    pub instrumentalness: f64,
    pub liveness: f64,
    pub valence: f64,
    pub tempo: f64,
}

impl AudioFeatures {
    /// Values in [`AUDIO_FEATURE_NAMES`] order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.danceability,
            self.energy,
            self.loudness,
            self.speechiness,
            self.acousticness,
            self.instrumentalness,
            self.liveness,
            self.valence,
            self.tempo,
        ]
    }

    pub fn from_values(v: [f64; 9]) -> Self {
        AudioFeatures {
            danceability: v[0],
            energy: v[1],
            loudness: v[2],
            speechiness: v[3],
            acousticness: v[4],
            instrumentalness: v[5],
            liveness: v[6],
            valence: v[7],
            tempo: v[8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: String,
    pub title: String,
    pub album_id: String,
    pub popularity: u32,
    pub explicit: bool,
    pub release_year: i32,
    pub duration_ms: u64,
    /// `None` when the audio-features endpoint returned null for the track.
    pub audio: Option<AudioFeatures>,
    pub artist_ids: Vec<String>,
    pub added_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtistRecord {
    pub artist_id: String,
    pub popularity: u32,
    pub followers: u64,
    pub genres: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaylistRecord {
    pub playlist_id: String,
    /// Filled from the enclosing user on load; not part of the file format.
    #[serde(skip)]
    pub owner_id: String,
    pub followers: u64,
    pub tracks: Vec<TrackRecord>,
}

/// A surveyed user with their raw public playlists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusUser {
    pub user_id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub playlists: Vec<PlaylistRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    LiveApi,
    Fixture,
    Synthetic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::LiveApi => "live-api",
            Provenance::Fixture => "fixture",
            Provenance::Synthetic => "synthetic",
        })
    }
}

/// Artist lookup keyed by id. Serialized as a list ordered by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArtistTable(BTreeMap<String, ArtistRecord>);

impl ArtistTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an artist, returning the previous record with the same id.
    pub fn insert(&mut self, artist: ArtistRecord) -> Option<ArtistRecord> {
        self.0.insert(artist.artist_id.clone(), artist)
    }

    pub fn get(&self, id: &str) -> Option<&ArtistRecord> {
        self.0.get(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ArtistRecord> {
        self.0.values()
    }
}

impl FromIterator<ArtistRecord> for ArtistTable {
    fn from_iter<I: IntoIterator<Item = ArtistRecord>>(iter: I) -> Self {
        let mut t = ArtistTable::new();
        for a in iter {
            t.insert(a);
        }
        t
    }
}

impl Serialize for ArtistTable {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.values())
    }
}

impl<'de> Deserialize<'de> for ArtistTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let list = Vec::<ArtistRecord>::deserialize(d)?;
        let mut table = ArtistTable::new();
        for a in list {
            let id = a.artist_id.clone();
            if table.insert(a).is_some() {
                return Err(serde::de::Error::custom(format!("duplicate artist_id {id:?}")));
            }
        }
        Ok(table)
    }
}

/// Raw playlist corpus as ingested from the API, a fixture, or the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub provenance: Provenance,
    pub artists: ArtistTable,
    pub users: Vec<CorpusUser>,
}

/// One failed invariant, located by JSON pointer into the corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pointer, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus has no users")]
    Empty,
    #[error("corpus invariant violated at {0}")]
    Invalid(Violation),
}

impl Corpus {
    /// Builds a corpus, stamping playlist owners and checking every invariant.
    pub fn new(
        provenance: Provenance,
        artists: ArtistTable,
        mut users: Vec<CorpusUser>,
    ) -> Result<Self, CorpusError> {
        for u in &mut users {
            for p in &mut u.playlists {
                p.owner_id = u.user_id.clone();
            }
        }
        let corpus = Corpus { provenance, artists, users };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.users.is_empty() {
            return Err(CorpusError::Empty);
        }
        let bad = |pointer: String, message: String| {
            Err(CorpusError::Invalid(Violation { pointer, message }))
        };
        for (i, a) in self.artists.iter().enumerate() {
            if a.popularity > 100 {
                return bad(
                    format!("/artists/{i}/popularity"),
                    format!("popularity {} outside 0..=100", a.popularity),
                );
            }
        }
        let mut seen = HashSet::new();
        for (ui, u) in self.users.iter().enumerate() {
            if !seen.insert(u.user_id.as_str()) {
                return bad(
                    format!("/users/{ui}/user_id"),
                    format!("duplicate user_id {:?}", u.user_id),
                );
            }
            for (pi, p) in u.playlists.iter().enumerate() {
                if p.owner_id != u.user_id {
                    return bad(
                        format!("/users/{ui}/playlists/{pi}"),
                        format!("playlist owned by {:?}", p.owner_id),
                    );
                }
                for (ti, t) in p.tracks.iter().enumerate() {
                    let at = format!("/users/{ui}/playlists/{pi}/tracks/{ti}");
                    if t.popularity > 100 {
                        return bad(format!("{at}/popularity"), "outside 0..=100".into());
                    }
                    if t.duration_ms == 0 {
                        return bad(format!("{at}/duration_ms"), "must be positive".into());
                    }
                    if t.artist_ids.is_empty() {
                        return bad(format!("{at}/artist_ids"), "must be non-empty".into());
                    }
                    for (ai, id) in t.artist_ids.iter().enumerate() {
                        if self.artists.get(id).is_none() {
                            return bad(
                                format!("{at}/artist_ids/{ai}"),
                                format!("unknown artist {id:?}"),
                            );
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn playlists(&self) -> impl Iterator<Item = &PlaylistRecord> {
        self.users.iter().flat_map(|u| u.playlists.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub users: usize,
    pub playlists: usize,
    pub playlists_per_user_mean: f64,
    pub playlists_per_user_std: f64,
    pub songs_per_playlist_mean: f64,
    pub songs_per_playlist_std: f64,
    pub unique_songs: usize,
    pub unique_artists: usize,
}

/// Corpus-level counts; standard deviations use the n-1 estimator.
pub fn corpus_summary(corpus: &Corpus) -> Result<CorpusSummary, CorpusError> {
    if corpus.users.is_empty() {
        return Err(CorpusError::Empty);
    }
    let per_user: Vec<f64> = corpus.users.iter().map(|u| u.playlists.len() as f64).collect();
    let per_playlist: Vec<f64> = corpus.playlists().map(|p| p.tracks.len() as f64).collect();
    let mut songs = BTreeSet::new();
    let mut artists = BTreeSet::new();
    for t in corpus.playlists().flat_map(|p| p.tracks.iter()) {
        songs.insert(t.track_id.as_str());
        artists.extend(t.artist_ids.iter().map(String::as_str));
    }
    let ms = |xs: &[f64]| {
        (
            crate::scalar::mean(xs).unwrap_or(0.0),
            crate::scalar::sample_std(xs).unwrap_or(0.0),
        )
    };
    let (pu_mean, pu_std) = ms(&per_user);
    let (sp_mean, sp_std) = ms(&per_playlist);
    Ok(CorpusSummary {
        users: corpus.users.len(),
        playlists: per_playlist.len(),
        playlists_per_user_mean: pu_mean,
        playlists_per_user_std: pu_std,
        songs_per_playlist_mean: sp_mean,
        songs_per_playlist_std: sp_std,
        unique_songs: songs.len(),
        unique_artists: artists.len(),
    })
}

/// A featurized playlist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub playlist_id: String,
    pub owner_id: String,
    pub values: Vec<f64>,
}

/// A user with their set of featurized playlists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub attributes: BTreeMap<String, String>,
    pub playlists: Vec<FeatureVector>,
}

impl UserRecord {
    pub fn label(&self, task: &AttributeTask) -> Option<usize> {
        self.attributes.get(&task.name).and_then(|l| task.encode(l))
    }
}

/// The featurized corpus consumed by the analyses and the models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    pub schema: FeatureSchema,
    pub users: Vec<UserRecord>,
}

impl FeatureDataset {
    /// Users carrying a known label for `task`, with that label encoded.
    pub fn labeled<'a>(&'a self, task: &AttributeTask) -> Vec<(&'a UserRecord, usize)> {
        self.users
            .iter()
            .filter_map(|u| u.label(task).map(|y| (u, y)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeCategory {
    Demographic,
    Habits,
    Personality,
    /// Tasks defined outside the survey, e.g. by the generator.
    Custom,
}

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("task {0:?} needs at least two classes")]
    TooFewClasses(String),
    #[error("task {0:?} has duplicate class {1:?}")]
    DuplicateClass(String, String),
    #[error("unknown task {0:?}")]
    Unknown(String),
}

/// One classification target with its ordered class list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTask {
    pub name: String,
    pub category: AttributeCategory,
    pub classes: Vec<String>,
    /// Reference class shares at user level (survey table), normalised.
    pub user_prior: Vec<f64>,
    /// Reference class shares at playlist level (survey table), normalised.
    pub playlist_prior: Vec<f64>,
}

impl AttributeTask {
    pub fn new(
        name: &str,
        category: AttributeCategory,
        classes: &[&str],
        user_prior: &[f64],
        playlist_prior: &[f64],
    ) -> Result<Self, TaskError> {
        if classes.len() < 2 {
            return Err(TaskError::TooFewClasses(name.into()));
        }
        let mut seen = HashSet::new();
        for c in classes {
            if !seen.insert(*c) {
                return Err(TaskError::DuplicateClass(name.into(), (*c).into()));
            }
        }
        let norm = |p: &[f64]| -> Vec<f64> {
            if p.len() != classes.len() {
                return vec![1.0 / classes.len() as f64; classes.len()];
            }
            let s: f64 = p.iter().sum();
            p.iter().map(|x| x / s).collect()
        };
        Ok(AttributeTask {
            name: name.into(),
            category,
            classes: classes.iter().map(|c| c.to_string()).collect(),
            user_prior: norm(user_prior),
            playlist_prior: norm(playlist_prior),
        })
    }

    /// A task with uniform reference priors.
    pub fn custom(name: &str, classes: &[&str]) -> Result<Self, TaskError> {
        Self::new(name, AttributeCategory::Custom, classes, &[], &[])
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn encode(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    /// The sixteen survey targets, percentages as reported per class.
    pub fn standard() -> Vec<AttributeTask> {
        use AttributeCategory::*;
        let yn = ["yes", "no"];
        let lmh = ["low", "medium", "high"];
        let specs: Vec<(&str, AttributeCategory, Vec<&str>, Vec<f64>, Vec<f64>)> = vec![
            ("gender", Demographic, vec!["female", "male", "other"], vec![28., 68., 4.], vec![30., 66., 4.]),
            ("age", Demographic, AGE_BINS.to_vec(), vec![15., 45., 29., 11.], vec![9., 39., 33., 19.]),
            (
                "country",
                Demographic,
                vec!["US", "IT", "UK", "CA", "DE", "PH", "AU", "BR", "IN", "Other"],
                vec![27., 10., 7., 6., 5., 3., 3., 3., 3., 33.],
                vec![32., 8., 16., 10., 3., 2., 2., 3., 2., 22.],
            ),
            ("relationship", Demographic, yn.to_vec(), vec![33., 67.], vec![45., 55.]),
            ("live_alone", Demographic, yn.to_vec(), vec![14., 86.], vec![12., 88.]),
            ("occupation", Demographic, yn.to_vec(), vec![48., 52.], vec![61., 39.]),
            ("economic", Demographic, lmh.to_vec(), vec![25., 52., 23.], vec![25., 46., 29.]),
            ("sport", Habits, vec!["regularly", "occasionally", "no"], vec![34., 35., 31.], vec![40., 32., 27.]),
            ("smoke", Habits, yn.to_vec(), vec![20., 80.], vec![20., 80.]),
            ("alcohol", Habits, yn.to_vec(), vec![54., 46.], vec![66., 34.]),
            ("premium", Habits, yn.to_vec(), vec![76., 24.], vec![88., 12.]),
            ("openness", Personality, lmh.to_vec(), vec![7., 46., 47.], vec![3., 42., 55.]),
            ("conscientiousness", Personality, lmh.to_vec(), vec![20., 62., 18.], vec![23., 56., 21.]),
            ("extraversion", Personality, lmh.to_vec(), vec![43., 44., 13.], vec![38., 44., 18.]),
            ("agreeableness", Personality, lmh.to_vec(), vec![10., 55., 35.], vec![9., 60., 31.]),
            ("neuroticism", Personality, lmh.to_vec(), vec![23., 41., 36.], vec![23., 43., 34.]),
        ];
        specs
            .into_iter()
            .map(|(n, c, cl, u, p)| AttributeTask::new(n, c, &cl, &u, &p).expect("static task table"))
            .collect()
    }

    pub fn by_name(name: &str) -> Result<AttributeTask, TaskError> {
        Self::standard()
            .into_iter()
            .find(|t| t.name == name)
            .ok_or_else(|| TaskError::Unknown(name.into()))
    }
}

pub const AGE_BINS: [&str; 4] = ["13-17", "18-24", "25-30", "31+"];

/// Upper bounds of the Low/Medium/High personality bins on the 0–100 scale.
pub const PERSONALITY_BOUNDARIES: [f64; 3] = [33.3, 66.6, 100.0];

pub fn age_bin(age: u32) -> Option<&'static str> {
    match age {
        13..=17 => Some(AGE_BINS[0]),
        18..=24 => Some(AGE_BINS[1]),
        25..=30 => Some(AGE_BINS[2]),
        31.. => Some(AGE_BINS[3]),
        _ => None,
    }
}

/// Bins a personality score; bins are closed on the right.
pub fn personality_bin(score: f64) -> Option<&'static str> {
    if !(0.0..=PERSONALITY_BOUNDARIES[2]).contains(&score) {
        return None;
    }
    Some(if score <= PERSONALITY_BOUNDARIES[0] {
        "low"
    } else if score <= PERSONALITY_BOUNDARIES[1] {
        "medium"
    } else {
        "high"
    })
}

/// Representative age of a bin, used for correlation analyses. The open
/// `31+` bin is pinned at the midpoint of 31 and the oldest surveyed age (55).
pub fn age_bin_midpoint(bin: &str) -> Option<f64> {
    match bin {
        "13-17" => Some(15.0),
        "18-24" => Some(21.0),
        "25-30" => Some(27.5),
        "31+" => Some(43.0),
        _ => None,
    }
}

/// Parses the leading four-digit year of `YYYY`, `YYYY-MM` or `YYYY-MM-DD`.
pub fn parse_year(date: &str) -> Option<i32> {
    let head = date.get(0..4)?;
    if !head.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    match date.as_bytes().get(4) {
        None | Some(b'-') | Some(b'T') => head.parse().ok(),
        _ => None,
    }
}
