//! Synthetic corpora with planted structure and a ground-truth record of what
//! was planted.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AttributeTask, ArtistRecord, ArtistTable, AudioFeatures, Corpus, CorpusError, CorpusUser, PlaylistRecord,
    Provenance, TrackRecord,
};
use crate::features::{FeatureSchema, Featurizer};
use crate::stats::user_level_vectors;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("attribute {attribute:?}: prior sums to {sum}, expected 1")]
    BadPrior { attribute: String, sum: f64 },
    #[error("effect names unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {attribute:?} has no class {class:?}")]
    UnknownClass { attribute: String, class: String },
    #[error("feature {0:?} is not in the schema")]
    UnknownFeature(String),
    #[error("feature {feature:?} cannot carry a {kind} effect")]
    Unsupported { feature: String, kind: &'static str },
    #[error("infeasible spec: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io: {0}")]
    Io(String),
}

/// Distribution of a positive count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CountDist {
    Fixed { n: usize },
    Uniform { min: usize, max: usize },
    LogNormal { median: f64, sigma: f64, min: usize, max: usize },
}

impl CountDist {
    fn validate(&self, what: &str) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(format!("{what}: {m}")));
        match *self {
            CountDist::Fixed { n } if n == 0 => bad("count must be positive".into()),
            CountDist::Uniform { min, max } | CountDist::LogNormal { min, max, .. } if min == 0 || min > max => {
                bad(format!("range {min}..={max} must be positive and non-empty"))
            }
            CountDist::LogNormal { median, sigma, .. } if !(median > 0.0 && sigma >= 0.0 && sigma.is_finite()) => {
                bad(format!("median {median} / sigma {sigma}"))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match *self {
            CountDist::Fixed { n } => n,
            CountDist::Uniform { min, max } => rng.random_range(min..=max),
            CountDist::LogNormal { median, sigma, min, max } => {
                let x = LogNormal::new(median.ln(), sigma).expect("validated").sample(rng);
                (x.round() as usize).clamp(min, max)
            }
        }
    }
}

/// A labelled attribute with its class prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub classes: Vec<String>,
    pub prior: Vec<f64>,
}

impl AttributeSpec {
    pub fn new(name: &str, classes: &[&str], prior: &[f64]) -> Self {
        AttributeSpec {
            name: name.into(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
            prior: prior.to_vec(),
        }
    }

    /// The task's playlist-level reference shares.
    pub fn from_task(task: &AttributeTask) -> Self {
        AttributeSpec { name: task.name.clone(), classes: task.classes.clone(), prior: task.playlist_prior.clone() }
    }

    pub fn task(&self) -> Result<AttributeTask, SynthError> {
        let classes: Vec<&str> = self.classes.iter().map(String::as_str).collect();
        match AttributeTask::by_name(&self.name) {
            Ok(t) if t.classes == self.classes => Ok(t),
            _ => AttributeTask::custom(&self.name, &classes).map_err(|e| SynthError::InvalidSpec(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantedEffect {
    /// Users of `class` have every listed feature shifted by `delta` times
    /// its between-user standard deviation.
    MeanShift { attribute: String, class: String, features: Vec<String>, delta: f64 },
    /// Users of `class` own exactly one playlist whose `feature` (a per-track
    /// mean) exceeds `threshold`; every other playlist stays below it.
    MaxRule { attribute: String, class: String, feature: String, threshold: f64 },
    /// `playlists` extra playlists with one shared, distinctive profile, all
    /// owned by users of `class`.
    PureCluster { attribute: String, class: String, playlists: usize },
}

impl PlantedEffect {
    pub fn attribute(&self) -> &str {
        match self {
            PlantedEffect::MeanShift { attribute, .. }
            | PlantedEffect::MaxRule { attribute, .. }
            | PlantedEffect::PureCluster { attribute, .. } => attribute,
        }
    }

    pub fn class(&self) -> &str {
        match self {
            PlantedEffect::MeanShift { class, .. }
            | PlantedEffect::MaxRule { class, .. }
            | PlantedEffect::PureCluster { class, .. } => class,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            PlantedEffect::MeanShift { .. } => "mean-shift",
            PlantedEffect::MaxRule { .. } => "max-rule",
            PlantedEffect::PureCluster { .. } => "pure-cluster",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub seed: u64,
    pub users: usize,
    pub playlists_per_user: CountDist,
    pub tracks_per_playlist: CountDist,
    pub attributes: Vec<AttributeSpec>,
    /// Chance that a user leaves an attribute unanswered.
    pub missing_label_rate: f64,
    /// Chance that a track has no audio features.
    pub missing_audio_rate: f64,
    /// Artist pool size; 0 picks one from the user count.
    pub artists: usize,
    pub effects: Vec<PlantedEffect>,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        GenerationSpec {
            seed: 0,
            users: 100,
            playlists_per_user: CountDist::LogNormal { median: 8.0, sigma: 0.8, min: 1, max: 60 },
            tracks_per_playlist: CountDist::LogNormal { median: 25.0, sigma: 0.6, min: 3, max: 150 },
            attributes: AttributeTask::standard().iter().map(AttributeSpec::from_task).collect(),
            missing_label_rate: 0.0,
            missing_audio_rate: 0.01,
            artists: 0,
            effects: Vec::new(),
        }
    }
}

impl GenerationSpec {
    /// Standard attributes, no planted effects.
    pub fn null(users: usize, seed: u64) -> Self {
        GenerationSpec { seed, users, ..Default::default() }
    }

    pub fn with_effect(mut self, effect: PlantedEffect) -> Self {
        self.effects.push(effect);
        self
    }

    /// Adds `attribute`, replacing any attribute of the same name.
    pub fn with_attribute(mut self, attribute: AttributeSpec) -> Self {
        self.attributes.retain(|a| a.name != attribute.name);
        self.attributes.push(attribute);
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.users == 0 {
            return Err(SynthError::InvalidSpec("users must be positive".into()));
        }
        self.playlists_per_user.validate("playlists_per_user")?;
        self.tracks_per_playlist.validate("tracks_per_playlist")?;
        for (name, r) in [("missing_label_rate", self.missing_label_rate), ("missing_audio_rate", self.missing_audio_rate)] {
            if !(0.0..1.0).contains(&r) {
                return Err(SynthError::InvalidSpec(format!("{name} {r} outside [0, 1)")));
            }
        }
        let mut names = BTreeSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                return Err(SynthError::InvalidSpec(format!("attribute {:?} listed twice", a.name)));
            }
            a.task()?;
            if a.prior.len() != a.classes.len() || a.prior.iter().any(|p| !(*p >= 0.0)) {
                return Err(SynthError::InvalidSpec(format!("attribute {:?}: one non-negative prior per class", a.name)));
            }
            let sum: f64 = a.prior.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(SynthError::BadPrior { attribute: a.name.clone(), sum });
            }
        }
        let schema = FeatureSchema::default();
        for e in &self.effects {
            let attr = self
                .attributes
                .iter()
                .find(|a| a.name == e.attribute())
                .ok_or_else(|| SynthError::UnknownAttribute(e.attribute().into()))?;
            if !attr.classes.iter().any(|c| c == e.class()) {
                return Err(SynthError::UnknownClass { attribute: attr.name.clone(), class: e.class().into() });
            }
            match e {
                PlantedEffect::MeanShift { features, delta, .. } => {
                    if features.is_empty() || !delta.is_finite() {
                        return Err(SynthError::InvalidSpec("mean shift needs features and a finite delta".into()));
                    }
                    let mut raws = BTreeSet::new();
                    for f in features {
                        let (raw, stat) = song_target(&schema, f, e.kind())?;
                        if stat == Stat::Std {
                            return Err(SynthError::Unsupported { feature: f.clone(), kind: e.kind() });
                        }
                        if !raws.insert(raw) {
                            return Err(SynthError::InvalidSpec(format!(
                                "two shifted features share the per-track attribute {:?}",
                                RAW[raw].name
                            )));
                        }
                    }
                }
                PlantedEffect::MaxRule { feature, threshold, .. } => {
                    let (raw, stat) = song_target(&schema, feature, e.kind())?;
                    if stat != Stat::Mean || RAW[raw].integer {
                        return Err(SynthError::Unsupported { feature: feature.clone(), kind: e.kind() });
                    }
                    let r = &RAW[raw];
                    if !(*threshold > r.base && *threshold < r.hi) {
                        return Err(SynthError::Infeasible(format!(
                            "max-rule threshold {threshold} on {feature} must lie in ({}, {})",
                            r.base, r.hi
                        )));
                    }
                }
                PlantedEffect::PureCluster { playlists, .. } => {
                    if *playlists == 0 {
                        return Err(SynthError::InvalidSpec("pure cluster needs at least one playlist".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-track numeric attribute: base level, between-user and within-user
/// spread, bounds.
struct RawAttr {
    name: &'static str,
    base: f64,
    user_sd: f64,
    track_sd: f64,
    lo: f64,
    hi: f64,
    integer: bool,
}

const fn raw(name: &'static str, base: f64, user_sd: f64, track_sd: f64, lo: f64, hi: f64, integer: bool) -> RawAttr {
    RawAttr { name, base, user_sd, track_sd, lo, hi, integer }
}

const POPULARITY: usize = 0;
const RELEASE_YEAR: usize = 1;
const DURATION: usize = 2;
const AUDIO0: usize = 3;
const FIRST_ADDED_YEAR: i32 = 2008;
const LAST_YEAR: i32 = 2023;

const RAW: [RawAttr; 12] = [
    raw("popularity", 45.0, 10.0, 15.0, 0.0, 100.0, true),
    raw("release_year", 2010.0, 5.0, 7.0, 1960.0, 2023.0, true),
    raw("duration_ms", 215_000.0, 20_000.0, 40_000.0, 30_000.0, 900_000.0, true),
    raw("danceability", 0.6, 0.08, 0.12, 0.0, 1.0, false),
    raw("energy", 0.6, 0.1, 0.15, 0.0, 1.0, false),
    raw("loudness", -7.0, 1.5, 2.5, -60.0, 0.0, false),
    raw("speechiness", 0.08, 0.03, 0.05, 0.0, 1.0, false),
    raw("acousticness", 0.3, 0.12, 0.2, 0.0, 1.0, false),
    raw("instrumentalness", 0.08, 0.04, 0.06, 0.0, 1.0, false),
    raw("liveness", 0.18, 0.04, 0.08, 0.0, 1.0, false),
    raw("valence", 0.5, 0.1, 0.15, 0.0, 1.0, false),
    raw("tempo", 120.0, 8.0, 25.0, 40.0, 220.0, false),
];

/// Genre tags for ordinary artists. `ambient` is kept back for injected
/// clusters.
const BASE_TAGS: [&str; 36] = [
    "rock", "pop", "indie rock", "indie pop", "metal", "rap", "hip hop", "electronic", "dance pop", "k-pop",
    "anime", "trap", "soul", "jazz", "alternative rock", "r&b", "country", "folk", "punk", "blues",
    "classical", "reggae", "funk", "house", "techno", "edm", "lo-fi beats", "soundtrack", "emo", "disco",
    "modern rock", "pop rap", "art pop", "deep house", "neo soul", "shoegaze",
];
const LOCAL_TAGS: [&str; 6] = ["italian pop", "latin", "german rock", "french indie", "opm", "korean r&b"];
const RESERVED_TAG: &str = "ambient";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stat {
    Mean,
    Std,
    Min,
    Max,
}

/// `song_<attr>_<stat>` → (raw attribute index, stat).
fn song_target(schema: &FeatureSchema, feature: &str, kind: &'static str) -> Result<(usize, Stat), SynthError> {
    if schema.index_of(feature).is_none() {
        return Err(SynthError::UnknownFeature(feature.into()));
    }
    let unsupported = || SynthError::Unsupported { feature: feature.into(), kind };
    let rest = feature.strip_prefix("song_").ok_or_else(unsupported)?;
    let (attr, stat) = rest.rsplit_once('_').ok_or_else(unsupported)?;
    let stat = match stat {
        "mean" => Stat::Mean,
        "std" => Stat::Std,
        "min" => Stat::Min,
        "max" => Stat::Max,
        _ => return Err(unsupported()),
    };
    let raw = RAW.iter().position(|r| r.name == attr).ok_or_else(unsupported)?;
    Ok((raw, stat))
}

fn get_raw(t: &TrackRecord, i: usize) -> Option<f64> {
    match i {
        POPULARITY => Some(t.popularity as f64),
        RELEASE_YEAR => Some(t.release_year as f64),
        DURATION => Some(t.duration_ms as f64),
        _ => t.audio.as_ref().map(|a| a.values()[i - AUDIO0]),
    }
}

fn set_raw(t: &mut TrackRecord, i: usize, v: f64) {
    let r = &RAW[i];
    let v = v.clamp(r.lo, r.hi);
    match i {
        POPULARITY => t.popularity = v.round() as u32,
        RELEASE_YEAR => t.release_year = v.round() as i32,
        DURATION => t.duration_ms = v.round() as u64,
        _ => {
            if let Some(a) = t.audio.as_mut() {
                let mut vals = a.values();
                vals[i - AUDIO0] = v;
                *a = AudioFeatures::from_values(vals);
            }
        }
    }
}

#[derive(Debug, Clone)]
struct PlaylistState {
    id: String,
    followers: u64,
    /// (library index, year added)
    items: Vec<(usize, i32)>,
}

#[derive(Debug, Clone)]
struct UserState {
    id: String,
    attributes: BTreeMap<String, String>,
    taste: [f64; 12],
    library: Vec<TrackRecord>,
    playlists: Vec<PlaylistState>,
}

fn user_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(mean, sd).expect("finite sd").sample(rng)
    } else {
        mean
    }
}

fn added_year(rng: &mut ChaCha8Rng, release: i32) -> i32 {
    rng.random_range(release.clamp(FIRST_ADDED_YEAR, LAST_YEAR)..=LAST_YEAR)
}

fn make_artists(spec: &GenerationSpec) -> Vec<ArtistRecord> {
    let n = if spec.artists > 0 { spec.artists } else { (4 * spec.users).max(60) };
    let mut rng = user_rng(spec.seed, 0);
    (0..n)
        .map(|k| {
            let popularity = draw(&mut rng, 50.0, 20.0).round().clamp(0.0, 100.0) as u32;
            let followers = 10f64.powf(rng.random_range(2.0..7.0)).floor() as u64;
            let mut genres = BTreeSet::new();
            if rng.random_bool(0.95) {
                let count = [1, 1, 2, 2, 3][rng.random_range(0..5)];
                for _ in 0..count {
                    genres.insert(BASE_TAGS[rng.random_range(0..BASE_TAGS.len())].to_string());
                }
                if rng.random_bool(0.12) {
                    genres.insert(LOCAL_TAGS[rng.random_range(0..LOCAL_TAGS.len())].to_string());
                }
            }
            ArtistRecord { artist_id: format!("a{k:05}"), popularity, followers, genres: genres.into_iter().collect() }
        })
        .collect()
}

fn make_user(spec: &GenerationSpec, idx: usize, n_artists: usize) -> UserState {
    let mut rng = user_rng(spec.seed, 1 + idx as u64);
    let id = format!("u{idx:05}");
    let mut attributes = BTreeMap::new();
    for a in &spec.attributes {
        if rng.random_bool(spec.missing_label_rate) {
            continue;
        }
        let c = WeightedIndex::new(&a.prior).expect("validated prior").sample(&mut rng);
        attributes.insert(a.name.clone(), a.classes[c].clone());
    }
    let mut taste = [0.0; 12];
    for (t, r) in taste.iter_mut().zip(&RAW) {
        *t = draw(&mut rng, r.base, r.user_sd);
    }
    let explicit_rate = rng.random_range(0.0..0.4);
    let n_fav = rng.random_range(5..=30).min(n_artists);
    let favorites: Vec<usize> = index::sample(&mut rng, n_artists, n_fav).into_vec();

    let n_playlists = spec.playlists_per_user.sample(&mut rng);
    let lengths: Vec<usize> = (0..n_playlists).map(|_| spec.tracks_per_playlist.sample(&mut rng)).collect();
    let longest = lengths.iter().copied().max().unwrap_or(1);
    let total: usize = lengths.iter().sum();
    let lib_size = longest.max((total as f64 * 0.6).ceil() as usize);

    let mut library = Vec::with_capacity(lib_size);
    let mut album = 0usize;
    let mut album_left = 0usize;
    let mut album_artist = favorites[0];
    let mut album_year = 0i32;
    for k in 0..lib_size {
        if album_left == 0 {
            album += 1;
            album_left = rng.random_range(1..=12);
            album_artist = favorites[rng.random_range(0..favorites.len())];
            let r = &RAW[RELEASE_YEAR];
            album_year = draw(&mut rng, taste[RELEASE_YEAR], r.track_sd).round().clamp(r.lo, r.hi) as i32;
        }
        album_left -= 1;
        let mut artist_ids = vec![format!("a{album_artist:05}")];
        if rng.random_bool(0.15) {
            for _ in 0..rng.random_range(1..=2) {
                let a = format!("a{:05}", favorites[rng.random_range(0..favorites.len())]);
                if !artist_ids.contains(&a) {
                    artist_ids.push(a);
                }
            }
        }
        let mut vals = [0.0; 12];
        for (i, r) in RAW.iter().enumerate() {
            let v = draw(&mut rng, taste[i], r.track_sd).clamp(r.lo, r.hi);
            vals[i] = if r.integer { v.round() } else { v };
        }
        let audio = (!rng.random_bool(spec.missing_audio_rate))
            .then(|| AudioFeatures::from_values(vals[AUDIO0..].try_into().expect("nine audio values")));
        library.push(TrackRecord {
            track_id: format!("t{idx:05}_{k}"),
            title: format!("Track {k}"),
            album_id: format!("al{idx:05}_{album}"),
            popularity: vals[POPULARITY] as u32,
            explicit: rng.random_bool(explicit_rate),
            release_year: album_year,
            duration_ms: vals[DURATION] as u64,
            audio,
            artist_ids,
            added_year: 0,
        });
    }
    let social = LogNormal::<f64>::new(0.0, 1.5).expect("constant");
    let playlists = lengths
        .iter()
        .enumerate()
        .map(|(j, &len)| {
            let picks = index::sample(&mut rng, lib_size, len).into_vec();
            let items = picks.into_iter().map(|i| (i, added_year(&mut rng, library[i].release_year))).collect();
            let followers = (social.sample(&mut rng) - 1.0).max(0.0).floor() as u64;
            PlaylistState { id: format!("{id}_p{j}"), followers, items }
        })
        .collect();
    UserState { id, attributes, taste, library, playlists }
}

struct State {
    artists: Vec<ArtistRecord>,
    users: Vec<UserState>,
}

impl State {
    fn to_corpus(&self) -> Result<Corpus, SynthError> {
        let mut used: BTreeSet<&str> = BTreeSet::new();
        let users: Vec<CorpusUser> = self
            .users
            .iter()
            .map(|u| CorpusUser {
                user_id: u.id.clone(),
                attributes: u.attributes.clone(),
                playlists: u
                    .playlists
                    .iter()
                    .map(|p| PlaylistRecord {
                        playlist_id: p.id.clone(),
                        owner_id: u.id.clone(),
                        followers: p.followers,
                        tracks: p
                            .items
                            .iter()
                            .map(|&(i, year)| TrackRecord { added_year: year, ..u.library[i].clone() })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        for t in users.iter().flat_map(|u| u.playlists.iter().flat_map(|p| p.tracks.iter())) {
            used.extend(t.artist_ids.iter().map(String::as_str));
        }
        let table: ArtistTable = self.artists.iter().filter(|a| used.contains(a.artist_id.as_str())).cloned().collect();
        Ok(Corpus::new(Provenance::Synthetic, table, users)?)
    }

    fn totals(&self) -> CorpusTotals {
        let mut songs = BTreeSet::new();
        let mut artists = BTreeSet::new();
        let mut slots = 0;
        for u in &self.users {
            for p in &u.playlists {
                slots += p.items.len();
                for &(i, _) in &p.items {
                    let t = &u.library[i];
                    songs.insert(t.track_id.as_str());
                    artists.extend(t.artist_ids.iter().map(String::as_str));
                }
            }
        }
        CorpusTotals {
            users: self.users.len(),
            playlists: self.users.iter().map(|u| u.playlists.len()).sum(),
            track_slots: slots,
            unique_songs: songs.len(),
            unique_artists: artists.len(),
        }
    }

    fn members(&self, attribute: &str, class: &str) -> Vec<usize> {
        (0..self.users.len())
            .filter(|&i| self.users[i].attributes.get(attribute).is_some_and(|c| c == class))
            .collect()
    }

    /// User-level feature vectors keyed by user id.
    fn user_features(&self, featurizer: &Featurizer) -> Result<HashMap<String, Vec<f64>>, SynthError> {
        let corpus = self.to_corpus()?;
        let (ds, _) = featurizer.featurize_corpus(&corpus);
        let vecs = user_level_vectors(&ds);
        Ok(ds.users.iter().map(|u| u.user_id.clone()).zip(vecs).collect())
    }
}

/// Counts the generator produced, for checking against a corpus summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusTotals {
    pub users: usize,
    pub playlists: usize,
    pub track_slots: usize,
    pub unique_songs: usize,
    pub unique_artists: usize,
}

/// What one planted effect did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRecord {
    pub effect: PlantedEffect,
    /// Features the effect was specified on.
    pub target_features: Vec<String>,
    /// Between-user standard deviation of each target before the shift.
    pub sigma: Vec<f64>,
    /// Per-track shift applied, in raw units.
    pub shift: Vec<f64>,
    /// Every feature whose user-level value changed for some user.
    pub affected_features: Vec<String>,
    pub users: Vec<String>,
    pub playlists: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub spec: GenerationSpec,
    pub totals: CorpusTotals,
    pub label_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub effects: Vec<EffectRecord>,
}

impl GroundTruth {
    /// (attribute, feature) pairs that carry planted signal.
    pub fn signal_pairs(&self) -> BTreeSet<(String, String)> {
        let mut out = BTreeSet::new();
        for e in &self.effects {
            for f in e.target_features.iter().chain(&e.affected_features) {
                out.insert((e.effect.attribute().to_string(), f.clone()));
            }
        }
        out
    }

    /// Features planted for `attribute`, as specified.
    pub fn targets(&self, attribute: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .effects
            .iter()
            .filter(|e| e.effect.attribute() == attribute)
            .flat_map(|e| e.target_features.iter().cloned())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }
}

fn changed_features(
    before: &HashMap<String, Vec<f64>>,
    after: &HashMap<String, Vec<f64>>,
    schema: &FeatureSchema,
) -> Vec<String> {
    let mut changed = vec![false; schema.len()];
    for (id, a) in after {
        match before.get(id) {
            Some(b) => {
                for (k, (x, y)) in b.iter().zip(a).enumerate() {
                    if x.to_bits() != y.to_bits() {
                        changed[k] = true;
                    }
                }
            }
            None => changed.iter_mut().for_each(|c| *c = true),
        }
    }
    (0..schema.len()).filter(|&k| changed[k]).map(|k| schema.names[k].clone()).collect()
}

fn sample_sd(xs: &[f64]) -> f64 {
    crate::scalar::sample_std(xs).unwrap_or(0.0)
}

fn apply_mean_shift(
    state: &mut State,
    effect: &PlantedEffect,
    features: &[String],
    delta: f64,
    before: &HashMap<String, Vec<f64>>,
    schema: &FeatureSchema,
) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>), SynthError> {
    let members = state.members(effect.attribute(), effect.class());
    if members.is_empty() {
        return Err(SynthError::Infeasible(format!(
            "no user has {}={}; nothing to shift",
            effect.attribute(),
            effect.class()
        )));
    }
    let mut sigmas = Vec::new();
    let mut shifts = Vec::new();
    for f in features {
        let (raw, _) = song_target(schema, f, effect.kind())?;
        let k = schema.index_of(f).expect("checked");
        let mut ids: Vec<&String> = before.keys().collect();
        ids.sort();
        let col: Vec<f64> = ids.iter().map(|id| before[*id][k]).collect();
        let sigma = sample_sd(&col);
        let shift = delta * sigma;
        let class_vals: Vec<f64> =
            members.iter().filter_map(|&i| before.get(&state.users[i].id)).map(|v| v[k]).collect();
        let class_mean = crate::scalar::mean(&class_vals).unwrap_or(RAW[raw].base);
        let r = &RAW[raw];
        let target = class_mean + shift;
        if !(target > r.lo && target < r.hi) {
            return Err(SynthError::Infeasible(format!(
                "shifting {f} by {delta}σ moves the class mean to {target:.4}, outside ({}, {})",
                r.lo, r.hi
            )));
        }
        for &i in &members {
            for t in &mut state.users[i].library {
                if let Some(v) = get_raw(t, raw) {
                    set_raw(t, raw, v + shift);
                }
            }
        }
        sigmas.push(sigma);
        shifts.push(shift);
    }
    Ok((sigmas, shifts, members))
}

fn apply_max_rule(
    state: &mut State,
    effect: &PlantedEffect,
    raw: usize,
    threshold: f64,
    stream: u64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<String>), SynthError> {
    let r = &RAW[raw];
    let ceiling = threshold - (r.hi - r.lo) * 1e-6;
    let marker_lo = threshold + 0.25 * (r.hi - threshold);
    for u in &mut state.users {
        for t in &mut u.library {
            if let Some(v) = get_raw(t, raw) {
                if v > ceiling {
                    set_raw(t, raw, ceiling);
                }
            }
        }
    }
    let members = state.members(effect.attribute(), effect.class());
    if members.is_empty() {
        return Err(SynthError::Infeasible(format!("no user has {}={}", effect.attribute(), effect.class())));
    }
    let mut rng = user_rng(seed, stream);
    let mut marked = Vec::with_capacity(members.len());
    for &i in &members {
        let u = &mut state.users[i];
        let j = rng.random_range(0..u.playlists.len());
        let items = u.playlists[j].items.clone();
        let mut fresh = Vec::with_capacity(items.len());
        for (n, (li, year)) in items.into_iter().enumerate() {
            let mut t = u.library[li].clone();
            t.track_id = format!("{}_m{stream}_{n}", u.playlists[j].id);
            if t.audio.is_none() {
                t.audio = Some(AudioFeatures::from_values([0.0; 9]));
                for k in AUDIO0..12 {
                    set_raw(&mut t, k, u.taste[k]);
                }
            }
            set_raw(&mut t, raw, rng.random_range(marker_lo..=r.hi));
            u.library.push(t);
            fresh.push((u.library.len() - 1, year));
        }
        u.playlists[j].items = fresh;
        marked.push(u.playlists[j].id.clone());
    }
    Ok((members, marked))
}

fn apply_pure_cluster(
    state: &mut State,
    effect: &PlantedEffect,
    count: usize,
    ordinal: usize,
    spec: &GenerationSpec,
    stream: u64,
) -> Result<(Vec<usize>, Vec<String>), SynthError> {
    let members = state.members(effect.attribute(), effect.class());
    if members.is_empty() {
        return Err(SynthError::Infeasible(format!(
            "no user has {}={} to own injected playlists",
            effect.attribute(),
            effect.class()
        )));
    }
    let mut rng = user_rng(spec.seed, stream);
    let artist_ids: Vec<String> = (0..3).map(|k| format!("ax{ordinal}_{k}")).collect();
    for id in &artist_ids {
        state.artists.push(ArtistRecord {
            artist_id: id.clone(),
            popularity: 5,
            followers: 100,
            genres: vec![RESERVED_TAG.to_string()],
        });
    }
    // One distinctive profile per injected cluster.
    let o = ordinal as f64;
    let profile = [3.0, 1975.0 + 3.0 * o, 600_000.0, 0.15, 0.1, -30.0 + 4.0 * o, 0.9, 0.95, 0.9, 0.9, 0.1, 60.0 + 30.0 * o];
    let mut order = members.clone();
    for k in (1..order.len()).rev() {
        order.swap(k, rng.random_range(0..=k));
    }
    let mut owners = BTreeSet::new();
    let mut ids = Vec::with_capacity(count);
    for n in 0..count {
        let ui = order[n % order.len()];
        owners.insert(ui);
        let len = spec.tracks_per_playlist.sample(&mut rng);
        let u = &mut state.users[ui];
        let pid = format!("{}_x{ordinal}_{n}", u.id);
        let mut items = Vec::with_capacity(len);
        for k in 0..len {
            let mut vals = [0.0; 12];
            for (i, r) in RAW.iter().enumerate() {
                let v = draw(&mut rng, profile[i], 0.01 * (r.hi - r.lo)).clamp(r.lo, r.hi);
                vals[i] = if r.integer { v.round() } else { v };
            }
            let track = TrackRecord {
                track_id: format!("{pid}_{k}"),
                title: format!("Drone {k}"),
                album_id: format!("alx{ordinal}_{}", k % 3),
                popularity: vals[POPULARITY] as u32,
                explicit: false,
                release_year: vals[RELEASE_YEAR] as i32,
                duration_ms: vals[DURATION] as u64,
                audio: Some(AudioFeatures::from_values(vals[AUDIO0..].try_into().expect("nine audio values"))),
                artist_ids: vec![artist_ids[k % artist_ids.len()].clone()],
                added_year: 0,
            };
            let year = added_year(&mut rng, track.release_year);
            u.library.push(track);
            items.push((u.library.len() - 1, year));
        }
        u.playlists.push(PlaylistState { id: pid.clone(), followers: 0, items });
        ids.push(pid);
    }
    Ok((owners.into_iter().collect(), ids))
}

/// Builds a corpus from `spec`. Deterministic per seed; users are generated
/// in parallel from independent streams.
pub fn generate_corpus(spec: &GenerationSpec) -> Result<(Corpus, GroundTruth), SynthError> {
    spec.validate()?;
    let artists = make_artists(spec);
    let n_artists = artists.len();
    let users: Vec<UserState> = (0..spec.users).into_par_iter().map(|i| make_user(spec, i, n_artists)).collect();
    let mut state = State { artists, users };

    let featurizer = Featurizer::default();
    let schema = featurizer.schema().clone();
    let mut records = Vec::with_capacity(spec.effects.len());
    let effect_stream = 1u64 << 40;
    let mut clusters = 0usize;
    for (e_idx, effect) in spec.effects.iter().enumerate() {
        let before = state.user_features(&featurizer)?;
        let stream = effect_stream + e_idx as u64;
        let mut record = EffectRecord {
            effect: effect.clone(),
            target_features: Vec::new(),
            sigma: Vec::new(),
            shift: Vec::new(),
            affected_features: Vec::new(),
            users: Vec::new(),
            playlists: Vec::new(),
        };
        let members = match effect {
            PlantedEffect::MeanShift { features, delta, .. } => {
                let (sigma, shift, members) = apply_mean_shift(&mut state, effect, features, *delta, &before, &schema)?;
                record.target_features = features.clone();
                record.sigma = sigma;
                record.shift = shift;
                members
            }
            PlantedEffect::MaxRule { feature, threshold, .. } => {
                let (raw, _) = song_target(&schema, feature, effect.kind())?;
                let (members, marked) = apply_max_rule(&mut state, effect, raw, *threshold, stream, spec.seed)?;
                record.target_features = vec![feature.clone()];
                record.playlists = marked;
                members
            }
            PlantedEffect::PureCluster { playlists, .. } => {
                let (members, ids) = apply_pure_cluster(&mut state, effect, *playlists, clusters, spec, stream)?;
                clusters += 1;
                record.playlists = ids;
                members
            }
        };
        record.users = members.iter().map(|&i| state.users[i].id.clone()).collect();
        let after = state.user_features(&featurizer)?;
        record.affected_features = changed_features(&before, &after, &schema);
        records.push(record);
    }

    let mut label_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for a in &spec.attributes {
        let counts = label_counts.entry(a.name.clone()).or_default();
        for c in &a.classes {
            counts.insert(c.clone(), 0);
        }
    }
    for u in &state.users {
        for (k, v) in &u.attributes {
            *label_counts.entry(k.clone()).or_default().entry(v.clone()).or_default() += 1;
        }
    }
    let corpus = state.to_corpus()?;
    let truth = GroundTruth { seed: spec.seed, spec: spec.clone(), totals: state.totals(), label_counts, effects: records };
    Ok((corpus, truth))
}

/// Writes `corpus.json` and `ground_truth.json` into `dir`.
pub fn write_synthetic(dir: &Path, corpus: &Corpus, truth: &GroundTruth) -> Result<(), SynthError> {
    let io = |e: String| SynthError::Io(e);
    std::fs::create_dir_all(dir).map_err(|e| io(format!("{}: {e}", dir.display())))?;
    crate::ingest::save_corpus(corpus, &dir.join("corpus.json")).map_err(|e| io(e.to_string()))?;
    std::fs::write(dir.join("ground_truth.json"), truth.to_json()).map_err(|e| io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::corpus_summary;

    fn small(seed: u64) -> GenerationSpec {
        GenerationSpec {
            users: 30,
            playlists_per_user: CountDist::Uniform { min: 1, max: 4 },
            tracks_per_playlist: CountDist::Uniform { min: 3, max: 12 },
            ..GenerationSpec::null(30, seed)
        }
    }

    #[test]
    fn deterministic_and_matches_totals() {
        let (a, ta) = generate_corpus(&small(5)).unwrap();
        let (b, _) = generate_corpus(&small(5)).unwrap();
        assert_eq!(crate::ingest::corpus_to_json(&a), crate::ingest::corpus_to_json(&b));
        let (c, _) = generate_corpus(&small(6)).unwrap();
        assert_ne!(a, c);
        let s = corpus_summary(&a).unwrap();
        assert_eq!(s.users, ta.totals.users);
        assert_eq!(s.playlists, ta.totals.playlists);
        assert_eq!(s.unique_songs, ta.totals.unique_songs);
        assert_eq!(s.unique_artists, ta.totals.unique_artists);
    }

    #[test]
    fn prior_must_sum_to_one() {
        let spec = small(0).with_attribute(AttributeSpec::new("flag", &["a", "b"], &[0.5, 0.6]));
        assert!(matches!(generate_corpus(&spec), Err(SynthError::BadPrior { .. })));
    }

    #[test]
    fn unknown_feature_and_unsupported_targets() {
        let shift = |f: &str| PlantedEffect::MeanShift {
            attribute: "gender".into(),
            class: "female".into(),
            features: vec![f.into()],
            delta: 1.0,
        };
        assert!(matches!(generate_corpus(&small(0).with_effect(shift("song_nope_mean"))), Err(SynthError::UnknownFeature(_))));
        assert!(matches!(
            generate_corpus(&small(0).with_effect(shift("genre_rock"))),
            Err(SynthError::Unsupported { .. })
        ));
    }

    #[test]
    fn min_feature_past_bounds_is_infeasible() {
        let spec = small(0).with_effect(PlantedEffect::MeanShift {
            attribute: "gender".into(),
            class: "male".into(),
            features: vec!["song_danceability_min".into()],
            delta: 500.0,
        });
        assert!(matches!(generate_corpus(&spec), Err(SynthError::Infeasible(_))));
    }

    #[test]
    fn max_rule_holds_exactly() {
        let spec = small(3)
            .with_attribute(AttributeSpec::new("flag", &["no", "yes"], &[0.5, 0.5]))
            .with_effect(PlantedEffect::MaxRule {
                attribute: "flag".into(),
                class: "yes".into(),
                feature: "song_instrumentalness_mean".into(),
                threshold: 0.5,
            });
        let (corpus, truth) = generate_corpus(&spec).unwrap();
        let fz = Featurizer::default();
        let k = fz.schema().index_of("song_instrumentalness_mean").unwrap();
        let (ds, _) = fz.featurize_corpus(&corpus);
        for u in &ds.users {
            let max = u.playlists.iter().map(|p| p.values[k]).fold(f64::MIN, f64::max);
            let yes = u.attributes.get("flag").is_some_and(|c| c == "yes");
            assert_eq!(max > 0.5, yes, "user {}", u.user_id);
        }
        assert!(truth.effects[0].affected_features.contains(&"song_instrumentalness_mean".to_string()));
    }

    #[test]
    fn shift_moves_only_its_attribute() {
        let spec = small(2).with_effect(PlantedEffect::MeanShift {
            attribute: "gender".into(),
            class: "male".into(),
            features: vec!["song_valence_mean".into()],
            delta: 2.0,
        });
        let (_, truth) = generate_corpus(&spec).unwrap();
        let e = &truth.effects[0];
        assert!(e.shift[0] > 0.0);
        assert!(e.affected_features.iter().all(|f| f.starts_with("song_valence_")), "{:?}", e.affected_features);
    }
}
