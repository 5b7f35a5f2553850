//! Playlist featurization into the fixed 111-entry descriptor, and user-level
//! aggregation.
//!
//! Every statistic is computed from values sorted ascending, so the output is
//! bitwise independent of track order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ArtistTable, Corpus, FeatureDataset, FeatureVector, PlaylistRecord, TrackRecord, UserRecord,
    AUDIO_FEATURE_NAMES,
};

/// Number of entries in a playlist descriptor.
pub const FEATURE_COUNT: usize = 111;
/// Version tag of the feature layout; bump on any reordering.
pub const SCHEMA_VERSION: &str = "1";
/// Number of canonical genres a lexicon must define.
pub const CANONICAL_GENRES: usize = 30;
/// Artists below this popularity count as low-popularity.
pub const LOW_POPULARITY: u32 = 20;

const STATS: [&str; 4] = ["mean", "std", "min", "max"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("playlist {0:?} has no tracks")]
    EmptyPlaylist(String),
    #[error("playlist {playlist:?} references unknown artist {artist:?}")]
    UnknownArtist { playlist: String, artist: String },
    #[error("playlist {0:?} has no track with audio features")]
    NoAudio(String),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("lexicon must define {CANONICAL_GENRES} genres, found {0}")]
    LexiconSize(usize),
    #[error("user {0:?} has no playlists")]
    EmptyUser(String),
    #[error("feature csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("feature csv: {0}")]
    CsvLayout(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureFamily {
    Songs,
    Artists,
    Genres,
    Misc,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 4] = [
        FeatureFamily::Songs,
        FeatureFamily::Artists,
        FeatureFamily::Genres,
        FeatureFamily::Misc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureFamily::Songs => "Songs",
            FeatureFamily::Artists => "Artists",
            FeatureFamily::Genres => "Genres",
            FeatureFamily::Misc => "Misc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Proportion in `[0, 1]`.
    Ratio,
    Count,
    Real,
}

/// Canonical genres with their tag substrings, plus locale markers.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreLexicon {
    genres: Vec<(String, Vec<String>)>,
    local_markers: Vec<String>,
}

impl Default for GenreLexicon {
    fn default() -> Self {
        GenreLexicon::parse(include_str!("../data/genre_lexicon.txt"))
            .expect("bundled lexicon is valid")
    }
}

impl GenreLexicon {
    /// Parses the lexicon text format. Lines are `name: sub, sub` for genres or
    /// `local: marker, marker`; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, FeatureError> {
        let mut genres: Vec<(String, Vec<String>)> = Vec::new();
        let mut local = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, subs) = match line.split_once(':') {
                Some((n, s)) => (n.trim().to_lowercase(), s),
                None => (line.to_lowercase(), line),
            };
            let subs: Vec<String> = subs
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            let err = |message: String| FeatureError::Lexicon { line: i + 1, message };
            if name.is_empty() {
                return Err(err("empty genre name".into()));
            }
            if subs.is_empty() {
                return Err(err(format!("{name:?} has no match substrings")));
            }
            if name == "local" {
                local.extend(subs);
            } else {
                if name == "other" {
                    return Err(err("\"other\" is reserved".into()));
                }
                if genres.iter().any(|(g, _)| *g == name) {
                    return Err(err(format!("duplicate genre {name:?}")));
                }
                genres.push((name, subs));
            }
        }
        if genres.len() != CANONICAL_GENRES {
            return Err(FeatureError::LexiconSize(genres.len()));
        }
        Ok(GenreLexicon { genres, local_markers: local })
    }

    pub fn from_file(path: &Path) -> Result<Self, FeatureError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn genre_names(&self) -> impl Iterator<Item = &str> {
        self.genres.iter().map(|(g, _)| g.as_str())
    }

    pub fn local_markers(&self) -> &[String] {
        &self.local_markers
    }

    fn matches(subs: &[String], tags: &[String]) -> bool {
        tags.iter().any(|t| subs.iter().any(|s| t.contains(s.as_str())))
    }
}

/// Ordered feature names with their family and kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: String,
    pub names: Vec<String>,
    pub families: Vec<FeatureFamily>,
    pub kinds: Vec<FeatureKind>,
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

impl FeatureSchema {
    pub fn new(lexicon: &GenreLexicon) -> Self {
        let mut s = FeatureSchema {
            version: SCHEMA_VERSION.into(),
            names: Vec::with_capacity(FEATURE_COUNT),
            families: Vec::with_capacity(FEATURE_COUNT),
            kinds: Vec::with_capacity(FEATURE_COUNT),
        };
        let mut push = |name: String, fam, kind| {
            s.names.push(name);
            s.families.push(fam);
            s.kinds.push(kind);
        };
        use FeatureFamily::*;
        use FeatureKind::*;
        let numeric = ["popularity", "release_year", "duration_ms"]
            .into_iter()
            .chain(AUDIO_FEATURE_NAMES);
        for attr in numeric {
            for st in STATS {
                push(format!("song_{attr}_{st}"), Songs, Real);
            }
        }
        push("song_explicit_ratio".into(), Songs, Ratio);

        push("artist_count_total".into(), Artists, Count);
        push("artist_count_unique".into(), Artists, Count);
        push("artist_low_popularity_ratio".into(), Artists, Ratio);
        push("artist_low_popularity_unique_ratio".into(), Artists, Ratio);
        push("artist_single_artist_song_ratio".into(), Artists, Ratio);
        push("artist_repeated_ratio".into(), Artists, Ratio);
        push("artist_simpson_diversity".into(), Artists, Ratio);
        for attr in ["popularity", "followers", "per_song"] {
            for st in STATS {
                push(format!("artist_{attr}_{st}"), Artists, Real);
            }
        }

        for g in lexicon.genre_names() {
            push(format!("genre_{}", slug(g)), Genres, Ratio);
        }
        push("genre_local".into(), Genres, Ratio);
        push("genre_other".into(), Genres, Ratio);

        push("misc_song_count".into(), Misc, Count);
        push("misc_followers".into(), Misc, Count);
        push("misc_album_diversity".into(), Misc, Ratio);
        push("misc_unique_albums".into(), Misc, Count);
        for st in STATS {
            push(format!("misc_added_year_{st}"), Misc, Real);
        }
        push("misc_added_year_span".into(), Misc, Real);
        push("misc_added_year_distinct".into(), Misc, Count);
        push("misc_release_to_add_gap_mean".into(), Misc, Real);
        debug_assert_eq!(s.names.len(), FEATURE_COUNT);
        s
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn family_indices(&self, family: FeatureFamily) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.families[i] == family).collect()
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema::new(&GenreLexicon::default())
    }
}

/// Degenerate flag is set when fewer than two items were counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpsonIndex {
    pub value: f64,
    pub degenerate: bool,
}

/// Unbiased Simpson diversity `1 - Σ nᵢ(nᵢ-1) / (N(N-1))`.
pub fn simpson_diversity(counts: &[u64]) -> SimpsonIndex {
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total < 2 {
        return SimpsonIndex { value: 0.0, degenerate: true };
    }
    let same: u128 = counts
        .iter()
        .map(|&c| c as u128 * (c as u128).saturating_sub(1))
        .sum();
    let pairs = total * (total - 1);
    SimpsonIndex { value: 1.0 - same as f64 / pairs as f64, degenerate: false }
}

/// mean, sample std, min, max over values sorted ascending.
fn summarize(mut xs: Vec<f64>) -> [f64; 4] {
    debug_assert!(!xs.is_empty());
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut sum = 0.0;
    for &x in &xs {
        sum += x;
    }
    let mean = sum / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        let mut ss = 0.0;
        for &x in &xs {
            ss += (x - mean) * (x - mean);
        }
        (ss / (n - 1.0)).sqrt()
    };
    [mean, std, xs[0], xs[xs.len() - 1]]
}

fn sorted_mean(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    for &x in &xs {
        sum += x;
    }
    sum / xs.len() as f64
}

fn ratio(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Songs block: 12 numeric attributes × {mean, std, min, max}, then the
/// explicit share. Tracks without audio features are left out of the audio
/// statistics only.
pub fn aggregate_song_features(
    playlist_id: &str,
    tracks: &[TrackRecord],
) -> Result<Vec<f64>, FeatureError> {
    if tracks.is_empty() {
        return Err(FeatureError::EmptyPlaylist(playlist_id.into()));
    }
    let mut out = Vec::with_capacity(49);
    out.extend(summarize(tracks.iter().map(|t| t.popularity as f64).collect()));
    out.extend(summarize(tracks.iter().map(|t| t.release_year as f64).collect()));
    out.extend(summarize(tracks.iter().map(|t| t.duration_ms as f64).collect()));
    let audio: Vec<[f64; 9]> = tracks.iter().filter_map(|t| t.audio.as_ref().map(|a| a.values())).collect();
    if audio.is_empty() {
        return Err(FeatureError::NoAudio(playlist_id.into()));
    }
    for k in 0..AUDIO_FEATURE_NAMES.len() {
        out.extend(summarize(audio.iter().map(|v| v[k]).collect()));
    }
    out.push(ratio(tracks.iter().filter(|t| t.explicit).count(), tracks.len()));
    Ok(out)
}

/// Artists block (19 entries).
pub fn aggregate_artist_features(
    playlist_id: &str,
    tracks: &[TrackRecord],
    artists: &ArtistTable,
) -> Result<Vec<f64>, FeatureError> {
    if tracks.is_empty() {
        return Err(FeatureError::EmptyPlaylist(playlist_id.into()));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut pops = Vec::new();
    let mut followers = Vec::new();
    let mut low_overall = 0;
    for t in tracks {
        for id in &t.artist_ids {
            let a = artists.get(id).ok_or_else(|| FeatureError::UnknownArtist {
                playlist: playlist_id.into(),
                artist: id.clone(),
            })?;
            *counts.entry(id.as_str()).or_default() += 1;
            pops.push(a.popularity as f64);
            followers.push(a.followers as f64);
            if a.popularity < LOW_POPULARITY {
                low_overall += 1;
            }
        }
    }
    let total = pops.len();
    let unique = counts.len();
    let low_unique = counts
        .keys()
        .filter(|id| artists.get(id).is_some_and(|a| a.popularity < LOW_POPULARITY))
        .count();
    let single = tracks.iter().filter(|t| t.artist_ids.len() == 1).count();
    let repeated = counts.values().filter(|&&c| c >= 2).count();
    let multiset: Vec<u64> = counts.values().copied().collect();

    let mut out = Vec::with_capacity(19);
    out.push(total as f64);
    out.push(unique as f64);
    out.push(ratio(low_overall, total));
    out.push(ratio(low_unique, unique));
    out.push(ratio(single, tracks.len()));
    out.push(ratio(repeated, unique));
    out.push(simpson_diversity(&multiset).value);
    out.extend(summarize(pops));
    out.extend(summarize(followers));
    out.extend(summarize(tracks.iter().map(|t| t.artist_ids.len() as f64).collect()));
    Ok(out)
}

/// Genres block: share of songs per canonical genre (multi-label), then the
/// local and other buckets.
pub fn aggregate_genre_features(
    playlist_id: &str,
    tracks: &[TrackRecord],
    artists: &ArtistTable,
    lexicon: &GenreLexicon,
) -> Result<Vec<f64>, FeatureError> {
    if tracks.is_empty() {
        return Err(FeatureError::EmptyPlaylist(playlist_id.into()));
    }
    let mut genre_hits = vec![0usize; lexicon.genres.len()];
    let mut local = 0;
    let mut other = 0;
    for t in tracks {
        let mut tags = Vec::new();
        for id in &t.artist_ids {
            let a = artists.get(id).ok_or_else(|| FeatureError::UnknownArtist {
                playlist: playlist_id.into(),
                artist: id.clone(),
            })?;
            tags.extend(a.genres.iter().map(|g| g.to_lowercase()));
        }
        let mut any = false;
        for (k, (_, subs)) in lexicon.genres.iter().enumerate() {
            if GenreLexicon::matches(subs, &tags) {
                genre_hits[k] += 1;
                any = true;
            }
        }
        let is_local = GenreLexicon::matches(&lexicon.local_markers, &tags);
        if is_local {
            local += 1;
        }
        if !any && !is_local {
            other += 1;
        }
    }
    let n = tracks.len();
    let mut out: Vec<f64> = genre_hits.into_iter().map(|h| ratio(h, n)).collect();
    out.push(ratio(local, n));
    out.push(ratio(other, n));
    Ok(out)
}

/// Misc block (11 entries).
pub fn aggregate_misc_features(playlist: &PlaylistRecord) -> Result<Vec<f64>, FeatureError> {
    let tracks = &playlist.tracks;
    if tracks.is_empty() {
        return Err(FeatureError::EmptyPlaylist(playlist.playlist_id.clone()));
    }
    let mut albums: BTreeMap<&str, u64> = BTreeMap::new();
    for t in tracks {
        *albums.entry(t.album_id.as_str()).or_default() += 1;
    }
    let album_counts: Vec<u64> = albums.values().copied().collect();
    let added = summarize(tracks.iter().map(|t| t.added_year as f64).collect());
    let distinct: BTreeSet<i32> = tracks.iter().map(|t| t.added_year).collect();
    let mut out = Vec::with_capacity(11);
    out.push(tracks.len() as f64);
    out.push(playlist.followers as f64);
    out.push(simpson_diversity(&album_counts).value);
    out.push(albums.len() as f64);
    out.extend(added);
    out.push(added[3] - added[2]);
    out.push(distinct.len() as f64);
    out.push(sorted_mean(
        tracks.iter().map(|t| (t.added_year - t.release_year) as f64).collect(),
    ));
    Ok(out)
}

/// A playlist skipped during corpus featurization.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SkippedPlaylist {
    pub playlist_id: String,
    pub owner_id: String,
    pub reason: String,
}

/// Lexicon plus the schema it induces.
#[derive(Debug, Clone)]
pub struct Featurizer {
    lexicon: GenreLexicon,
    schema: FeatureSchema,
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer::new(GenreLexicon::default())
    }
}

impl Featurizer {
    pub fn new(lexicon: GenreLexicon) -> Self {
        let schema = FeatureSchema::new(&lexicon);
        Featurizer { lexicon, schema }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn lexicon(&self) -> &GenreLexicon {
        &self.lexicon
    }

    pub fn featurize_playlist(
        &self,
        playlist: &PlaylistRecord,
        artists: &ArtistTable,
    ) -> Result<FeatureVector, FeatureError> {
        let id = playlist.playlist_id.as_str();
        let mut values = aggregate_song_features(id, &playlist.tracks)?;
        values.extend(aggregate_artist_features(id, &playlist.tracks, artists)?);
        values.extend(aggregate_genre_features(id, &playlist.tracks, artists, &self.lexicon)?);
        values.extend(aggregate_misc_features(playlist)?);
        debug_assert_eq!(values.len(), FEATURE_COUNT);
        Ok(FeatureVector {
            playlist_id: playlist.playlist_id.clone(),
            owner_id: playlist.owner_id.clone(),
            values,
        })
    }

    /// Featurizes every playlist. Playlists that cannot be featurized are
    /// skipped with a warning; users left without playlists are dropped.
    pub fn featurize_corpus(&self, corpus: &Corpus) -> (FeatureDataset, Vec<SkippedPlaylist>) {
        let per_user: Vec<(UserRecord, Vec<SkippedPlaylist>)> = corpus
            .users
            .par_iter()
            .map(|u| {
                let mut skipped = Vec::new();
                let mut playlists = Vec::new();
                for p in &u.playlists {
                    match self.featurize_playlist(p, &corpus.artists) {
                        Ok(v) => playlists.push(v),
                        Err(e) => skipped.push(SkippedPlaylist {
                            playlist_id: p.playlist_id.clone(),
                            owner_id: u.user_id.clone(),
                            reason: e.to_string(),
                        }),
                    }
                }
                let user = UserRecord {
                    user_id: u.user_id.clone(),
                    attributes: u.attributes.clone(),
                    playlists,
                };
                (user, skipped)
            })
            .collect();
        let mut users = Vec::new();
        let mut skipped = Vec::new();
        for (u, s) in per_user {
            for sk in &s {
                warn!("skipping playlist {} of {}: {}", sk.playlist_id, sk.owner_id, sk.reason);
            }
            skipped.extend(s);
            if u.playlists.is_empty() {
                warn!("dropping user {}: no featurizable playlists", u.user_id);
            } else {
                users.push(u);
            }
        }
        (FeatureDataset { schema: self.schema.clone(), users }, skipped)
    }
}

/// Element-wise mean over the user's playlists, each weighted equally.
pub fn featurize_user(user: &UserRecord) -> Result<Vec<f64>, FeatureError> {
    let first = user
        .playlists
        .first()
        .ok_or_else(|| FeatureError::EmptyUser(user.user_id.clone()))?;
    let mut acc = vec![0.0; first.values.len()];
    for p in &user.playlists {
        for (a, v) in acc.iter_mut().zip(&p.values) {
            *a += v;
        }
    }
    let n = user.playlists.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Writes one row per playlist ordered by (owner_id, playlist_id).
pub fn write_feature_csv<W: Write>(
    schema: &FeatureSchema,
    vectors: &[&FeatureVector],
    out: W,
) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = schema.names.iter().map(String::as_str).collect();
    header.push("playlist_id");
    header.push("owner_id");
    w.write_record(&header)?;
    let mut rows: Vec<&&FeatureVector> = vectors.iter().collect();
    rows.sort_by(|a, b| (&a.owner_id, &a.playlist_id).cmp(&(&b.owner_id, &b.playlist_id)));
    for v in rows {
        let mut rec: Vec<String> = v.values.iter().map(|x| x.to_string()).collect();
        rec.push(v.playlist_id.clone());
        rec.push(v.owner_id.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_csv<W: Write>(dataset: &FeatureDataset, out: W) -> Result<(), FeatureError> {
    let all: Vec<&FeatureVector> = dataset.users.iter().flat_map(|u| u.playlists.iter()).collect();
    write_feature_csv(&dataset.schema, &all, out)
}

/// Reads a feature CSV, returning the feature column names and the vectors.
pub fn read_feature_csv<R: Read>(input: R) -> Result<(Vec<String>, Vec<FeatureVector>), FeatureError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let n = header.len();
    if n < 3 || header[n - 2] != "playlist_id" || header[n - 1] != "owner_id" {
        return Err(FeatureError::CsvLayout("last columns must be playlist_id, owner_id".into()));
    }
    let names = header[..n - 2].to_vec();
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .take(n - 2)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| FeatureError::CsvLayout(format!("row {}: {e}", row + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(FeatureVector {
            playlist_id: rec[n - 2].to_string(),
            owner_id: rec[n - 1].to_string(),
            values,
        });
    }
    Ok((names, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ArtistRecord, AudioFeatures};

    fn artist(id: &str, pop: u32, genres: &[&str]) -> ArtistRecord {
        ArtistRecord {
            artist_id: id.into(),
            popularity: pop,
            followers: 1000,
            genres: genres.iter().map(|g| g.to_string()).collect(),
        }
    }

    fn track(id: &str, artists: &[&str]) -> TrackRecord {
        TrackRecord {
            track_id: id.into(),
            title: id.into(),
            album_id: format!("alb-{id}"),
            popularity: 40,
            explicit: false,
            release_year: 2000,
            duration_ms: 180_000,
            audio: Some(AudioFeatures::from_values([0.5; 9])),
            artist_ids: artists.iter().map(|s| s.to_string()).collect(),
            added_year: 2020,
        }
    }

    fn idx(name: &str) -> usize {
        FeatureSchema::default().index_of(name).unwrap()
    }

    #[test]
    fn schema_has_111_entries_in_four_families() {
        let s = FeatureSchema::default();
        assert_eq!(s.len(), FEATURE_COUNT);
        let sizes: Vec<usize> = FeatureFamily::ALL.iter().map(|&f| s.family_indices(f).len()).collect();
        assert_eq!(sizes, vec![49, 19, 32, 11]);
        let unique: BTreeSet<&String> = s.names.iter().collect();
        assert_eq!(unique.len(), FEATURE_COUNT);
        assert_eq!(s.names[idx("genre_k_pop")], "genre_k_pop");
    }

    #[test]
    fn single_track_statistics_are_degenerate() {
        let mut t = track("t", &["a"]);
        t.explicit = true;
        let songs = aggregate_song_features("p", &[t]).unwrap();
        assert_eq!(&songs[0..4], &[40.0, 0.0, 40.0, 40.0]);
        assert_eq!(songs[48], 1.0);
    }

    #[test]
    fn two_track_popularity_summary() {
        let mut a = track("a", &["x"]);
        let mut b = track("b", &["x"]);
        a.popularity = 20;
        b.popularity = 60;
        let songs = aggregate_song_features("p", &[a, b]).unwrap();
        assert_eq!(songs[0], 40.0);
        assert!((songs[1] - 28.284271247461902).abs() < 1e-12);
        assert_eq!((songs[2], songs[3]), (20.0, 60.0));
    }

    #[test]
    fn explicit_share_counts_flags() {
        let tracks: Vec<TrackRecord> = (0..4)
            .map(|i| {
                let mut t = track(&i.to_string(), &["a"]);
                t.explicit = i == 0;
                t
            })
            .collect();
        assert_eq!(aggregate_song_features("p", &tracks).unwrap()[48], 0.25);
    }

    #[test]
    fn tracks_without_audio_only_leave_audio_statistics() {
        let mut a = track("a", &["x"]);
        let mut b = track("b", &["x"]);
        a.audio = None;
        a.popularity = 0;
        b.audio = Some(AudioFeatures::from_values([0.9; 9]));
        let songs = aggregate_song_features("p", &[a.clone(), b]).unwrap();
        assert_eq!(songs[0], 20.0);
        assert_eq!(&songs[12..16], &[0.9, 0.0, 0.9, 0.9]);
        assert!(matches!(aggregate_song_features("p", &[a]), Err(FeatureError::NoAudio(_))));
        assert!(matches!(aggregate_song_features("p", &[]), Err(FeatureError::EmptyPlaylist(_))));
    }

    #[test]
    fn simpson_cases() {
        assert_eq!(simpson_diversity(&[5]).value, 0.0);
        assert_eq!(simpson_diversity(&[1, 1, 1, 1]).value, 1.0);
        assert_eq!(simpson_diversity(&[3, 1]).value, 0.5);
        assert!((simpson_diversity(&[2, 2]).value - 2.0 / 3.0).abs() < 1e-15);
        let d = simpson_diversity(&[1]);
        assert!(d.degenerate && d.value == 0.0);
        assert!(simpson_diversity(&[]).degenerate);
    }

    #[test]
    fn artist_block_extremes() {
        let table: ArtistTable = ["a", "b", "c", "d"].iter().map(|i| artist(i, 50, &[])).collect();
        let same: Vec<TrackRecord> = (0..4).map(|i| track(&i.to_string(), &["a"])).collect();
        let v = aggregate_artist_features("p", &same, &table).unwrap();
        assert_eq!((v[1], v[4], v[6]), (1.0, 1.0, 0.0));
        let distinct: Vec<TrackRecord> =
            ["a", "b", "c", "d"].iter().map(|a| track(a, &[a])).collect();
        let v = aggregate_artist_features("p", &distinct, &table).unwrap();
        assert_eq!((v[1], v[5], v[6]), (4.0, 0.0, 1.0));
        let pairs = vec![track("1", &["a"]), track("2", &["a"]), track("3", &["b"]), track("4", &["b"])];
        let v = aggregate_artist_features("p", &pairs, &table).unwrap();
        assert!((v[6] - 0.6667).abs() < 1e-4);
        assert_eq!(v[5], 1.0);
    }

    #[test]
    fn low_popularity_overall_vs_unique() {
        let table: ArtistTable = vec![artist("lo", 5, &[]), artist("hi", 80, &[])].into_iter().collect();
        let tracks = vec![track("1", &["lo"]), track("2", &["lo"]), track("3", &["lo", "hi"])];
        let v = aggregate_artist_features("p", &tracks, &table).unwrap();
        assert_eq!(v[0], 4.0);
        assert_eq!(v[2], 0.75);
        assert_eq!(v[3], 0.5);
        assert!((v[4] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unresolved_artist_is_named() {
        let err = aggregate_artist_features("p", &[track("1", &["ghost"])], &ArtistTable::new())
            .unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn genre_buckets() {
        let lex = GenreLexicon::default();
        let schema = FeatureSchema::default();
        let g0 = schema.family_indices(FeatureFamily::Genres)[0];
        let at = |name: &str| schema.index_of(name).unwrap() - g0;
        let table: ArtistTable = vec![
            artist("k", 50, &["K-Pop"]),
            artist("it", 50, &["italian pop"]),
            artist("x", 50, &["chamber psych"]),
            artist("none", 50, &[]),
        ]
        .into_iter()
        .collect();
        let kpop: Vec<TrackRecord> = (0..3).map(|i| track(&i.to_string(), &["k"])).collect();
        let v = aggregate_genre_features("p", &kpop, &table, &lex).unwrap();
        assert_eq!(v[at("genre_k_pop")], 1.0);

        let mixed = vec![track("1", &["it"]), track("2", &["it"]), track("3", &["x"]), track("4", &["x"])];
        let v = aggregate_genre_features("p", &mixed, &table, &lex).unwrap();
        assert_eq!(v[at("genre_local")], 0.5);
        assert_eq!(v[at("genre_pop")], 0.5);
        assert_eq!(v[at("genre_other")], 0.5);

        let bare = vec![track("1", &["none"])];
        let v = aggregate_genre_features("p", &bare, &table, &lex).unwrap();
        assert_eq!(v[at("genre_other")], 1.0);
    }

    #[test]
    fn misc_block() {
        let mut p = PlaylistRecord {
            playlist_id: "p".into(),
            owner_id: "u".into(),
            followers: 0,
            tracks: vec![track("1", &["a"]), track("2", &["a"])],
        };
        let v = aggregate_misc_features(&p).unwrap();
        assert_eq!(v[1], 0.0);
        assert_eq!((v[6], v[7], v[8]), (2020.0, 2020.0, 0.0));
        p.tracks[0].added_year = 2018;
        p.tracks[1].added_year = 2022;
        let v = aggregate_misc_features(&p).unwrap();
        assert_eq!((v[4], v[8], v[9]), (2020.0, 4.0, 2.0));
        assert_eq!(v[10], 20.0);
    }

    #[test]
    fn lexicon_parsing() {
        let lex = GenreLexicon::default();
        assert_eq!(lex.genre_names().count(), 30);
        assert!(lex.local_markers().iter().any(|m| m == "italian"));
        let mut text: String = (0..30).map(|i| format!("g{i}: s{i}\n")).collect();
        text.push_str("local: x\n");
        assert!(GenreLexicon::parse(&text).is_ok());
        assert!(matches!(GenreLexicon::parse("a: b\n"), Err(FeatureError::LexiconSize(1))));
        assert!(matches!(
            GenreLexicon::parse("a: \n"),
            Err(FeatureError::Lexicon { line: 1, .. })
        ));
        let dup = format!("{text}g0: again\n");
        assert!(matches!(GenreLexicon::parse(&dup), Err(FeatureError::Lexicon { .. })));
    }

    #[test]
    fn user_mean() {
        let fv = |v: f64| FeatureVector { playlist_id: "p".into(), owner_id: "u".into(), values: vec![v, 1.0] };
        let mut u = UserRecord { user_id: "u".into(), attributes: Default::default(), playlists: vec![fv(0.2)] };
        assert_eq!(featurize_user(&u).unwrap(), vec![0.2, 1.0]);
        u.playlists.push(fv(0.6));
        let m = featurize_user(&u).unwrap();
        assert!((m[0] - 0.4).abs() < 1e-15);
        u.playlists.clear();
        assert!(featurize_user(&u).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact_and_sorted() {
        let schema = FeatureSchema::default();
        let a = FeatureVector { playlist_id: "p2".into(), owner_id: "u1".into(), values: vec![0.1; 111] };
        let b = FeatureVector {
            playlist_id: "p1".into(),
            owner_id: "u,1".into(),
            values: (0..111).map(|i| i as f64 / 7.0).collect(),
        };
        let mut buf = Vec::new();
        write_feature_csv(&schema, &[&b, &a], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().ends_with("playlist_id,owner_id"));
        assert!(text.contains("\"u,1\""));
        let (names, back) = read_feature_csv(&buf[..]).unwrap();
        assert_eq!(names, schema.names);
        assert_eq!(back, vec![b, a]);
    }
}
