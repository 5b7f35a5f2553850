//! Corpus acquisition from the Web API or local fixtures, and the corpus file
//! format.

mod cache;
mod client;
mod fixture;
mod http;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use client::{
    ApiCredentials, ClientOptions, ClientStats, PlaylistItem, PlaylistRef, SpotifyClient, TrackDetails, ARTIST_BATCH,
    AUDIO_BATCH, CLIENT_ID_VAR, CLIENT_SECRET_VAR, TRACK_BATCH,
};
pub use fixture::{FixtureExchange, FixtureFile, FixtureTransport, MockSpotify, RequestLog};
#[cfg(feature = "live")]
pub use http::UreqTransport;
pub use http::{Clock, HttpRequest, HttpResponse, ManualClock, Method, RateLimiter, SystemClock, Transport};

use crate::domain::{
    ArtistRecord, ArtistTable, Corpus, CorpusError, CorpusUser, PlaylistRecord, Provenance, TrackRecord,
};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("user {0:?} not found")]
    UserNotFound(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("credentials rejected: {0}")]
    Credentials(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("rate limited on {url} after {attempts} attempt(s); server asked for {}s", retry_after.as_secs_f64())]
    RateLimited { url: String, attempts: u32, retry_after: Duration },
    #[error("HTTP {status} from {url}")]
    Http { status: u16, url: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response from {url} at {pointer:?}: {message}")]
    Malformed { url: String, pointer: String, message: String },
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("{path}: schema violation at {pointer:?}: {message}")]
    Schema { path: String, pointer: String, message: String },
    #[error("{path}: unsupported schema_version {found}, expected {expected}")]
    Version { path: String, found: u32, expected: u32 },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io: {0}")]
    Io(String),
}

/// RFC 6901 pointer for a deserialization path.
pub(crate) fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push_str(&key.replace('~', "~0").replace('/', "~1"))
            }
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusFile {
    schema_version: u32,
    provenance: Provenance,
    artists: ArtistTable,
    users: Vec<CorpusUser>,
}

#[derive(Serialize)]
struct CorpusFileRef<'a> {
    schema_version: u32,
    provenance: Provenance,
    artists: &'a ArtistTable,
    users: &'a [CorpusUser],
}

pub fn corpus_to_json(corpus: &Corpus) -> String {
    let file = CorpusFileRef {
        schema_version: CORPUS_SCHEMA_VERSION,
        provenance: corpus.provenance,
        artists: &corpus.artists,
        users: &corpus.users,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("corpus serializes");
    s.push('\n');
    s
}

/// Parses and validates a corpus document. `origin` names it in errors.
pub fn corpus_from_json(text: &str, origin: &str) -> Result<Corpus, IngestError> {
    let schema = |pointer: String, message: String| IngestError::Schema { path: origin.to_string(), pointer, message };
    let mut de = serde_json::Deserializer::from_str(text);
    let file: CorpusFile = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| schema(json_pointer(e.path()), e.inner().to_string()))?;
    de.end().map_err(|e| schema(String::new(), e.to_string()))?;
    if file.schema_version != CORPUS_SCHEMA_VERSION {
        return Err(IngestError::Version {
            path: origin.to_string(),
            found: file.schema_version,
            expected: CORPUS_SCHEMA_VERSION,
        });
    }
    Corpus::new(file.provenance, file.artists, file.users).map_err(|e| match e {
        CorpusError::Invalid(v) => schema(v.pointer, v.message),
        CorpusError::Empty => schema("/users".into(), "corpus has no users".into()),
    })
}

pub fn load_corpus(path: &Path) -> Result<Corpus, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    corpus_from_json(&text, &path.display().to_string())
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), IngestError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IngestError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, corpus_to_json(corpus)).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))
}

/// A surveyed user to collect: the account id plus self-reported labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyUser {
    pub user_id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

pub fn load_survey(path: &Path) -> Result<Vec<SurveyUser>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| IngestError::Schema {
        path: path.display().to_string(),
        pointer: json_pointer(e.path()),
        message: e.inner().to_string(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub users_requested: usize,
    pub users_ingested: usize,
    pub users_not_found: Vec<String>,
    pub users_without_public_playlists: Vec<String>,
    pub playlists: usize,
    pub playlists_not_found: usize,
    pub tracks: usize,
    pub tracks_unavailable: usize,
    pub tracks_missing_audio: usize,
    pub client: ClientStats,
}

/// Collects public playlists, track details, audio features and artists for
/// every surveyed user. Missing users and unavailable tracks are reported,
/// not fatal.
pub fn ingest_corpus(
    client: &SpotifyClient,
    users: &[SurveyUser],
    provenance: Provenance,
) -> Result<(Corpus, IngestReport), IngestError> {
    let mut report = IngestReport { users_requested: users.len(), ..Default::default() };
    let mut listed: Vec<(&SurveyUser, Vec<(PlaylistRef, Vec<PlaylistItem>)>)> = Vec::new();
    let mut seen_users = BTreeSet::new();
    for u in users {
        if !seen_users.insert(u.user_id.as_str()) {
            warn!("user {:?} listed twice; keeping the first", u.user_id);
            continue;
        }
        let playlists = match client.fetch_user_playlists(&u.user_id) {
            Err(IngestError::UserNotFound(id)) => {
                warn!("user {id:?} not found");
                report.users_not_found.push(id);
                continue;
            }
            r => r?,
        };
        let mut with_items = Vec::with_capacity(playlists.len());
        for p in playlists {
            match client.fetch_playlist_tracks(&p.playlist_id) {
                Ok(items) => with_items.push((p, items)),
                Err(IngestError::NotFound(_)) => report.playlists_not_found += 1,
                Err(e) => return Err(e),
            }
        }
        if with_items.is_empty() {
            report.users_without_public_playlists.push(u.user_id.clone());
            continue;
        }
        listed.push((u, with_items));
    }

    let track_ids: Vec<String> = listed
        .iter()
        .flat_map(|(_, ps)| ps.iter().flat_map(|(_, items)| items.iter().map(|i| i.track_id.clone())))
        .collect();
    let details = client.fetch_track_details(&track_ids)?;
    let known: Vec<String> = details.keys().cloned().collect();
    let audio = client.fetch_audio_features(&known)?;
    let artist_ids: Vec<String> = details.values().flat_map(|d| d.artist_ids.iter().cloned()).collect();
    let artists: BTreeMap<String, ArtistRecord> = client.fetch_artists(&artist_ids)?;

    let mut out_users = Vec::with_capacity(listed.len());
    for (u, playlists) in listed {
        let mut records = Vec::with_capacity(playlists.len());
        for (p, items) in playlists {
            let mut tracks = Vec::with_capacity(items.len());
            for item in items {
                let Some(d) = details.get(&item.track_id) else {
                    report.tracks_unavailable += 1;
                    continue;
                };
                let artist_ids: Vec<String> =
                    d.artist_ids.iter().filter(|a| artists.contains_key(*a)).cloned().collect();
                if artist_ids.is_empty() || d.duration_ms == 0 {
                    report.tracks_unavailable += 1;
                    continue;
                }
                let audio = audio.get(&item.track_id).cloned().flatten();
                if audio.is_none() {
                    report.tracks_missing_audio += 1;
                }
                tracks.push(TrackRecord {
                    track_id: item.track_id,
                    title: d.title.clone(),
                    album_id: d.album_id.clone(),
                    popularity: d.popularity.min(100),
                    explicit: d.explicit,
                    release_year: d.release_year,
                    duration_ms: d.duration_ms,
                    audio,
                    artist_ids,
                    added_year: item.added_year.unwrap_or(d.release_year),
                });
            }
            report.tracks += tracks.len();
            records.push(PlaylistRecord {
                playlist_id: p.playlist_id,
                owner_id: u.user_id.clone(),
                followers: p.followers,
                tracks,
            });
        }
        report.playlists += records.len();
        out_users.push(CorpusUser { user_id: u.user_id.clone(), attributes: u.attributes.clone(), playlists: records });
    }
    report.users_ingested = out_users.len();
    let table: ArtistTable = artists.into_values().map(|mut a| {
        a.popularity = a.popularity.min(100);
        a
    }).collect();
    let corpus = Corpus::new(provenance, table, out_users)?;
    report.client = client.stats();
    info!(
        "ingested {} users, {} playlists, {} tracks ({} network requests, {} cache hits)",
        report.users_ingested, report.playlists, report.tracks, report.client.network_requests, report.client.cache_hits
    );
    Ok((corpus, report))
}
