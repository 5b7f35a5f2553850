use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine as _;
use log::{debug, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use url::Url;

use super::cache::ResponseCache;
use super::http::{Clock, HttpRequest, Method, RateLimiter, SystemClock, Transport};
use super::IngestError;
use crate::domain::{parse_year, ArtistRecord, AudioFeatures};

pub const TRACK_BATCH: usize = 50;
pub const ARTIST_BATCH: usize = 50;
pub const AUDIO_BATCH: usize = 100;
const PLAYLIST_PAGE: usize = 50;
const TRACK_PAGE: usize = 100;
const REFRESH_MARGIN: Duration = Duration::from_secs(60);

pub const CLIENT_ID_VAR: &str = "SPOTIFY_CLIENT_ID";
pub const CLIENT_SECRET_VAR: &str = "SPOTIFY_CLIENT_SECRET";

#[derive(Clone)]
struct AccessToken {
    value: String,
    expires_at: Duration,
}

/// Client-credentials secrets plus the current bearer token.
pub struct ApiCredentials {
    client_id: String,
    client_secret: String,
    token: Mutex<Option<AccessToken>>,
}

impl fmt::Debug for ApiCredentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ApiCredentials")
            .field("client_id", &self.client_id)
            .field("client_secret", &"<redacted>")
            .field("token", &self.token.lock().map(|t| t.as_ref().map(|_| "<redacted>")).ok().flatten())
            .finish()
    }
}

impl ApiCredentials {
    pub fn new(client_id: impl Into<String>, client_secret: impl Into<String>) -> Self {
        ApiCredentials { client_id: client_id.into(), client_secret: client_secret.into(), token: Mutex::new(None) }
    }

    pub fn from_env() -> Result<Self, IngestError> {
        let get = |k: &'static str| std::env::var(k).ok().filter(|v| !v.is_empty()).ok_or(IngestError::MissingEnv(k));
        Ok(Self::new(get(CLIENT_ID_VAR)?, get(CLIENT_SECRET_VAR)?))
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    fn basic_auth(&self) -> String {
        let raw = format!("{}:{}", self.client_id, self.client_secret);
        format!("Basic {}", base64::engine::general_purpose::STANDARD.encode(raw))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientOptions {
    pub api_base: String,
    pub token_url: String,
    pub requests_per_second: f64,
    /// Attempts per request, including the first.
    pub max_attempts: u32,
    /// Used when a 429 carries no usable `Retry-After`.
    pub default_retry_after: Duration,
    /// A 429 asking for a longer wait than this fails instead.
    pub max_retry_after: Duration,
    /// Fetch disjoint id batches concurrently.
    pub parallel: bool,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            api_base: "https://api.spotify.com/v1".into(),
            token_url: "https://accounts.spotify.com/api/token".into(),
            requests_per_second: 10.0,
            max_attempts: 5,
            default_retry_after: Duration::from_secs(1),
            max_retry_after: Duration::from_secs(120),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub network_requests: usize,
    pub cache_hits: usize,
    pub retries: usize,
    pub token_refreshes: usize,
    pub private_playlists_skipped: usize,
    pub foreign_playlists_skipped: usize,
    /// Clock reading at each API request (token calls excluded).
    #[serde(skip)]
    pub request_times: Vec<Duration>,
}

/// A playlist listed on a user's profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaylistRef {
    pub playlist_id: String,
    pub followers: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaylistItem {
    pub track_id: String,
    pub added_year: Option<i32>,
}

/// Track metadata from the tracks endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackDetails {
    pub title: String,
    pub album_id: String,
    pub popularity: u32,
    pub explicit: bool,
    pub release_year: i32,
    pub duration_ms: u64,
    pub artist_ids: Vec<String>,
}

// Response shapes; unknown fields are ignored.

#[derive(Deserialize)]
struct Paging<T> {
    items: Vec<T>,
    next: Option<String>,
}

#[derive(Deserialize)]
struct IdOnly {
    id: Option<String>,
}

#[derive(Deserialize)]
struct Followers {
    total: Option<u64>,
}

#[derive(Deserialize)]
struct SimplePlaylist {
    id: String,
    public: Option<bool>,
    owner: Option<IdOnly>,
    followers: Option<Followers>,
}

#[derive(Deserialize)]
struct PlaylistTrackItem {
    added_at: Option<String>,
    #[serde(default)]
    is_local: bool,
    track: Option<ItemTrack>,
}

#[derive(Deserialize)]
struct ItemTrack {
    id: Option<String>,
    #[serde(rename = "type")]
    kind: Option<String>,
}

#[derive(Deserialize)]
struct Album {
    id: Option<String>,
    release_date: Option<String>,
}

#[derive(Deserialize)]
struct FullTrack {
    id: String,
    name: String,
    popularity: u32,
    explicit: bool,
    duration_ms: u64,
    album: Album,
    artists: Vec<IdOnly>,
}

#[derive(Deserialize)]
struct TracksResponse {
    tracks: Vec<Option<FullTrack>>,
}

#[derive(Deserialize)]
struct AudioRow {
    id: Option<String>,
    #[serde(flatten)]
    features: AudioFeaturesLoose,
}

#[derive(Deserialize)]
struct AudioFeaturesLoose {
    danceability: f64,
    energy: f64,
    loudness: f64,
    speechiness: f64,
    acousticness: f64,
    instrumentalness: f64,
    liveness: f64,
    valence: f64,
    tempo: f64,
}

#[derive(Deserialize)]
struct AudioResponse {
    audio_features: Vec<Option<AudioRow>>,
}

#[derive(Deserialize)]
struct FullArtist {
    id: String,
    popularity: u32,
    followers: Followers,
    #[serde(default)]
    genres: Vec<String>,
}

#[derive(Deserialize)]
struct ArtistsResponse {
    artists: Vec<Option<FullArtist>>,
}

#[derive(Deserialize)]
struct TokenResponse {
    access_token: String,
    expires_in: u64,
}

fn decode<T: DeserializeOwned>(url: &str, v: &Value) -> Result<T, IngestError> {
    serde_path_to_error::deserialize(v).map_err(|e| IngestError::Malformed {
        url: url.to_string(),
        pointer: super::json_pointer(e.path()),
        message: e.inner().to_string(),
    })
}

/// Web API client over any [`Transport`].
pub struct SpotifyClient {
    transport: Box<dyn Transport>,
    clock: Arc<dyn Clock>,
    credentials: Option<ApiCredentials>,
    cache: Option<ResponseCache>,
    limiter: RateLimiter,
    options: ClientOptions,
    stats: Mutex<ClientStats>,
}

impl SpotifyClient {
    pub fn new(transport: impl Transport + 'static) -> Self {
        let options = ClientOptions::default();
        SpotifyClient {
            transport: Box::new(transport),
            clock: Arc::new(SystemClock::default()),
            credentials: None,
            cache: None,
            limiter: RateLimiter::new(options.requests_per_second),
            options,
            stats: Mutex::new(ClientStats::default()),
        }
    }

    pub fn with_credentials(mut self, credentials: ApiCredentials) -> Self {
        self.credentials = Some(credentials);
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_options(mut self, options: ClientOptions) -> Self {
        self.limiter = RateLimiter::new(options.requests_per_second);
        self.options = options;
        self
    }

    pub fn credentials(&self) -> Option<&ApiCredentials> {
        self.credentials.as_ref()
    }

    pub fn stats(&self) -> ClientStats {
        self.stats.lock().unwrap().clone()
    }

    fn bump(&self, f: impl FnOnce(&mut ClientStats)) {
        f(&mut self.stats.lock().unwrap());
    }

    /// Current bearer token, fetching a new one when absent, near expiry, or
    /// when `force` is set.
    fn bearer(&self, force: bool) -> Result<Option<String>, IngestError> {
        let Some(creds) = &self.credentials else { return Ok(None) };
        let mut slot = creds.token.lock().unwrap();
        let now = self.clock.now();
        if let Some(t) = slot.as_ref() {
            if !force && now + REFRESH_MARGIN < t.expires_at {
                return Ok(Some(t.value.clone()));
            }
        }
        let req = HttpRequest {
            method: Method::Post,
            url: self.options.token_url.clone(),
            headers: vec![
                ("Authorization".into(), creds.basic_auth()),
                ("Content-Type".into(), "application/x-www-form-urlencoded".into()),
            ],
            body: Some("grant_type=client_credentials".into()),
        };
        self.bump(|s| {
            s.network_requests += 1;
            s.token_refreshes += 1;
        });
        let resp = self.transport.send(&req)?;
        if !(200..300).contains(&resp.status) {
            return Err(IngestError::Credentials(format!("token endpoint answered {}", resp.status)));
        }
        let v: Value = serde_json::from_str(&resp.body)
            .map_err(|e| IngestError::Credentials(format!("unreadable token response: {e}")))?;
        let tok: TokenResponse = decode(&self.options.token_url, &v)?;
        debug!("token refreshed, valid {}s", tok.expires_in);
        let value = tok.access_token;
        *slot = Some(AccessToken { value: value.clone(), expires_at: now + Duration::from_secs(tok.expires_in) });
        Ok(Some(value))
    }

    /// GET with rate limiting, 429/5xx retries and one token refresh on 401.
    fn get(&self, url: &str) -> Result<Value, IngestError> {
        let mut refreshed = false;
        let max = self.options.max_attempts.max(1);
        for attempt in 1..=max {
            let mut req = HttpRequest::get(url);
            if let Some(tok) = self.bearer(false)? {
                req.headers.push(("Authorization".into(), format!("Bearer {tok}")));
            }
            self.limiter.acquire(&*self.clock);
            let at = self.clock.now();
            self.bump(|s| {
                s.network_requests += 1;
                s.request_times.push(at);
            });
            let resp = self.transport.send(&req)?;
            match resp.status {
                200..=299 => {
                    return serde_json::from_str(&resp.body).map_err(|e| IngestError::Malformed {
                        url: url.to_string(),
                        pointer: String::new(),
                        message: e.to_string(),
                    })
                }
                429 => {
                    let wait = resp.retry_after().unwrap_or(self.options.default_retry_after);
                    if wait > self.options.max_retry_after || attempt == max {
                        return Err(IngestError::RateLimited { url: url.to_string(), attempts: attempt, retry_after: wait });
                    }
                    warn!("429 from {url}; waiting {}s", wait.as_secs_f64());
                    self.bump(|s| s.retries += 1);
                    self.limiter.hold_until(self.clock.now() + wait);
                }
                401 if !refreshed && self.credentials.is_some() => {
                    refreshed = true;
                    self.bearer(true)?;
                }
                401 | 403 => {
                    return Err(IngestError::Credentials(format!("{} from {url}", resp.status)));
                }
                404 => return Err(IngestError::NotFound(url.to_string())),
                500..=599 if attempt < max => {
                    let wait = Duration::from_secs(1u64 << (attempt - 1).min(6));
                    warn!("{} from {url}; retrying in {}s", resp.status, wait.as_secs());
                    self.bump(|s| s.retries += 1);
                    self.limiter.hold_until(self.clock.now() + wait);
                }
                status => return Err(IngestError::Http { status, url: url.to_string() }),
            }
        }
        Err(IngestError::Http { status: 0, url: url.to_string() })
    }

    /// Cached GET keyed on `(endpoint, ids)`.
    fn fetch(&self, endpoint: &str, ids: &[String], url: &str) -> Result<Value, IngestError> {
        if let Some(c) = &self.cache {
            if let Some(e) = c.get(endpoint, ids) {
                self.bump(|s| s.cache_hits += 1);
                return Ok(e.payload);
            }
        }
        let v = self.get(url)?;
        if let Some(c) = &self.cache {
            c.put(endpoint, ids, &v)?;
        }
        Ok(v)
    }

    fn url(&self, segments: &[&str], query: &[(&str, &str)]) -> Result<String, IngestError> {
        let mut u = Url::parse(&self.options.api_base)
            .map_err(|e| IngestError::Transport(format!("bad api base {:?}: {e}", self.options.api_base)))?;
        u.path_segments_mut()
            .map_err(|_| IngestError::Transport("api base cannot take a path".into()))?
            .pop_if_empty()
            .extend(segments);
        if !query.is_empty() {
            u.query_pairs_mut().extend_pairs(query);
        }
        Ok(u.to_string())
    }

    fn paged<T: DeserializeOwned>(&self, first: String) -> Result<Vec<T>, IngestError> {
        let mut out = Vec::new();
        let mut next = Some(first);
        let mut seen = BTreeSet::new();
        while let Some(url) = next.take() {
            if !seen.insert(url.clone()) {
                return Err(IngestError::Malformed { url, pointer: "/next".into(), message: "pagination loops".into() });
            }
            let v = self.fetch(&url, &[], &url)?;
            let page: Paging<T> = decode(&url, &v)?;
            out.extend(page.items);
            next = page.next;
        }
        Ok(out)
    }

    /// Public playlists owned by `user_id`, in API order.
    pub fn fetch_user_playlists(&self, user_id: &str) -> Result<Vec<PlaylistRef>, IngestError> {
        let limit = PLAYLIST_PAGE.to_string();
        let first = self.url(&["users", user_id, "playlists"], &[("limit", &limit), ("offset", "0")])?;
        let items: Vec<SimplePlaylist> = match self.paged(first) {
            Err(IngestError::NotFound(_)) => return Err(IngestError::UserNotFound(user_id.to_string())),
            r => r?,
        };
        let mut out = Vec::new();
        for p in items {
            if p.public != Some(true) {
                self.bump(|s| s.private_playlists_skipped += 1);
                continue;
            }
            if p.owner.as_ref().and_then(|o| o.id.as_deref()).is_some_and(|o| o != user_id) {
                self.bump(|s| s.foreign_playlists_skipped += 1);
                continue;
            }
            out.push(PlaylistRef { playlist_id: p.id, followers: p.followers.and_then(|f| f.total).unwrap_or(0) });
        }
        Ok(out)
    }

    /// Track items of a playlist. Local files, episodes and removed tracks are
    /// dropped.
    pub fn fetch_playlist_tracks(&self, playlist_id: &str) -> Result<Vec<PlaylistItem>, IngestError> {
        let limit = TRACK_PAGE.to_string();
        let first = self.url(&["playlists", playlist_id, "tracks"], &[("limit", &limit), ("offset", "0")])?;
        let items: Vec<PlaylistTrackItem> = self.paged(first)?;
        Ok(items
            .into_iter()
            .filter(|i| !i.is_local)
            .filter_map(|i| {
                let t = i.track?;
                if t.kind.as_deref().is_some_and(|k| k != "track") {
                    return None;
                }
                Some(PlaylistItem { track_id: t.id?, added_year: i.added_at.as_deref().and_then(parse_year) })
            })
            .collect())
    }

    /// Sorted, de-duplicated ids fetched in chunks of `limit`.
    fn batched<T: Send>(
        &self,
        endpoint: &str,
        ids: &[String],
        limit: usize,
        parse: impl Fn(&str, &[String], &Value) -> Result<Vec<(String, T)>, IngestError> + Sync,
    ) -> Result<BTreeMap<String, T>, IngestError> {
        let unique: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let chunks: Vec<&[String]> = unique.chunks(limit).collect();
        let one = |chunk: &&[String]| -> Result<Vec<(String, T)>, IngestError> {
            let joined = chunk.join(",");
            let url = self.url(&[endpoint], &[("ids", &joined)])?;
            let v = self.fetch(endpoint, chunk, &url)?;
            parse(&url, chunk, &v)
        };
        let parts: Vec<Result<Vec<(String, T)>, IngestError>> = if self.options.parallel {
            chunks.par_iter().map(one).collect()
        } else {
            chunks.iter().map(one).collect()
        };
        let mut out = BTreeMap::new();
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Tracks the API knows about; unavailable ids are absent from the map.
    pub fn fetch_track_details(&self, ids: &[String]) -> Result<BTreeMap<String, TrackDetails>, IngestError> {
        self.batched("tracks", ids, TRACK_BATCH, |url, _, v| {
            let r: TracksResponse = decode(url, v)?;
            Ok(r.tracks
                .into_iter()
                .flatten()
                .filter_map(|t| {
                    let year = t.album.release_date.as_deref().and_then(parse_year);
                    if year.is_none() {
                        warn!("track {} has no usable release date", t.id);
                    }
                    let details = TrackDetails {
                        title: t.name,
                        album_id: t.album.id.unwrap_or_default(),
                        popularity: t.popularity,
                        explicit: t.explicit,
                        release_year: year?,
                        duration_ms: t.duration_ms,
                        artist_ids: t.artists.into_iter().filter_map(|a| a.id).collect(),
                    };
                    Some((t.id, details))
                })
                .collect())
        })
    }

    /// One entry per requested id; `None` marks a track without audio
    /// features.
    pub fn fetch_audio_features(&self, ids: &[String]) -> Result<BTreeMap<String, Option<AudioFeatures>>, IngestError> {
        self.batched("audio-features", ids, AUDIO_BATCH, |url, chunk, v| {
            let r: AudioResponse = decode(url, v)?;
            let mut out: BTreeMap<String, Option<AudioFeatures>> = chunk.iter().map(|i| (i.clone(), None)).collect();
            for (pos, row) in r.audio_features.into_iter().enumerate() {
                let Some(row) = row else { continue };
                let id = row.id.or_else(|| chunk.get(pos).cloned());
                if let Some(id) = id.filter(|i| out.contains_key(i)) {
                    let f = row.features;
                    out.insert(
                        id,
                        Some(AudioFeatures::from_values([
                            f.danceability,
                            f.energy,
                            f.loudness,
                            f.speechiness,
                            f.acousticness,
                            f.instrumentalness,
                            f.liveness,
                            f.valence,
                            f.tempo,
                        ])),
                    );
                }
            }
            Ok(out.into_iter().collect())
        })
    }

    /// Artists the API knows about, genres lowercased.
    pub fn fetch_artists(&self, ids: &[String]) -> Result<BTreeMap<String, ArtistRecord>, IngestError> {
        self.batched("artists", ids, ARTIST_BATCH, |url, _, v| {
            let r: ArtistsResponse = decode(url, v)?;
            Ok(r.artists
                .into_iter()
                .flatten()
                .map(|a| {
                    let rec = ArtistRecord {
                        artist_id: a.id.clone(),
                        popularity: a.popularity,
                        followers: a.followers.total.unwrap_or(0),
                        genres: a.genres.into_iter().map(|g| g.to_lowercase()).collect(),
                    };
                    (a.id, rec)
                })
                .collect())
        })
    }
}
