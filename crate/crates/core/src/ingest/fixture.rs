use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use url::Url;

use super::http::{HttpRequest, HttpResponse, Method, Transport};
use super::IngestError;
use crate::domain::{Corpus, TrackRecord};

/// Every request a fixture transport has served, in arrival order.
#[derive(Debug, Default)]
pub struct RequestLog(Mutex<Vec<HttpRequest>>);

impl RequestLog {
    fn push(&self, r: &HttpRequest) {
        self.0.lock().unwrap().push(r.clone());
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.0.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Requests whose URL path starts with `prefix`.
    pub fn matching(&self, prefix: &str) -> Vec<HttpRequest> {
        self.requests()
            .into_iter()
            .filter(|r| Url::parse(&r.url).map(|u| u.path().starts_with(prefix)).unwrap_or(false))
            .collect()
    }
}

fn parse_url(raw: &str) -> Option<Url> {
    Url::parse(raw).or_else(|_| Url::parse(&format!("http://fixture{raw}"))).ok()
}

/// `(path, sorted decoded query)` so that encoding and parameter order do
/// not matter when matching.
fn route_key(method: Method, raw: &str) -> Option<(bool, String, Vec<(String, String)>)> {
    let u = parse_url(raw)?;
    let mut q: Vec<(String, String)> = u.query_pairs().map(|(k, v)| (k.into_owned(), v.into_owned())).collect();
    q.sort();
    Some((method == Method::Post, u.path().to_string(), q))
}

/// One recorded exchange. `url` may be absolute or a bare path with query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureExchange {
    #[serde(default = "default_method")]
    pub method: String,
    pub url: String,
    #[serde(default = "default_status")]
    pub status: u16,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default)]
    pub body: Value,
}

fn default_method() -> String {
    "GET".into()
}

fn default_status() -> u16 {
    200
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    pub exchanges: Vec<FixtureExchange>,
}

type RouteKey = (bool, String, Vec<(String, String)>);

/// Canned responses. Several exchanges on one route are served in order and
/// the last one repeats; unknown routes get a 404.
#[derive(Debug, Default)]
pub struct FixtureTransport {
    routes: HashMap<RouteKey, Vec<HttpResponse>>,
    served: Mutex<HashMap<RouteKey, usize>>,
    pub log: RequestLog,
}

impl FixtureTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_exchanges(exchanges: &[FixtureExchange]) -> Result<Self, IngestError> {
        let mut t = FixtureTransport::new();
        for x in exchanges {
            let method = match x.method.to_ascii_uppercase().as_str() {
                "GET" => Method::Get,
                "POST" => Method::Post,
                m => return Err(IngestError::Fixture(format!("unsupported method {m}"))),
            };
            let resp = HttpResponse {
                status: x.status,
                headers: x.headers.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                body: x.body.to_string(),
            };
            t = t.respond(method, &x.url, resp)?;
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
        let file: FixtureFile =
            serde_json::from_str(&text).map_err(|e| IngestError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_exchanges(&file.exchanges)
    }

    pub fn respond(mut self, method: Method, url: &str, response: HttpResponse) -> Result<Self, IngestError> {
        let key = route_key(method, url).ok_or_else(|| IngestError::Fixture(format!("bad fixture url {url:?}")))?;
        self.routes.entry(key).or_default().push(response);
        Ok(self)
    }

    pub fn on_get(self, url: &str, body: Value) -> Self {
        self.respond(Method::Get, url, HttpResponse::json(200, &body)).expect("fixture url")
    }
}

impl Transport for FixtureTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, IngestError> {
        self.log.push(request);
        let key = route_key(request.method, &request.url)
            .ok_or_else(|| IngestError::Transport(format!("bad url {:?}", request.url)))?;
        let Some(responses) = self.routes.get(&key) else {
            return Ok(HttpResponse::json(404, &json!({"error": {"status": 404, "message": "no fixture"}})));
        };
        let mut served = self.served.lock().unwrap();
        let n = served.entry(key).or_insert(0);
        let r = responses[(*n).min(responses.len() - 1)].clone();
        *n += 1;
        Ok(r)
    }
}

/// An in-process stand-in for the Web API that answers from a corpus, with
/// the real batch limits and offset pagination.
pub struct MockSpotify {
    corpus: Corpus,
    tracks: HashMap<String, TrackRecord>,
    page_size: usize,
    faults: Mutex<VecDeque<(String, HttpResponse)>>,
    pub log: RequestLog,
}

impl MockSpotify {
    pub fn new(corpus: Corpus) -> Self {
        let mut tracks = HashMap::new();
        for t in corpus.playlists().flat_map(|p| p.tracks.iter()) {
            tracks.entry(t.track_id.clone()).or_insert_with(|| t.clone());
        }
        MockSpotify { corpus, tracks, page_size: 50, faults: Mutex::new(VecDeque::new()), log: RequestLog::default() }
    }

    /// Caps every page at `n` items regardless of the requested limit.
    pub fn with_page_size(mut self, n: usize) -> Self {
        self.page_size = n.max(1);
        self
    }

    /// The next request whose path starts with `prefix` gets `response`.
    pub fn inject(&self, prefix: &str, response: HttpResponse) {
        self.faults.lock().unwrap().push_back((prefix.to_string(), response));
    }

    fn page(&self, url: &Url, items: Vec<Value>) -> Value {
        let q: HashMap<String, String> = url.query_pairs().map(|(k, v)| (k.into_owned(), v.into_owned())).collect();
        let offset: usize = q.get("offset").and_then(|s| s.parse().ok()).unwrap_or(0);
        let limit: usize = q.get("limit").and_then(|s| s.parse().ok()).unwrap_or(20).min(self.page_size);
        let total = items.len();
        let end = (offset + limit).min(total);
        let next = (end < total).then(|| {
            let mut n = url.clone();
            n.query_pairs_mut().clear().append_pair("offset", &end.to_string()).append_pair("limit", &limit.to_string());
            n.to_string()
        });
        let page: Vec<Value> = items.into_iter().skip(offset).take(limit).collect();
        json!({"items": page, "offset": offset, "limit": limit, "total": total, "next": next})
    }

    fn ids(url: &Url, limit: usize) -> Result<Vec<String>, HttpResponse> {
        let ids: Vec<String> = url
            .query_pairs()
            .find(|(k, _)| k == "ids")
            .map(|(_, v)| v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
            .unwrap_or_default();
        if ids.is_empty() || ids.len() > limit {
            return Err(HttpResponse::json(400, &json!({"error": {"status": 400, "message": "invalid ids"}})));
        }
        Ok(ids)
    }

    fn track_json(t: &TrackRecord) -> Value {
        json!({
            "id": t.track_id,
            "type": "track",
            "name": t.title,
            "popularity": t.popularity,
            "explicit": t.explicit,
            "duration_ms": t.duration_ms,
            "album": {"id": t.album_id, "release_date": format!("{:04}", t.release_year)},
            "artists": t.artist_ids.iter().map(|a| json!({"id": a})).collect::<Vec<_>>(),
        })
    }

    fn route(&self, url: &Url) -> HttpResponse {
        let not_found = || HttpResponse::json(404, &json!({"error": {"status": 404, "message": "Not found"}}));
        let segs: Vec<&str> = url.path_segments().map(|s| s.collect()).unwrap_or_default();
        let body = match segs.as_slice() {
            ["v1", "users", id, "playlists"] => {
                let Some(u) = self.corpus.users.iter().find(|u| u.user_id == *id) else { return not_found() };
                let items = u
                    .playlists
                    .iter()
                    .map(|p| {
                        json!({
                            "id": p.playlist_id,
                            "public": true,
                            "owner": {"id": u.user_id},
                            "followers": {"total": p.followers},
                            "tracks": {"total": p.tracks.len()},
                        })
                    })
                    .collect();
                self.page(url, items)
            }
            ["v1", "playlists", id, "tracks"] => {
                let Some(p) = self.corpus.playlists().find(|p| p.playlist_id == *id) else { return not_found() };
                let items = p
                    .tracks
                    .iter()
                    .map(|t| json!({"added_at": format!("{:04}-01-01T00:00:00Z", t.added_year), "track": {"id": t.track_id, "type": "track"}}))
                    .collect();
                self.page(url, items)
            }
            ["v1", "tracks"] => match Self::ids(url, 50) {
                Ok(ids) => json!({"tracks": ids.iter().map(|i| self.tracks.get(i).map(Self::track_json)).collect::<Vec<_>>()}),
                Err(r) => return r,
            },
            ["v1", "audio-features"] => match Self::ids(url, 100) {
                Ok(ids) => {
                    let rows: Vec<Value> = ids
                        .iter()
                        .map(|i| match self.tracks.get(i).and_then(|t| t.audio.as_ref()) {
                            Some(a) => {
                                let mut v = serde_json::to_value(a).unwrap();
                                v["id"] = json!(i);
                                v
                            }
                            None => Value::Null,
                        })
                        .collect();
                    json!({"audio_features": rows})
                }
                Err(r) => return r,
            },
            ["v1", "artists"] => match Self::ids(url, 50) {
                Ok(ids) => json!({"artists": ids.iter().map(|i| self.corpus.artists.get(i).map(|a| json!({
                    "id": a.artist_id,
                    "popularity": a.popularity,
                    "followers": {"total": a.followers},
                    "genres": a.genres,
                }))).collect::<Vec<_>>()}),
                Err(r) => return r,
            },
            _ => return not_found(),
        };
        HttpResponse::json(200, &body)
    }
}

impl Transport for MockSpotify {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, IngestError> {
        self.log.push(request);
        let url = Url::parse(&request.url).map_err(|e| IngestError::Transport(format!("{}: {e}", request.url)))?;
        {
            let mut faults = self.faults.lock().unwrap();
            if let Some(i) = faults.iter().position(|(p, _)| url.path().starts_with(p.as_str())) {
                return Ok(faults.remove(i).unwrap().1);
            }
        }
        if request.method == Method::Post {
            if url.path().ends_with("/api/token") {
                return Ok(HttpResponse::json(200, &json!({"access_token": "mock-token", "token_type": "Bearer", "expires_in": 3600})));
            }
            return Ok(HttpResponse::json(405, &json!({})));
        }
        if request.header("authorization").is_none() {
            return Ok(HttpResponse::json(401, &json!({"error": {"status": 401, "message": "No token provided"}})));
        }
        Ok(self.route(&url))
    }
}
