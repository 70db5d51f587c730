//! HTTP service for the listening study.
//!
//! `GET /session`, `GET /audio/:id/:role`, `POST /rating` and
//! `GET /summary`. Ratings go through one mutex, which serializes appends to
//! the JSON-lines log and gives readers a consistent prefix.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tdexplain::study::{append_rating, load_ratings, mos_summary, CiMethod, MosSummary, ROLES};
use tdexplain::{RatingRecord, StudyManifest};
use tokio::sync::Mutex;

pub struct StudyState {
    manifest: StudyManifest,
    dir: PathBuf,
    ratings_path: PathBuf,
    ci: CiMethod,
    ratings: Mutex<Vec<RatingRecord>>,
}

impl StudyState {
    /// `dir` holds the manifest and audio; the log is created on first
    /// rating and previous entries are loaded.
    pub fn open(dir: PathBuf, ratings_path: PathBuf, ci: CiMethod) -> tdexplain::Result<Self> {
        let manifest = StudyManifest::load(&tdexplain::study::manifest_path(&dir))?;
        manifest.check_files(&dir)?;
        let ratings = load_ratings(&ratings_path)?;
        Ok(Self {
            manifest,
            dir,
            ratings_path,
            ci,
            ratings: Mutex::new(ratings),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionStimulus {
    pub stimulus_id: String,
    pub method_label: String,
    pub predicted_label: String,
    /// Role name to audio URL.
    pub audio: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Session {
    pub rater_id: String,
    pub stimuli: Vec<SessionStimulus>,
}

#[derive(Debug, Deserialize)]
pub struct SessionQuery {
    pub rater_id: Option<String>,
}

/// Body of `POST /rating`. The score is read as a wide integer so that
/// out-of-range values reach validation instead of failing to parse.
#[derive(Debug, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub rater_id: String,
    pub stimulus_id: String,
    pub score: i64,
    pub method_label: Option<String>,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
}

fn reject(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ApiError { error: msg.into() })).into_response()
}

/// Stimulus order for a rater, seeded by the rater id.
pub fn shuffled_order(manifest: &StudyManifest, rater_id: &str) -> Vec<usize> {
    let digest = Sha256::digest(rater_id.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut order: Vec<usize> = (0..manifest.stimuli.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

async fn session(State(st): State<Arc<StudyState>>, Query(q): Query<SessionQuery>) -> Json<Session> {
    let rater_id = q.rater_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let stimuli = shuffled_order(&st.manifest, &rater_id)
        .into_iter()
        .map(|k| {
            let s = &st.manifest.stimuli[k];
            SessionStimulus {
                stimulus_id: s.stimulus_id.clone(),
                method_label: s.method_label.clone(),
                predicted_label: s.predicted_label.clone(),
                audio: ROLES
                    .iter()
                    .map(|r| (r.to_string(), format!("/audio/{}/{r}", s.stimulus_id)))
                    .collect(),
            }
        })
        .collect();
    Json(Session { rater_id, stimuli })
}

async fn audio(State(st): State<Arc<StudyState>>, Path((id, role)): Path<(String, String)>) -> Response {
    let Some(stim) = st.manifest.stimulus(&id) else {
        return reject(StatusCode::NOT_FOUND, format!("unknown stimulus {id}"));
    };
    let Some(rel) = stim.files.by_role(&role) else {
        return reject(StatusCode::NOT_FOUND, format!("unknown role {role}"));
    };
    match tokio::fs::read(st.dir.join(rel)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response(),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, format!("{rel}: {e}")),
    }
}

async fn rating(State(st): State<Arc<StudyState>>, Json(sub): Json<RatingSubmission>) -> Response {
    let Ok(score) = u8::try_from(sub.score) else {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, format!("score {} outside [1, 100]", sub.score));
    };
    let Some(stim) = st.manifest.stimulus(&sub.stimulus_id) else {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown stimulus {}", sub.stimulus_id));
    };
    if sub.rater_id.trim().is_empty() {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, "empty rater_id");
    }
    if let Some(label) = &sub.method_label {
        if *label != stim.method_label {
            return reject(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("stimulus {} belongs to method {}", stim.stimulus_id, stim.method_label),
            );
        }
    }
    let record = RatingRecord {
        rater_id: sub.rater_id,
        stimulus_id: stim.stimulus_id.clone(),
        method_label: stim.method_label.clone(),
        score,
        timestamp: sub
            .timestamp
            .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())),
    };
    if let Err(e) = record.validate(&st.manifest) {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
    }
    let mut log = st.ratings.lock().await;
    if let Err(e) = append_rating(&st.ratings_path, &record) {
        return reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    log.push(record.clone());
    (StatusCode::CREATED, Json(record)).into_response()
}

async fn summary(State(st): State<Arc<StudyState>>) -> Response {
    let log = st.ratings.lock().await;
    if log.is_empty() {
        return Json(MosSummary::default()).into_response();
    }
    match mos_summary(&log, st.ci) {
        Ok(s) => Json(s).into_response(),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: Arc<StudyState>) -> Router {
    Router::new()
        .route("/session", get(session))
        .route("/audio/:id/:role", get(audio))
        .route("/rating", post(rating))
        .route("/summary", get(summary))
        .with_state(state)
}

/// Serve until the listener fails or ctrl-c arrives.
pub async fn serve(state: Arc<StudyState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
