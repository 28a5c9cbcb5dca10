use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use clouddet_core::ingest::{query, Dataset, Selector};
use clouddet_core::scoring::{score_series, Aggregator, DetectorConfig, SpikeMode, MIN_HISTORY};
use clouddet_core::{Granularity, MetricSeries, ScoreRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{ApiError, AppState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub history: usize,
    pub aggregator: Aggregator,
    pub spike_mode: SpikeMode,
    pub granularity: Granularity,
}

/// Wire form of [`DetectParams`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamsView {
    #[serde(rename = "L")]
    pub history: usize,
    pub aggregator: String,
    pub spike_mode: String,
    pub granularity: Granularity,
}

impl DetectParams {
    pub fn view(&self) -> ParamsView {
        ParamsView {
            history: self.history,
            aggregator: self.aggregator.to_string(),
            spike_mode: self.spike_mode.to_string(),
            granularity: self.granularity,
        }
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            history: self.history,
            aggregator: self.aggregator,
            spike_mode: self.spike_mode,
            ..DetectorConfig::default()
        }
    }
}

/// Snapshot of a job as reported to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionJob {
    pub job_id: String,
    pub dataset_id: String,
    pub params: ParamsView,
    pub status: JobStatus,
    pub progress: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Completed detection output; immutable once published.
#[derive(Debug)]
pub struct JobResult {
    pub job_id: String,
    pub dataset: Arc<Dataset>,
    pub params: DetectParams,
    /// Epoch seconds of grid index 0.
    pub origin: i64,
    /// Scored series at the job granularity.
    pub series: Vec<MetricSeries>,
    /// Records with `timestamp_index` on the grid starting at `origin`.
    pub records: Vec<ScoreRecord>,
}

impl JobResult {
    pub fn step(&self) -> i64 {
        self.params.granularity.step_seconds()
    }

    pub fn timestamp_of(&self, index: usize) -> i64 {
        self.origin + index as i64 * self.step()
    }

    /// Grid index range covering `[from, to)`, clamped at zero.
    pub fn index_range(&self, from: Option<i64>, to: Option<i64>) -> (usize, usize) {
        let to_index = |ts: i64| {
            let steps = (ts - self.origin + self.step() - 1).div_euclid(self.step());
            steps.max(0) as usize
        };
        (from.map_or(0, to_index), to.map_or(usize::MAX, to_index))
    }
}

#[derive(Debug)]
struct JobState {
    status: JobStatus,
    error: Option<String>,
    result: Option<Arc<JobResult>>,
}

#[derive(Debug)]
struct JobEntry {
    job_id: String,
    dataset_id: String,
    params: DetectParams,
    done: AtomicUsize,
    total: AtomicUsize,
    state: Mutex<JobState>,
}

impl JobEntry {
    fn snapshot(&self) -> DetectionJob {
        let state = self.state.lock().expect("job lock poisoned");
        let total = self.total.load(Ordering::Acquire);
        let progress = match state.status {
            JobStatus::Done => 1.0,
            _ if total == 0 => 0.0,
            _ => self.done.load(Ordering::Acquire) as f64 / total as f64,
        };
        DetectionJob {
            job_id: self.job_id.clone(),
            dataset_id: self.dataset_id.clone(),
            params: self.params.view(),
            status: state.status,
            progress,
            error: state.error.clone(),
        }
    }
}

#[derive(Debug, Default)]
struct JobTable {
    next_id: u64,
    by_key: HashMap<(String, ParamsView), String>,
    entries: HashMap<String, Arc<JobEntry>>,
    /// Job ids in completion order.
    completed: Vec<String>,
}

/// In-memory job registry.
#[derive(Debug, Default)]
pub struct Jobs {
    table: Mutex<JobTable>,
}

impl Jobs {
    /// Returns the job for `(dataset, params)`, creating it if needed. The
    /// flag tells whether it was created by this call.
    fn submit(&self, dataset_id: &str, params: DetectParams) -> (Arc<JobEntry>, bool) {
        let mut table = self.table.lock().expect("job table poisoned");
        let key = (dataset_id.to_string(), params.view());
        if let Some(id) = table.by_key.get(&key) {
            return (Arc::clone(&table.entries[id]), false);
        }
        table.next_id += 1;
        let job_id = format!("job-{}", table.next_id);
        let entry = Arc::new(JobEntry {
            job_id: job_id.clone(),
            dataset_id: dataset_id.to_string(),
            params,
            done: AtomicUsize::new(0),
            total: AtomicUsize::new(0),
            state: Mutex::new(JobState {
                status: JobStatus::Pending,
                error: None,
                result: None,
            }),
        });
        table.by_key.insert(key, job_id.clone());
        table.entries.insert(job_id, Arc::clone(&entry));
        (entry, true)
    }

    fn entry(&self, id: &str) -> Option<Arc<JobEntry>> {
        self.table.lock().expect("job table poisoned").entries.get(id).cloned()
    }

    pub fn status(&self, id: &str) -> Option<DetectionJob> {
        self.entry(id).map(|e| e.snapshot())
    }

    /// Result of job `id`, or of the most recently completed job.
    pub fn resolve(&self, id: Option<&str>) -> Result<Arc<JobResult>, ApiError> {
        let entry = match id {
            Some(id) => self
                .entry(id)
                .ok_or_else(|| ApiError::not_found(format!("unknown job `{id}`")))?,
            None => {
                let table = self.table.lock().expect("job table poisoned");
                let id = table
                    .completed
                    .last()
                    .ok_or_else(|| ApiError::conflict("no completed detection job"))?;
                Arc::clone(&table.entries[id])
            }
        };
        let state = entry.state.lock().expect("job lock poisoned");
        state
            .result
            .clone()
            .ok_or_else(|| ApiError::conflict(format!("job `{}` has not completed", entry.job_id)))
    }

    fn finish(&self, entry: &JobEntry, outcome: Result<JobResult, String>) {
        let done = outcome.is_ok();
        {
            let mut state = entry.state.lock().expect("job lock poisoned");
            match outcome {
                Ok(result) => {
                    state.result = Some(Arc::new(result));
                    state.status = JobStatus::Done;
                }
                Err(message) => {
                    state.error = Some(message);
                    state.status = JobStatus::Failed;
                }
            }
        }
        if done {
            self.table
                .lock()
                .expect("job table poisoned")
                .completed
                .push(entry.job_id.clone());
        }
    }
}

/// Scores every series of `dataset` at the job granularity.
fn run_detection(entry: &JobEntry, dataset: Arc<Dataset>) -> Result<JobResult, String> {
    let params = entry.params;
    let selector = Selector {
        granularity: Some(params.granularity),
        ..Selector::default()
    };
    let series = query(&dataset, &selector).map_err(|e| e.to_string())?;
    entry.total.store(series.len(), Ordering::Release);
    entry.state.lock().expect("job lock poisoned").status = JobStatus::Running;
    let step = params.granularity.step_seconds();
    let origin = series.iter().map(|s| s.start_timestamp).min().unwrap_or(0);
    let config = params.detector();
    let scored: Vec<Vec<ScoreRecord>> = series
        .par_iter()
        .map(|s| {
            let offset = ((s.start_timestamp - origin) / step) as usize;
            let mut records = score_series(s, &config).map_err(|e| format!("{}:{}: {e}", s.node, s.metric))?;
            for r in &mut records {
                r.timestamp_index += offset;
            }
            entry.done.fetch_add(1, Ordering::AcqRel);
            Ok(records)
        })
        .collect::<Result<_, String>>()?;
    Ok(JobResult {
        job_id: entry.job_id.clone(),
        dataset,
        params,
        origin,
        series,
        records: scored.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectRequest {
    dataset_id: String,
    #[serde(rename = "L", alias = "l", alias = "history")]
    history: Option<usize>,
    aggregator: Option<String>,
    spike_mode: Option<String>,
    granularity: Option<String>,
}

fn parse_params(req: &DetectRequest, native: Granularity) -> Result<DetectParams, ApiError> {
    let history = req.history.unwrap_or(DetectorConfig::default().history);
    if history < MIN_HISTORY {
        return Err(ApiError::bad_request(format!(
            "L must be at least {MIN_HISTORY}, got {history}"
        )));
    }
    let aggregator: Aggregator = match &req.aggregator {
        Some(s) => s.parse().map_err(|e: clouddet_core::Error| ApiError::bad_request(e.to_string()))?,
        None => Aggregator::default(),
    };
    let spike_mode: SpikeMode = match &req.spike_mode {
        Some(s) => s.parse().map_err(|e: clouddet_core::Error| ApiError::bad_request(e.to_string()))?,
        None => SpikeMode::default(),
    };
    let granularity: Granularity = match &req.granularity {
        Some(s) => s.parse().map_err(|e: clouddet_core::Error| ApiError::bad_request(e.to_string()))?,
        None => native,
    };
    if native.factor_to(granularity).is_none() {
        return Err(ApiError::bad_request(format!(
            "granularity {granularity} is finer than the dataset's native {native}"
        )));
    }
    Ok(DetectParams {
        history,
        aggregator,
        spike_mode,
        granularity,
    })
}

pub(crate) async fn detect(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<DetectionJob>), ApiError> {
    let req: DetectRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    let dataset = match state.store.get(&req.dataset_id) {
        Some(d) => d,
        None => state
            .store
            .load(&req.dataset_id)
            .map_err(|_| ApiError::not_found(format!("unknown dataset `{}`", req.dataset_id)))?,
    };
    let params = parse_params(&req, dataset.manifest.native_granularity)?;
    let (entry, created) = state.jobs.submit(&req.dataset_id, params);
    if !created {
        return Ok((StatusCode::OK, Json(entry.snapshot())));
    }
    let snapshot = entry.snapshot();
    let worker_state = Arc::clone(&state);
    tokio::task::spawn_blocking(move || {
        let outcome = run_detection(&entry, dataset);
        if let Err(e) = &outcome {
            tracing::warn!("job {} failed: {e}", entry.job_id);
        }
        worker_state.jobs.finish(&entry, outcome);
    });
    Ok((StatusCode::ACCEPTED, Json(snapshot)))
}

pub(crate) async fn job_status(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<DetectionJob>, ApiError> {
    state
        .jobs
        .status(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job `{id}`")))
}
