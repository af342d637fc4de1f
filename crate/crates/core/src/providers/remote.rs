//! JSON-over-HTTP client for externally hosted models.
//!
//! Every call is a POST of `{"kind": ..., "payload": ...}` to one endpoint.
//! Response bodies by kind:
//!
//! - `embed_text`: `{"vector": [f64]}`
//! - `embed_image`: `{"vector": [f64] | null}`
//! - `landmarks`: `{"landmarks": [[str]], "probabilities": [[f64]], "distance_range": [f64, f64]?}`
//! - `detect`: `{"detection": null | {"rect": {row0, row1, col0, col1}, "confidence": f64}}`

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::synthetic::build_landmark_set;
use super::{Detection, EmbeddingProvider, LandmarkProvider, TargetDetector};
use crate::belief::{DetectionRange, LandmarkSet};
use crate::error::{invalid_config, Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::observation::{ImageRegion, Observation, PixelRect, NO_LABEL};
use crate::semantic::FeatureVector;

pub const LANDMARK_PROMPT: &str = include_str!("../../assets/prompts/landmarks.txt");
pub const DETECTION_RANGE_PROMPT: &str = include_str!("../../assets/prompts/detection_range.txt");

/// Substitutes the target name into a prompt template.
pub fn render_prompt(template: &str, target: &str) -> String {
    template.replace("{target}", target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Expected embedding length; responses of another length are rejected.
    pub dim: usize,
    pub timeout_ms: u64,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/".into(),
            dim: 512,
            timeout_ms: 10_000,
            attempts: 3,
            backoff_ms: 200,
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Clone, Debug, Deserialize)]
struct VectorResponse {
    vector: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
struct LandmarkResponse {
    landmarks: Vec<Vec<String>>,
    probabilities: Vec<Vec<f64>>,
    #[serde(default)]
    distance_range: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Deserialize)]
struct RemoteDetection {
    rect: PixelRect,
    confidence: f64,
}

#[derive(Clone, Debug, Deserialize)]
struct DetectResponse {
    detection: Option<RemoteDetection>,
}

pub struct RemoteProvider {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    slots: Slots,
    landmark_cache: Mutex<BTreeMap<String, LandmarkResponse>>,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl RemoteProvider {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if cfg.attempts == 0 || cfg.max_in_flight == 0 || cfg.dim == 0 {
            return Err(invalid_config("remote provider needs attempts, max_in_flight and dim > 0"));
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        Ok(Self {
            slots: Slots {
                free: Mutex::new(cfg.max_in_flight),
                cv: Condvar::new(),
            },
            cfg,
            agent,
            landmark_cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// Sends one request, retrying transport failures and 5xx responses
    /// with exponential backoff.
    pub fn call<T: DeserializeOwned>(&self, kind: &str, payload: Value) -> Result<T> {
        let body = json!({ "kind": kind, "payload": payload });
        let _slot = self.slots.acquire();
        let mut last = String::new();
        for attempt in 0..self.cfg.attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1)));
            }
            match self.agent.post(&self.cfg.endpoint).send_json(&body) {
                Ok(resp) => {
                    let text = resp
                        .into_string()
                        .map_err(|e| Error::Protocol(format!("{kind}: unreadable body: {e}")))?;
                    return serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol(format!("{kind}: malformed response: {e}")));
                }
                Err(ureq::Error::Status(code, _)) if code >= 500 => {
                    last = format!("HTTP {code}");
                }
                Err(ureq::Error::Status(code, _)) => {
                    return Err(Error::ProviderUnavailable(format!("{kind}: HTTP {code}")));
                }
                Err(ureq::Error::Transport(t)) => {
                    last = t.to_string();
                }
            }
            warn!("{kind} request attempt {} failed: {last}", attempt + 1);
        }
        Err(Error::ProviderUnavailable(format!(
            "{kind}: {} attempts failed, last error: {last}",
            self.cfg.attempts
        )))
    }

    fn check_vector(&self, kind: &str, v: Vec<f64>) -> Result<FeatureVector> {
        if v.len() != self.cfg.dim {
            return Err(Error::Protocol(format!(
                "{kind}: vector has length {}, expected {}",
                v.len(),
                self.cfg.dim
            )));
        }
        let raw_norm = FeatureVector::new(v.clone()).norm();
        let fv = FeatureVector::normalized(v)
            .map_err(|_| Error::Protocol(format!("{kind}: zero or non-finite vector")))?;
        if (raw_norm - 1.0).abs() > 1e-6 {
            warn!("{kind}: response vector has norm {raw_norm}; normalized locally");
        }
        Ok(fv)
    }

    fn landmark_response(&self, target: &str) -> Result<LandmarkResponse> {
        if let Some(r) = self.cache().get(target) {
            return Ok(r.clone());
        }
        let resp: LandmarkResponse = self.call(
            "landmarks",
            json!({
                "target": target,
                "prompt": render_prompt(LANDMARK_PROMPT, target),
                "range_prompt": render_prompt(DETECTION_RANGE_PROMPT, target),
            }),
        )?;
        let entry = super::LandmarkTableEntry {
            landmarks: resp.landmarks.clone(),
            probabilities: resp.probabilities.clone(),
            distance_range: resp.distance_range,
        };
        entry.validate().map_err(|e| Error::Protocol(format!("landmarks: {e}")))?;
        self.cache().insert(target.to_owned(), resp.clone());
        Ok(resp)
    }

    fn cache(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, LandmarkResponse>> {
        self.landmark_cache.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn image_payload(obs: &Observation, rect: PixelRect) -> Value {
    let labels: Vec<Option<&str>> = rect
        .indices(obs.width)
        .map(|i| match obs.labels[i] {
            NO_LABEL => None,
            l => obs.label_name(l),
        })
        .collect();
    let depth: Vec<f64> = rect.indices(obs.width).map(|i| obs.depth[i]).collect();
    json!({
        "width": rect.col1 - rect.col0,
        "height": rect.row1 - rect.row0,
        "labels": labels,
        "depth": depth,
    })
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed_text(&self, text: &str) -> Result<FeatureVector> {
        let r: VectorResponse = self.call("embed_text", json!({ "text": text }))?;
        let v = r
            .vector
            .ok_or_else(|| Error::Protocol("embed_text: missing vector".into()))?;
        self.check_vector("embed_text", v)
    }

    fn embed_patch(&self, region: &ImageRegion<'_>) -> Result<Option<FeatureVector>> {
        let r: VectorResponse = self.call("embed_image", image_payload(region.obs, region.rect))?;
        r.vector.map(|v| self.check_vector("embed_image", v)).transpose()
    }
}

impl LandmarkProvider for RemoteProvider {
    fn landmarks(&self, target: &str) -> Result<LandmarkSet> {
        let r = self.landmark_response(target)?;
        build_landmark_set(target, &r.landmarks, &r.probabilities, |t| self.embed_text(t))
    }

    fn detection_range(&self, target: &str) -> Result<DetectionRange> {
        let r = self.landmark_response(target)?;
        let range = match r.distance_range {
            Some([d_min, d_max]) => DetectionRange {
                d_min,
                d_max,
                ..DetectionRange::default()
            },
            None => DetectionRange::default(),
        };
        range
            .validate()
            .map_err(|e| Error::Protocol(format!("landmarks: {e}")))?;
        Ok(range)
    }
}

impl TargetDetector for RemoteProvider {
    fn detect(
        &self,
        obs: &Observation,
        target: &str,
        _intrinsics: &CameraIntrinsics,
        _range: &DetectionRange,
    ) -> Result<Option<Detection>> {
        let mut payload = image_payload(obs, obs.full_rect());
        payload["target"] = json!(target);
        let r: DetectResponse = self.call("detect", payload)?;
        let Some(d) = r.detection else {
            return Ok(None);
        };
        let rect = d.rect;
        if rect.row0 >= rect.row1 || rect.col0 >= rect.col1 || rect.row1 > obs.height || rect.col1 > obs.width {
            return Err(Error::Protocol("detect: rect outside the image".into()));
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::Protocol("detect: confidence outside [0, 1]".into()));
        }
        let pixels = rect.indices(obs.width).filter(|&i| obs.depth[i] > 0.0).collect();
        Ok(Some(Detection {
            rect,
            confidence: d.confidence,
            pixels,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompts_render_target() {
        let p = render_prompt(LANDMARK_PROMPT, "couch");
        assert!(p.contains("a/an couch"));
        assert!(!p.contains("{target}"));
        assert!(render_prompt(DETECTION_RANGE_PROMPT, "bed").contains("[distance_min, distance_max]"));
    }

    #[test]
    fn config_rejects_zero_attempts() {
        let cfg = RemoteConfig {
            attempts: 0,
            ..RemoteConfig::default()
        };
        assert!(RemoteProvider::new(cfg).is_err());
    }
}
