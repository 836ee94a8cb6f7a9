//! Client for a grounding service speaking the JSON wire protocol over HTTP.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use super::{
    scene_from_boxes, Arity, Grounder, GroundingError, GroundingRequest, GroundingResponse,
    RequestKind, Scene, WireResponse,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full URL requests are POSTed to.
    pub endpoint: String,
    pub image_ref: Option<String>,
    /// Per-attempt timeout.
    pub timeout: Duration,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            image_ref: None,
            timeout: Duration::from_secs(30),
            retries: 2,
            max_in_flight: 4,
        }
    }
}

type Slot = Arc<OnceLock<Result<GroundingResponse, GroundingError>>>;

struct Shared {
    config: RemoteConfig,
    agent: ureq::Agent,
    cache: Mutex<HashMap<String, Slot>>,
    network_calls: AtomicUsize,
    in_flight: Mutex<usize>,
    slot_free: Condvar,
}

/// Remote grounder. Identical requests are answered from a cache; when
/// several threads ask the same uncached question at once, exactly one of
/// them goes to the network. Failed requests are not cached.
///
/// Clones share the cache and connection limits.
#[derive(Clone)]
pub struct RemoteGrounder {
    shared: Arc<Shared>,
    object_count: usize,
    image_ref: Option<String>,
}

impl std::fmt::Debug for RemoteGrounder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteGrounder")
            .field("endpoint", &self.shared.config.endpoint)
            .field("object_count", &self.object_count)
            .field("image_ref", &self.image_ref)
            .finish()
    }
}

enum Attempt {
    Retry(GroundingError),
    Fatal(GroundingError),
}

impl RemoteGrounder {
    pub fn new(config: RemoteConfig, object_count: usize) -> Self {
        let image_ref = config.image_ref.clone();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        RemoteGrounder {
            shared: Arc::new(Shared {
                config,
                agent,
                cache: Mutex::new(HashMap::new()),
                network_calls: AtomicUsize::new(0),
                in_flight: Mutex::new(0),
                slot_free: Condvar::new(),
            }),
            object_count,
            image_ref,
        }
    }

    /// The same client (and cache) over a different object count.
    pub fn with_object_count(&self, object_count: usize) -> Self {
        RemoteGrounder {
            shared: Arc::clone(&self.shared),
            object_count,
            image_ref: self.image_ref.clone(),
        }
    }

    /// The same client (and cache) about another image.
    pub fn for_image(&self, image_ref: Option<String>, object_count: usize) -> Self {
        RemoteGrounder {
            shared: Arc::clone(&self.shared),
            object_count,
            image_ref,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.shared.config
    }

    /// Number of HTTP attempts made so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.shared.network_calls.load(Ordering::SeqCst)
    }

    /// Runs object detection for `names`; the boxes become a fresh scene
    /// whose length is N for subsequent calls.
    pub fn propose(&self, names: &[String]) -> Result<Scene, GroundingError> {
        if names.is_empty() {
            return Err(GroundingError::InvalidRequest(
                "object proposal needs at least one name".into(),
            ));
        }
        match self.ground(&GroundingRequest::detect(names.to_vec()))? {
            GroundingResponse::Boxes(boxes) => {
                let scene = scene_from_boxes(&boxes, self.image_ref.clone());
                scene
                    .validate()
                    .map_err(|e| GroundingError::Malformed(e.to_string()))?;
                Ok(scene)
            }
            _ => Err(GroundingError::Malformed(
                "detect response carries no boxes".into(),
            )),
        }
    }

    fn acquire(&self) {
        let mut n = self.shared.in_flight.lock().unwrap();
        while *n >= self.shared.config.max_in_flight.max(1) {
            n = self.shared.slot_free.wait(n).unwrap();
        }
        *n += 1;
    }

    fn release(&self) {
        *self.shared.in_flight.lock().unwrap() -= 1;
        self.shared.slot_free.notify_one();
    }

    fn attempt(&self, request: &GroundingRequest) -> Result<WireResponse, Attempt> {
        self.shared.network_calls.fetch_add(1, Ordering::SeqCst);
        let mut response = match self
            .shared
            .agent
            .post(self.shared.config.endpoint.as_str())
            .send_json(request)
        {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(Attempt::Retry(GroundingError::Timeout { attempts: 1 }))
            }
            Err(ureq::Error::Io(e))
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
                ) =>
            {
                return Err(Attempt::Retry(GroundingError::Timeout { attempts: 1 }))
            }
            Err(
                e @ (ureq::Error::BadUri(_)
                | ureq::Error::Http(_)
                | ureq::Error::Json(_)
                | ureq::Error::RequireHttpsOnly(_)),
            ) => {
                return Err(Attempt::Fatal(GroundingError::InvalidRequest(
                    e.to_string(),
                )))
            }
            Err(e) => return Err(Attempt::Retry(GroundingError::Transport(e.to_string()))),
        };
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => Attempt::Retry(GroundingError::Timeout { attempts: 1 }),
            other => Attempt::Retry(GroundingError::Transport(other.to_string())),
        })?;
        if status >= 500 {
            return Err(Attempt::Retry(GroundingError::Transport(format!(
                "HTTP {status}: {}",
                body.trim()
            ))));
        }
        let wire: Result<WireResponse, _> = serde_json::from_str(&body);
        match (status, wire) {
            (200..=299, Ok(w)) => Ok(w),
            (_, Ok(w)) if w.error.is_some() => Ok(w),
            (200..=299, Err(e)) => Err(Attempt::Fatal(GroundingError::Malformed(e.to_string()))),
            (_, _) => Err(Attempt::Fatal(GroundingError::Remote(format!(
                "HTTP {status}: {}",
                body.trim()
            )))),
        }
    }

    fn fetch(&self, request: &GroundingRequest) -> Result<GroundingResponse, GroundingError> {
        let attempts = self.shared.config.retries + 1;
        let mut last = None;
        for _ in 0..attempts {
            self.acquire();
            let outcome = self.attempt(request);
            self.release();
            match outcome {
                Ok(wire) => return self.interpret(request, &wire),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => last = Some(e),
            }
        }
        Err(match last {
            Some(GroundingError::Timeout { .. }) => GroundingError::Timeout { attempts },
            Some(e) => e,
            None => GroundingError::Transport("no attempt was made".into()),
        })
    }

    /// Decodes and, for score requests, normalizes to validated
    /// probabilities. The diagonal of a pair matrix is never asked about
    /// and is forced to 0.
    fn interpret(
        &self,
        request: &GroundingRequest,
        wire: &WireResponse,
    ) -> Result<GroundingResponse, GroundingError> {
        let n = self.object_count;
        let response = wire.decode(request, n)?;
        if request.kind != RequestKind::Score {
            return Ok(response);
        }
        let arity = request.arity()?;
        let mut scores = response.into_scores(arity, n)?;
        if arity == Arity::Pair {
            for i in 0..n {
                scores[i * n + i] = 0.0;
            }
        }
        Ok(GroundingResponse::Scores(scores))
    }
}

impl Grounder for RemoteGrounder {
    fn object_count(&self) -> usize {
        self.object_count
    }

    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, GroundingError> {
        let mut request = request.clone();
        if request.image_ref.is_none() {
            request.image_ref = self.image_ref.clone();
        }
        let key = format!(
            "{}\n{}",
            self.object_count,
            serde_json::to_string(&request)
                .map_err(|e| GroundingError::InvalidRequest(e.to_string()))?
        );
        let slot = Arc::clone(
            self.shared
                .cache
                .lock()
                .unwrap()
                .entry(key.clone())
                .or_default(),
        );
        let result = slot.get_or_init(|| self.fetch(&request)).clone();
        if result.is_err() {
            let mut cache = self.shared.cache.lock().unwrap();
            if cache.get(&key).is_some_and(|s| Arc::ptr_eq(s, &slot)) {
                cache.remove(&key);
            }
        }
        result
    }
}
