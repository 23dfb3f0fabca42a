use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::Value;

use super::cache::{CacheValue, DiskCache};
use super::descriptors::{dedup_synonyms, TextDescriptors};
use super::ratelimit::{Clock, RateLimiter, RetryPolicy, SystemClock, DEFAULT_RATE};
use super::transport::{HttpRequest, HttpResponse, Transport};
use super::PubChemError;

pub const PUG_REST_BASE: &str = "https://pubchem.ncbi.nlm.nih.gov/rest/pug";

/// Properties requested from the property-table endpoint.
pub const PROPERTY_LIST: &str =
    "IUPACName,MolecularFormula,MolecularWeight,XLogP,HBondDonorCount,HBondAcceptorCount,RotatableBondCount,TPSA,Charge";

/// Outcome of structure resolution. A miss is a value, not an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    Found(u64),
    NotFound,
}

/// PUG REST client with a disk cache, a request-rate ceiling and bounded
/// retries.
pub struct PubChemClient {
    transport: Box<dyn Transport>,
    cache: DiskCache,
    limiter: RateLimiter,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    base_url: String,
    calls: AtomicUsize,
}

pub struct ClientBuilder {
    transport: Box<dyn Transport>,
    cache: DiskCache,
    rate: u32,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    base_url: String,
}

impl ClientBuilder {
    pub fn rate(mut self, per_second: u32) -> Self {
        self.rate = per_second;
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into().trim_end_matches('/').to_string();
        self
    }

    pub fn build(self) -> PubChemClient {
        PubChemClient {
            limiter: RateLimiter::new(self.rate, self.clock.clone()),
            transport: self.transport,
            cache: self.cache,
            retry: self.retry,
            clock: self.clock,
            base_url: self.base_url,
            calls: AtomicUsize::new(0),
        }
    }
}

fn resolve_key(structure: &str) -> Result<(String, &'static str), PubChemError> {
    let s = structure.trim();
    if s.is_empty() {
        return Err(PubChemError::Precondition("empty structure key".into()));
    }
    if s.starts_with("InChI=") {
        Ok((format!("inchi:{s}"), "inchi"))
    } else {
        Ok((format!("smiles:{s}"), "smiles"))
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_count(v: &Value) -> Option<u32> {
    as_f64(v).filter(|x| *x >= 0.0 && x.fract() == 0.0).map(|x| x as u32)
}

/// Parses a property-table response into descriptors (synonyms empty).
pub(crate) fn parse_properties(cid: u64, body: &str, source_url: &str) -> Result<TextDescriptors, PubChemError> {
    let v: Value = serde_json::from_str(body).map_err(|e| PubChemError::Decode(e.to_string()))?;
    let props = v
        .pointer("/PropertyTable/Properties/0")
        .ok_or_else(|| PubChemError::Decode("missing PropertyTable.Properties".into()))?;
    let missing = |field: &str| PubChemError::Incomplete {
        cid,
        reason: format!("missing or invalid {field}"),
    };
    let text = |field: &str| {
        props
            .get(field)
            .and_then(Value::as_str)
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string)
            .ok_or_else(|| missing(field))
    };
    let d = TextDescriptors {
        cid,
        iupac_name: text("IUPACName")?,
        molecular_formula: text("MolecularFormula")?,
        molecular_weight: props.get("MolecularWeight").and_then(as_f64).ok_or_else(|| missing("MolecularWeight"))?,
        xlogp: props.get("XLogP").and_then(as_f64),
        hbond_donors: props.get("HBondDonorCount").and_then(as_count).ok_or_else(|| missing("HBondDonorCount"))?,
        hbond_acceptors: props
            .get("HBondAcceptorCount")
            .and_then(as_count)
            .ok_or_else(|| missing("HBondAcceptorCount"))?,
        rotatable_bonds: props
            .get("RotatableBondCount")
            .and_then(as_count)
            .ok_or_else(|| missing("RotatableBondCount"))?,
        tpsa: props.get("TPSA").and_then(as_f64).ok_or_else(|| missing("TPSA"))?,
        formal_charge: props
            .get("Charge")
            .and_then(as_f64)
            .filter(|c| c.fract() == 0.0)
            .map(|c| c as i32)
            .ok_or_else(|| missing("Charge"))?,
        synonyms: Vec::new(),
        fetched_at: String::new(),
        source_url: source_url.to_string(),
    };
    d.validate()?;
    Ok(d)
}

pub(crate) fn parse_synonyms(body: &str) -> Result<Vec<String>, PubChemError> {
    let v: Value = serde_json::from_str(body).map_err(|e| PubChemError::Decode(e.to_string()))?;
    let list = v
        .pointer("/InformationList/Information/0/Synonym")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect::<Vec<_>>())
        .unwrap_or_default();
    Ok(dedup_synonyms(list))
}

impl PubChemClient {
    pub fn builder(transport: Box<dyn Transport>, cache: DiskCache) -> ClientBuilder {
        ClientBuilder {
            transport,
            cache,
            rate: DEFAULT_RATE,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::default()),
            base_url: PUG_REST_BASE.to_string(),
        }
    }

    /// Number of HTTP requests issued so far (cache hits issue none).
    pub fn network_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &DiskCache {
        &self.cache
    }

    fn request(&self, req: &HttpRequest) -> Result<HttpResponse, PubChemError> {
        let mut throttled = false;
        let mut last_error = String::new();
        for attempt in 1..=self.retry.max_attempts {
            self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.send(req) {
                Ok(resp) if resp.status == 429 || resp.status == 503 => {
                    throttled = true;
                    last_error = format!("HTTP {}", resp.status);
                }
                Ok(resp) if resp.status >= 500 => {
                    throttled = false;
                    last_error = format!("HTTP {}", resp.status);
                }
                Ok(resp) => return Ok(resp),
                Err(e) => {
                    throttled = false;
                    last_error = e.0;
                }
            }
            if attempt < self.retry.max_attempts {
                log::debug!("retrying {} after {last_error}", req.url);
                self.clock.sleep(self.retry.backoff(attempt));
            }
        }
        let attempts = self.retry.max_attempts;
        if throttled {
            Err(PubChemError::RateLimited { attempts })
        } else {
            Err(PubChemError::Network {
                attempts,
                message: last_error,
            })
        }
    }

    /// Resolves an InChI (prefix `InChI=`) or SMILES string to a CID by exact
    /// structure match.
    pub fn resolve_cid(&self, structure: &str) -> Result<Resolution, PubChemError> {
        let (key, namespace) = resolve_key(structure)?;
        match self.cache.get(&key) {
            Some(CacheValue::Cid { cid }) => return Ok(Resolution::Found(cid)),
            Some(CacheValue::NotFound) => return Ok(Resolution::NotFound),
            _ => {}
        }
        let url = format!("{}/compound/{namespace}/cids/JSON", self.base_url);
        let resp = self.request(&HttpRequest::post_form(url, &[(namespace, structure.trim())]))?;
        let outcome = match resp.status {
            200 => {
                let v: Value = serde_json::from_str(&resp.body).map_err(|e| PubChemError::Decode(e.to_string()))?;
                match v.pointer("/IdentifierList/CID/0").and_then(Value::as_u64) {
                    Some(cid) if cid > 0 => Resolution::Found(cid),
                    _ => Resolution::NotFound,
                }
            }
            // PUGREST.NotFound, and BadRequest for structures PubChem cannot parse
            400 | 404 => Resolution::NotFound,
            status => {
                return Err(PubChemError::Http {
                    status,
                    body: resp.body.chars().take(200).collect(),
                })
            }
        };
        let value = match outcome {
            Resolution::Found(cid) => CacheValue::Cid { cid },
            Resolution::NotFound => CacheValue::NotFound,
        };
        self.cache.put(&key, value)?;
        Ok(outcome)
    }

    /// Fetches the descriptor set and synonyms for a CID.
    ///
    /// Records missing a required field are cached as incomplete and
    /// reported as [`PubChemError::Incomplete`] on every call.
    pub fn fetch_descriptors(&self, cid: u64) -> Result<TextDescriptors, PubChemError> {
        if cid == 0 {
            return Err(PubChemError::Precondition("cid must be positive".into()));
        }
        let key = format!("cid:{cid}");
        match self.cache.get(&key) {
            Some(CacheValue::Descriptors { descriptors }) => return Ok(descriptors),
            Some(CacheValue::Incomplete { reason }) => return Err(PubChemError::Incomplete { cid, reason }),
            _ => {}
        }
        let url = format!("{}/compound/cid/{cid}/property/{PROPERTY_LIST}/JSON", self.base_url);
        let resp = self.request(&HttpRequest::get(&url))?;
        let parsed = match resp.status {
            200 => parse_properties(cid, &resp.body, &url),
            404 => Err(PubChemError::Incomplete {
                cid,
                reason: "no property record".into(),
            }),
            status => {
                return Err(PubChemError::Http {
                    status,
                    body: resp.body.chars().take(200).collect(),
                })
            }
        };
        let mut d = match parsed {
            Ok(d) => d,
            Err(PubChemError::Incomplete { cid, reason }) => {
                self.cache.put(&key, CacheValue::Incomplete { reason: reason.clone() })?;
                return Err(PubChemError::Incomplete { cid, reason });
            }
            Err(e) => return Err(e),
        };

        let syn_url = format!("{}/compound/cid/{cid}/synonyms/JSON", self.base_url);
        let resp = self.request(&HttpRequest::get(&syn_url))?;
        d.synonyms = match resp.status {
            200 => parse_synonyms(&resp.body)?,
            404 => Vec::new(),
            status => {
                return Err(PubChemError::Http {
                    status,
                    body: resp.body.chars().take(200).collect(),
                })
            }
        };
        d.fetched_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        self.cache.put(&key, CacheValue::Descriptors { descriptors: d.clone() })?;
        Ok(d)
    }
}
