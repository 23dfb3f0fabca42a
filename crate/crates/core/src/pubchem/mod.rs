//! PubChem PUG REST ingestion: CID resolution, descriptor fetch, on-disk
//! cache with negative entries, and the request-rate ceiling.

mod cache;
mod client;
mod descriptors;
mod manifest;
mod ratelimit;
mod transport;

pub use cache::{CacheEntry, CacheValue, DiskCache};
pub use client::{ClientBuilder, PubChemClient, Resolution, PROPERTY_LIST, PUG_REST_BASE};
pub use descriptors::{atom_count_from_formula, dedup_synonyms, render_description, TextDescriptors, SYNONYM_CAP};
pub use manifest::{build_multimodal_manifest, Exclusion, ExclusionReason, MultimodalManifest};
pub use ratelimit::{Clock, ManualClock, RateLimiter, RetryPolicy, SystemClock, DEFAULT_RATE};
pub use transport::{HttpRequest, HttpResponse, Method, Transport, TransportError, UreqTransport, CONTACT_ENV};

#[derive(Debug, thiserror::Error)]
pub enum PubChemError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("unexpected HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("incomplete record for cid {cid}: {reason}")]
    Incomplete { cid: u64, reason: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

impl PubChemError {
    /// True when retrying later (with the same cache) may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, PubChemError::Network { .. } | PubChemError::RateLimited { .. })
    }
}
