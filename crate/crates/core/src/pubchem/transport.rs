use std::time::Duration;

/// Environment variable holding an optional contact address sent with every
/// request, as PubChem asks of bulk clients.
pub const CONTACT_ENV: &str = "MOLFUSE_CONTACT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

/// A minimal HTTP request: URL plus optional form-encoded body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub form: Vec<(String, String)>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        HttpRequest {
            method: Method::Get,
            url: url.into(),
            form: Vec::new(),
        }
    }

    pub fn post_form(url: impl Into<String>, form: &[(&str, &str)]) -> Self {
        HttpRequest {
            method: Method::Post,
            url: url.into(),
            form: form.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Connection-level failure (DNS, TLS, reset, timeout). HTTP error statuses
/// are not transport errors.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTPS transport backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
    user_agent: String,
    contact: Option<String>,
}

impl UreqTransport {
    pub fn new(contact: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        let user_agent = match &contact {
            Some(c) => format!("molfuse/{} ({c})", env!("CARGO_PKG_VERSION")),
            None => format!("molfuse/{}", env!("CARGO_PKG_VERSION")),
        };
        UreqTransport {
            agent: config.into(),
            user_agent,
            contact,
        }
    }

    /// Reads the contact address from [`CONTACT_ENV`].
    pub fn from_env() -> Self {
        let contact = std::env::var(CONTACT_ENV).ok().filter(|c| !c.trim().is_empty());
        UreqTransport::new(contact)
    }
}

impl Transport for UreqTransport {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let err = |e: ureq::Error| TransportError(e.to_string());
        let mut resp = match req.method {
            Method::Get => {
                let mut r = self.agent.get(&req.url).header("User-Agent", &self.user_agent);
                if let Some(c) = &self.contact {
                    r = r.header("From", c);
                }
                r.call().map_err(err)?
            }
            Method::Post => {
                let mut r = self.agent.post(&req.url).header("User-Agent", &self.user_agent);
                if let Some(c) = &self.contact {
                    r = r.header("From", c);
                }
                let form: Vec<(&str, &str)> = req.form.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
                r.send_form(form).map_err(err)?
            }
        };
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(err)?;
        Ok(HttpResponse { status, body })
    }
}
