use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use serde::Deserialize;

use super::{normalize_name, GenderError, GenderLabel, GenderRecord, RecordSource};

/// One element of the provider's JSON response array.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ProviderEntry {
    pub name: String,
    pub gender: Option<String>,
    #[serde(default)]
    pub probability: Option<f64>,
    #[serde(default)]
    pub count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderFailure {
    Unreachable(String),
    RateLimited,
    Bad(String),
}

/// Anything that can answer a batch of name lookups.
pub trait GenderProvider {
    fn query(&self, names: &[String]) -> Result<Vec<ProviderEntry>, ProviderFailure>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub batch_size: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(500),
            batch_size: 10,
        }
    }
}

/// HTTP GET client: `?name[]=A&name[]=B&apikey=K`, JSON array response, 429 = rate limit.
pub struct HttpProvider {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(20)))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            url: url.into(),
            api_key,
            agent,
        }
    }
}

impl GenderProvider for HttpProvider {
    fn query(&self, names: &[String]) -> Result<Vec<ProviderEntry>, ProviderFailure> {
        let mut req = self.agent.get(&self.url);
        for n in names {
            req = req.query("name[]", n);
        }
        if let Some(key) = &self.api_key {
            req = req.query("apikey", key);
        }
        match req.call() {
            Ok(mut resp) => {
                let body = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| ProviderFailure::Bad(e.to_string()))?;
                serde_json::from_str(&body).map_err(|e| ProviderFailure::Bad(e.to_string()))
            }
            Err(ureq::Error::StatusCode(429)) => Err(ProviderFailure::RateLimited),
            Err(ureq::Error::StatusCode(code)) => Err(ProviderFailure::Bad(format!("HTTP status {code}"))),
            Err(e) => Err(ProviderFailure::Unreachable(e.to_string())),
        }
    }
}

fn label_of(raw: Option<&str>) -> GenderLabel {
    raw.and_then(|g| g.parse().ok()).unwrap_or(GenderLabel::Unknown)
}

/// Queries `names` in batches, one record per name. An empty set makes no call.
///
/// Rate limiting is retried with exponential backoff up to `retry.max_attempts`; an
/// unreachable provider is reported so callers can fall back to the local sources.
pub fn fetch_remote(
    names: &BTreeSet<String>,
    provider: &dyn GenderProvider,
    retry: &RetryPolicy,
) -> Result<Vec<GenderRecord>, GenderError> {
    let names: Vec<String> = names.iter().cloned().collect();
    let mut out = Vec::with_capacity(names.len());
    for batch in names.chunks(retry.batch_size.max(1)) {
        let mut attempt = 0;
        let entries = loop {
            attempt += 1;
            match provider.query(batch) {
                Ok(entries) => break entries,
                Err(ProviderFailure::RateLimited) if attempt < retry.max_attempts => {
                    std::thread::sleep(retry.initial_backoff * 2u32.pow(attempt - 1));
                }
                Err(ProviderFailure::RateLimited) => return Err(GenderError::RateLimited { attempts: attempt }),
                Err(ProviderFailure::Unreachable(msg)) => return Err(GenderError::ProviderUnreachable(msg)),
                Err(ProviderFailure::Bad(msg)) => return Err(GenderError::BadResponse(msg)),
            }
        };
        let by_name: HashMap<String, ProviderEntry> = entries
            .into_iter()
            .map(|e| (normalize_name(&e.name).unwrap_or_else(|| e.name.clone()), e))
            .collect();
        for name in batch {
            let entry = by_name.get(name);
            let label = label_of(entry.and_then(|e| e.gender.as_deref()));
            out.push(GenderRecord {
                name: name.clone(),
                label,
                probability: entry
                    .and_then(|e| e.probability)
                    .filter(|p| (0.0..=1.0).contains(p))
                    .unwrap_or(0.0),
                count: entry.and_then(|e| e.count).unwrap_or(0),
                source: RecordSource::RemoteProvider,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::{Cell, RefCell};
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;

    struct Stub {
        calls: Cell<u32>,
        rate_limited_first: u32,
        seen: RefCell<Vec<Vec<String>>>,
    }

    impl GenderProvider for Stub {
        fn query(&self, names: &[String]) -> Result<Vec<ProviderEntry>, ProviderFailure> {
            self.calls.set(self.calls.get() + 1);
            if self.calls.get() <= self.rate_limited_first {
                return Err(ProviderFailure::RateLimited);
            }
            self.seen.borrow_mut().push(names.to_vec());
            Ok(names
                .iter()
                .map(|n| ProviderEntry {
                    name: n.to_lowercase(),
                    gender: (n != "Zz").then(|| if n.starts_with('A') { "female" } else { "male" }.to_string()),
                    probability: Some(0.9),
                    count: Some(7),
                })
                .collect())
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(1),
            batch_size: 2,
        }
    }

    #[test]
    fn empty_set_makes_no_call() {
        let stub = Stub { calls: Cell::new(0), rate_limited_first: 0, seen: RefCell::default() };
        assert!(fetch_remote(&BTreeSet::new(), &stub, &fast_retry()).unwrap().is_empty());
        assert_eq!(stub.calls.get(), 0);
    }

    #[test]
    fn null_gender_becomes_unknown_and_batches_respected() {
        let stub = Stub { calls: Cell::new(0), rate_limited_first: 1, seen: RefCell::default() };
        let names: BTreeSet<String> = ["Ann", "Bob", "Zz"].iter().map(|s| s.to_string()).collect();
        let recs = fetch_remote(&names, &stub, &fast_retry()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].label, GenderLabel::Woman);
        assert_eq!(recs[1].label, GenderLabel::Man);
        assert_eq!(recs[2].label, GenderLabel::Unknown);
        assert_eq!(stub.seen.borrow().len(), 2);
    }

    #[test]
    fn persistent_rate_limit_is_bounded() {
        let stub = Stub { calls: Cell::new(0), rate_limited_first: 100, seen: RefCell::default() };
        let names: BTreeSet<String> = ["Ann".to_string()].into();
        assert!(matches!(
            fetch_remote(&names, &stub, &fast_retry()),
            Err(GenderError::RateLimited { attempts: 3 })
        ));
        assert_eq!(stub.calls.get(), 3);
    }

    /// Serves the given raw HTTP responses, one per connection, and records request lines.
    fn serve(responses: Vec<String>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut lines = Vec::new();
            for resp in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h == "\r\n" || h.is_empty() {
                        break;
                    }
                }
                lines.push(request_line.trim().to_string());
                stream.write_all(resp.as_bytes()).unwrap();
            }
            lines
        });
        (url, handle)
    }

    fn http(status: &str, body: &str) -> String {
        format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
    }

    #[test]
    fn http_provider_against_local_stub_server() {
        let payload = r#"[{"name":"ann","gender":"female","probability":0.98,"count":1200},
                          {"name":"bob","gender":"male","probability":0.99,"count":900},
                          {"name":"kai","gender":null,"probability":0.0,"count":0}]"#;
        let (url, handle) = serve(vec![http("429 Too Many Requests", "{}"), http("200 OK", payload)]);
        let provider = HttpProvider::new(url, Some("secret".into()));
        let names: BTreeSet<String> = ["Ann", "Bob", "Kai"].iter().map(|s| s.to_string()).collect();
        let retry = RetryPolicy { max_attempts: 3, initial_backoff: Duration::from_millis(1), batch_size: 10 };
        let recs = fetch_remote(&names, &provider, &retry).unwrap();
        let lines = handle.join().unwrap();

        assert_eq!(recs.len(), 3);
        assert_eq!((recs[0].label, recs[0].probability, recs[0].count), (GenderLabel::Woman, 0.98, 1200));
        assert_eq!((recs[1].label, recs[1].probability, recs[1].count), (GenderLabel::Man, 0.99, 900));
        assert_eq!(recs[2].label, GenderLabel::Unknown);
        assert!(lines[1].contains("apikey=secret"), "{lines:?}");
        assert_eq!(lines[1].matches("name").count(), 3, "{lines:?}");
    }

    #[test]
    fn unreachable_provider_is_reported() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let provider = HttpProvider::new(url, None);
        let names: BTreeSet<String> = ["Ann".to_string()].into();
        assert!(matches!(
            fetch_remote(&names, &provider, &fast_retry()),
            Err(GenderError::ProviderUnreachable(_))
        ));
    }
}
