use std::sync::{Condvar, Mutex};
use std::time::Duration;

use image::RgbImage;
use reqwest::blocking::{multipart, Client};
use reqwest::StatusCode;

use super::{RenderBackend, RenderError, RenderJob};
use crate::bundle::{decode_rgb_png, mask_png_bytes, rgb_png_bytes};

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalOptions {
    /// Base URL; the request goes to `<endpoint>/v1/inpaint`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Total tries for transport failures and 503 responses.
    pub attempts: u32,
    /// Delay before the second try; doubles after each further failure.
    pub initial_backoff: Duration,
    pub max_concurrency: usize,
}

impl ExternalOptions {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(300),
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            max_concurrency: 2,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// HTTP inpainting backend: POSTs the job directory as multipart form parts
/// named after the job files and expects a PNG back.
pub struct ExternalBackend {
    opts: ExternalOptions,
    client: Client,
    slots: Slots,
}

impl ExternalBackend {
    pub fn new(opts: ExternalOptions) -> Result<Self, RenderError> {
        if opts.endpoint.trim().is_empty() {
            return Err(RenderError::Config("external backend needs an endpoint".into()));
        }
        if !(opts.endpoint.starts_with("http://") || opts.endpoint.starts_with("https://")) {
            return Err(RenderError::Config(format!("endpoint {:?} is not an http(s) URL", opts.endpoint)));
        }
        if opts.attempts == 0 || opts.max_concurrency == 0 {
            return Err(RenderError::Config("attempts and max_concurrency must be >= 1".into()));
        }
        let client = Client::builder()
            .timeout(opts.timeout)
            .build()
            .map_err(|e| RenderError::Config(e.to_string()))?;
        let slots = Slots {
            free: Mutex::new(opts.max_concurrency),
            cv: Condvar::new(),
        };
        Ok(Self { opts, client, slots })
    }

    fn url(&self) -> String {
        format!("{}/v1/inpaint", self.opts.endpoint.trim_end_matches('/'))
    }

    fn form(job: &RenderJob) -> Result<multipart::Form, RenderError> {
        let manifest = serde_json::to_vec(&job.manifest()).map_err(|e| RenderError::InvalidJob(e.to_string()))?;
        let part = |bytes: Vec<u8>, file: &str, mime: &str| {
            multipart::Part::bytes(bytes)
                .file_name(file.to_string())
                .mime_str(mime)
                .expect("static mime type")
        };
        let mut form = multipart::Form::new()
            .part("manifest.json", part(manifest, "manifest.json", "application/json"))
            .part("proj_rgb.png", part(rgb_png_bytes(&job.projection.rgb), "proj_rgb.png", "image/png"))
            .part(
                "proj_mask.png",
                part(mask_png_bytes(&job.projection.coverage), "proj_mask.png", "image/png"),
            );
        for r in &job.references {
            let (rgb, mask) = (format!("refs/{}.png", r.view_id), format!("refs/{}_mask.png", r.view_id));
            form = form
                .part(rgb.clone(), part(rgb_png_bytes(&r.rgb), &rgb, "image/png"))
                .part(mask.clone(), part(mask_png_bytes(&r.hole_mask), &mask, "image/png"));
        }
        Ok(form)
    }
}

impl RenderBackend for ExternalBackend {
    fn name(&self) -> &str {
        "external"
    }

    fn supports_reference_masks(&self) -> bool {
        true
    }

    fn exact_fidelity(&self) -> bool {
        false
    }

    fn inpaint(&self, job: &RenderJob) -> Result<RgbImage, RenderError> {
        let _slot = self.slots.acquire();
        let url = self.url();
        let mut delay = self.opts.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.opts.attempts {
            if attempt > 1 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.client.post(&url).multipart(Self::form(job)?).send() {
                Err(e) => last = e.to_string(),
                Ok(resp) if resp.status() == StatusCode::SERVICE_UNAVAILABLE => {
                    last = "503 service unavailable".into();
                }
                Ok(resp) if resp.status() != StatusCode::OK => {
                    return Err(RenderError::BadResponse(format!("HTTP {}", resp.status().as_u16())));
                }
                Ok(resp) => {
                    let body = resp.bytes().map_err(|e| RenderError::BadResponse(e.to_string()))?;
                    return decode_rgb_png(&body).map_err(RenderError::BadResponse);
                }
            }
        }
        Err(RenderError::BackendUnavailable {
            attempts: self.opts.attempts,
            detail: format!("{url}: {last}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::rgb_png_bytes;
    use crate::edit::EditLog;
    use crate::projection::SplatOptions;
    use crate::render::{build_render_job, dispatch};
    use crate::scene::{assemble_point_cloud, unproject_all};
    use crate::synth::{generate, SynthConfig};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn job() -> RenderJob {
        let s = generate(&SynthConfig {
            views: 2,
            width: 32,
            height: 24,
            focal: 20.0,
            ..Default::default()
        });
        let frames = s.bundle.frames.clone();
        let cloud = assemble_point_cloud(&unproject_all(&frames), &frames).unwrap();
        build_render_job("x", &cloud, &s.gt.test_views[0].camera, &frames, &EditLog::new(), &SplatOptions::default())
            .unwrap()
    }

    /// Serves canned responses in order, one per connection; returns the base URL and hit counter.
    fn mock(responses: Vec<(u16, Vec<u8>)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                counter.fetch_add(1, Ordering::SeqCst);
                read_request(&mut stream);
                let head = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: image/png\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                    body.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(&body);
            }
        });
        (format!("http://{addr}"), hits)
    }

    fn read_request(stream: &mut std::net::TcpStream) {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            let n = stream.read(&mut chunk).unwrap_or(0);
            if n == 0 {
                return;
            }
            buf.extend_from_slice(&chunk[..n]);
            if let Some(end) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                let head = String::from_utf8_lossy(&buf[..end]).to_ascii_lowercase();
                let len = head
                    .lines()
                    .find_map(|l| l.strip_prefix("content-length:"))
                    .and_then(|v| v.trim().parse::<usize>().ok())
                    .unwrap_or(0);
                if buf.len() >= end + 4 + len {
                    return;
                }
            }
        }
    }

    fn fast(endpoint: String) -> ExternalBackend {
        ExternalBackend::new(ExternalOptions {
            initial_backoff: Duration::from_millis(5),
            timeout: Duration::from_secs(10),
            ..ExternalOptions::new(endpoint)
        })
        .unwrap()
    }

    #[test]
    fn returns_decoded_image() {
        let j = job();
        let img = RgbImage::from_pixel(32, 24, image::Rgb([1, 2, 3]));
        let (url, hits) = mock(vec![(200, rgb_png_bytes(&img))]);
        assert_eq!(dispatch(&j, &fast(url)).unwrap(), img);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_on_503_then_succeeds() {
        let j = job();
        let img = RgbImage::from_pixel(32, 24, image::Rgb([4, 5, 6]));
        let (url, hits) = mock(vec![(503, vec![]), (503, vec![]), (200, rgb_png_bytes(&img))]);
        assert_eq!(dispatch(&j, &fast(url)).unwrap(), img);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_503_is_unavailable() {
        let (url, hits) = mock(vec![(503, vec![]); 3]);
        let err = dispatch(&job(), &fast(url)).unwrap_err();
        assert!(matches!(err, RenderError::BackendUnavailable { attempts: 3, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn wrong_size_and_bad_status() {
        let small = rgb_png_bytes(&RgbImage::new(10, 10));
        let (url, _) = mock(vec![(200, small)]);
        assert!(matches!(dispatch(&job(), &fast(url)), Err(RenderError::BadResponse(_))));
        let (url, hits) = mock(vec![(500, vec![])]);
        assert!(matches!(dispatch(&job(), &fast(url)), Err(RenderError::BadResponse(_))));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        let (url, _) = mock(vec![(200, b"not a png".to_vec())]);
        assert!(matches!(dispatch(&job(), &fast(url)), Err(RenderError::BadResponse(_))));
    }

    #[test]
    fn unreachable_endpoint_reports_attempts() {
        // bind then drop to get a port nobody listens on
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = dispatch(&job(), &fast(format!("http://127.0.0.1:{port}"))).unwrap_err();
        match err {
            RenderError::BackendUnavailable { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_text(&dispatch(&job(), &fast(format!("http://127.0.0.1:{port}"))).unwrap_err()).contains("3 attempt"));
    }

    fn err_text(e: &RenderError) -> String {
        e.to_string()
    }

    #[test]
    fn config_validation() {
        assert!(ExternalBackend::new(ExternalOptions::new("")).is_err());
        assert!(ExternalBackend::new(ExternalOptions::new("ftp://x")).is_err());
    }
}
