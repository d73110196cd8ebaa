//! Full-page screenshots and rendered text geometry over the WebDriver protocol.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use coe_core::geometry::{clip_to_frame, BoundingBox};
use coe_core::snapshot::{ElementKind, PageSnapshot, RenderedElement};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{HarnessError, Result};
use crate::files;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub webdriver_url: String,
    /// Sent as `capabilities.alwaysMatch` on session creation.
    pub capabilities: Value,
    pub viewport_width: u32,
    pub viewport_height: u32,
    /// Cap on the window height used for full-page capture.
    pub max_page_height: u32,
    pub settle_ms: u64,
    pub page_load_timeout_ms: u64,
    pub script_timeout_ms: u64,
    /// Pause between pages within one session.
    pub inter_request_delay_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            webdriver_url: "http://127.0.0.1:4444".into(),
            capabilities: json!({
                "browserName": "chrome",
                "goog:chromeOptions": {"args": ["--headless=new", "--hide-scrollbars"]},
            }),
            viewport_width: 1920,
            viewport_height: 1080,
            max_page_height: 16384,
            settle_ms: 500,
            page_load_timeout_ms: 30_000,
            script_timeout_ms: 30_000,
            inter_request_delay_ms: 0,
        }
    }
}

/// Page script returning visible text-bearing elements with one rect per
/// rendered line, in CSS pixels relative to the document origin.
pub const EXTRACT_SCRIPT: &str = r#"
const kindOf = (el) => {
  const tag = el.tagName.toLowerCase();
  if ((tag === 'td' || tag === 'th') && el.closest('table.infobox')) return 'infobox_text';
  if (tag === 'p') return 'paragraph';
  if (tag === 'li') return 'list_item';
  if (tag === 'td' || tag === 'th') return 'table_cell';
  if (tag === 'figcaption' || tag === 'caption') return 'caption';
  return null;
};
const visible = (el) => {
  for (let n = el; n && n.nodeType === 1; n = n.parentElement) {
    const s = getComputedStyle(n);
    if (s.display === 'none' || s.visibility === 'hidden' || s.opacity === '0') return false;
  }
  return true;
};
const sx = window.scrollX, sy = window.scrollY;
const out = [];
for (const el of document.querySelectorAll('p, li, td, th, figcaption, caption')) {
  const kind = kindOf(el);
  if (!kind || !visible(el)) continue;
  const text = (el.innerText || '').replace(/\s+/g, ' ').trim();
  if (!text) continue;
  const lines = [];
  const walker = document.createTreeWalker(el, NodeFilter.SHOW_TEXT);
  for (let node = walker.nextNode(); node; node = walker.nextNode()) {
    if (!node.textContent.trim()) continue;
    const range = document.createRange();
    range.selectNodeContents(node);
    for (const r of range.getClientRects()) {
      if (r.width <= 0 || r.height <= 0) continue;
      const line = lines.find((l) => Math.abs(l.top - r.top) < 1 && Math.abs(l.bottom - r.bottom) < 1);
      if (line) {
        line.left = Math.min(line.left, r.left);
        line.right = Math.max(line.right, r.right);
      } else {
        lines.push({left: r.left, top: r.top, right: r.right, bottom: r.bottom});
      }
    }
  }
  if (!lines.length) continue;
  out.push({kind, text, rects: lines.map((l) => [l.left + sx, l.top + sy, l.right + sx, l.bottom + sy])});
}
return out;
"#;

const METRICS_SCRIPT: &str = "return {dpr: window.devicePixelRatio, \
    width: Math.max(document.documentElement.scrollWidth, document.body ? document.body.scrollWidth : 0), \
    height: Math.max(document.documentElement.scrollHeight, document.body ? document.body.scrollHeight : 0), \
    innerWidth: window.innerWidth, innerHeight: window.innerHeight, \
    outerWidth: window.outerWidth, outerHeight: window.outerHeight};";

#[derive(Debug, Clone, Deserialize)]
struct PageMetrics {
    dpr: f64,
    height: f64,
    #[serde(rename = "innerHeight")]
    inner_height: f64,
    #[serde(rename = "outerHeight")]
    outer_height: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct RawElement {
    kind: ElementKind,
    text: String,
    rects: Vec<[f64; 4]>,
}

/// One WebDriver session. Commands are sequential; the session is deleted on drop.
pub struct WebDriverSession {
    http: reqwest::blocking::Client,
    base: String,
    id: String,
}

impl WebDriverSession {
    pub fn start(cfg: &SessionConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.page_load_timeout_ms.max(cfg.script_timeout_ms) + 30_000))
            .build()
            .map_err(|e| HarnessError::WebDriver(e.to_string()))?;
        let base = cfg.webdriver_url.trim_end_matches('/').to_owned();
        let resp = http
            .post(format!("{base}/session"))
            .json(&json!({"capabilities": {"alwaysMatch": cfg.capabilities}}))
            .send()
            .map_err(|e| HarnessError::EndpointUnreachable(format!("{base}: {e}")))?;
        let value = unwrap_value(resp)?;
        let id = value
            .get("sessionId")
            .and_then(Value::as_str)
            .ok_or_else(|| HarnessError::WebDriver("session response without sessionId".into()))?
            .to_owned();
        let session = Self { http, base, id };
        session.command(
            "POST",
            "timeouts",
            Some(json!({"pageLoad": cfg.page_load_timeout_ms, "script": cfg.script_timeout_ms})),
        )?;
        Ok(session)
    }

    fn command(&self, method: &str, path: &str, body: Option<Value>) -> Result<Value> {
        let url = format!("{}/session/{}/{path}", self.base, self.id);
        let req = match method {
            "GET" => self.http.get(&url),
            _ => self.http.post(&url).json(&body.unwrap_or_else(|| json!({}))),
        };
        let resp = req.send().map_err(|e| HarnessError::EndpointUnreachable(format!("{url}: {e}")))?;
        unwrap_value(resp)
    }

    pub fn navigate(&self, url: &str) -> Result<()> {
        self.command("POST", "url", Some(json!({"url": url}))).map(drop).map_err(|e| match e {
            HarnessError::WebDriver(m) => HarnessError::NavigationTimeout(format!("{url}: {m}")),
            other => other,
        })
    }

    pub fn execute(&self, script: &str) -> Result<Value> {
        self.command("POST", "execute/sync", Some(json!({"script": script, "args": []})))
            .map_err(|e| match e {
                HarnessError::WebDriver(m) => HarnessError::ScriptFailure(m),
                other => other,
            })
    }

    pub fn set_window_size(&self, width: u32, height: u32) -> Result<()> {
        self.command("POST", "window/rect", Some(json!({"width": width, "height": height})))
            .map(drop)
    }

    /// PNG bytes of the current viewport.
    pub fn screenshot(&self) -> Result<Vec<u8>> {
        let value = self.command("GET", "screenshot", None)?;
        let data = value
            .as_str()
            .ok_or_else(|| HarnessError::CaptureFailed("screenshot is not a string".into()))?;
        B64.decode(data).map_err(|e| HarnessError::CaptureFailed(format!("screenshot base64: {e}")))
    }

    fn wait_ready(&self, timeout: Duration) -> Result<()> {
        let start = Instant::now();
        loop {
            if self.execute("return document.readyState;")?.as_str() == Some("complete") {
                return Ok(());
            }
            if start.elapsed() > timeout {
                return Err(HarnessError::NavigationTimeout("document never reached readyState complete".into()));
            }
            thread::sleep(Duration::from_millis(50));
        }
    }
}

impl Drop for WebDriverSession {
    fn drop(&mut self) {
        let _ = self.http.delete(format!("{}/session/{}", self.base, self.id)).send();
    }
}

fn unwrap_value(resp: reqwest::blocking::Response) -> Result<Value> {
    let status = resp.status();
    let body: Value = resp
        .json()
        .map_err(|e| HarnessError::WebDriver(format!("status {status}: unreadable body: {e}")))?;
    let value = body.get("value").cloned().unwrap_or(Value::Null);
    if let Some(err) = value.get("error").and_then(Value::as_str) {
        let message = value.get("message").and_then(Value::as_str).unwrap_or("");
        return Err(HarnessError::WebDriver(format!("{err}: {message}")));
    }
    if !status.is_success() {
        return Err(HarnessError::WebDriver(format!("status {status}")));
    }
    Ok(value)
}

/// A captured page: sidecar data plus the PNG it describes.
#[derive(Debug, Clone)]
pub struct Capture {
    pub snapshot: PageSnapshot,
    pub png: Vec<u8>,
}

impl Capture {
    /// Writes `{doc_id}.png` and `{doc_id}.json` into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        files::write(&dir.join(format!("{}.png", self.snapshot.doc_id)), &self.png)?;
        files::write_json(&dir.join(format!("{}.json", self.snapshot.doc_id)), &self.snapshot)
    }
}

/// Scales CSS-pixel rects into raster pixels and clips them to the frame.
/// Elements left without any in-frame line are dropped.
fn to_raster(raw: Vec<RawElement>, dpr: f64, width: u32, height: u32) -> Vec<RenderedElement> {
    let (w, h) = (f64::from(width), f64::from(height));
    raw.into_iter()
        .filter_map(|e| {
            let rects: Vec<BoundingBox> = e
                .rects
                .iter()
                .filter_map(|r| BoundingBox::new(r[0] * dpr, r[1] * dpr, r[2] * dpr, r[3] * dpr).ok())
                .filter_map(|b| clip_to_frame(&b, w, h).ok())
                .collect();
            (!rects.is_empty()).then_some((e, rects))
        })
        .enumerate()
        .map(|(i, (e, line_rects))| RenderedElement {
            element_id: format!("el{i:04}"),
            text: e.text,
            kind: e.kind,
            line_rects,
        })
        .collect()
}

/// Navigates, waits for readiness plus the settle delay, grows the window
/// to the document height and captures screenshot and element geometry.
pub fn capture_page(session: &WebDriverSession, doc_id: &str, url: &str, cfg: &SessionConfig) -> Result<Capture> {
    session.set_window_size(cfg.viewport_width, cfg.viewport_height)?;
    session.navigate(url)?;
    session.wait_ready(Duration::from_millis(cfg.page_load_timeout_ms))?;
    thread::sleep(Duration::from_millis(cfg.settle_ms));

    let metrics: PageMetrics = serde_json::from_value(session.execute(METRICS_SCRIPT)?)
        .map_err(|e| HarnessError::ScriptFailure(format!("page metrics: {e}")))?;
    let chrome = (metrics.outer_height - metrics.inner_height).max(0.0);
    let full = (metrics.height + chrome).ceil().min(f64::from(cfg.max_page_height)) as u32;
    if full > cfg.viewport_height {
        session.set_window_size(cfg.viewport_width, full)?;
    }
    session.execute("window.scrollTo(0, 0); return null;")?;
    thread::sleep(Duration::from_millis(cfg.settle_ms.min(200)));

    let raw: Vec<RawElement> = serde_json::from_value(session.execute(EXTRACT_SCRIPT)?)
        .map_err(|e| HarnessError::ScriptFailure(format!("element extraction: {e}")))?;
    let png = session.screenshot()?;
    let (width, height) = image::load_from_memory(&png)
        .map(|img| (img.width(), img.height()))
        .map_err(|e| HarnessError::CaptureFailed(format!("{url}: screenshot undecodable: {e}")))?;
    if width == 0 || height == 0 {
        return Err(HarnessError::CaptureFailed(format!("{url}: empty screenshot")));
    }
    let dpr = if metrics.dpr > 0.0 { metrics.dpr } else { 1.0 };
    let captured_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64);
    Ok(Capture {
        snapshot: PageSnapshot {
            doc_id: doc_id.to_owned(),
            url: url.to_owned(),
            width,
            height,
            device_pixel_ratio: dpr,
            captured_at,
            elements: to_raster(raw, dpr, width, height),
        },
        png,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureFailure {
    pub doc_id: String,
    pub url: String,
    pub reason: String,
}

/// Captures `targets` (doc_id, url) in priority order with at most `limit`
/// sessions open at once. Output keeps input order; failures never stop
/// the batch.
pub fn snapshot_batch(targets: &[(String, String)], limit: usize, cfg: &SessionConfig) -> (Vec<Capture>, Vec<CaptureFailure>) {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<std::result::Result<Capture, String>>>> = Mutex::new(vec![None; targets.len()]);
    let workers = limit.max(1).min(targets.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut session: Option<WebDriverSession> = None;
                let mut first = true;
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((doc_id, url)) = targets.get(i) else { break };
                    if !first && cfg.inter_request_delay_ms > 0 {
                        thread::sleep(Duration::from_millis(cfg.inter_request_delay_ms));
                    }
                    first = false;
                    if session.is_none() {
                        match WebDriverSession::start(cfg) {
                            Ok(s) => session = Some(s),
                            Err(e) => {
                                slots.lock().expect("slots")[i] = Some(Err(e.to_string()));
                                continue;
                            }
                        }
                    }
                    let active = session.as_ref().expect("session started");
                    let result = capture_page(active, doc_id, url, cfg).map_err(|e| e.to_string());
                    slots.lock().expect("slots")[i] = Some(result);
                }
            });
        }
    });
    let mut captures = Vec::new();
    let mut failures = Vec::new();
    for ((doc_id, url), slot) in targets.iter().zip(slots.into_inner().expect("slots")) {
        match slot {
            Some(Ok(c)) => captures.push(c),
            Some(Err(reason)) => failures.push(CaptureFailure {
                doc_id: doc_id.clone(),
                url: url.clone(),
                reason,
            }),
            None => failures.push(CaptureFailure {
                doc_id: doc_id.clone(),
                url: url.clone(),
                reason: "not processed".into(),
            }),
        }
    }
    (captures, failures)
}

/// Reads every `*.json` sidecar in `dir`, sorted by doc_id.
pub fn load_snapshots(dir: &Path) -> Result<Vec<PageSnapshot>> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            let text = files::read_text(&path)?;
            let snap: PageSnapshot =
                serde_json::from_str(&text).map_err(|e| HarnessError::json(path.display().to_string(), e))?;
            out.push(snap);
        }
    }
    out.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(out)
}
