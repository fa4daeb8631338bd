//! HTTP provider for every adapter contract.
//!
//! Each call is a JSON `POST {base_url}/v1/{operation}`; binary payloads
//! travel base64-encoded and binary results are written to the artifact
//! store. Responses are cached on disk under the SHA-256 of the canonical
//! request, so a rerun with identical inputs never reaches the network.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde_json::{json, Value};

use super::adapters::*;
use super::Capability;
use crate::artifact::ArtifactStore;
use crate::canonical;
use crate::config::{ProviderConfig, RetryConfig};
use crate::domain::{ArtifactRef, BoundingBox, ContentHash, MediaType, StyleSpec};

#[derive(Clone)]
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    base_url: String,
    token: Option<String>,
    retries: u32,
    initial_backoff: Duration,
    store: Arc<dyn ArtifactStore>,
    cache_dir: Option<PathBuf>,
}

impl HttpProvider {
    /// Build a provider; the bearer token is read from `config.token_env`.
    pub fn new(
        config: &ProviderConfig,
        retry: &RetryConfig,
        store: Arc<dyn ArtifactStore>,
        cache_dir: Option<PathBuf>,
    ) -> Result<Self, AdapterError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| AdapterError::InvalidInput(format!("cannot build http client: {e}")))?;
        if let Some(dir) = &cache_dir {
            std::fs::create_dir_all(dir)
                .map_err(|e| AdapterError::InvalidInput(format!("cannot create cache dir: {e}")))?;
        }
        Ok(Self {
            client,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            token: std::env::var(&config.token_env).ok().filter(|t| !t.is_empty()),
            retries: config.retries,
            initial_backoff: Duration::from_millis(retry.initial_backoff_ms),
            store,
            cache_dir,
        })
    }

    /// Every capability served by this provider.
    pub fn adapter_set(self) -> AdapterSet {
        let p = Arc::new(self);
        AdapterSet {
            text: p.clone(),
            image: p.clone(),
            segmenter: p.clone(),
            inpainter: p.clone(),
            depth: p.clone(),
            style: p.clone(),
            speech: p.clone(),
            music: p.clone(),
            critic: p.clone(),
            animator: p,
        }
    }

    fn cache_path(&self, key: &ContentHash) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn call(&self, op: &str, capability: Capability, body: Value) -> AdapterResult<Value> {
        let request = json!({ "operation": op, "body": body });
        let key = ContentHash::of(&canonical::to_canonical_bytes(&request).expect("json values serialize"));
        if let Some(path) = self.cache_path(&key) {
            if let Ok(bytes) = std::fs::read(&path) {
                if let Ok(v) = serde_json::from_slice(&bytes) {
                    return Ok(v);
                }
            }
        }
        let mut backoff = self.initial_backoff;
        let mut attempt = 0;
        let value = loop {
            match self.send(op, capability, &body) {
                Ok(v) => break v,
                Err(e) if e.is_transient() && attempt < self.retries => {
                    attempt += 1;
                    tracing::warn!(op, attempt, error = %e, "transient provider failure, retrying");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(e) => return Err(e),
            }
        };
        if let Some(path) = self.cache_path(&key) {
            let tmp = path.with_extension("tmp");
            let bytes = canonical::to_canonical_bytes(&value).expect("json values serialize");
            if std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, &path)).is_err() {
                tracing::warn!(op, "could not write provider cache entry");
            }
        }
        Ok(value)
    }

    fn send(&self, op: &str, capability: Capability, body: &Value) -> AdapterResult<Value> {
        let fail = |message: String, transient: bool| AdapterError::Failure {
            capability,
            message,
            transient,
        };
        let mut req = self.client.post(format!("{}/v1/{op}", self.base_url)).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| fail(e.to_string(), e.is_timeout() || e.is_connect() || e.is_request()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let transient = status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408;
            return Err(fail(format!("{op} returned {status}: {text}"), transient));
        }
        resp.json::<Value>().map_err(|e| fail(format!("{op} reply is not JSON: {e}"), false))
    }

    fn bytes_of(&self, r: &ArtifactRef) -> AdapterResult<String> {
        Ok(B64.encode(self.store.get(r)?))
    }

    fn store_result(&self, capability: Capability, v: &Value, media: MediaType) -> AdapterResult<ArtifactRef> {
        let data = v["data_b64"]
            .as_str()
            .ok_or_else(|| AdapterError::failure(capability, "reply lacks data_b64"))?;
        let bytes = B64
            .decode(data)
            .map_err(|e| AdapterError::failure(capability, format!("bad base64: {e}")))?;
        Ok(self.store.put(&bytes, media)?)
    }
}

impl TextGenerator for HttpProvider {
    fn text_generate(&self, prompt: &str, params: &GenerationParams) -> AdapterResult<String> {
        let c = Capability::TextGeneration;
        let v = self.call(
            "text_generate",
            c,
            json!({ "prompt": prompt, "seed": params.seed, "max_tokens": params.max_tokens }),
        )?;
        v["text"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AdapterError::failure(c, "reply lacks text"))
    }
}

impl ImageGenerator for HttpProvider {
    fn text_to_image(
        &self,
        description: &str,
        magic_words: &[String],
        layout: &[(String, BoundingBox)],
        seed: u64,
    ) -> AdapterResult<ArtifactRef> {
        let c = Capability::TextToImage;
        let layout: Vec<Value> = layout.iter().map(|(l, b)| json!({ "label": l, "bbox": b })).collect();
        let v = self.call(
            "text_to_image",
            c,
            json!({ "description": description, "magic_words": magic_words, "layout": layout, "seed": seed }),
        )?;
        self.store_result(c, &v, MediaType::ImageRaster)
    }
}

impl Segmenter for HttpProvider {
    fn segment(&self, image: &ArtifactRef, labels: &[String]) -> AdapterResult<ArtifactRef> {
        let c = Capability::Segmentation;
        let v = self.call("segment", c, json!({ "image_b64": self.bytes_of(image)?, "labels": labels }))?;
        self.store_result(c, &v, MediaType::MaskSet)
    }
}

impl Inpainter for HttpProvider {
    fn inpaint(&self, image: &ArtifactRef, masks: &ArtifactRef, descriptions: &[String]) -> AdapterResult<ArtifactRef> {
        let c = Capability::Inpainting;
        let v = self.call(
            "inpaint",
            c,
            json!({
                "image_b64": self.bytes_of(image)?,
                "masks_b64": self.bytes_of(masks)?,
                "descriptions": descriptions,
            }),
        )?;
        self.store_result(c, &v, MediaType::ImageRaster)
    }
}

impl DepthEstimator for HttpProvider {
    fn depth(&self, image: &ArtifactRef) -> AdapterResult<ArtifactRef> {
        let c = Capability::DepthEstimation;
        let v = self.call("depth", c, json!({ "image_b64": self.bytes_of(image)? }))?;
        self.store_result(c, &v, MediaType::DepthMap)
    }
}

impl StyleTransferer for HttpProvider {
    fn style_transfer(
        &self,
        style: &StyleSpec,
        description: &str,
        image: &ArtifactRef,
        depth: &ArtifactRef,
        lambda_ct: f64,
    ) -> AdapterResult<ArtifactRef> {
        let c = Capability::StyleTransfer;
        let v = self.call(
            "style_transfer",
            c,
            json!({
                "style": style,
                "description": description,
                "image_b64": self.bytes_of(image)?,
                "depth_b64": self.bytes_of(depth)?,
                "lambda_ct": lambda_ct,
            }),
        )?;
        self.store_result(c, &v, MediaType::ImageRaster)
    }
}

impl SpeechSynthesizer for HttpProvider {
    fn tts(&self, text: &str, voice_id: &str) -> AdapterResult<(ArtifactRef, u64)> {
        let c = Capability::TextToSpeech;
        let v = self.call("tts", c, json!({ "text": text, "voice_id": voice_id }))?;
        let duration = v["duration_ms"]
            .as_u64()
            .ok_or_else(|| AdapterError::failure(c, "reply lacks duration_ms"))?;
        Ok((self.store_result(c, &v, MediaType::AudioWave)?, duration))
    }
}

impl MusicSelector for HttpProvider {
    fn music_select(&self, mood_tag: &str, duration_ms: u64) -> AdapterResult<ArtifactRef> {
        let c = Capability::MusicSelection;
        let v = self.call("music_select", c, json!({ "mood_tag": mood_tag, "duration_ms": duration_ms }))?;
        self.store_result(c, &v, MediaType::AudioWave)
    }
}

impl Critic for HttpProvider {
    fn critique(&self, image: &ArtifactRef, description: &str) -> AdapterResult<Vec<String>> {
        let c = Capability::MultiModalCritique;
        let v = self.call("critique", c, json!({ "image_b64": self.bytes_of(image)?, "description": description }))?;
        serde_json::from_value(v["suggestions"].clone())
            .map_err(|e| AdapterError::failure(c, format!("reply lacks suggestions: {e}")))
    }
}

impl Animator for HttpProvider {
    fn animate(&self, image: &ArtifactRef, duration_ms: u64) -> AdapterResult<ArtifactRef> {
        let c = Capability::VideoClipGeneration;
        let v = self.call("animate", c, json!({ "image_b64": self.bytes_of(image)?, "duration_ms": duration_ms }))?;
        self.store_result(c, &v, MediaType::VideoClip)
    }
}
