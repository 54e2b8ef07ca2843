//! Synthesis backends: an offline tone-sequence stub and an HTTP client
//! for an external TTS service.

use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use crate::audio::AudioBuffer;
use crate::cache::HttpCache;

use super::SpeakerEmbedding;

/// Anything that can voice a text with a given speaker embedding.
pub trait TtsBackend: Send + Sync {
    fn id(&self) -> &str;

    fn synthesize(
        &self,
        text: &str,
        speaker: &SpeakerEmbedding,
    ) -> Result<AudioBuffer, Box<dyn std::error::Error + Send + Sync>>;
}

/// Resolve a backend by CLI name: `stub`, `stub:<rate>`, or `http:<url>`.
pub fn tts_from_name(
    name: &str,
) -> Result<Box<dyn TtsBackend>, Box<dyn std::error::Error + Send + Sync>> {
    if name == "stub" {
        return Ok(Box::new(StubTts::new()));
    }
    if let Some(rate) = name.strip_prefix("stub:") {
        let rate: u32 = rate
            .parse()
            .map_err(|_| format!("bad stub sample rate {rate:?}"))?;
        return Ok(Box::new(StubTts::with_sample_rate(rate)));
    }
    if let Some(endpoint) = name.strip_prefix("http:") {
        return Ok(Box::new(HttpTts::new(endpoint.to_string())));
    }
    Err(format!("unknown tts backend {name:?} (expected stub | stub:<rate> | http:<url>)").into())
}

// --- stub -----------------------------------------------------------------

/// Offline placeholder voice: a sequence of enveloped tone bursts whose
/// pitch contour is a pure function of (text, speaker). Nothing about it
/// sounds like speech, but it has speech-like shape: duration grows with
/// text length, speakers are consistently distinguishable, and identical
/// inputs give identical waveforms.
#[derive(Debug, Clone)]
pub struct StubTts {
    sample_rate: u32,
}

impl StubTts {
    pub fn new() -> Self {
        StubTts {
            sample_rate: 16_000,
        }
    }

    /// Emit at a non-target rate, to exercise resampling downstream.
    pub fn with_sample_rate(sample_rate: u32) -> Self {
        StubTts { sample_rate }
    }
}

impl Default for StubTts {
    fn default() -> Self {
        Self::new()
    }
}

impl TtsBackend for StubTts {
    fn id(&self) -> &str {
        "stub"
    }

    fn synthesize(
        &self,
        text: &str,
        speaker: &SpeakerEmbedding,
    ) -> Result<AudioBuffer, Box<dyn std::error::Error + Send + Sync>> {
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update([0u8]);
        h.update(speaker.id.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = rand_chacha::ChaCha12Rng::from_seed(digest);

        // a stable per-speaker pitch register derived from the embedding
        let spk_sum: f32 = speaker.vector.iter().sum();
        let register = 140.0 + 80.0 * (spk_sum / speaker.vector.len().max(1) as f32).tanh();

        let rate = self.sample_rate as f64;
        let syllables = text.split_whitespace().count().max(1) * 2;
        let mut samples: Vec<f32> = Vec::new();
        for _ in 0..syllables {
            let freq = register as f64 * rng.random_range(0.8..1.3);
            let dur = rng.random_range(0.08..0.16);
            let n = (dur * rate) as usize;
            for i in 0..n {
                let t = i as f64 / rate;
                // raised-cosine envelope keeps burst edges click-free
                let env = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos());
                let s = 0.4 * env * (2.0 * std::f64::consts::PI * freq * t).sin();
                samples.push(s as f32);
            }
            let gap = (rng.random_range(0.01..0.04) * rate) as usize;
            samples.extend(std::iter::repeat(0.0).take(gap));
        }
        Ok(AudioBuffer::mono(samples, self.sample_rate))
    }
}

// --- http -----------------------------------------------------------------

/// Client for an external synthesis service.
///
/// Sends `POST <endpoint>` with `{"text", "speaker_id", "speaker_embedding"}`
/// and expects `{"sample_rate": <hz>, "samples": [f32...]}` (optionally
/// `"channels"`, default 1, samples interleaved). Responses are cached on
/// disk when [`crate::cache::CACHE_DIR_ENV`] is set.
pub struct HttpTts {
    endpoint: String,
    agent: ureq::Agent,
    cache: HttpCache,
}

impl HttpTts {
    pub fn new(endpoint: String) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(300))
            .build();
        HttpTts {
            endpoint,
            agent,
            cache: HttpCache::from_env("tts"),
        }
    }
}

#[derive(serde::Deserialize)]
struct TtsResponse {
    sample_rate: u32,
    #[serde(default = "one")]
    channels: usize,
    samples: Vec<f32>,
}

fn one() -> usize {
    1
}

impl TtsBackend for HttpTts {
    fn id(&self) -> &str {
        "http"
    }

    fn synthesize(
        &self,
        text: &str,
        speaker: &SpeakerEmbedding,
    ) -> Result<AudioBuffer, Box<dyn std::error::Error + Send + Sync>> {
        let body = serde_json::json!({
            "text": text,
            "speaker_id": speaker.id,
            "speaker_embedding": speaker.vector,
        });
        let body_str = serde_json::to_string(&body).expect("request body serializes");
        let raw = match self.cache.get(&self.endpoint, &body_str) {
            Some(hit) => hit,
            None => {
                let response = self
                    .agent
                    .post(&self.endpoint)
                    .set("content-type", "application/json")
                    .send_string(&body_str)?
                    .into_string()?;
                self.cache.put(&self.endpoint, &body_str, &response)?;
                response
            }
        };
        let parsed: TtsResponse = serde_json::from_str(&raw)?;
        if parsed.channels == 0 || parsed.sample_rate == 0 {
            return Err("response must have positive channels and sample_rate".into());
        }
        Ok(AudioBuffer {
            channels: parsed.channels,
            sample_rate: parsed.sample_rate,
            samples: parsed.samples,
        })
    }
}
