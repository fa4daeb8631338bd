//! Deterministic mock providers.
//!
//! Every mock is a pure function of its inputs and seed. The image mocks
//! encode their inputs into pixels so consistency properties can be checked
//! exactly: layout boxes are painted in `color_of(label)`, inpainted regions
//! in `color_of(separate_description)`, and style transfer blends toward
//! `color_of(style.id)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::artifact::ArtifactStore;
use crate::domain::{ArtifactRef, BoundingBox, ContentHash, MediaType, StyleSpec};
use crate::image::magic::{corner_pixel, MagicWordRegistry};

use super::adapters::*;
use super::media::{color_of, silent_wave, GrayMap, Mask, MaskSet, Raster};
use super::Capability;

/// Narration length rule of the mock speech engine.
pub fn mock_speech_duration_ms(text: &str) -> u64 {
    60 * text.split_whitespace().count() as u64 + 500
}

fn decode_raster(store: &dyn ArtifactStore, r: &ArtifactRef) -> AdapterResult<Raster> {
    let bytes = store.get(r)?;
    Raster::from_ppm(&bytes).map_err(AdapterError::InvalidInput)
}

/// Mock image stack: generation, segmentation, inpainting, depth, style.
#[derive(Clone)]
pub struct MockMedia {
    store: Arc<dyn ArtifactStore>,
    magic_words: Arc<MagicWordRegistry>,
    width: u32,
    height: u32,
}

impl MockMedia {
    pub fn new(store: Arc<dyn ArtifactStore>, magic_words: Arc<MagicWordRegistry>, width: u32, height: u32) -> Self {
        Self {
            store,
            magic_words,
            width,
            height,
        }
    }

    /// Background colour for a description rendered with `seed`.
    pub fn background_color(description: &str, seed: u64) -> [u8; 3] {
        color_of(&format!("{description}#{seed}"))
    }
}

impl ImageGenerator for MockMedia {
    fn text_to_image(
        &self,
        description: &str,
        magic_words: &[String],
        layout: &[(String, BoundingBox)],
        seed: u64,
    ) -> AdapterResult<ArtifactRef> {
        let mut raster = Raster::filled(self.width, self.height, Self::background_color(description, seed));
        for (label, bbox) in layout {
            if !bbox.problems().is_empty() {
                return Err(AdapterError::InvalidInput(format!("layout box for {label:?} is invalid")));
            }
            raster.fill_rect(bbox.pixel_rect(self.width, self.height), color_of(label));
        }
        for word in magic_words {
            if let Some(w) = self.magic_words.get(word) {
                let (x, y) = corner_pixel(w.corner_slot, self.width, self.height);
                let p = raster.get(x, y);
                raster.set(x, y, [255 - p[0], 255 - p[1], 255 - p[2]]);
            }
        }
        Ok(self.store.put(&raster.to_ppm(), MediaType::ImageRaster)?)
    }
}

impl Segmenter for MockMedia {
    fn segment(&self, image: &ArtifactRef, labels: &[String]) -> AdapterResult<ArtifactRef> {
        let raster = decode_raster(self.store.as_ref(), image)?;
        let masks = labels
            .iter()
            .map(|label| {
                let color = color_of(label);
                Mask::from_predicate(label.clone(), raster.width * raster.height, |i| raster.pixels[i as usize] == color)
            })
            .collect();
        let set = MaskSet {
            width: raster.width,
            height: raster.height,
            masks,
        };
        Ok(self.store.put(&set.to_bytes(), MediaType::MaskSet)?)
    }
}

impl Inpainter for MockMedia {
    fn inpaint(&self, image: &ArtifactRef, masks: &ArtifactRef, descriptions: &[String]) -> AdapterResult<ArtifactRef> {
        let mut raster = decode_raster(self.store.as_ref(), image)?;
        let set = MaskSet::from_bytes(&self.store.get(masks)?).map_err(AdapterError::InvalidInput)?;
        if set.masks.len() != descriptions.len() {
            return Err(AdapterError::InvalidInput(format!(
                "{} masks but {} descriptions",
                set.masks.len(),
                descriptions.len()
            )));
        }
        if (set.width, set.height) != (raster.width, raster.height) {
            return Err(AdapterError::InvalidInput("mask set and image sizes differ".into()));
        }
        for (mask, description) in set.masks.iter().zip(descriptions) {
            let fill = color_of(description);
            for i in mask.indices() {
                raster.pixels[i as usize] = fill;
            }
        }
        Ok(self.store.put(&raster.to_ppm(), MediaType::ImageRaster)?)
    }
}

impl DepthEstimator for MockMedia {
    fn depth(&self, image: &ArtifactRef) -> AdapterResult<ArtifactRef> {
        let raster = decode_raster(self.store.as_ref(), image)?;
        let map = GrayMap::horizontal_gradient(raster.width, raster.height);
        Ok(self.store.put(&map.to_pgm(), MediaType::DepthMap)?)
    }
}

/// Per-channel blend `p + lambda * (target - p)`, rounded.
pub fn blend_channel(p: u8, target: u8, lambda: f64) -> u8 {
    let v = p as f64 * (1.0 - lambda) + target as f64 * lambda;
    v.round().clamp(0.0, 255.0) as u8
}

impl StyleTransferer for MockMedia {
    fn style_transfer(
        &self,
        style: &StyleSpec,
        _description: &str,
        image: &ArtifactRef,
        depth: &ArtifactRef,
        lambda_ct: f64,
    ) -> AdapterResult<ArtifactRef> {
        if !(0.0..=1.0).contains(&lambda_ct) {
            return Err(AdapterError::InvalidInput(format!("lambda_ct {lambda_ct} outside [0,1]")));
        }
        let mut raster = decode_raster(self.store.as_ref(), image)?;
        let depth_map = GrayMap::from_pgm(&self.store.get(depth)?).map_err(AdapterError::InvalidInput)?;
        if (depth_map.width, depth_map.height) != (raster.width, raster.height) {
            return Err(AdapterError::InvalidInput("depth map and image sizes differ".into()));
        }
        let target = color_of(&style.id);
        for p in raster.pixels.iter_mut() {
            for c in 0..3 {
                p[c] = blend_channel(p[c], target[c], lambda_ct);
            }
        }
        Ok(self.store.put(&raster.to_ppm(), MediaType::ImageRaster)?)
    }
}

/// Silent audio of a computed length.
#[derive(Clone)]
pub struct MockAudio {
    store: Arc<dyn ArtifactStore>,
}

impl MockAudio {
    pub fn new(store: Arc<dyn ArtifactStore>) -> Self {
        Self { store }
    }
}

impl SpeechSynthesizer for MockAudio {
    fn tts(&self, text: &str, _voice_id: &str) -> AdapterResult<(ArtifactRef, u64)> {
        let duration = mock_speech_duration_ms(text);
        let r = self.store.put(&silent_wave(duration), MediaType::AudioWave)?;
        Ok((r, duration))
    }
}

impl MusicSelector for MockAudio {
    fn music_select(&self, _mood_tag: &str, duration_ms: u64) -> AdapterResult<ArtifactRef> {
        Ok(self.store.put(&silent_wave(duration_ms), MediaType::AudioWave)?)
    }
}

/// The mock provider cannot animate keyframes.
#[derive(Debug, Default, Clone)]
pub struct MockAnimator;

impl Animator for MockAnimator {
    fn animate(&self, _image: &ArtifactRef, _duration_ms: u64) -> AdapterResult<ArtifactRef> {
        Err(AdapterError::NotSupported(Capability::VideoClipGeneration))
    }
}

/// Critic answering from a fixture table keyed by the SHA-256 of the
/// description it is shown. Descriptions without a fixture pass.
#[derive(Debug, Default, Clone)]
pub struct MockCritic {
    fixtures: BTreeMap<ContentHash, Vec<String>>,
    always: Vec<String>,
}

impl MockCritic {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fixture(mut self, description: &str, suggestions: &[&str]) -> Self {
        self.fixtures.insert(
            ContentHash::of(description.as_bytes()),
            suggestions.iter().map(|s| s.to_string()).collect(),
        );
        self
    }

    /// Suggestions returned for every description.
    pub fn never_satisfied(mut self, suggestions: &[&str]) -> Self {
        self.always = suggestions.iter().map(|s| s.to_string()).collect();
        self
    }
}

impl Critic for MockCritic {
    fn critique(&self, _image: &ArtifactRef, description: &str) -> AdapterResult<Vec<String>> {
        if !self.always.is_empty() {
            return Ok(self.always.clone());
        }
        Ok(self
            .fixtures
            .get(&ContentHash::of(description.as_bytes()))
            .cloned()
            .unwrap_or_default())
    }
}

impl AdapterSet {
    /// All-mock adapter set writing into `store`.
    pub fn mock(store: Arc<dyn ArtifactStore>, magic_words: Arc<MagicWordRegistry>, width: u32, height: u32) -> Self {
        let media = Arc::new(MockMedia::new(store.clone(), magic_words, width, height));
        let audio = Arc::new(MockAudio::new(store));
        Self {
            text: Arc::new(super::mock_text::MockTextGenerator),
            image: media.clone(),
            segmenter: media.clone(),
            inpainter: media.clone(),
            depth: media.clone(),
            style: media,
            speech: audio.clone(),
            music: audio,
            critic: Arc::new(MockCritic::default()),
            animator: Arc::new(MockAnimator),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::MemoryArtifactStore;
    use crate::clock::FixedClock;
    use crate::domain::PixelRect;

    fn media() -> (Arc<MemoryArtifactStore>, MockMedia) {
        let store = Arc::new(MemoryArtifactStore::new(Arc::new(FixedClock::new(0))));
        let m = MockMedia::new(store.clone(), Arc::new(MagicWordRegistry::default()), 512, 288);
        (store, m)
    }

    fn raster(store: &MemoryArtifactStore, r: &ArtifactRef) -> Raster {
        Raster::from_ppm(&store.get(r).unwrap()).unwrap()
    }

    #[test]
    fn layout_box_lands_on_pixel_rect() {
        let (store, m) = media();
        let b = BoundingBox::new(0.5, 0.5, 0.25, 0.25).unwrap();
        let img = m.text_to_image("a kitchen", &[], &[("girl".into(), b)], 7).unwrap();
        let masks = m.segment(&img, &["girl".into()]).unwrap();
        let set = MaskSet::from_bytes(&store.get(&masks).unwrap()).unwrap();
        assert_eq!(set.masks[0].bounding_rect(512), Some(PixelRect { x: 256, y: 144, w: 128, h: 72 }));
        assert_eq!(set.masks[0].pixel_count(), 128 * 72);
        let r = raster(&store, &img);
        assert_eq!(r.get(0, 0), MockMedia::background_color("a kitchen", 7));
    }

    #[test]
    fn magic_word_flips_its_corner() {
        let (store, m) = media();
        let plain = raster(&store, &m.text_to_image("d", &[], &[], 1).unwrap());
        let marked = raster(&store, &m.text_to_image("d", &["Close view".into(), "Unknown".into()], &[], 1).unwrap());
        let diff: Vec<_> = (0..plain.pixels.len()).filter(|&i| plain.pixels[i] != marked.pixels[i]).collect();
        assert_eq!(diff, vec![511]);
    }

    #[test]
    fn zero_lambda_is_identity_and_one_is_flat() {
        let (store, m) = media();
        let style = StyleSpec::new("watercolor", "Watercolor", 0.0).unwrap();
        let img = m.text_to_image("forest", &[], &[], 3).unwrap();
        let depth = m.depth(&img).unwrap();
        let same = m.style_transfer(&style, "forest", &img, &depth, 0.0).unwrap();
        assert_eq!(store.get(&same).unwrap(), store.get(&img).unwrap());
        let flat = raster(&store, &m.style_transfer(&style, "forest", &img, &depth, 1.0).unwrap());
        assert!(flat.pixels.iter().all(|p| *p == color_of("watercolor")));
        assert!(m.style_transfer(&style, "forest", &img, &depth, 1.5).is_err());
    }

    #[test]
    fn same_portrait_same_fill_across_images() {
        let (store, m) = media();
        let b = BoundingBox::new(0.1, 0.1, 0.2, 0.5).unwrap();
        let portrait = vec!["portrait of a girl with golden curls".to_string()];
        let mut fills = Vec::new();
        for (desc, seed) in [("meadow", 1), ("cottage", 2)] {
            let img = m.text_to_image(desc, &[], &[("goldi".into(), b)], seed).unwrap();
            let masks = m.segment(&img, &["goldi".into()]).unwrap();
            let out = raster(&store, &m.inpaint(&img, &masks, &portrait).unwrap());
            let set = MaskSet::from_bytes(&store.get(&masks).unwrap()).unwrap();
            let colors: std::collections::HashSet<_> = set.masks[0].indices().map(|i| out.pixels[i as usize]).collect();
            assert_eq!(colors.len(), 1);
            fills.push(*colors.iter().next().unwrap());
        }
        assert_eq!(fills[0], fills[1]);
        assert_eq!(fills[0], color_of(&portrait[0]));
    }

    #[test]
    fn inpaint_rejects_mismatched_inputs() {
        let (_, m) = media();
        let img = m.text_to_image("x", &[], &[], 1).unwrap();
        let masks = m.segment(&img, &["a".into()]).unwrap();
        assert!(matches!(m.inpaint(&img, &masks, &[]), Err(AdapterError::InvalidInput(_))));
    }

    #[test]
    fn speech_duration_formula() {
        let store = Arc::new(MemoryArtifactStore::new(Arc::new(FixedClock::new(0))));
        let audio = MockAudio::new(store.clone());
        let (r, d) = audio.tts("one two three", "narrator").unwrap();
        assert_eq!(d, 680);
        assert_eq!(super::super::media::wave_duration_ms(&store.get(&r).unwrap()), Some(680));
    }

    #[test]
    fn critic_fixture_lookup_and_animator() {
        let c = MockCritic::new().with_fixture("bad prompt", &["fix framing"]);
        let r = ArtifactRef::for_bytes(b"x", MediaType::ImageRaster);
        assert_eq!(c.critique(&r, "bad prompt").unwrap(), vec!["fix framing"]);
        assert!(c.critique(&r, "bad prompt, fixed").unwrap().is_empty());
        assert!(matches!(MockAnimator.animate(&r, 4000), Err(AdapterError::NotSupported(_))));
    }
}
