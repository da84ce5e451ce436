//! The assembled style-transfer network.
//!
//! `Sttr` owns both feature extractors, the transformer, and the CNN
//! decoder, and runs the full pipeline: tokenize both images, encode the
//! style tokens, cross-attend content against the style codes, and paint
//! the matched tokens back at content resolution.

use std::collections::BTreeMap;

use crate::config::{RunConfig, Tokenizer};
use crate::decoder::CnnDecoder;
use crate::features::{positional_encoding, FeatureExtractor, TokenSequence};
use crate::tensor::{Tape, Tensor};
use crate::transformer::{AttentionTrace, Transformer};

pub struct Sttr {
    pub config: RunConfig,
    pub content_extractor: FeatureExtractor,
    pub style_extractor: FeatureExtractor,
    pub transformer: Transformer,
    pub cnn_decoder: CnnDecoder,
}

impl Sttr {
    pub fn new(cfg: &RunConfig, seed: u64) -> Sttr {
        let m = &cfg.model;
        Sttr {
            config: cfg.clone(),
            content_extractor: FeatureExtractor::new(seed, "content", cfg, m.content_tap_stage),
            style_extractor: FeatureExtractor::new(seed, "style", cfg, m.style_tap_stage),
            transformer: Transformer::new(
                seed,
                "transformer",
                m.d,
                m.heads,
                m.encoder_layers,
                m.decoder_layers,
            ),
            cnn_decoder: CnnDecoder::new(seed, "cnn_decoder", m.d, &cfg.decoder_stages()),
        }
    }

    /// Content tokens for an image, with their positional encoding.
    pub fn content_tokens(&self, tape: &Tape, image: &Tensor) -> (TokenSequence, Tensor) {
        let seq = self.content_extractor.tokenize(tape, image, self.config.model.tokenizer);
        let pos = positional_encoding(seq.grid_h, seq.grid_w, self.config.model.d);
        (seq, pos)
    }

    /// Style tokens for an image, with their positional encoding.
    pub fn style_tokens(&self, tape: &Tape, image: &Tensor) -> (TokenSequence, Tensor) {
        let seq = self.style_extractor.tokenize(tape, image, self.config.model.tokenizer);
        let pos = positional_encoding(seq.grid_h, seq.grid_w, self.config.model.d);
        (seq, pos)
    }

    /// Full pipeline: [1,3,Hc,Wc] content + [1,3,Hs,Ws] style (both sides
    /// divisible by 32) -> stylized [1,3,Hc,Wc] in (0,1).
    pub fn stylize(
        &self,
        tape: &Tape,
        content_img: &Tensor,
        style_img: &Tensor,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Tensor {
        let (content, pos_c) = self.content_tokens(tape, content_img);
        let (style, pos_s) = self.style_tokens(tape, style_img);
        let codes =
            self.transformer.encode_style(tape, &style.tokens, &pos_s, trace.as_deref_mut());
        let decoded = self.transformer.decode(tape, &content.tokens, &codes, &pos_c, &pos_s, trace);
        let seq =
            TokenSequence { tokens: decoded, grid_h: content.grid_h, grid_w: content.grid_w };
        self.cnn_decoder.reconstruct(tape, &seq)
    }

    /// Every parameter by dotted name, both tokenizer paths included, so a
    /// checkpoint captures the model regardless of mode.
    pub fn parameters(&self) -> BTreeMap<String, Tensor> {
        let mut map = BTreeMap::new();
        let mut add = |name: String, t: Tensor| {
            let prev = map.insert(name.clone(), t);
            assert!(prev.is_none(), "duplicate parameter name {name}");
        };
        self.content_extractor.visit("content", &mut add);
        self.style_extractor.visit("style", &mut add);
        self.transformer.visit(&mut add);
        self.cnn_decoder.visit(&mut add);
        map
    }

    /// The parameters the configured forward pass actually uses: the filter
    /// tokenizer trains the backbones and 1x1 projections, the unfold
    /// tokenizer trains the patch embeddings instead.
    pub fn trainable_parameters(&self) -> BTreeMap<String, Tensor> {
        let mut map = self.parameters();
        match self.config.model.tokenizer {
            Tokenizer::Filter => map.retain(|name, _| !name.contains(".patch.")),
            Tokenizer::Unfold => {
                map.retain(|name, _| !name.contains(".backbone.") && !name.contains(".projection."))
            }
        }
        map
    }
}
