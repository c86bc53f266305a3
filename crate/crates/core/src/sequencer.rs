//! Sequence construction: byte-level tokenization of interleaved documents,
//! vision-span insertion, loss masking, greedy context packing, and few-shot
//! prompt assembly.
//!
//! The tokenizer is byte-level: ids 0..=255 are raw bytes, followed by four
//! specials. Vision positions carry the pad id as a placeholder; the `kinds`
//! array, not the id, is the authority on what a position holds.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::imaging::{ImageDims, PatchPlan};

pub const BOS_ID: u32 = 256;
pub const EOS_ID: u32 = 257;
pub const PAD_ID: u32 = 258;
pub const IMAGE_BOUNDARY_ID: u32 = 259;
/// 256 bytes + BOS/EOS/PAD/ImageBoundary.
pub const VOCAB_SIZE: usize = 260;

/// What a sequence position holds. The id array alone cannot distinguish
/// vision placeholders from padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Text,
    Vision,
    Bos,
    Eos,
    Pad,
    ImageBoundary,
}

impl TokenKind {
    pub fn code(self) -> u8 {
        match self {
            TokenKind::Text => 0,
            TokenKind::Vision => 1,
            TokenKind::Bos => 2,
            TokenKind::Eos => 3,
            TokenKind::Pad => 4,
            TokenKind::ImageBoundary => 5,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => TokenKind::Text,
            1 => TokenKind::Vision,
            2 => TokenKind::Bos,
            3 => TokenKind::Eos,
            4 => TokenKind::Pad,
            5 => TokenKind::ImageBoundary,
            other => {
                return Err(ForgeError::OutOfRange(format!(
                    "unknown token kind code {other}"
                )))
            }
        })
    }
}

/// Token ids, kinds, and loss mask, kept in lockstep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub kinds: Vec<TokenKind>,
    pub loss_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: u32, kind: TokenKind, mask: bool) {
        self.ids.push(id);
        self.kinds.push(kind);
        self.loss_mask.push(mask);
    }

    /// Concatenated bytes of every Text position, in order.
    pub fn text_bytes(&self) -> Vec<u8> {
        self.ids
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == TokenKind::Text)
            .map(|(id, _)| *id as u8)
            .collect()
    }

    pub fn non_pad_len(&self) -> usize {
        self.kinds.iter().filter(|k| **k != TokenKind::Pad).count()
    }

    /// Checks the structural invariants: parallel lengths, mask only on
    /// Text, ids in vocabulary, and every Vision run contiguous inside a
    /// paired ImageBoundary bracket.
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.kinds.len() || self.ids.len() != self.loss_mask.len() {
            return Err(ForgeError::ShapeMismatch(
                "ids/kinds/loss_mask lengths differ".into(),
            ));
        }
        for (p, ((&id, &kind), &mask)) in self
            .ids
            .iter()
            .zip(&self.kinds)
            .zip(&self.loss_mask)
            .enumerate()
        {
            if id as usize >= VOCAB_SIZE {
                return Err(ForgeError::OutOfRange(format!(
                    "id {id} at position {p} exceeds vocabulary"
                )));
            }
            if mask && kind != TokenKind::Text {
                return Err(ForgeError::OutOfRange(format!(
                    "loss mask set on non-text position {p}"
                )));
            }
        }
        // Vision tokens may appear only as IB, V+, IB.
        let mut p = 0;
        while p < self.kinds.len() {
            match self.kinds[p] {
                TokenKind::Vision => {
                    return Err(ForgeError::OutOfRange(format!(
                        "vision token at {p} outside an image span"
                    )))
                }
                TokenKind::ImageBoundary => {
                    let mut q = p + 1;
                    while q < self.kinds.len() && self.kinds[q] == TokenKind::Vision {
                        q += 1;
                    }
                    if q == p + 1 {
                        return Err(ForgeError::OutOfRange(format!(
                            "image boundary at {p} opens an empty span"
                        )));
                    }
                    if q >= self.kinds.len() || self.kinds[q] != TokenKind::ImageBoundary {
                        return Err(ForgeError::OutOfRange(format!(
                            "image span starting at {p} is not closed"
                        )));
                    }
                    p = q + 1;
                }
                _ => p += 1,
            }
        }
        Ok(())
    }
}

/// Loss-mask policy for tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MaskingMode {
    /// Pre-training: every text position bears loss.
    #[default]
    AllText,
    /// SFT-style: only the final text block bears loss; earlier text is
    /// treated as prompt.
    CompletionOnly,
}

/// One interleaved training document. The serde shape doubles as the JSONL
/// corpus schema: {"doc_id": ..., "blocks": [{"text": ...} | {"image": ...,
/// "w": ..., "h": ...}]}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleavedDoc {
    pub doc_id: String,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Block {
    Text { text: String },
    Image { image: String, w: u32, h: u32 },
}

impl Block {
    pub fn text(s: impl Into<String>) -> Self {
        Block::Text { text: s.into() }
    }

    pub fn image(id: impl Into<String>, dims: ImageDims) -> Self {
        Block::Image {
            image: id.into(),
            w: dims.width,
            h: dims.height,
        }
    }
}

/// Tokenizes one document: BOS, blocks in order, EOS. Each image block
/// expands to ImageBoundary + k vision placeholders + ImageBoundary, where
/// k = m * buffers (patches plus global) from the image's tiling plan.
pub fn tokenize_doc(
    doc: &InterleavedDoc,
    plans: &HashMap<String, PatchPlan>,
    m: usize,
    mode: MaskingMode,
) -> Result<TokenSequence> {
    if doc.blocks.is_empty() {
        return Err(ForgeError::EmptyInput(format!(
            "doc {} has no blocks",
            doc.doc_id
        )));
    }
    if m == 0 {
        return Err(ForgeError::InvalidDims("query count m must be >= 1".into()));
    }
    let last_text = doc
        .blocks
        .iter()
        .rposition(|b| matches!(b, Block::Text { .. }));
    let mut seq = TokenSequence::default();
    seq.push(BOS_ID, TokenKind::Bos, false);
    for (bi, block) in doc.blocks.iter().enumerate() {
        match block {
            Block::Text { text } => {
                let bear = match mode {
                    MaskingMode::AllText => true,
                    MaskingMode::CompletionOnly => Some(bi) == last_text,
                };
                for b in text.as_bytes() {
                    seq.push(*b as u32, TokenKind::Text, bear);
                }
            }
            Block::Image { image, .. } => {
                let plan = plans.get(image).ok_or_else(|| {
                    ForgeError::Unresolved(format!(
                        "doc {}: image id {image:?} has no tiling plan",
                        doc.doc_id
                    ))
                })?;
                let k = m * plan.buffer_count();
                seq.push(IMAGE_BOUNDARY_ID, TokenKind::ImageBoundary, false);
                for _ in 0..k {
                    seq.push(PAD_ID, TokenKind::Vision, false);
                }
                seq.push(IMAGE_BOUNDARY_ID, TokenKind::ImageBoundary, false);
            }
        }
    }
    seq.push(EOS_ID, TokenKind::Eos, false);
    Ok(seq)
}

/// Summary of a packing run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PackReport {
    pub docs_in: usize,
    pub docs_rejected: Vec<String>,
    pub sequences_out: usize,
    pub tokens_accepted: usize,
    pub non_pad_tokens_out: usize,
    pub pad_tokens_out: usize,
}

/// Greedy packer. Text flows freely across sequence boundaries; an image
/// span (with both boundary tokens) is atomic: if it does not fit in the
/// remaining space, the sequence is padded out and the span starts the next
/// one. A document whose span cannot fit in an empty context is rejected
/// whole and reported.
pub struct Packer {
    context: usize,
    current: TokenSequence,
    out: Vec<TokenSequence>,
    report: PackReport,
}

impl Packer {
    pub fn new(context: usize) -> Result<Self> {
        if context == 0 {
            return Err(ForgeError::InvalidDims(
                "context length must be >= 1".into(),
            ));
        }
        Ok(Self {
            context,
            current: TokenSequence::default(),
            out: Vec::new(),
            report: PackReport::default(),
        })
    }

    /// Splits a sequence into atomic segments: single tokens, or whole
    /// IB..IB image spans.
    fn segments(seq: &TokenSequence) -> Result<Vec<(usize, usize)>> {
        seq.validate()?;
        let mut segs = Vec::new();
        let mut p = 0;
        while p < seq.len() {
            if seq.kinds[p] == TokenKind::ImageBoundary {
                let mut q = p + 1;
                while seq.kinds[q] == TokenKind::Vision {
                    q += 1;
                }
                segs.push((p, q + 1));
                p = q + 1;
            } else {
                segs.push((p, p + 1));
                p += 1;
            }
        }
        Ok(segs)
    }

    fn emit_current(&mut self) {
        let pad = self.context - self.current.len();
        for _ in 0..pad {
            self.current.push(PAD_ID, TokenKind::Pad, false);
        }
        self.report.pad_tokens_out += pad;
        self.report.non_pad_tokens_out += self.context - pad;
        self.report.sequences_out += 1;
        self.out.push(std::mem::take(&mut self.current));
    }

    /// Feeds one tokenized document into the pack.
    pub fn push_doc(&mut self, doc_id: &str, seq: &TokenSequence) -> Result<()> {
        self.report.docs_in += 1;
        let segs = Self::segments(seq)?;
        if segs.iter().any(|(a, b)| b - a > self.context) {
            self.report.docs_rejected.push(doc_id.to_string());
            return Ok(());
        }
        self.report.tokens_accepted += seq.len();
        for (a, b) in segs {
            let need = b - a;
            if self.current.len() + need > self.context {
                self.emit_current();
            }
            for p in a..b {
                self.current
                    .push(seq.ids[p], seq.kinds[p], seq.loss_mask[p]);
            }
        }
        Ok(())
    }

    /// Flushes the partial sequence and returns everything packed.
    pub fn finish(mut self) -> (Vec<TokenSequence>, PackReport) {
        if !self.current.is_empty() {
            self.emit_current();
        }
        (self.out, self.report)
    }
}

/// Packs a batch of (doc_id, tokenized doc) pairs at context length `c`.
pub fn pack_all(
    docs: &[(String, TokenSequence)],
    c: usize,
) -> Result<(Vec<TokenSequence>, PackReport)> {
    let mut packer = Packer::new(c)?;
    for (id, seq) in docs {
        packer.push_doc(id, seq)?;
    }
    Ok(packer.finish())
}

/// A few-shot evaluation prompt, by corpus index: `shots` demonstrations
/// (never the query itself) followed by the query item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotPrompt {
    pub shots: usize,
    pub demo_indices: Vec<usize>,
    pub query_index: usize,
}

/// Builds one prompt per corpus item. Demonstrations are drawn without
/// replacement, excluding the query; the draw for query q depends only on
/// (seed, q), so prompts are stable under corpus-order-preserving reruns.
pub fn build_fewshot(n_items: usize, shots: usize, seed: u64) -> Result<Vec<FewShotPrompt>> {
    if shots >= n_items {
        return Err(ForgeError::InsufficientPool(format!(
            "need more than {shots} corpus items for {shots}-shot prompts, have {n_items}"
        )));
    }
    let mut out = Vec::with_capacity(n_items);
    for q in 0..n_items {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(q as u64 + 1);
        // Partial Fisher-Yates over the corpus minus the query.
        let mut pool: Vec<usize> = (0..n_items).filter(|&i| i != q).collect();
        let mut demos = Vec::with_capacity(shots);
        for k in 0..shots {
            let j = rng.gen_range(k..pool.len());
            pool.swap(k, j);
            demos.push(pool[k]);
        }
        out.push(FewShotPrompt {
            shots,
            demo_indices: demos,
            query_index: q,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{plan_patches, GridSpec};
    use rand::Rng;

    fn plan_for(w: u32, h: u32) -> PatchPlan {
        plan_patches(ImageDims::new(w, h).unwrap(), 384, 9).unwrap()
    }

    fn plans_one(id: &str, plan: PatchPlan) -> HashMap<String, PatchPlan> {
        let mut m = HashMap::new();
        m.insert(id.to_string(), plan);
        m
    }

    #[test]
    fn hi_plus_image_matches_hand_enumeration() {
        // 384x384 source -> 1x1 grid, one buffer; m=2 -> k=2.
        let doc = InterleavedDoc {
            doc_id: "d0".into(),
            blocks: vec![
                Block::text("hi"),
                Block::image("img", ImageDims::new(384, 384).unwrap()),
            ],
        };
        let plans = plans_one("img", plan_for(384, 384));
        let seq = tokenize_doc(&doc, &plans, 2, MaskingMode::AllText).unwrap();
        use TokenKind::*;
        assert_eq!(
            seq.kinds,
            vec![Bos, Text, Text, ImageBoundary, Vision, Vision, ImageBoundary, Eos]
        );
        assert_eq!(
            seq.loss_mask,
            vec![false, true, true, false, false, false, false, false]
        );
        assert_eq!(seq.ids[1], b'h' as u32);
        assert_eq!(seq.ids[2], b'i' as u32);
        assert_eq!(seq.text_bytes(), b"hi");
        seq.validate().unwrap();
    }

    #[test]
    fn image_only_doc_has_all_false_mask() {
        let doc = InterleavedDoc {
            doc_id: "d1".into(),
            blocks: vec![Block::image("img", ImageDims::new(384, 384).unwrap())],
        };
        let plans = plans_one("img", plan_for(384, 384));
        let seq = tokenize_doc(&doc, &plans, 4, MaskingMode::AllText).unwrap();
        assert!(seq.loss_mask.iter().all(|&m| !m));
    }

    #[test]
    fn multi_patch_image_expands_to_m_times_buffers() {
        // 768x384 -> 2x1 grid + global = 3 buffers; m=4 -> k=12.
        let doc = InterleavedDoc {
            doc_id: "d2".into(),
            blocks: vec![Block::image("img", ImageDims::new(768, 384).unwrap())],
        };
        let plan = plan_for(768, 384);
        assert_eq!(plan.grid, GridSpec { cols: 2, rows: 1 });
        let seq = tokenize_doc(&doc, &plans_one("img", plan), 4, MaskingMode::AllText).unwrap();
        let vision = seq
            .kinds
            .iter()
            .filter(|k| **k == TokenKind::Vision)
            .count();
        assert_eq!(vision, 12);
        seq.validate().unwrap();
    }

    #[test]
    fn interleaved_doc_keeps_span_contiguous() {
        let doc = InterleavedDoc {
            doc_id: "d3".into(),
            blocks: vec![
                Block::text("before"),
                Block::image("img", ImageDims::new(384, 384).unwrap()),
                Block::text("after"),
            ],
        };
        let plans = plans_one("img", plan_for(384, 384));
        let seq = tokenize_doc(&doc, &plans, 3, MaskingMode::AllText).unwrap();
        seq.validate().unwrap();
        assert_eq!(seq.text_bytes(), b"beforeafter");
    }

    #[test]
    fn completion_only_masks_just_final_text_block() {
        let doc = InterleavedDoc {
            doc_id: "d4".into(),
            blocks: vec![
                Block::text("prompt"),
                Block::image("img", ImageDims::new(384, 384).unwrap()),
                Block::text("answer"),
            ],
        };
        let plans = plans_one("img", plan_for(384, 384));
        let seq = tokenize_doc(&doc, &plans, 2, MaskingMode::CompletionOnly).unwrap();
        let text_masks: Vec<bool> = seq
            .kinds
            .iter()
            .zip(&seq.loss_mask)
            .filter(|(k, _)| **k == TokenKind::Text)
            .map(|(_, m)| *m)
            .collect();
        assert_eq!(text_masks.len(), 12);
        assert!(text_masks[..6].iter().all(|&m| !m));
        assert!(text_masks[6..].iter().all(|&m| m));
        seq.validate().unwrap();
    }

    #[test]
    fn unresolvable_image_errors() {
        let doc = InterleavedDoc {
            doc_id: "d5".into(),
            blocks: vec![Block::image("ghost", ImageDims::new(64, 64).unwrap())],
        };
        let err = tokenize_doc(&doc, &HashMap::new(), 2, MaskingMode::AllText).unwrap_err();
        assert!(matches!(err, ForgeError::Unresolved(_)));
    }

    #[test]
    fn single_short_doc_packs_into_one_padded_sequence() {
        let doc = InterleavedDoc {
            doc_id: "p0".into(),
            blocks: vec![Block::text("abc")],
        };
        let seq = tokenize_doc(&doc, &HashMap::new(), 2, MaskingMode::AllText).unwrap();
        let (packed, report) = pack_all(&[("p0".into(), seq.clone())], 16).unwrap();
        assert_eq!(packed.len(), 1);
        assert_eq!(packed[0].len(), 16);
        assert_eq!(packed[0].non_pad_len(), seq.len());
        assert!(packed[0].kinds[seq.len()..]
            .iter()
            .all(|k| *k == TokenKind::Pad));
        assert!(report.docs_rejected.is_empty());
        packed[0].validate().unwrap();
    }

    #[test]
    fn straddling_vision_span_defers_whole_to_next_sequence() {
        // Context 16; doc = BOS + 6 text + [IB 8xV IB] + EOS. The span (10
        // tokens) would straddle position 16, so it must start sequence 2.
        let mut seq = TokenSequence::default();
        seq.push(BOS_ID, TokenKind::Bos, false);
        for b in b"abcdef" {
            seq.push(*b as u32, TokenKind::Text, true);
        }
        seq.push(IMAGE_BOUNDARY_ID, TokenKind::ImageBoundary, false);
        for _ in 0..8 {
            seq.push(PAD_ID, TokenKind::Vision, false);
        }
        seq.push(IMAGE_BOUNDARY_ID, TokenKind::ImageBoundary, false);
        seq.push(EOS_ID, TokenKind::Eos, false);
        let (packed, report) = pack_all(&[("s0".into(), seq)], 16).unwrap();
        assert_eq!(packed.len(), 2);
        assert!(report.docs_rejected.is_empty());
        // First sequence: 7 real tokens then padding; no vision at all.
        assert_eq!(packed[0].non_pad_len(), 7);
        assert!(packed[0].kinds.iter().all(|k| *k != TokenKind::Vision));
        // Second sequence starts with the intact span.
        assert_eq!(packed[1].kinds[0], TokenKind::ImageBoundary);
        assert_eq!(packed[1].kinds[9], TokenKind::ImageBoundary);
        for p in &packed {
            p.validate().unwrap();
        }
    }

    #[test]
    fn oversize_span_rejects_document_with_id() {
        let doc = InterleavedDoc {
            doc_id: "too-big".into(),
            blocks: vec![Block::image("img", ImageDims::new(384, 384).unwrap())],
        };
        let plans = plans_one("img", plan_for(384, 384));
        let seq = tokenize_doc(&doc, &plans, 32, MaskingMode::AllText).unwrap();
        // Span unit = 34 > context 20.
        let (packed, report) = pack_all(&[("too-big".into(), seq)], 20).unwrap();
        assert_eq!(report.docs_rejected, vec!["too-big".to_string()]);
        assert!(packed.is_empty() || packed.iter().all(|s| s.non_pad_len() == 0));
    }

    #[test]
    fn empty_stream_packs_to_nothing() {
        let (packed, report) = pack_all(&[], 32).unwrap();
        assert!(packed.is_empty());
        assert_eq!(report.sequences_out, 0);
    }

    #[test]
    fn token_conservation_over_random_docs() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let mut plans = HashMap::new();
        plans.insert("sq".to_string(), plan_for(384, 384));
        plans.insert("wide".to_string(), plan_for(768, 384));
        let mut docs = Vec::new();
        let mut original_text = Vec::new();
        for i in 0..200 {
            let mut blocks = Vec::new();
            for _ in 0..rng.gen_range(1..5) {
                if rng.gen_bool(0.5) {
                    let len = rng.gen_range(0..40);
                    let text: String = (0..len)
                        .map(|_| (b'a' + rng.gen_range(0..26)) as char)
                        .collect();
                    blocks.push(Block::text(text));
                } else if rng.gen_bool(0.5) {
                    blocks.push(Block::image("sq", ImageDims::new(384, 384).unwrap()));
                } else {
                    blocks.push(Block::image("wide", ImageDims::new(768, 384).unwrap()));
                }
            }
            let doc = InterleavedDoc {
                doc_id: format!("doc-{i}"),
                blocks,
            };
            let seq = tokenize_doc(&doc, &plans, 3, MaskingMode::AllText).unwrap();
            docs.push((doc.doc_id.clone(), seq.clone()));
            original_text.push((doc, seq));
        }
        let c = 64;
        let (packed, report) = pack_all(&docs, c).unwrap();
        let accepted_tokens: usize = docs
            .iter()
            .filter(|(id, _)| !report.docs_rejected.contains(id))
            .map(|(_, s)| s.len())
            .sum();
        let non_pad: usize = packed.iter().map(TokenSequence::non_pad_len).sum();
        assert_eq!(non_pad, accepted_tokens);
        assert_eq!(report.tokens_accepted, accepted_tokens);
        for p in &packed {
            assert_eq!(p.len(), c);
            p.validate().unwrap();
        }
        // Text round-trip across the packed stream: concatenation of packed
        // text equals concatenation of accepted docs' text.
        let packed_text: Vec<u8> = packed.iter().flat_map(|s| s.text_bytes()).collect();
        let source_text: Vec<u8> = original_text
            .iter()
            .filter(|(d, _)| !report.docs_rejected.contains(&d.doc_id))
            .flat_map(|(_, s)| s.text_bytes())
            .collect();
        assert_eq!(packed_text, source_text);
    }

    #[test]
    fn fewshot_zero_shots_is_query_only() {
        let prompts = build_fewshot(5, 0, 7).unwrap();
        assert_eq!(prompts.len(), 5);
        for (q, p) in prompts.iter().enumerate() {
            assert_eq!(p.query_index, q);
            assert!(p.demo_indices.is_empty());
        }
    }

    #[test]
    fn fewshot_is_deterministic_per_seed() {
        let a = build_fewshot(40, 4, 123).unwrap();
        let b = build_fewshot(40, 4, 123).unwrap();
        assert_eq!(a, b);
        let c = build_fewshot(40, 4, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fewshot_eight_over_ten_distinct_and_never_query() {
        let prompts = build_fewshot(10, 8, 5).unwrap();
        for p in prompts {
            assert_eq!(p.demo_indices.len(), 8);
            let mut sorted = p.demo_indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 8, "demos must be distinct");
            assert!(!p.demo_indices.contains(&p.query_index));
        }
    }

    #[test]
    fn fewshot_rejects_exhausted_pool() {
        assert!(build_fewshot(8, 8, 0).is_err());
        assert!(build_fewshot(8, 9, 0).is_err());
        assert!(build_fewshot(9, 8, 0).is_ok());
    }

    #[test]
    fn doc_json_schema_round_trips() {
        let doc = InterleavedDoc {
            doc_id: "j1".into(),
            blocks: vec![
                Block::text("hello"),
                Block::image("im-9", ImageDims::new(640, 480).unwrap()),
            ],
        };
        let js = serde_json::to_string(&doc).unwrap();
        assert!(js.contains("\"text\":\"hello\""));
        assert!(js.contains("\"image\":\"im-9\""));
        assert!(js.contains("\"w\":640"));
        let back: InterleavedDoc = serde_json::from_str(&js).unwrap();
        assert_eq!(doc, back);
    }
}
