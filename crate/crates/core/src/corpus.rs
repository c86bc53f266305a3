//! Corpus file formats: JSONL documents in, length-prefixed binary shards
//! plus a JSON index out.
//!
//! Shard record layout, all little-endian: u32 payload byte length, then the
//! payload = u32 sequence length C, C u32 token ids, C u8 kind codes, C u8
//! mask bytes. The index holds counts and the rejected doc ids so a pack run
//! is auditable without re-reading shards.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::sequencer::{InterleavedDoc, PackReport, TokenKind, TokenSequence};

/// Reads one JSONL file of interleaved documents. Blank lines are skipped;
/// the error for a bad line carries its 1-based line number.
pub fn read_docs_jsonl(path: impl AsRef<Path>) -> Result<Vec<InterleavedDoc>> {
    let file = File::open(path.as_ref())?;
    let mut docs = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: InterleavedDoc = serde_json::from_str(&line).map_err(|e| {
            ForgeError::Parse {
                offset: ln + 1,
                message: format!("line {}: {e}", ln + 1),
            }
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_docs_jsonl(path: impl AsRef<Path>, docs: &[InterleavedDoc]) -> Result<()> {
    let mut out = File::create(path.as_ref())?;
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Index written next to a shard set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardIndex {
    pub context_length: usize,
    pub total_sequences: usize,
    pub shards: Vec<ShardEntry>,
    pub docs_in: usize,
    pub docs_rejected: Vec<String>,
    pub tokens_accepted: usize,
    pub non_pad_tokens: usize,
    pub pad_tokens: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub sequences: usize,
}

fn encode_sequence(seq: &TokenSequence) -> Vec<u8> {
    let c = seq.len();
    let mut payload = Vec::with_capacity(4 + c * 6);
    payload.extend_from_slice(&(c as u32).to_le_bytes());
    for id in &seq.ids {
        payload.extend_from_slice(&id.to_le_bytes());
    }
    for k in &seq.kinds {
        payload.push(k.code());
    }
    for m in &seq.loss_mask {
        payload.push(u8::from(*m));
    }
    payload
}

fn decode_sequence(payload: &[u8]) -> Result<TokenSequence> {
    let bad = |msg: &str| ForgeError::Parse {
        offset: 0,
        message: format!("shard record: {msg}"),
    };
    if payload.len() < 4 {
        return Err(bad("truncated header"));
    }
    let c = u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize;
    let expect = 4 + c * 4 + c + c;
    if payload.len() != expect {
        return Err(bad("payload length mismatch"));
    }
    let mut ids = Vec::with_capacity(c);
    for i in 0..c {
        let at = 4 + i * 4;
        ids.push(u32::from_le_bytes(payload[at..at + 4].try_into().unwrap()));
    }
    let kinds_at = 4 + c * 4;
    let mut kinds = Vec::with_capacity(c);
    for i in 0..c {
        kinds.push(TokenKind::from_code(payload[kinds_at + i])?);
    }
    let mask_at = kinds_at + c;
    let loss_mask = payload[mask_at..mask_at + c].iter().map(|&b| b != 0).collect();
    Ok(TokenSequence {
        ids,
        kinds,
        loss_mask,
    })
}

/// Writes sequences as `{stem}-NNNN.bin` shards of at most `per_shard`
/// records each, plus `{stem}-index.json`.
pub fn write_shards(
    dir: impl AsRef<Path>,
    stem: &str,
    seqs: &[TokenSequence],
    per_shard: usize,
    context_length: usize,
    report: &PackReport,
) -> Result<ShardIndex> {
    if per_shard == 0 {
        return Err(ForgeError::InvalidDims("per_shard must be >= 1".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut shards = Vec::new();
    for (si, chunk) in seqs.chunks(per_shard).enumerate() {
        let name = format!("{stem}-{si:04}.bin");
        let mut f = File::create(dir.join(&name))?;
        for seq in chunk {
            let payload = encode_sequence(seq);
            f.write_all(&(payload.len() as u32).to_le_bytes())?;
            f.write_all(&payload)?;
        }
        shards.push(ShardEntry {
            file: name,
            sequences: chunk.len(),
        });
    }
    let index = ShardIndex {
        context_length,
        total_sequences: seqs.len(),
        shards,
        docs_in: report.docs_in,
        docs_rejected: report.docs_rejected.clone(),
        tokens_accepted: report.tokens_accepted,
        non_pad_tokens: report.non_pad_tokens_out,
        pad_tokens: report.pad_tokens_out,
    };
    let mut f = File::create(dir.join(format!("{stem}-index.json")))?;
    serde_json::to_writer_pretty(&mut f, &index)?;
    f.write_all(b"\n")?;
    Ok(index)
}

/// Reads every record of one shard file.
pub fn read_shard(path: impl AsRef<Path>) -> Result<Vec<TokenSequence>> {
    let mut f = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        match f.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len_buf) as usize;
        let mut payload = vec![0u8; len];
        f.read_exact(&mut payload)?;
        out.push(decode_sequence(&payload)?);
    }
    Ok(out)
}

/// Reads an index and all shards it names (paths relative to the index).
pub fn read_all_shards(index_path: impl AsRef<Path>) -> Result<(ShardIndex, Vec<TokenSequence>)> {
    let index_path = index_path.as_ref();
    let index: ShardIndex = serde_json::from_reader(File::open(index_path)?)?;
    let dir: PathBuf = index_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut seqs = Vec::with_capacity(index.total_sequences);
    for entry in &index.shards {
        seqs.extend(read_shard(dir.join(&entry.file))?);
    }
    Ok((index, seqs))
}
