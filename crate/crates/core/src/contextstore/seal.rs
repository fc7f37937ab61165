//! Encrypt-then-MAC sealing: AES-128-CTR under a per-blob nonce, tagged
//! with HMAC-SHA-256 over `nonce || ciphertext`.
//!
//! Wire format: `"FPCS"` | version `u8` = 1 | nonce (16) | ciphertext length
//! (`u32` LE) | ciphertext | tag (32).

use aes::Aes128;
use ctr::cipher::{KeyIvInit, StreamCipher};
use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use super::{ContextError, ContextImage, Frame, IntegrityFailure};
use crate::fabric::SlotId;
use crate::JobId;

pub const BLOB_MAGIC: &[u8; 4] = b"FPCS";
pub const BLOB_VERSION: u8 = 1;

const NONCE_LEN: usize = 16;
const TAG_LEN: usize = 32;
const HEADER_LEN: usize = 4 + 1 + NONCE_LEN + 4;

type Aes128Ctr = ctr::Ctr128BE<Aes128>;
type HmacSha256 = Hmac<Sha256>;

/// 128-bit session key. Encryption and MAC subkeys are derived from it.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey([u8; 16]);

impl SessionKey {
    pub fn new(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    fn subkey(&self, label: &[u8]) -> [u8; 32] {
        let mut mac = <HmacSha256 as KeyInit>::new_from_slice(&self.0).expect("HMAC accepts any key length");
        mac.update(label);
        mac.finalize().into_bytes().into()
    }

    fn enc_key(&self) -> [u8; 16] {
        let full = self.subkey(b"fps-context/enc");
        full[..16].try_into().expect("16-byte prefix")
    }

    fn mac_key(&self) -> [u8; 32] {
        self.subkey(b"fps-context/mac")
    }
}

impl std::fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SessionKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedContext {
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl SealedContext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(BLOB_MAGIC);
        out.push(BLOB_VERSION);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    /// Parses the wire format. Framing damage is reported as an integrity failure.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContextError> {
        let fail = |f| ContextError::Integrity(f);
        if bytes.len() < HEADER_LEN + TAG_LEN {
            return Err(fail(IntegrityFailure::Truncated));
        }
        if &bytes[..4] != BLOB_MAGIC {
            return Err(fail(IntegrityFailure::BadMagic));
        }
        if bytes[4] != BLOB_VERSION {
            return Err(fail(IntegrityFailure::UnsupportedVersion(bytes[4])));
        }
        let nonce: [u8; NONCE_LEN] = bytes[5..5 + NONCE_LEN].try_into().expect("nonce slice");
        let len = u32::from_le_bytes(bytes[21..25].try_into().expect("length slice")) as usize;
        if bytes.len() != HEADER_LEN + len + TAG_LEN {
            return Err(fail(IntegrityFailure::LengthMismatch));
        }
        let ciphertext = bytes[HEADER_LEN..HEADER_LEN + len].to_vec();
        let tag: [u8; TAG_LEN] = bytes[HEADER_LEN + len..].try_into().expect("tag slice");
        Ok(Self { nonce, ciphertext, tag })
    }
}

fn tag_for(key: &SessionKey, nonce: &[u8], ciphertext: &[u8]) -> HmacSha256 {
    let mut mac = <HmacSha256 as KeyInit>::new_from_slice(&key.mac_key()).expect("HMAC accepts any key length");
    mac.update(nonce);
    mac.update(ciphertext);
    mac
}

fn apply_keystream(key: &SessionKey, nonce: &[u8; NONCE_LEN], data: &mut [u8]) {
    let mut cipher = Aes128Ctr::new(&key.enc_key().into(), &(*nonce).into());
    cipher.apply_keystream(data);
}

fn encode_image(image: &ContextImage) -> Vec<u8> {
    let words_per_frame = image.frames.first().map_or(0, |f| f.words.len());
    let mut out = Vec::with_capacity(44 + image.frames.len() * words_per_frame * 4);
    out.extend_from_slice(&image.job_id.0.to_le_bytes());
    out.extend_from_slice(&image.slot_id.0.to_le_bytes());
    out.extend_from_slice(&image.captured_at.to_le_bytes());
    out.extend_from_slice(&image.remaining_cycles.to_le_bytes());
    out.extend_from_slice(&image.kernel_state.to_le_bytes());
    out.extend_from_slice(&image.crc_word_index.to_le_bytes());
    out.extend_from_slice(&(words_per_frame as u32).to_le_bytes());
    out.extend_from_slice(&(image.frames.len() as u32).to_le_bytes());
    for frame in &image.frames {
        debug_assert_eq!(frame.words.len(), words_per_frame);
        for w in &frame.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ContextError> {
        if self.bytes.len() < N {
            return Err(ContextError::Decode("payload truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("split length"))
    }

    fn u32(&mut self) -> Result<u32, ContextError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, ContextError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
}

fn decode_image(bytes: &[u8]) -> Result<ContextImage, ContextError> {
    let mut r = Reader { bytes };
    let job_id = JobId(r.u32()?);
    let slot_id = SlotId(r.u32()?);
    let captured_at = r.u64()?;
    let remaining_cycles = r.u64()?;
    let kernel_state = r.u64()?;
    let crc_word_index = r.u32()?;
    let words_per_frame = r.u32()? as usize;
    let frame_count = r.u32()? as usize;
    if r.bytes.len() != frame_count.saturating_mul(words_per_frame).saturating_mul(4) {
        return Err(ContextError::Decode(format!(
            "expected {frame_count} frames of {words_per_frame} words, found {} bytes",
            r.bytes.len()
        )));
    }
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let words = (0..words_per_frame).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        frames.push(Frame { words });
    }
    Ok(ContextImage { job_id, slot_id, captured_at, remaining_cycles, kernel_state, crc_word_index, frames })
}

/// Serializes, encrypts and tags an image.
pub fn seal(image: &ContextImage, key: &SessionKey, nonce: [u8; NONCE_LEN]) -> SealedContext {
    let mut ciphertext = encode_image(image);
    apply_keystream(key, &nonce, &mut ciphertext);
    let tag = tag_for(key, &nonce, &ciphertext).finalize().into_bytes().into();
    SealedContext { nonce, ciphertext, tag }
}

/// Verifies the tag, then decrypts and decodes.
pub fn unseal(blob: &SealedContext, key: &SessionKey) -> Result<ContextImage, ContextError> {
    tag_for(key, &blob.nonce, &blob.ciphertext)
        .verify_slice(&blob.tag)
        .map_err(|_| ContextError::Integrity(IntegrityFailure::TagMismatch))?;
    let mut plaintext = blob.ciphertext.clone();
    apply_keystream(key, &blob.nonce, &mut plaintext);
    decode_image(&plaintext)
}

pub fn unseal_bytes(bytes: &[u8], key: &SessionKey) -> Result<ContextImage, ContextError> {
    unseal(&SealedContext::from_bytes(bytes)?, key)
}
