//! Context capture into CRC-protected configuration frames, DRAM region
//! bookkeeping and sealed (encrypted + authenticated) context images.
//!
//! Frame 0 carries the job payload in its data words (the CRC word is
//! skipped when counting): words 0-1 hold `remaining_cycles` (lo, hi),
//! words 2-3 hold `kernel_state` (lo, hi), word 4 the job id and word 5 the
//! slot id. Every other data word of every frame is zero.

mod seal;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

pub use seal::{seal, unseal, unseal_bytes, SealedContext, SessionKey, BLOB_MAGIC, BLOB_VERSION};

use crate::costmodel::FrameModel;
use crate::fabric::SlotId;
use crate::{JobId, Nanos};

/// Bytes of metadata stored ahead of the frame data in every region.
pub const REGION_HEADER_BYTES: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrityFailure {
    Truncated,
    BadMagic,
    UnsupportedVersion(u8),
    LengthMismatch,
    TagMismatch,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("DRAM budget exhausted: requested {requested} bytes, {available} available")]
    CapacityExceeded { requested: u64, available: u64 },
    #[error("CRC mismatch in frame {frame}")]
    CrcMismatch { frame: usize },
    #[error("sealed context failed integrity check ({0:?})")]
    Integrity(IntegrityFailure),
    #[error("context image could not be decoded: {0}")]
    Decode(String),
}

/// One configuration frame of `words_per_frame` 32-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub words: Vec<u32>,
}

impl Frame {
    fn data_words(&self, crc_index: usize) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().filter(move |(i, _)| *i != crc_index).map(|(_, w)| *w)
    }
}

/// Job state as seen by the context layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeState {
    pub job_id: JobId,
    pub slot_id: SlotId,
    pub remaining_cycles: u64,
    pub kernel_state: u64,
}

/// A captured context: header fields plus the frames holding the state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextImage {
    pub job_id: JobId,
    pub slot_id: SlotId,
    pub captured_at: Nanos,
    pub remaining_cycles: u64,
    pub kernel_state: u64,
    pub crc_word_index: u32,
    pub frames: Vec<Frame>,
}

/// A contiguous DRAM allocation holding one context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemoryRegion {
    pub base: u64,
    pub size: u64,
}

impl MemoryRegion {
    pub fn end(&self) -> u64 {
        self.base + self.size
    }

    pub fn overlaps(&self, other: &MemoryRegion) -> bool {
        self.base < other.end() && other.base < self.end()
    }
}

/// CRC-32 (IEEE, reflected) over `words` serialized little-endian.
pub fn compute_frame_crc(words: &[u32]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for w in words {
        hasher.update(&w.to_le_bytes());
    }
    hasher.finalize()
}

fn physical_index(data_index: usize, crc_index: usize) -> usize {
    if data_index < crc_index {
        data_index
    } else {
        data_index + 1
    }
}

fn seal_frame(words: &mut [u32], crc_index: usize) {
    let data: Vec<u32> = words.iter().enumerate().filter(|(i, _)| *i != crc_index).map(|(_, w)| *w).collect();
    words[crc_index] = compute_frame_crc(&data);
}

/// Serializes a paused job's state into `frame_count` frames.
pub fn capture(state: &RuntimeState, captured_at: Nanos, model: &FrameModel, frame_count: u32) -> ContextImage {
    let words_per_frame = model.words_per_frame as usize;
    let crc_index = model.crc_word_index as usize;
    let payload = [
        state.remaining_cycles as u32,
        (state.remaining_cycles >> 32) as u32,
        state.kernel_state as u32,
        (state.kernel_state >> 32) as u32,
        state.job_id.0,
        state.slot_id.0,
    ];
    let frames = (0..frame_count.max(1))
        .map(|n| {
            let mut words = vec![0u32; words_per_frame];
            if n == 0 {
                for (i, w) in payload.iter().enumerate() {
                    words[physical_index(i, crc_index)] = *w;
                }
            }
            seal_frame(&mut words, crc_index);
            Frame { words }
        })
        .collect();
    ContextImage {
        job_id: state.job_id,
        slot_id: state.slot_id,
        captured_at,
        remaining_cycles: state.remaining_cycles,
        kernel_state: state.kernel_state,
        crc_word_index: model.crc_word_index,
        frames,
    }
}

/// Rebuilds the runtime state from a captured image, checking every frame CRC.
pub fn restore(image: &ContextImage) -> Result<RuntimeState, ContextError> {
    let first = image.frames.first().ok_or_else(|| ContextError::Decode("image has no frames".into()))?;
    let words_per_frame = first.words.len();
    let crc_index = image.crc_word_index as usize;
    if crc_index >= words_per_frame || words_per_frame <= crate::costmodel::PAYLOAD_WORDS as usize {
        return Err(ContextError::Decode(format!(
            "frame geometry {words_per_frame} words / crc word {crc_index} cannot hold a context"
        )));
    }
    for (n, frame) in image.frames.iter().enumerate() {
        if frame.words.len() != words_per_frame {
            return Err(ContextError::Decode(format!("frame {n} has {} words", frame.words.len())));
        }
        let data: Vec<u32> = frame.data_words(crc_index).collect();
        if compute_frame_crc(&data) != frame.words[crc_index] {
            return Err(ContextError::CrcMismatch { frame: n });
        }
    }
    let p: Vec<u32> = first.data_words(crc_index).take(6).collect();
    let state = RuntimeState {
        remaining_cycles: u64::from(p[0]) | (u64::from(p[1]) << 32),
        kernel_state: u64::from(p[2]) | (u64::from(p[3]) << 32),
        job_id: JobId(p[4]),
        slot_id: SlotId(p[5]),
    };
    if state.remaining_cycles != image.remaining_cycles
        || state.kernel_state != image.kernel_state
        || state.job_id != image.job_id
        || state.slot_id != image.slot_id
    {
        return Err(ContextError::Decode("image header disagrees with frame payload".into()));
    }
    Ok(state)
}

/// Owns one run's DRAM layout, session key and nonce stream.
#[derive(Debug, Clone)]
pub struct ContextStore {
    key: SessionKey,
    nonces: Xoshiro256PlusPlus,
    budget_bytes: Option<u64>,
    next_base: u64,
    regions: Vec<MemoryRegion>,
}

impl ContextStore {
    pub fn new(key: SessionKey, nonce_seed: u64) -> Self {
        Self {
            key,
            nonces: Xoshiro256PlusPlus::seed_from_u64(nonce_seed),
            budget_bytes: None,
            next_base: 0,
            regions: Vec::new(),
        }
    }

    /// Derives the key and nonce stream from a single seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x5ea1_ed00_c0de_f00d);
        let key = SessionKey::random(&mut rng);
        Self::new(key, seed)
    }

    pub fn with_budget(mut self, bytes: u64) -> Self {
        self.budget_bytes = Some(bytes);
        self
    }

    pub fn key(&self) -> &SessionKey {
        &self.key
    }

    pub fn regions(&self) -> &[MemoryRegion] {
        &self.regions
    }

    /// Bump-allocates room for `frames` frames plus the metadata header.
    pub fn allocate_region(&mut self, frames: u32, model: &FrameModel) -> Result<MemoryRegion, ContextError> {
        let size = u64::from(frames.max(1)) * model.bytes_per_frame() + REGION_HEADER_BYTES;
        if let Some(budget) = self.budget_bytes {
            let available = budget.saturating_sub(self.next_base);
            if size > available {
                return Err(ContextError::CapacityExceeded { requested: size, available });
            }
        }
        let region = MemoryRegion { base: self.next_base, size };
        self.next_base += size;
        self.regions.push(region);
        Ok(region)
    }

    /// Seals under the store key with a fresh nonce.
    pub fn seal(&mut self, image: &ContextImage) -> SealedContext {
        let mut nonce = [0u8; 16];
        rand::Rng::fill_bytes(&mut self.nonces, &mut nonce);
        seal(image, &self.key, nonce)
    }

    pub fn unseal(&self, blob: &SealedContext) -> Result<ContextImage, ContextError> {
        unseal(blob, &self.key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bitwise CRC-32 used as an independent oracle.
    fn crc32_bitwise(bytes: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &b in bytes {
            crc ^= u32::from(b);
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
            }
        }
        !crc
    }

    fn state(remaining: u64, kernel: u64) -> RuntimeState {
        RuntimeState { job_id: JobId(3), slot_id: SlotId(2), remaining_cycles: remaining, kernel_state: kernel }
    }

    #[test]
    fn crc_of_zero_frame() {
        // zlib.crc32(bytes(400))
        assert_eq!(compute_frame_crc(&[0u32; 100]), 0x4622_0D0C);
        assert_eq!(crc32_bitwise(&[0u8; 400]), 0x4622_0D0C);
    }

    #[test]
    fn crc_matches_bitwise_oracle() {
        let words: Vec<u32> = (0..100u32).map(|i| i.wrapping_mul(0x9E37_79B9)).collect();
        let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        assert_eq!(compute_frame_crc(&words), crc32_bitwise(&bytes));
        assert_eq!(compute_frame_crc(&words), compute_frame_crc(&words));
    }

    #[test]
    fn capture_restore_round_trip() {
        let s = state(98_060 * 7, 0xDEAD_BEEF_0123_4567);
        let image = capture(&s, 1234, &FrameModel::SERIES7, 3);
        assert_eq!(image.frames.len(), 3);
        assert!(image.frames.iter().all(|f| f.words.len() == 101));
        assert_eq!(restore(&image).unwrap(), s);
        let zero = state(0, 0);
        assert_eq!(restore(&capture(&zero, 0, &FrameModel::SERIES7, 1)).unwrap(), zero);
        assert_eq!(capture(&s, 1234, &FrameModel::SERIES7, 3), image);
    }

    #[test]
    fn payload_layout() {
        let s = state(0x1_0000_0002, 0x3_0000_0004);
        let image = capture(&s, 0, &FrameModel::SERIES7, 2);
        assert_eq!(&image.frames[0].words[..6], &[2, 1, 4, 3, 3, 2]);
        assert!(image.frames[0].words[6..50].iter().all(|w| *w == 0));
        assert!(image.frames[1].words.iter().enumerate().all(|(i, w)| i == 50 || *w == 0));
        // payload skips the CRC word when it sits among the first data words
        let tight = FrameModel { words_per_frame: 8, crc_word_index: 2, ..FrameModel::SERIES7 };
        let image = capture(&s, 0, &tight, 1);
        assert_eq!(image.frames[0].words[0], 2);
        assert_eq!(image.frames[0].words[3], 4);
        assert_eq!(restore(&image).unwrap(), s);
    }

    #[test]
    fn corrupted_words_are_caught() {
        let image = capture(&state(5, 6), 0, &FrameModel::SERIES7, 2);
        let mut bad = image.clone();
        bad.frames[0].words[1] ^= 1;
        assert_eq!(restore(&bad), Err(ContextError::CrcMismatch { frame: 0 }));
        let mut bad = image.clone();
        bad.frames[1].words[50] ^= 0x8000_0000;
        assert_eq!(restore(&bad), Err(ContextError::CrcMismatch { frame: 1 }));
        let mut bad = image.clone();
        bad.remaining_cycles += 1;
        assert!(matches!(restore(&bad), Err(ContextError::Decode(_))));
        let mut empty = image;
        empty.frames.clear();
        assert!(matches!(restore(&empty), Err(ContextError::Decode(_))));
    }

    #[test]
    fn region_allocation() {
        let mut store = ContextStore::from_seed(1);
        assert_eq!(store.allocate_region(1, &FrameModel::SERIES7).unwrap(), MemoryRegion { base: 0, size: 468 });
        assert_eq!(store.allocate_region(1, &FrameModel::SERIES7).unwrap().base, 468);
        let ultra = store.allocate_region(2, &FrameModel::ULTRASCALE).unwrap();
        assert_eq!(ultra, MemoryRegion { base: 936, size: 2 * 123 * 4 + 64 });

        let mut tiny = ContextStore::from_seed(1).with_budget(100);
        assert_eq!(
            tiny.allocate_region(1, &FrameModel::SERIES7),
            Err(ContextError::CapacityExceeded { requested: 468, available: 100 })
        );
    }

    proptest! {
        #[test]
        fn restore_inverts_capture(remaining in any::<u64>(), kernel in any::<u64>(), job in any::<u32>(),
                                   slot in any::<u32>(), frames in 1u32..5) {
            let s = RuntimeState { job_id: JobId(job), slot_id: SlotId(slot), remaining_cycles: remaining, kernel_state: kernel };
            prop_assert_eq!(restore(&capture(&s, 9, &FrameModel::SERIES7, frames)).unwrap(), s);
        }

        #[test]
        fn any_single_word_corruption_is_caught(remaining in any::<u64>(), frame in 0usize..3, word in 0usize..101,
                                                flip in 1u32..=u32::MAX) {
            let mut image = capture(&state(remaining, 1), 0, &FrameModel::SERIES7, 3);
            image.frames[frame].words[word] ^= flip;
            prop_assert_eq!(restore(&image), Err(ContextError::CrcMismatch { frame }));
        }

        #[test]
        fn allocations_are_disjoint(sizes in prop::collection::vec(1u32..300, 1..40)) {
            let mut store = ContextStore::from_seed(0);
            for (i, frames) in sizes.iter().enumerate() {
                let model = if i % 2 == 0 { FrameModel::SERIES7 } else { FrameModel::ULTRASCALE };
                store.allocate_region(*frames, &model).unwrap();
            }
            let regions = store.regions();
            for (i, a) in regions.iter().enumerate() {
                for b in &regions[i + 1..] {
                    prop_assert!(!a.overlaps(b));
                }
            }
        }
    }
}
