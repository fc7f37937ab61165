//! Configuration-frame geometry and context-switch timing.
//!
//! All durations are integer nanoseconds. The defaults reproduce the Zynq-7020
//! PCAP measurements: 31.1 us to save and 33.7 us to restore one frame.

use std::num::NonZeroU32;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ResourceVector;
use crate::Nanos;

/// Payload words the context layout needs in frame 0, besides the CRC word.
pub(crate) const PAYLOAD_WORDS: u32 = 6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("frame model: {0}")]
    Frame(String),
    #[error("clock must be positive, got {0} MHz")]
    Clock(f64),
}

/// Geometry of one configuration frame and the LUT/FF packing used to
/// estimate how many frames a footprint spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameModel {
    pub words_per_frame: u32,
    pub word_bits: u32,
    /// Zero-based position of the CRC word within a frame.
    pub crc_word_index: u32,
    pub luts_per_frame: u32,
    pub ffs_per_frame: u32,
    /// BRAM/DSP/routing allowance added to every estimate.
    pub extra_frames: u32,
}

impl FrameModel {
    /// 7-series frame: 101 x 32-bit words.
    pub const SERIES7: FrameModel = FrameModel {
        words_per_frame: 101,
        word_bits: 32,
        crc_word_index: 50,
        luts_per_frame: 50,
        ffs_per_frame: 800,
        extra_frames: 0,
    };

    /// UltraScale frame: 123 words, CRC kept at the middle word.
    pub const ULTRASCALE: FrameModel = FrameModel { words_per_frame: 123, crc_word_index: 61, ..FrameModel::SERIES7 };

    pub fn bits_per_frame(&self) -> u32 {
        self.words_per_frame * self.word_bits
    }

    pub fn bytes_per_frame(&self) -> u64 {
        u64::from(self.words_per_frame) * u64::from(self.word_bits / 8)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Frame(msg));
        if self.word_bits != 32 {
            return bad(format!("word_bits must be 32, got {}", self.word_bits));
        }
        if self.words_per_frame <= PAYLOAD_WORDS {
            return bad(format!("words_per_frame must exceed {PAYLOAD_WORDS}, got {}", self.words_per_frame));
        }
        if self.crc_word_index >= self.words_per_frame {
            return bad(format!(
                "crc_word_index {} out of range for {} words",
                self.crc_word_index, self.words_per_frame
            ));
        }
        if self.luts_per_frame == 0 || self.ffs_per_frame == 0 {
            return bad("luts_per_frame and ffs_per_frame must be positive".into());
        }
        Ok(())
    }
}

impl Default for FrameModel {
    fn default() -> Self {
        FrameModel::SERIES7
    }
}

/// Per-frame save/restore rates plus fixed per-switch costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchCostModel {
    pub save_ns_per_frame: Nanos,
    pub restore_ns_per_frame: Nanos,
    pub reset_ns: Nanos,
    /// Charged with every restore; models reloading the partial bitstream.
    pub reconfig_load_ns: Nanos,
}

impl SwitchCostModel {
    pub const ZERO: SwitchCostModel =
        SwitchCostModel { save_ns_per_frame: 0, restore_ns_per_frame: 0, reset_ns: 0, reconfig_load_ns: 0 };
}

impl Default for SwitchCostModel {
    fn default() -> Self {
        SwitchCostModel { save_ns_per_frame: 31_100, restore_ns_per_frame: 33_700, reset_ns: 0, reconfig_load_ns: 0 }
    }
}

/// How many configuration frames a job's context spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameCountPolicy {
    SingleFrame,
    ResourceEstimate(FrameModel),
    Fixed(NonZeroU32),
}

pub fn estimate_frames(demand: &ResourceVector, policy: &FrameCountPolicy) -> u32 {
    match policy {
        FrameCountPolicy::SingleFrame => 1,
        FrameCountPolicy::Fixed(n) => n.get(),
        FrameCountPolicy::ResourceEstimate(model) => {
            let lut_frames = demand.luts.div_ceil(model.luts_per_frame);
            let ff_frames = demand.ffs.div_ceil(model.ffs_per_frame);
            (lut_frames + ff_frames + model.extra_frames).max(1)
        }
    }
}

pub fn save_cost(frames: u32, model: &SwitchCostModel) -> Nanos {
    u64::from(frames) * model.save_ns_per_frame
}

pub fn restore_cost(frames: u32, model: &SwitchCostModel) -> Nanos {
    u64::from(frames) * model.restore_ns_per_frame
}

/// Full cost of one save/restore pair.
pub fn switch_cost(frames: u32, model: &SwitchCostModel) -> Nanos {
    save_cost(frames, model) + restore_cost(frames, model) + model.reset_ns + model.reconfig_load_ns
}

/// An accelerator clock, held in integer kHz so cycle/time conversion is exact
/// for every clock whose period is a whole number of nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Clock {
    khz: u64,
}

impl Clock {
    pub fn from_mhz(mhz: f64) -> Result<Self, ModelError> {
        let khz = (mhz * 1000.0).round();
        if !mhz.is_finite() || khz < 1.0 {
            return Err(ModelError::Clock(mhz));
        }
        Ok(Clock { khz: khz as u64 })
    }

    pub fn mhz(&self) -> f64 {
        self.khz as f64 / 1000.0
    }

    /// Time at which cycle `cycles` ends, rounded to the nearest nanosecond.
    pub fn cycles_to_ns(&self, cycles: u64) -> Nanos {
        let num = u128::from(cycles) * 1_000_000;
        let den = u128::from(self.khz);
        ((2 * num + den) / (2 * den)) as Nanos
    }

    /// Upper bound on the nanoseconds between consecutive rounded cycle ends.
    pub fn max_cycle_ns(&self) -> Nanos {
        1_000_000u64.div_ceil(self.khz)
    }

    /// Largest cycle count whose end time is at or before `ns`.
    pub fn cycles_within(&self, ns: Nanos) -> u64 {
        let mut cycles = (u128::from(ns) * u128::from(self.khz) / 1_000_000) as u64;
        while self.cycles_to_ns(cycles + 1) <= ns {
            cycles += 1;
        }
        while cycles > 0 && self.cycles_to_ns(cycles) > ns {
            cycles -= 1;
        }
        cycles
    }
}

pub fn cycles_to_ns(cycles: u64, clock_mhz: f64) -> Result<Nanos, ModelError> {
    Ok(Clock::from_mhz(clock_mhz)?.cycles_to_ns(cycles))
}
