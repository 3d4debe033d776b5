//! Two-party session engine.
//!
//! The garbler holds a compiled program and the evaluator holds the input
//! words. Every step of the execution is one garbling of the universal step
//! circuit; the garbler feeds the instruction word as its private input and
//! the machine state is chained from step to step as labels.
//!
//! Flights, garbler first (`->` garbler to evaluator):
//!
//! ```text
//! -> HELLO PHI_META [COMMIT]                    malicious only:
//! <- [CHALLENGE]                                  check set
//! -> [OPEN_SEED] OT1
//! <- OT2                                          input labels
//! -> OT3 INIT BATCH x k          <- YBACK         once per k steps (stream)
//! -> ... BATCH x k               <- YBACK
//! -> DECODE                      <- OUTPUT [VERDICT]
//! ```
//!
//! In full mode all BATCH frames ride in the OT3 flight together with
//! DECODE, so a session takes two rounds (three with cut-and-choose).

pub mod account;
pub mod channel;
pub mod engine;
pub mod hiding;
mod session;
mod wire;

use std::path::PathBuf;

use serde::Serialize;

use crate::garble::GarbleError;
use crate::mips::{CpuStepConfig, MipsError};
use crate::ot::{OtError, OtProfile};

pub use account::{account, copies_for_multi_execution, predict, predict_rounds, undetected_cheat_probability};
pub use channel::{Channel, ChannelError, SessionTranscript, Tag};
pub use hiding::{hide_output, unhide_output, HidingError, HidingKeys};
pub use session::{default_resident_limit, run_evaluator, run_garbler, run_loopback};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Mode {
    /// One round trip per `k` steps.
    Stream(u32),
    /// Every step in one flight.
    Full,
}

impl Mode {
    /// Steps per delivery for a `t`-step run.
    pub fn chunk(self, t: u64) -> u64 {
        match self {
            Mode::Stream(k) => (k as u64).min(t),
            Mode::Full => t,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        if s == "full" {
            return Ok(Mode::Full);
        }
        s.strip_prefix("stream:")
            .and_then(|k| k.parse::<u32>().ok())
            .filter(|&k| k >= 1)
            .map(Mode::Stream)
            .ok_or_else(|| format!("mode must be `full` or `stream:K` with K >= 1, got `{s}`"))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Stream(k) => write!(f, "stream:{k}"),
            Mode::Full => f.write_str("full"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Security {
    Hbc,
    /// Cut-and-choose over `s` copies.
    Malicious(u32),
}

impl Security {
    pub fn copies(self) -> u32 {
        match self {
            Security::Hbc => 1,
            Security::Malicious(s) => s,
        }
    }

    /// Copies opened for checking: `floor(s / 2)`.
    pub fn checked(self) -> u32 {
        match self {
            Security::Hbc => 0,
            Security::Malicious(s) => s / 2,
        }
    }

    pub fn evaluated(self) -> u32 {
        self.copies() - self.checked()
    }
}

impl std::str::FromStr for Security {
    type Err = String;
    fn from_str(s: &str) -> Result<Security, String> {
        if s == "hbc" {
            return Ok(Security::Hbc);
        }
        s.strip_prefix("malicious:")
            .and_then(|k| k.parse::<u32>().ok())
            .filter(|&k| k >= 1)
            .map(Security::Malicious)
            .ok_or_else(|| format!("security must be `hbc` or `malicious:S` with S >= 1, got `{s}`"))
    }
}

impl std::fmt::Display for Security {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Security::Hbc => f.write_str("hbc"),
            Security::Malicious(s) => write!(f, "malicious:{s}"),
        }
    }
}

/// Settings of one endpoint. Mode, security, OT profile and output hiding
/// must agree between the parties; the HELLO exchange checks that.
#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub mode: Mode,
    pub security: Security,
    /// Source of all of this endpoint's randomness.
    pub fresh_seed: [u8; 32],
    pub step_limit: u64,
    /// Expected step circuit; the evaluator rejects a different one.
    pub cpu: Option<CpuStepConfig>,
    pub output_hiding: bool,
    pub ot_profile: OtProfile,
    /// Cap on table bytes the evaluator holds at once; defaults to half the
    /// available memory.
    pub resident_limit: Option<u64>,
    /// Directory for spooling tables over the limit in full mode. Without
    /// it such a session is refused.
    pub spill_dir: Option<PathBuf>,
    pub record_transcript: bool,
    /// Evaluator keeps 64-bit prefixes of every label it receives.
    pub collect_label_digests: bool,
    /// Garbler fault injection for auditing cut-and-choose: these copies
    /// decode their first output bit inverted.
    pub corrupt_copies: Vec<u32>,
}

impl SessionConfig {
    pub fn new(mode: Mode, security: Security, fresh_seed: [u8; 32]) -> SessionConfig {
        SessionConfig {
            mode,
            security,
            fresh_seed,
            step_limit: 10_000_000,
            cpu: None,
            output_hiding: false,
            ot_profile: OtProfile::Secure,
            resident_limit: None,
            spill_dir: None,
            record_transcript: false,
            collect_label_digests: false,
            corrupt_copies: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.mode == Mode::Stream(0) {
            return Err(SessionError::Config("instructions per round must be at least 1".into()));
        }
        if self.security == Security::Malicious(0) {
            return Err(SessionError::Config("cut-and-choose needs at least one copy".into()));
        }
        if let Some(&c) = self.corrupt_copies.iter().find(|&&c| c >= self.security.copies()) {
            return Err(SessionError::Config(format!("corrupted copy {c} does not exist")));
        }
        if !self.ot_profile.is_available() {
            return Err(OtError::ProfileUnavailable(self.ot_profile).into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("oblivious transfer: {0}")]
    Ot(#[from] OtError),
    #[error(transparent)]
    Mips(#[from] MipsError),
    #[error(transparent)]
    Garble(#[from] GarbleError),
    #[error(transparent)]
    Hiding(#[from] HidingError),
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error("peer configuration differs: {0}")]
    Mismatch(String),
    #[error("protocol violation at frame {frame}: {message}")]
    Protocol { frame: u64, message: String },
    #[error("evaluator would hold {required} bytes of tables, over the {limit}-byte limit")]
    ResourceLimit { required: u64, limit: u64 },
    #[error("output bit {bit} of copy {copy} matches neither decode entry")]
    Integrity { copy: u32, bit: usize },
    #[error("evaluated copies disagree and no output has a strict majority")]
    MajorityTie,
    #[error("evaluator reported cheating on copy {0}")]
    CheatReported(u32),
    #[error("table spool: {0}")]
    Spool(#[from] std::io::Error),
}

/// Communication and memory counters of one endpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CommStats {
    /// Round trips, counted at each evaluator reply flight.
    pub ot_rounds: u64,
    pub bytes_garbler_to_evaluator: u64,
    pub bytes_evaluator_to_garbler: u64,
    /// Most garbled tables held at once.
    pub peak_resident_tables: u64,
    /// Most wire labels held at once.
    pub peak_resident_labels: u64,
}

/// What the evaluator learns about the program besides the output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SideInfo {
    pub step_count: u64,
    pub netlist_inputs: u64,
    pub netlist_outputs: u64,
    pub netlist_gates: u64,
    pub netlist_nonfree: u64,
    pub dmem_words: u32,
    pub include_mult: bool,
    pub input_region: (u32, u32),
    pub output_region: (u32, u32),
}

impl SideInfo {
    /// Never part of the side information.
    pub const WITHHELD: [&'static str; 4] = ["weights", "layer sizes", "instruction words", "garbler data"];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Ok,
    Cheat { copy: u32 },
}

#[derive(Clone, Debug)]
pub struct EvaluatorReport {
    /// Plain output, unless hiding is on.
    pub y: Option<Vec<u32>>,
    /// Masked output and tag when hiding is on.
    pub hidden: Option<Vec<u32>>,
    pub stats: CommStats,
    pub side_info: SideInfo,
    pub verdict: Verdict,
    pub transcript: Option<SessionTranscript>,
    pub label_digests: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct GarblerReport {
    /// Output recovered from the hidden form when hiding is on.
    pub y: Option<Vec<u32>>,
    pub stats: CommStats,
    pub side_info: SideInfo,
    pub transcript: Option<SessionTranscript>,
}
