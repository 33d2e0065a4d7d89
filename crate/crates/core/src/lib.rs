//! Passive BLE advertising analysis toolkit.
//!
//! The crate covers the full desk-scale measurement chain: advertising-frame
//! parsing and exposure-notification classification ([`frames`]), a
//! deterministic broadcast simulator with rotating link-layer identities
//! ([`sim`]), capture files and the track-building pipeline ([`capture`]),
//! inter-broadcast latency statistics ([`stats`]), the entropy-based
//! fingerprinting-anonymity metric ([`anonymity`]), and the pseudonym
//! linking attack with its evaluation harness ([`linker`]).

pub mod anonymity;
pub mod capture;
pub mod frames;
pub mod linker;
pub mod sim;
pub mod stats;
