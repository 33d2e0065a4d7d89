//! Advertising-frame layout and the exposure-notification payload classifier.
//!
//! A non-connectable advertising frame is `header (2) | AdvA (6) | AdvData
//! (0..=31)`. Exposure-notification beacons are recognised purely by their
//! AdvData content: exactly 31 bytes laid out as
//!
//! ```text
//! offset  0..3   flags block (3 bytes, opaque)
//! offset  3..7   service-UUID block [len, type, uuid_lo, uuid_hi]
//! offset  7..23  rolling pseudonym (16 bytes)
//! offset 23..31  trailer (8 bytes, opaque)
//! ```
//!
//! The 16-bit service UUID sits in the last two bytes of its block in
//! little-endian wire order, so `0xFD6F` appears as `0x6F, 0xFD`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// 16-bit service UUID carried by every exposure-notification advertisement.
pub const GAEN_SERVICE_UUID: u16 = 0xFD6F;

/// Longest legal AdvData section in bytes.
pub const MAX_ADV_DATA_LEN: usize = 31;

/// AdvData length of a well-formed exposure-notification advertisement.
pub const GAEN_ADV_DATA_LEN: usize = 31;

/// Length of the rolling pseudonym in bytes.
pub const PSEUDONYM_LEN: usize = 16;

const HEADER_LEN: usize = 2;
const ADDRESS_LEN: usize = 6;
const MIN_FRAME_LEN: usize = HEADER_LEN + ADDRESS_LEN;
const MAX_FRAME_LEN: usize = MIN_FRAME_LEN + MAX_ADV_DATA_LEN;

const FLAGS_RANGE: Range<usize> = 0..3;
const UUID_RANGE: Range<usize> = 5..7;
const PSEUDONYM_RANGE: Range<usize> = 7..23;
const TRAILER_RANGE: Range<usize> = 23..31;

// Canonical service-UUID block: AD length 3, type 0x03 (16-bit UUID list).
const SERVICE_BLOCK_PREFIX: [u8; 2] = [0x03, 0x03];

/// Errors produced while building or parsing an advertising frame.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    /// Raw input shorter than header plus advertising address.
    #[error("frame of {len} bytes is shorter than the {MIN_FRAME_LEN}-byte minimum")]
    TooShort { len: usize },
    /// Raw input longer than a maximal advertising PDU.
    #[error("frame of {len} bytes exceeds the {MAX_FRAME_LEN}-byte maximum")]
    TooLong { len: usize },
}

/// 48-bit advertising address kept in wire byte order.
///
/// The canonical text form is the 17-character uppercase colon rendering,
/// e.g. `B4:17:A8:5D:21:F0`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddress([u8; 6]);

impl MacAddress {
    pub fn new(bytes: [u8; 6]) -> Self {
        MacAddress(bytes)
    }

    pub fn bytes(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Rejected text that does not match the canonical colon-separated form.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not a colon-separated MAC address: {0:?}")]
pub struct MacParseError(pub String);

impl FromStr for MacAddress {
    type Err = MacParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if s.len() != 17 || parts.len() != 6 {
            return Err(MacParseError(s.to_owned()));
        }
        let mut bytes = [0u8; 6];
        for (slot, part) in bytes.iter_mut().zip(&parts) {
            if part.len() != 2 || !part.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(MacParseError(s.to_owned()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| MacParseError(s.to_owned()))?;
        }
        Ok(MacAddress(bytes))
    }
}

impl Serialize for MacAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(D::Error::custom)
    }
}

/// One non-connectable advertising frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvertisementFrame {
    /// PDU header, kept opaque.
    pub header: [u8; 2],
    /// Advertising address (AdvA).
    pub adv_address: MacAddress,
    adv_data: Vec<u8>,
}

impl AdvertisementFrame {
    /// Builds a frame, rejecting AdvData longer than [`MAX_ADV_DATA_LEN`].
    pub fn new(
        header: [u8; 2],
        adv_address: MacAddress,
        adv_data: Vec<u8>,
    ) -> Result<Self, FrameError> {
        if adv_data.len() > MAX_ADV_DATA_LEN {
            return Err(FrameError::TooLong {
                len: MIN_FRAME_LEN + adv_data.len(),
            });
        }
        Ok(AdvertisementFrame {
            header,
            adv_address,
            adv_data,
        })
    }

    pub fn adv_data(&self) -> &[u8] {
        &self.adv_data
    }
}

/// Payload of an exposure-notification advertisement.
///
/// The service UUID is not stored: classification guarantees it equals
/// [`GAEN_SERVICE_UUID`] for every value of this type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaenPayload {
    /// Flags block, kept opaque.
    pub flags: [u8; 3],
    /// 16-byte rolling pseudonym.
    pub pseudonym: [u8; PSEUDONYM_LEN],
    /// Opaque trailing bytes.
    pub trailer: [u8; 8],
}

impl GaenPayload {
    pub fn service_uuid(&self) -> u16 {
        GAEN_SERVICE_UUID
    }

    /// Canonical 31-byte AdvData encoding of this payload.
    pub fn to_adv_data(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(GAEN_ADV_DATA_LEN);
        out.extend_from_slice(&self.flags);
        out.extend_from_slice(&SERVICE_BLOCK_PREFIX);
        out.extend_from_slice(&GAEN_SERVICE_UUID.to_le_bytes());
        out.extend_from_slice(&self.pseudonym);
        out.extend_from_slice(&self.trailer);
        out
    }
}

/// Splits a raw frame into header, advertising address, and AdvData.
///
/// Accepts any length in `[8, 39]`; everything past the first 8 bytes is
/// AdvData and is never interpreted here.
pub fn parse_advertisement(raw: &[u8]) -> Result<AdvertisementFrame, FrameError> {
    if raw.len() < MIN_FRAME_LEN {
        return Err(FrameError::TooShort { len: raw.len() });
    }
    if raw.len() > MAX_FRAME_LEN {
        return Err(FrameError::TooLong { len: raw.len() });
    }
    let mut header = [0u8; HEADER_LEN];
    header.copy_from_slice(&raw[..HEADER_LEN]);
    let mut address = [0u8; ADDRESS_LEN];
    address.copy_from_slice(&raw[HEADER_LEN..MIN_FRAME_LEN]);
    Ok(AdvertisementFrame {
        header,
        adv_address: MacAddress::new(address),
        adv_data: raw[MIN_FRAME_LEN..].to_vec(),
    })
}

/// Reassembles the exact byte sequence a frame was parsed from.
pub fn serialize_advertisement(frame: &AdvertisementFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(MIN_FRAME_LEN + frame.adv_data.len());
    out.extend_from_slice(&frame.header);
    out.extend_from_slice(&frame.adv_address.bytes());
    out.extend_from_slice(&frame.adv_data);
    out
}

/// Classifies an AdvData section, returning the payload iff it is an
/// exposure-notification advertisement.
///
/// Detection requires exactly [`GAEN_ADV_DATA_LEN`] bytes with the
/// little-endian service UUID `0xFD6F` in its block; no other content is
/// interpreted.
pub fn classify_gaen(adv_data: &[u8]) -> Option<GaenPayload> {
    if adv_data.len() != GAEN_ADV_DATA_LEN {
        return None;
    }
    if adv_data[UUID_RANGE] != GAEN_SERVICE_UUID.to_le_bytes() {
        return None;
    }
    let mut flags = [0u8; 3];
    flags.copy_from_slice(&adv_data[FLAGS_RANGE]);
    let mut pseudonym = [0u8; PSEUDONYM_LEN];
    pseudonym.copy_from_slice(&adv_data[PSEUDONYM_RANGE]);
    let mut trailer = [0u8; 8];
    trailer.copy_from_slice(&adv_data[TRAILER_RANGE]);
    Some(GaenPayload {
        flags,
        pseudonym,
        trailer,
    })
}
