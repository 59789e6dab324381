//! IPv4/IPv6 address newtypes and the three tunnel address formats.
//!
//! Bit layouts (most significant bits first):
//!
//! ```text
//! 6to4    | 0x2002 (16) | IPv4 (32) | subnet (16) | interface id (64)      |
//! ISATAP  | prefix (64)                           | 0000:5efe (32) | IPv4  |
//! Teredo  | prefix (32) | server IPv4 (32) | flags (16) | ~port (16) | ~IPv4 |
//! ```

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Leading 16 bits of every 6to4 address.
pub const SIXTO4_PREFIX: u16 = 0x2002;
/// Width of the 6to4 site prefix: 16 bits of 0x2002 plus the embedded IPv4.
pub const SIXTO4_SITE_PREFIX_BITS: u32 = 16 + 32;
/// Width of the prefix an ISATAP router advertises.
pub const ISATAP_PREFIX_BITS: u32 = 64;
/// ISATAP interface identifier marker, `0000:5efe`, in the upper half of the IID.
pub const ISATAP_MARKER: u32 = 0x0000_5efe;
/// Default Teredo service prefix, `2001:0000::/32`.
pub const TEREDO_DEFAULT_PREFIX: u32 = 0x2001_0000;
/// Teredo "cone NAT" flag bit.
pub const TEREDO_FLAG_CONE: u16 = 0x8000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AddrError {
    #[error("{0} is not a 6to4 address")]
    Not6to4(V6Addr),
    #[error("{0} is not an ISATAP address")]
    NotIsatap(V6Addr),
    #[error("{0} is not a Teredo address under prefix {1:#010x}")]
    NotTeredo(V6Addr, u32),
    #[error("ISATAP prefix {0} has non-zero low 64 bits")]
    PrefixNotSlash64(V6Addr),
    #[error("cannot parse address {0:?}")]
    Syntax(String),
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct V4Addr(pub u32);

impl V4Addr {
    pub const UNSPECIFIED: V4Addr = V4Addr(0);

    pub const fn new(a: u8, b: u8, c: u8, d: u8) -> Self {
        V4Addr(u32::from_be_bytes([a, b, c, d]))
    }

    pub fn octets(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }
}

impl From<Ipv4Addr> for V4Addr {
    fn from(a: Ipv4Addr) -> Self {
        V4Addr(u32::from(a))
    }
}

impl From<V4Addr> for Ipv4Addr {
    fn from(a: V4Addr) -> Self {
        Ipv4Addr::from(a.0)
    }
}

impl fmt::Display for V4Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Ipv4Addr::from(*self).fmt(f)
    }
}

impl fmt::Debug for V4Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for V4Addr {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Ipv4Addr>()
            .map(V4Addr::from)
            .map_err(|_| AddrError::Syntax(s.to_string()))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct V6Addr(pub u128);

impl V6Addr {
    pub const UNSPECIFIED: V6Addr = V6Addr(0);
    /// `ff02::2`, all-routers link-local multicast.
    pub const ALL_ROUTERS: V6Addr = V6Addr(0xff02_0000_0000_0000_0000_0000_0000_0002);

    pub fn octets(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }

    pub fn high64(self) -> u64 {
        (self.0 >> 64) as u64
    }

    pub fn low64(self) -> u64 {
        self.0 as u64
    }

    pub fn segments(self) -> [u16; 8] {
        Ipv6Addr::from(self).segments()
    }
}

impl From<Ipv6Addr> for V6Addr {
    fn from(a: Ipv6Addr) -> Self {
        V6Addr(u128::from(a))
    }
}

impl From<V6Addr> for Ipv6Addr {
    fn from(a: V6Addr) -> Self {
        Ipv6Addr::from(a.0)
    }
}

// std renders lower-case, zero-compressed hex groups; that is the trace format.
impl fmt::Display for V6Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Ipv6Addr::from(*self).fmt(f)
    }
}

impl fmt::Debug for V6Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for V6Addr {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Accept an optional "/len" suffix so prefixes can be written naturally.
        let addr = s.split('/').next().unwrap_or(s);
        addr.parse::<Ipv6Addr>()
            .map(V6Addr::from)
            .map_err(|_| AddrError::Syntax(s.to_string()))
    }
}

macro_rules! serde_via_str {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_str!(V4Addr);
serde_via_str!(V6Addr);

/// Fields carried inside a Teredo address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TeredoFields {
    pub server_v4: V4Addr,
    pub flags: u16,
    /// External (NAT-mapped) UDP port, un-obfuscated.
    pub mapped_port: u16,
    /// External (NAT-mapped) IPv4 address, un-obfuscated.
    pub mapped_v4: V4Addr,
}

/// Host address inside the 6to4 site of `v4`: subnet 0, interface id 0.
pub fn synth_6to4(v4: V4Addr) -> V6Addr {
    synth_6to4_host(v4, 0)
}

/// 6to4 address for host `interface_id` on subnet 0 of the site.
pub fn synth_6to4_host(v4: V4Addr, interface_id: u64) -> V6Addr {
    V6Addr(((SIXTO4_PREFIX as u128) << 112) | ((v4.0 as u128) << 80) | interface_id as u128)
}

pub fn is_6to4(a: V6Addr) -> bool {
    (a.0 >> 112) as u16 == SIXTO4_PREFIX
}

pub fn parse_6to4(a: V6Addr) -> Result<V4Addr, AddrError> {
    if !is_6to4(a) {
        return Err(AddrError::Not6to4(a));
    }
    Ok(V4Addr((a.0 >> 80) as u32))
}

/// ISATAP address: the /64 `prefix64` followed by `0:5efe:<v4>`.
pub fn synth_isatap(prefix64: V6Addr, v4: V4Addr) -> Result<V6Addr, AddrError> {
    if prefix64.low64() != 0 {
        return Err(AddrError::PrefixNotSlash64(prefix64));
    }
    Ok(V6Addr(prefix64.0 | ((ISATAP_MARKER as u128) << 32) | v4.0 as u128))
}

/// Link-local ISATAP address, `fe80::5efe:<v4>`.
pub fn isatap_link_local(v4: V4Addr) -> V6Addr {
    synth_isatap(V6Addr(0xfe80 << 112), v4).expect("fe80::/64 is a /64")
}

pub fn is_isatap(a: V6Addr) -> bool {
    // The u/g bits of the marker may be set for globally unique IPv4; we only
    // ever synthesize the plain marker.
    (a.low64() >> 32) as u32 == ISATAP_MARKER
}

/// Returns the embedded IPv4 and the /64 prefix.
pub fn parse_isatap(a: V6Addr) -> Result<(V6Addr, V4Addr), AddrError> {
    if !is_isatap(a) {
        return Err(AddrError::NotIsatap(a));
    }
    Ok((V6Addr(a.0 & !(u64::MAX as u128)), V4Addr(a.0 as u32)))
}

/// Teredo address with the port and client address obfuscated by bitwise
/// complement.
pub fn synth_teredo(f: TeredoFields, teredo_prefix: u32) -> V6Addr {
    V6Addr(
        ((teredo_prefix as u128) << 96)
            | ((f.server_v4.0 as u128) << 64)
            | ((f.flags as u128) << 48)
            | (((!f.mapped_port) as u128) << 32)
            | (!f.mapped_v4.0) as u128,
    )
}

pub fn is_teredo(a: V6Addr, teredo_prefix: u32) -> bool {
    (a.0 >> 96) as u32 == teredo_prefix
}

pub fn parse_teredo(a: V6Addr, teredo_prefix: u32) -> Result<TeredoFields, AddrError> {
    if !is_teredo(a, teredo_prefix) {
        return Err(AddrError::NotTeredo(a, teredo_prefix));
    }
    Ok(TeredoFields {
        server_v4: V4Addr((a.0 >> 64) as u32),
        flags: (a.0 >> 48) as u16,
        mapped_port: !((a.0 >> 32) as u16),
        mapped_v4: V4Addr(!(a.0 as u32)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v6(s: &str) -> V6Addr {
        s.parse().unwrap()
    }

    #[test]
    fn sixto4_vectors() {
        assert_eq!(synth_6to4(V4Addr::new(192, 88, 99, 1)), v6("2002:c058:6301::"));
        assert_eq!(synth_6to4(V4Addr::UNSPECIFIED), v6("2002::"));
        assert_eq!(parse_6to4(v6("2002:c058:6301::")), Ok(V4Addr::new(192, 88, 99, 1)));
        assert_eq!(
            parse_6to4(v6("2001:db8::")),
            Err(AddrError::Not6to4(v6("2001:db8::")))
        );
    }

    #[test]
    fn sixto4_host_keeps_site() {
        let a = synth_6to4_host(V4Addr::new(198, 51, 100, 1), 1);
        assert_eq!(a.to_string(), "2002:c633:6401::1");
        assert_eq!(parse_6to4(a), Ok(V4Addr::new(198, 51, 100, 1)));
    }

    #[test]
    fn isatap_vectors() {
        let ll = v6("fe80::");
        assert_eq!(synth_isatap(ll, V4Addr::new(10, 0, 0, 5)), Ok(v6("fe80::5efe:a00:5")));
        assert_eq!(synth_isatap(ll, V4Addr::UNSPECIFIED), Ok(v6("fe80::5efe:0:0")));
        assert_eq!(parse_isatap(v6("fe80::5efe:a00:5")).unwrap().1, V4Addr::new(10, 0, 0, 5));
        assert!(parse_isatap(v6("2001:db8::1")).is_err());
        assert!(synth_isatap(v6("2001:db8::1"), V4Addr::UNSPECIFIED).is_err());
    }

    #[test]
    fn isatap_prefix_substitution_touches_high_bits_only() {
        let v4 = V4Addr::new(192, 168, 1, 10);
        let a = synth_isatap(v6("fe80::"), v4).unwrap();
        let b = synth_isatap(v6("2001:db8:2::"), v4).unwrap();
        assert_eq!(a.low64(), b.low64());
        assert_ne!(a.high64(), b.high64());
    }

    #[test]
    fn teredo_vector() {
        let f = TeredoFields {
            server_v4: V4Addr::new(65, 54, 227, 120),
            flags: TEREDO_FLAG_CONE,
            mapped_port: 40000,
            mapped_v4: V4Addr::new(192, 0, 2, 45),
        };
        let a = synth_teredo(f, TEREDO_DEFAULT_PREFIX);
        assert_eq!(a, v6("2001:0:4136:e378:8000:63bf:3fff:fdd2"));
        assert_eq!(parse_teredo(a, TEREDO_DEFAULT_PREFIX), Ok(f));
    }

    #[test]
    fn teredo_zero_fields() {
        let f = TeredoFields {
            server_v4: V4Addr::UNSPECIFIED,
            flags: 0,
            mapped_port: 0,
            mapped_v4: V4Addr::UNSPECIFIED,
        };
        assert_eq!(synth_teredo(f, TEREDO_DEFAULT_PREFIX), v6("2001:0:0:0:0:ffff:ffff:ffff"));
    }

    #[test]
    fn identifier_widths() {
        assert_eq!(SIXTO4_SITE_PREFIX_BITS, 48);
        assert_eq!(ISATAP_PREFIX_BITS, 64);
        const { assert!(SIXTO4_SITE_PREFIX_BITS < ISATAP_PREFIX_BITS) };
    }

    #[test]
    fn rendering_is_canonical() {
        assert_eq!(V6Addr::ALL_ROUTERS.to_string(), "ff02::2");
        assert_eq!(V4Addr::new(10, 0, 0, 2).to_string(), "10.0.0.2");
        assert_eq!(isatap_link_local(V4Addr::new(10, 0, 0, 5)).to_string(), "fe80::5efe:a00:5");
    }

    proptest! {
        #[test]
        fn sixto4_bijection(x: u32, iid: u64) {
            let v4 = V4Addr(x);
            prop_assert_eq!(parse_6to4(synth_6to4(v4)), Ok(v4));
            prop_assert_eq!(parse_6to4(synth_6to4_host(v4, iid)), Ok(v4));
        }

        #[test]
        fn isatap_bijection(hi: u64, x: u32) {
            let prefix = V6Addr((hi as u128) << 64);
            let a = synth_isatap(prefix, V4Addr(x)).unwrap();
            prop_assert_eq!(parse_isatap(a), Ok((prefix, V4Addr(x))));
        }

        #[test]
        fn teredo_bijection(server: u32, flags: u16, port: u16, client: u32, prefix: u32) {
            let f = TeredoFields {
                server_v4: V4Addr(server),
                flags,
                mapped_port: port,
                mapped_v4: V4Addr(client),
            };
            prop_assert_eq!(parse_teredo(synth_teredo(f, prefix), prefix), Ok(f));
        }
    }
}
