use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::grid::{canonical_bytes, GridConfig, GridError, PointInterval};

/// SHA-256 of a point interval's canonical encoding.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashedInterval([u8; 32]);

impl HashedInterval {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        HashedInterval(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(HashedInterval(out))
    }
}

impl fmt::Debug for HashedInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashedInterval({})", self.to_hex())
    }
}

impl fmt::Display for HashedInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for HashedInterval {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

impl Serialize for HashedInterval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for HashedInterval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

pub fn hash_interval(pi: &PointInterval, cfg: &GridConfig) -> Result<HashedInterval, GridError> {
    Ok(HashedInterval(sha256(&canonical_bytes(pi, cfg)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_empty_vector() {
        assert_eq!(
            hex::encode(sha256(b"")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn equal_intervals_equal_digests() {
        let cfg = GridConfig::default();
        let a = hash_interval(&PointInterval::new(5, 6, 7), &cfg).unwrap();
        let b = hash_interval(&PointInterval::new(5, 6, 7), &cfg).unwrap();
        let c = hash_interval(&PointInterval::new(5, 6, 8), &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn region_separates_digests() {
        let other = GridConfig {
            region: "sfo".into(),
            ..GridConfig::default()
        };
        let pi = PointInterval::new(5, 6, 7);
        assert_ne!(
            hash_interval(&pi, &GridConfig::default()).unwrap(),
            hash_interval(&pi, &other).unwrap()
        );
    }

    #[test]
    fn hex_round_trip() {
        let h = hash_interval(&PointInterval::new(1, 2, 3), &GridConfig::default()).unwrap();
        assert_eq!(h.to_hex().parse::<HashedInterval>().unwrap(), h);
        assert!(HashedInterval::from_hex("abc").is_err());
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<HashedInterval>(&json).unwrap(), h);
    }
}
