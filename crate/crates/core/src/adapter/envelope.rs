//! Binary envelope: a JSON document plus length-prefixed attachments.
//!
//! Layout (little-endian): `"CSYN"`, u16 version, u32 JSON length, JSON
//! bytes, u32 part count, then per part u32 id, u64 length, bytes.

use std::collections::BTreeMap;

use super::{AdapterError, PROTOCOL_VERSION};

pub const ENVELOPE_MAGIC: &[u8; 4] = b"CSYN";
pub const ENVELOPE_CONTENT_TYPE: &str = "application/x-capsynth-envelope";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Envelope {
    pub json: Vec<u8>,
    pub parts: BTreeMap<u32, Vec<u8>>,
}

impl Envelope {
    pub fn new(json: Vec<u8>) -> Self {
        Self {
            json,
            parts: BTreeMap::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let body: usize = self.parts.values().map(|p| p.len() + 12).sum();
        let mut out = Vec::with_capacity(14 + self.json.len() + body);
        out.extend_from_slice(ENVELOPE_MAGIC);
        out.extend_from_slice(&(PROTOCOL_VERSION as u16).to_le_bytes());
        out.extend_from_slice(&(self.json.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.json);
        out.extend_from_slice(&(self.parts.len() as u32).to_le_bytes());
        for (id, bytes) in &self.parts {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AdapterError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != ENVELOPE_MAGIC {
            return Err(AdapterError::Malformed("envelope magic missing".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version as u32 != PROTOCOL_VERSION {
            return Err(AdapterError::UnsupportedVersion { found: version as u32 });
        }
        let json_len = u32::from_le_bytes(r.array()?) as usize;
        let json = r.take(json_len)?.to_vec();
        let count = u32::from_le_bytes(r.array()?);
        let mut parts = BTreeMap::new();
        for _ in 0..count {
            let id = u32::from_le_bytes(r.array()?);
            let len = u64::from_le_bytes(r.array()?);
            let len = usize::try_from(len).map_err(|_| AdapterError::Malformed("part too large".into()))?;
            if parts.insert(id, r.take(len)?.to_vec()).is_some() {
                return Err(AdapterError::Malformed(format!("duplicate part id {id}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(AdapterError::Malformed("trailing bytes after envelope".into()));
        }
        Ok(Self { json, parts })
    }

    pub fn part(&self, id: u32) -> Result<&[u8], AdapterError> {
        self.parts
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| AdapterError::Malformed(format!("missing part {id}")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AdapterError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| AdapterError::Malformed("envelope truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], AdapterError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(json in proptest::collection::vec(any::<u8>(), 0..64),
                      parts in proptest::collection::btree_map(any::<u32>(), proptest::collection::vec(any::<u8>(), 0..32), 0..5)) {
            let env = Envelope { json, parts };
            prop_assert_eq!(Envelope::decode(&env.encode()).unwrap(), env);
        }

        #[test]
        fn truncation_is_an_error(cut in 1usize..20) {
            let mut env = Envelope::new(b"{}".to_vec());
            env.parts.insert(1, vec![9; 8]);
            let bytes = env.encode();
            let cut = cut.min(bytes.len());
            prop_assert!(Envelope::decode(&bytes[..bytes.len() - cut]).is_err());
        }
    }

    #[test]
    fn wrong_version_is_reported() {
        let mut bytes = Envelope::new(b"{}".to_vec()).encode();
        bytes[4] = 9;
        assert!(matches!(Envelope::decode(&bytes), Err(AdapterError::UnsupportedVersion { found: 9 })));
    }
}
