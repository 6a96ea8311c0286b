//! Core vocabulary shared by every other module: shared objects, transaction
//! types (access footprints), transactions, and the collision relation.
//!
//! A transaction's type is stored as a fixed-width bitset of `m` bits so that
//! collision tests are word operations and the textual form is exactly the
//! m-character bitstring used in traces and on the bit channel (character 0
//! corresponds to object 0).

use std::collections::BTreeSet;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Identifier of one of the `m` shared objects, densely indexed from 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId(pub u32);

/// Identifier of a processor in the queue-based model, indexed from 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProcessorId(pub u32);

/// Unique transaction identifier, assigned in generation order (round-major,
/// then emission order within a round). Serves as the global tie-breaker
/// wherever an order among same-round transactions is needed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId(pub u64);

/// Rounds are numbered from 1.
pub type Round = u64;

/// A transaction's access footprint: a nonempty set of objects out of the
/// system's `m`, stored as an m-bit bitset.
///
/// Bits are kept most-significant-first within words so that the derived
/// ordering coincides with lexicographic order of the bitstring form.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxType {
    width: u32,
    words: Vec<u64>,
}

impl TxType {
    /// Builds a type over `m` objects from the given object set.
    ///
    /// Fails on an empty set or on any index outside `[0, m)`.
    pub fn from_objects<I>(m: u32, objects: I) -> Result<Self>
    where
        I: IntoIterator<Item = ObjectId>,
    {
        let mut t = TxType {
            width: m,
            words: vec![0; Self::word_count(m)],
        };
        let mut any = false;
        for ObjectId(o) in objects {
            if o >= m {
                return Err(Error::InvalidInput(format!(
                    "object {o} out of range for m={m}"
                )));
            }
            let (w, bit) = Self::slot(o);
            t.words[w] |= 1u64 << bit;
            any = true;
        }
        if !any {
            return Err(Error::InvalidInput(
                "transaction type must be nonempty".into(),
            ));
        }
        Ok(t)
    }

    /// Parses an m-character bitstring; the all-zeros string denotes "no
    /// type" and parses to `None`.
    pub fn parse_bitstring(s: &str) -> Result<Option<Self>> {
        let m = s.len() as u32;
        if m == 0 {
            return Err(Error::InvalidInput("empty bitstring".into()));
        }
        let mut words = vec![0u64; Self::word_count(m)];
        let mut any = false;
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => {}
                '1' => {
                    let (w, bit) = Self::slot(i as u32);
                    words[w] |= 1u64 << bit;
                    any = true;
                }
                other => {
                    return Err(Error::InvalidInput(format!(
                        "bitstring may contain only 0 and 1, found {other:?}"
                    )))
                }
            }
        }
        Ok(any.then_some(TxType { width: m, words }))
    }

    fn word_count(m: u32) -> usize {
        (m as usize).div_ceil(64)
    }

    fn slot(o: u32) -> (usize, u32) {
        ((o / 64) as usize, 63 - (o % 64))
    }

    /// Number of objects in the footprint (the transaction's weight).
    pub fn weight(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// The configured system size `m` this type is defined against.
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn contains(&self, ObjectId(o): ObjectId) -> bool {
        debug_assert!(o < self.width);
        let (w, bit) = Self::slot(o);
        self.words[w] >> bit & 1 == 1
    }

    /// Objects of the footprint in increasing index order.
    pub fn objects(&self) -> impl Iterator<Item = ObjectId> + '_ {
        (0..self.width).map(ObjectId).filter(|&o| self.contains(o))
    }

    /// True iff the two footprints share at least one object.
    pub fn collides(&self, other: &TxType) -> bool {
        assert_eq!(self.width, other.width, "types from different systems");
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    /// The m-character textual form; character `i` is `1` iff object `i`
    /// belongs to the type.
    pub fn bitstring(&self) -> String {
        (0..self.width)
            .map(|o| if self.contains(ObjectId(o)) { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Debug for TxType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxType({})", self.bitstring())
    }
}

impl fmt::Display for TxType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bitstring())
    }
}

impl Serialize for TxType {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.bitstring())
    }
}

impl<'de> Deserialize<'de> for TxType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        TxType::parse_bitstring(&s)
            .map_err(D::Error::custom)?
            .ok_or_else(|| D::Error::custom("all-zeros bitstring is not a transaction type"))
    }
}

/// True iff no two distinct types in the slice collide.
pub fn conflict_free(types: &[TxType]) -> bool {
    for (i, a) in types.iter().enumerate() {
        for b in &types[i + 1..] {
            if a.collides(b) {
                return false;
            }
        }
    }
    true
}

/// One transaction in flight: identity, footprint, generation round, owning
/// processor (queue-based model only), and commit round once executed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    #[serde(rename = "type")]
    pub ttype: TxType,
    pub gen_round: Round,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<ProcessorId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit_round: Option<Round>,
}

impl Transaction {
    /// Rounds from generation to successful execution; `None` while pending.
    /// Always at least 1: a transaction becomes schedulable only after its
    /// generation round.
    pub fn latency(&self) -> Option<u64> {
        self.commit_round.map(|c| c - self.gen_round)
    }
}

/// Global simulation parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of shared objects.
    pub m: u32,
    /// Maximum transaction weight.
    pub k: u32,
    /// Processor count; present exactly in the queue-based model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    /// Total rounds to simulate.
    pub horizon: u64,
    /// Seed for every random choice a run makes.
    pub seed: u64,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidInput("m must be at least 1".into()));
        }
        if self.k < 1 || self.k > self.m {
            return Err(Error::InvalidInput(format!(
                "k must satisfy 1 <= k <= m, got k={} m={}",
                self.k, self.m
            )));
        }
        if let Some(n) = self.n {
            if n < 1 {
                return Err(Error::InvalidInput("n must be at least 1".into()));
            }
        }
        if self.horizon < 1 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Convenience for tests and builders: a type from raw indices.
pub fn tx_type(m: u32, objects: &[u32]) -> TxType {
    TxType::from_objects(m, objects.iter().copied().map(ObjectId)).expect("valid type literal")
}

/// Checks `conflict_free` the countable way: the sum of weights equals the
/// size of the union of the object sets.
pub fn union_size(types: &[TxType]) -> usize {
    let mut all = BTreeSet::new();
    for t in types {
        all.extend(t.objects());
    }
    all.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        assert_eq!(tx_type(4, &[0]).weight(), 1);
        assert_eq!(tx_type(4, &[0, 2]).weight(), 2);
        let k = 7;
        let full = tx_type(8, &(0..k).collect::<Vec<_>>());
        assert_eq!(full.weight(), k);
    }

    #[test]
    fn collides_examples() {
        let a = tx_type(3, &[0]);
        let b = tx_type(3, &[0, 1]);
        let c = tx_type(3, &[1]);
        let d = tx_type(3, &[1, 2]);
        assert!(a.collides(&b));
        assert!(!a.collides(&c));
        assert!(b.collides(&d));
    }

    #[test]
    fn conflict_free_examples() {
        assert!(conflict_free(&[]));
        assert!(conflict_free(&[
            tx_type(3, &[0]),
            tx_type(3, &[1]),
            tx_type(3, &[2])
        ]));
        assert!(!conflict_free(&[tx_type(3, &[0, 1]), tx_type(3, &[1])]));
    }

    #[test]
    fn bitstring_orientation() {
        // Character 0 is object 0.
        assert_eq!(tx_type(4, &[0, 2]).bitstring(), "1010");
        assert_eq!(TxType::parse_bitstring("000").unwrap(), None);
        assert_eq!(
            TxType::parse_bitstring("0101").unwrap().unwrap(),
            tx_type(4, &[1, 3])
        );
    }

    #[test]
    fn ordering_matches_bitstring() {
        // Wide types crossing the 64-bit word boundary still order textually.
        let m = 130;
        let a = tx_type(m, &[0]);
        let b = tx_type(m, &[1]);
        let c = tx_type(m, &[129]);
        assert!(a > b, "'10...' sorts after '01...'");
        assert!(b > c);
        let mut v = [c.clone(), a.clone(), b.clone()];
        v.sort();
        let strings: Vec<String> = v.iter().map(|t| t.bitstring()).collect();
        let mut sorted = strings.clone();
        sorted.sort();
        assert_eq!(strings, sorted);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TxType::from_objects(3, []).is_err());
        assert!(TxType::from_objects(3, [ObjectId(3)]).is_err());
        assert!(TxType::parse_bitstring("01a").is_err());
        assert!(TxType::parse_bitstring("").is_err());
    }

    #[test]
    fn config_validation() {
        let good = SystemConfig {
            m: 4,
            k: 2,
            n: None,
            horizon: 10,
            seed: 0,
        };
        assert!(good.validate().is_ok());
        assert!(SystemConfig {
            m: 0,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(SystemConfig {
            k: 5,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(SystemConfig {
            horizon: 0,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(SystemConfig { n: Some(0), ..good }.validate().is_err());
    }

    fn arb_type(m: u32) -> impl Strategy<Value = TxType> {
        prop::collection::btree_set(0..m, 1..=m as usize)
            .prop_map(move |objs| tx_type(m, &objs.into_iter().collect::<Vec<_>>()))
    }

    proptest! {
        #[test]
        fn collides_symmetric_and_reflexive(a in arb_type(12), b in arb_type(12)) {
            prop_assert!(a.collides(&a));
            prop_assert_eq!(a.collides(&b), b.collides(&a));
        }

        #[test]
        fn conflict_free_iff_weights_sum_to_union(types in prop::collection::vec(arb_type(10), 0..6)) {
            let weights: usize = types.iter().map(|t| t.weight() as usize).sum();
            prop_assert_eq!(conflict_free(&types), weights == union_size(&types));
        }

        #[test]
        fn bitstring_round_trip(t in arb_type(9)) {
            let back = TxType::parse_bitstring(&t.bitstring()).unwrap().unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
