//! Topic naming. Four families, one per protocol surface:
//!
//! * `raft/<class>/<shard>` — consensus traffic for a class's replica group,
//! * `ae/<class>/<a>~<b>` — anti-entropy between a replica pair (ids sorted),
//! * `obj/<class>/<id>` — invocations and data operations on one object,
//! * `ctl/<dc>` — control-plane commands and runtime heartbeats.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Topic {
    Raft { class: String, shard: u32 },
    AntiEntropy { class: String, pair: (String, String) },
    Object { class: String, instance: u64 },
    Control { dc: String },
}

impl Topic {
    /// Anti-entropy topics canonicalize the pair order so both peers name
    /// the same topic.
    pub fn anti_entropy(class: &str, a: &str, b: &str) -> Topic {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        Topic::AntiEntropy { class: class.into(), pair: (lo.into(), hi.into()) }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topic::Raft { class, shard } => write!(f, "raft/{class}/{shard}"),
            Topic::AntiEntropy { class, pair } => write!(f, "ae/{class}/{}~{}", pair.0, pair.1),
            Topic::Object { class, instance } => write!(f, "obj/{class}/{instance}"),
            Topic::Control { dc } => write!(f, "ctl/{dc}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unparseable topic {0:?}")]
pub struct TopicParseError(pub String);

impl FromStr for Topic {
    type Err = TopicParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TopicParseError(s.to_string());
        let mut parts = s.splitn(3, '/');
        let family = parts.next().ok_or_else(err)?;
        match family {
            "ctl" => {
                let dc = parts.next().ok_or_else(err)?;
                if dc.is_empty() || parts.next().is_some() {
                    return Err(err());
                }
                Ok(Topic::Control { dc: dc.into() })
            }
            "raft" | "ae" | "obj" => {
                let class = parts.next().ok_or_else(err)?.to_string();
                let tail = parts.next().ok_or_else(err)?;
                if class.is_empty() || tail.is_empty() {
                    return Err(err());
                }
                match family {
                    "raft" => Ok(Topic::Raft {
                        class,
                        shard: tail.parse().map_err(|_| err())?,
                    }),
                    "obj" => Ok(Topic::Object {
                        class,
                        instance: tail.parse().map_err(|_| err())?,
                    }),
                    _ => {
                        let (a, b) = tail.split_once('~').ok_or_else(err)?;
                        if a.is_empty() || b.is_empty() || a > b {
                            return Err(err());
                        }
                        Ok(Topic::AntiEntropy {
                            class,
                            pair: (a.into(), b.into()),
                        })
                    }
                }
            }
            _ => Err(err()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let topics = [
            Topic::Raft { class: "kv".into(), shard: 0 },
            Topic::anti_entropy("kv", "edge-2", "cloud-1"),
            Topic::Object { class: "sensor".into(), instance: 981 },
            Topic::Control { dc: "edge-1".into() },
        ];
        for t in topics {
            let s = t.to_string();
            assert_eq!(s.parse::<Topic>().unwrap(), t, "{s}");
        }
    }

    #[test]
    fn exact_string_forms() {
        assert_eq!(
            Topic::Raft { class: "kv".into(), shard: 3 }.to_string(),
            "raft/kv/3"
        );
        assert_eq!(
            Topic::anti_entropy("kv", "b-dc", "a-dc").to_string(),
            "ae/kv/a-dc~b-dc"
        );
        assert_eq!(
            Topic::Object { class: "cam".into(), instance: 7 }.to_string(),
            "obj/cam/7"
        );
        assert_eq!(Topic::Control { dc: "cloud-1".into() }.to_string(), "ctl/cloud-1");
    }

    #[test]
    fn junk_rejected() {
        for bad in ["", "raft", "raft/kv", "raft/kv/x", "ae/kv/solo", "ae/kv/b~a", "mqtt/x/y"] {
            assert!(bad.parse::<Topic>().is_err(), "{bad:?} should not parse");
        }
    }
}
