//! Object identity: class name plus a monotonically increasing instance
//! number handed out by the control plane.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId {
    pub class: String,
    pub instance: u64,
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.class, self.instance)
    }
}

/// Per-class instance-number allocator. One allocator per control plane
/// keeps ids unique and monotone within a run.
#[derive(Debug, Default, Clone)]
pub struct ObjectIdGen {
    next: u64,
}

impl ObjectIdGen {
    pub fn allocate(&mut self) -> u64 {
        let n = self.next;
        self.next += 1;
        n
    }
}
