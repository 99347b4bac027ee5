//! Domain model: SLA specifications, class definitions with single
//! inheritance, datacenter profiles and object identity.
//!
//! Validation lives here too. [`validate_class`] flattens an inheritance
//! chain into a [`FlattenedClass`] whose members carry fully-resolved SLAs,
//! so the rest of the system never has to walk parent chains or merge
//! overrides again.

mod class;
mod dc;
mod object;
mod sla;

pub use class::{
    AttrKind, AttributeDef, ClassDefinition, ClassError, FlatAttribute, FlatFunction,
    FlattenedClass, FunctionDef, TriggerEvent, TriggerRule, validate_class,
};
pub use dc::{DatacenterProfile, ProfileError, Tier, validate_profiles};
pub use object::{ObjectId, ObjectIdGen};
pub use sla::{Consistency, SlaError, SlaOverride, SlaSpec};
