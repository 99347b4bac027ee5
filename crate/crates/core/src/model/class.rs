//! Class definitions: attributes, functions, triggers, single inheritance,
//! and the flattening pass that resolves every member's effective SLA.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sla::{SlaError, SlaOverride, SlaSpec};

/// Storage shape of an attribute. Determines which CRDT (or register
/// payload) backs it and which trigger events it can emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    /// Opaque bytes, last-writer-wins on conflict.
    ScalarBytes,
    /// Grow-only counter.
    Counter,
    /// Map of byte keys to byte values, per-key last-writer-wins.
    MapBytes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttrKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla: Option<SlaOverride>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub name: String,
    /// Name resolved against the handler registry at validation time.
    pub handler: String,
    /// Fixed service time charged to a worker slot per invocation.
    pub mean_service_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla: Option<SlaOverride>,
}

/// Events a trigger can subscribe to. `OnComplete`/`OnFailure` fire for
/// function sources; `OnCreate`/`OnUpdate`/`OnDelete` for attribute sources.
/// An attribute's `OnCreate` fires on its first commit, `OnUpdate` on every
/// later commit, `OnDelete` when the owning object is deleted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerEvent {
    OnComplete,
    OnFailure,
    OnCreate,
    OnUpdate,
    OnDelete,
}

impl TriggerEvent {
    pub fn is_function_event(self) -> bool {
        matches!(self, TriggerEvent::OnComplete | TriggerEvent::OnFailure)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TriggerRule {
    /// Function invoked when the event fires.
    pub target: String,
    /// Attribute or function name watched for events.
    pub source: String,
    pub event: TriggerEvent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDefinition {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub class_sla: SlaSpec,
    #[serde(default)]
    pub attributes: Vec<AttributeDef>,
    #[serde(default)]
    pub functions: Vec<FunctionDef>,
    #[serde(default)]
    pub triggers: Vec<TriggerRule>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassError {
    #[error("class {class}: unknown parent {parent}")]
    UnknownParent { class: String, parent: String },
    #[error("inheritance cycle through {0}")]
    ParentCycle(String),
    #[error("class {class}: duplicate member {member}")]
    DuplicateMember { class: String, member: String },
    #[error("class {class}: function {function} references unknown handler {handler}")]
    UnknownHandler {
        class: String,
        function: String,
        handler: String,
    },
    #[error("class {class}: trigger source {source_member} does not name an attribute or function")]
    DanglingTriggerSource { class: String, source_member: String },
    #[error("class {class}: trigger target {target} does not name a function")]
    UnknownTriggerTarget { class: String, target: String },
    #[error("class {class}: event {event:?} cannot fire from source {source_member}")]
    EventKindMismatch {
        class: String,
        source_member: String,
        event: TriggerEvent,
    },
    #[error("class {class}: function {target} may not trigger itself on its own completion")]
    SelfTrigger { class: String, target: String },
    #[error("class {class}, member {member}: {source}")]
    InvalidSla {
        class: String,
        member: String,
        source: SlaError,
    },
    #[error("class {class}: function {function} must have positive mean_service_ms")]
    InvalidServiceTime { class: String, function: String },
}

/// Attribute with its SLA fully resolved against the class default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatAttribute {
    pub name: String,
    pub kind: AttrKind,
    pub sla: SlaSpec,
}

/// Function with its SLA fully resolved against the class default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatFunction {
    pub name: String,
    pub handler: String,
    pub mean_service_ms: f64,
    pub sla: SlaSpec,
}

/// Result of validation: inheritance collapsed, members sorted by name,
/// every SLA resolved. Attribute indices into [`FlattenedClass::attributes`]
/// are the stable identifiers used in storage keys and wire messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlattenedClass {
    pub name: String,
    pub class_sla: SlaSpec,
    pub attributes: Vec<FlatAttribute>,
    pub functions: Vec<FlatFunction>,
    pub triggers: Vec<TriggerRule>,
}

impl FlattenedClass {
    pub fn attr(&self, name: &str) -> Option<&FlatAttribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn attr_index(&self, name: &str) -> Option<u16> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .map(|i| i as u16)
    }

    pub fn function(&self, name: &str) -> Option<&FlatFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Effective SLA of a named member (attribute or function).
    pub fn effective_sla(&self, member: &str) -> Option<&SlaSpec> {
        self.attr(member)
            .map(|a| &a.sla)
            .or_else(|| self.function(member).map(|f| &f.sla))
    }

    /// True if any attribute needs the consensus backend.
    pub fn has_strong_attr(&self) -> bool {
        self.attributes
            .iter()
            .any(|a| matches!(a.sla.consistency, super::Consistency::Strong))
    }

    /// True if any attribute needs a CRDT replica store (bounded or ryw).
    pub fn has_crdt_attr(&self) -> bool {
        self.attributes
            .iter()
            .any(|a| !matches!(a.sla.consistency, super::Consistency::Strong))
    }
}

/// Validate one class against the full definition set and the handler
/// registry, producing its flattened form.
///
/// Checks, in order: parent chain resolution (including cycles), member
/// uniqueness after flattening, handler existence, per-member SLA sanity,
/// and trigger wiring (source exists, event kind matches the source kind,
/// no length-one completion cycle).
pub fn validate_class(
    def: &ClassDefinition,
    classes: &BTreeMap<String, ClassDefinition>,
    handlers: &BTreeSet<String>,
) -> Result<FlattenedClass, ClassError> {
    // Collect the chain root-first so children override ancestors.
    let mut chain: Vec<&ClassDefinition> = vec![def];
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    seen.insert(&def.name);
    let mut cur = def;
    while let Some(parent) = &cur.parent {
        if seen.contains(parent.as_str()) {
            return Err(ClassError::ParentCycle(parent.clone()));
        }
        let p = classes.get(parent).ok_or_else(|| ClassError::UnknownParent {
            class: cur.name.clone(),
            parent: parent.clone(),
        })?;
        seen.insert(&p.name);
        chain.push(p);
        cur = p;
    }
    chain.reverse();

    // Flatten members. A child redefining an inherited name replaces it; two
    // definitions of one name inside a single class are duplicates.
    let mut attrs: BTreeMap<String, AttributeDef> = BTreeMap::new();
    let mut funcs: BTreeMap<String, FunctionDef> = BTreeMap::new();
    let mut triggers: Vec<TriggerRule> = Vec::new();
    for cls in &chain {
        let mut local: BTreeSet<&str> = BTreeSet::new();
        for a in &cls.attributes {
            if !local.insert(&a.name) {
                return Err(ClassError::DuplicateMember {
                    class: cls.name.clone(),
                    member: a.name.clone(),
                });
            }
            funcs.remove(&a.name); // a child may reshape a name entirely
            attrs.insert(a.name.clone(), a.clone());
        }
        for f in &cls.functions {
            if !local.insert(&f.name) {
                return Err(ClassError::DuplicateMember {
                    class: cls.name.clone(),
                    member: f.name.clone(),
                });
            }
            attrs.remove(&f.name);
            funcs.insert(f.name.clone(), f.clone());
        }
        for t in &cls.triggers {
            if !triggers.contains(t) {
                triggers.push(t.clone());
            }
        }
    }
    triggers.sort();

    // One namespace: an attribute and a function may not share a name within
    // a single class (cross-class shadowing was resolved above).
    for cls in &chain {
        for a in &cls.attributes {
            if cls.functions.iter().any(|f| f.name == a.name) {
                return Err(ClassError::DuplicateMember {
                    class: cls.name.clone(),
                    member: a.name.clone(),
                });
            }
        }
    }

    def.class_sla.validate().map_err(|source| ClassError::InvalidSla {
        class: def.name.clone(),
        member: "<class>".into(),
        source,
    })?;

    let mut flat_attrs: Vec<FlatAttribute> = Vec::with_capacity(attrs.len());
    for (name, a) in &attrs {
        let sla = a
            .sla
            .clone()
            .unwrap_or_default()
            .resolve(&def.class_sla);
        sla.validate().map_err(|source| ClassError::InvalidSla {
            class: def.name.clone(),
            member: name.clone(),
            source,
        })?;
        flat_attrs.push(FlatAttribute {
            name: name.clone(),
            kind: a.kind,
            sla,
        });
    }

    let mut flat_funcs: Vec<FlatFunction> = Vec::with_capacity(funcs.len());
    for (name, f) in &funcs {
        if !handlers.contains(&f.handler) {
            return Err(ClassError::UnknownHandler {
                class: def.name.clone(),
                function: name.clone(),
                handler: f.handler.clone(),
            });
        }
        if !(f.mean_service_ms > 0.0) {
            return Err(ClassError::InvalidServiceTime {
                class: def.name.clone(),
                function: name.clone(),
            });
        }
        let sla = f
            .sla
            .clone()
            .unwrap_or_default()
            .resolve(&def.class_sla);
        sla.validate().map_err(|source| ClassError::InvalidSla {
            class: def.name.clone(),
            member: name.clone(),
            source,
        })?;
        flat_funcs.push(FlatFunction {
            name: name.clone(),
            handler: f.handler.clone(),
            mean_service_ms: f.mean_service_ms,
            sla,
        });
    }

    for t in &triggers {
        if !funcs.contains_key(&t.target) {
            return Err(ClassError::UnknownTriggerTarget {
                class: def.name.clone(),
                target: t.target.clone(),
            });
        }
        let source_is_fn = funcs.contains_key(&t.source);
        let source_is_attr = attrs.contains_key(&t.source);
        if !source_is_fn && !source_is_attr {
            return Err(ClassError::DanglingTriggerSource {
                class: def.name.clone(),
                source_member: t.source.clone(),
            });
        }
        if t.event.is_function_event() != source_is_fn {
            return Err(ClassError::EventKindMismatch {
                class: def.name.clone(),
                source_member: t.source.clone(),
                event: t.event,
            });
        }
        if t.target == t.source && t.event == TriggerEvent::OnComplete {
            return Err(ClassError::SelfTrigger {
                class: def.name.clone(),
                target: t.target.clone(),
            });
        }
    }

    Ok(FlattenedClass {
        name: def.name.clone(),
        class_sla: def.class_sla.clone(),
        attributes: flat_attrs,
        functions: flat_funcs,
        triggers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sla::Consistency;

    fn sla(consistency: Consistency) -> SlaSpec {
        SlaSpec {
            consistency,
            availability: 0.999,
            throughput: None,
            locality: None,
        }
    }

    fn handlers() -> BTreeSet<String> {
        ["echo", "put", "get"].iter().map(|s| s.to_string()).collect()
    }

    fn parent_child() -> BTreeMap<String, ClassDefinition> {
        let parent = ClassDefinition {
            name: "store".into(),
            parent: None,
            class_sla: sla(Consistency::ReadYourWrite),
            attributes: vec![AttributeDef {
                name: "data".into(),
                kind: AttrKind::ScalarBytes,
                sla: None,
            }],
            functions: vec![FunctionDef {
                name: "write".into(),
                handler: "put".into(),
                mean_service_ms: 1.0,
                sla: None,
            }],
            triggers: vec![],
        };
        let child = ClassDefinition {
            name: "audited-store".into(),
            parent: Some("store".into()),
            class_sla: sla(Consistency::ReadYourWrite),
            attributes: vec![AttributeDef {
                name: "data".into(),
                kind: AttrKind::ScalarBytes,
                sla: Some(SlaOverride {
                    consistency: Some(Consistency::Strong),
                    ..Default::default()
                }),
            }],
            functions: vec![],
            triggers: vec![],
        };
        [(parent.name.clone(), parent), (child.name.clone(), child)]
            .into_iter()
            .collect()
    }

    #[test]
    fn child_overrides_inherited_attribute_sla() {
        let classes = parent_child();
        let flat = validate_class(&classes["audited-store"], &classes, &handlers()).unwrap();
        assert_eq!(flat.attributes.len(), 1);
        assert_eq!(flat.attr("data").unwrap().sla.consistency, Consistency::Strong);
        // The inherited function survives with the child's class default.
        assert_eq!(
            flat.function("write").unwrap().sla.consistency,
            Consistency::ReadYourWrite
        );
    }

    #[test]
    fn unknown_parent_rejected() {
        let def = ClassDefinition {
            name: "x".into(),
            parent: Some("ghost".into()),
            class_sla: sla(Consistency::Strong),
            attributes: vec![],
            functions: vec![],
            triggers: vec![],
        };
        let err = validate_class(&def, &BTreeMap::new(), &handlers()).unwrap_err();
        assert!(matches!(err, ClassError::UnknownParent { .. }));
    }

    #[test]
    fn parent_cycle_rejected() {
        let a = ClassDefinition {
            name: "a".into(),
            parent: Some("b".into()),
            class_sla: sla(Consistency::Strong),
            attributes: vec![],
            functions: vec![],
            triggers: vec![],
        };
        let b = ClassDefinition {
            name: "b".into(),
            parent: Some("a".into()),
            class_sla: sla(Consistency::Strong),
            attributes: vec![],
            functions: vec![],
            triggers: vec![],
        };
        let classes: BTreeMap<_, _> =
            [(a.name.clone(), a.clone()), (b.name.clone(), b)].into_iter().collect();
        assert!(matches!(
            validate_class(&a, &classes, &handlers()),
            Err(ClassError::ParentCycle(_))
        ));
    }

    #[test]
    fn duplicate_member_within_class_rejected() {
        let def = ClassDefinition {
            name: "dup".into(),
            parent: None,
            class_sla: sla(Consistency::Strong),
            attributes: vec![
                AttributeDef { name: "v".into(), kind: AttrKind::Counter, sla: None },
                AttributeDef { name: "v".into(), kind: AttrKind::Counter, sla: None },
            ],
            functions: vec![],
            triggers: vec![],
        };
        assert!(matches!(
            validate_class(&def, &BTreeMap::new(), &handlers()),
            Err(ClassError::DuplicateMember { .. })
        ));
    }

    #[test]
    fn unknown_handler_rejected() {
        let def = ClassDefinition {
            name: "c".into(),
            parent: None,
            class_sla: sla(Consistency::Strong),
            attributes: vec![],
            functions: vec![FunctionDef {
                name: "f".into(),
                handler: "no-such-handler".into(),
                mean_service_ms: 1.0,
                sla: None,
            }],
            triggers: vec![],
        };
        assert!(matches!(
            validate_class(&def, &BTreeMap::new(), &handlers()),
            Err(ClassError::UnknownHandler { .. })
        ));
    }

    #[test]
    fn trigger_wiring_checked() {
        let mut def = ClassDefinition {
            name: "t".into(),
            parent: None,
            class_sla: sla(Consistency::ReadYourWrite),
            attributes: vec![AttributeDef {
                name: "cache".into(),
                kind: AttrKind::MapBytes,
                sla: None,
            }],
            functions: vec![FunctionDef {
                name: "process".into(),
                handler: "echo".into(),
                mean_service_ms: 1.0,
                sla: None,
            }],
            triggers: vec![TriggerRule {
                target: "process".into(),
                source: "cache".into(),
                event: TriggerEvent::OnUpdate,
            }],
        };
        assert!(validate_class(&def, &BTreeMap::new(), &handlers()).is_ok());

        // A function source cannot emit OnUpdate.
        def.triggers[0].source = "process".into();
        assert!(matches!(
            validate_class(&def, &BTreeMap::new(), &handlers()),
            Err(ClassError::EventKindMismatch { .. })
        ));

        // Dangling source.
        def.triggers[0].source = "nothing".into();
        assert!(matches!(
            validate_class(&def, &BTreeMap::new(), &handlers()),
            Err(ClassError::DanglingTriggerSource { .. })
        ));

        // Length-one completion cycle.
        def.triggers[0] = TriggerRule {
            target: "process".into(),
            source: "process".into(),
            event: TriggerEvent::OnComplete,
        };
        assert!(matches!(
            validate_class(&def, &BTreeMap::new(), &handlers()),
            Err(ClassError::SelfTrigger { .. })
        ));
    }

    #[test]
    fn flattening_is_idempotent() {
        let classes = parent_child();
        let flat = validate_class(&classes["audited-store"], &classes, &handlers()).unwrap();

        // Re-express the flattened class as a parentless definition with full
        // per-member overrides; validating it must reproduce `flat` exactly.
        let refed = ClassDefinition {
            name: flat.name.clone(),
            parent: None,
            class_sla: flat.class_sla.clone(),
            attributes: flat
                .attributes
                .iter()
                .map(|a| AttributeDef {
                    name: a.name.clone(),
                    kind: a.kind,
                    sla: Some(SlaOverride {
                        consistency: Some(a.sla.consistency.clone()),
                        availability: Some(a.sla.availability),
                        throughput: a.sla.throughput,
                        locality: a.sla.locality.clone(),
                    }),
                })
                .collect(),
            functions: flat
                .functions
                .iter()
                .map(|f| FunctionDef {
                    name: f.name.clone(),
                    handler: f.handler.clone(),
                    mean_service_ms: f.mean_service_ms,
                    sla: Some(SlaOverride {
                        consistency: Some(f.sla.consistency.clone()),
                        availability: Some(f.sla.availability),
                        throughput: f.sla.throughput,
                        locality: f.sla.locality.clone(),
                    }),
                })
                .collect(),
            triggers: flat.triggers.clone(),
        };
        let again = validate_class(&refed, &BTreeMap::new(), &handlers()).unwrap();
        assert_eq!(again, flat);
    }

    #[test]
    fn members_sorted_by_name() {
        let def = ClassDefinition {
            name: "s".into(),
            parent: None,
            class_sla: sla(Consistency::ReadYourWrite),
            attributes: vec![
                AttributeDef { name: "zz".into(), kind: AttrKind::Counter, sla: None },
                AttributeDef { name: "aa".into(), kind: AttrKind::Counter, sla: None },
            ],
            functions: vec![],
            triggers: vec![],
        };
        let flat = validate_class(&def, &BTreeMap::new(), &handlers()).unwrap();
        assert_eq!(flat.attributes[0].name, "aa");
        assert_eq!(flat.attr_index("zz"), Some(1));
    }
}
