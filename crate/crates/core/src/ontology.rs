//! Class hierarchy and restriction properties.
//!
//! An [`Ontology`] is loaded from a small JSON interchange document, validated
//! (no dangling references, no cycles) and then frozen. Branches listed under
//! `excluded_roots` are dropped at load time.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque class identifier, compared byte-exactly.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(String);

impl ClassId {
    pub fn new(id: impl Into<String>) -> Self {
        ClassId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClassId {
    fn from(s: &str) -> Self {
        ClassId(s.to_string())
    }
}

impl From<String> for ClassId {
    fn from(s: String) -> Self {
        ClassId(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RestrictionKind {
    And,
    Or,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyValue {
    pub property: String,
    pub value: ClassId,
}

/// An `And`/`Or` combination of (property, value class) pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Restriction {
    pub kind: RestrictionKind,
    pub pairs: Vec<PropertyValue>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyClass {
    pub id: ClassId,
    pub label: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub parents: Vec<ClassId>,
    #[serde(default)]
    pub restrictions: Vec<Restriction>,
}

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("failed to read ontology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse ontology JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid class {id:?}: {reason}")]
    InvalidClass { id: String, reason: String },
    #[error("duplicate class id {0}")]
    DuplicateClass(ClassId),
    #[error("class {from} references unknown class {to} ({field})")]
    DanglingReference {
        from: String,
        to: ClassId,
        field: &'static str,
    },
    #[error("cycle detected in the class hierarchy involving {0}")]
    Cycle(ClassId),
    #[error("unknown class {0}")]
    UnknownClass(ClassId),
}

pub type Result<T> = std::result::Result<T, OntologyError>;

// Wire shapes. Restriction kinds are kept as free strings here so that
// unsupported kinds can be skipped with a warning instead of failing the load.
#[derive(Deserialize)]
struct RawOntology {
    classes: Vec<RawClass>,
    #[serde(default)]
    excluded_roots: Vec<ClassId>,
}

#[derive(Deserialize)]
struct RawClass {
    id: ClassId,
    label: String,
    #[serde(default)]
    synonyms: Vec<String>,
    #[serde(default)]
    parents: Vec<ClassId>,
    #[serde(default)]
    restrictions: Vec<RawRestriction>,
}

#[derive(Deserialize)]
struct RawRestriction {
    kind: String,
    #[serde(default)]
    pairs: Vec<PropertyValue>,
}

#[derive(Serialize)]
struct OntologyDoc<'a> {
    classes: Vec<&'a OntologyClass>,
    excluded_roots: &'a [ClassId],
}

/// Immutable, validated class graph.
#[derive(Clone, Debug)]
pub struct Ontology {
    classes: Vec<OntologyClass>,
    index: HashMap<ClassId, usize>,
    children: Vec<Vec<usize>>,
    excluded_roots: Vec<ClassId>,
}

pub fn load_ontology(path: impl AsRef<Path>) -> Result<Ontology> {
    let text = std::fs::read_to_string(path)?;
    Ontology::from_json(&text)
}

impl Ontology {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawOntology = serde_json::from_str(text)?;
        let mut classes = Vec::with_capacity(raw.classes.len());
        for rc in raw.classes {
            let mut restrictions = Vec::new();
            for r in rc.restrictions {
                let kind = match r.kind.to_ascii_lowercase().as_str() {
                    "and" => RestrictionKind::And,
                    "or" => RestrictionKind::Or,
                    other => {
                        log::warn!(
                            "class {}: ignoring unsupported restriction kind {other:?}",
                            rc.id
                        );
                        continue;
                    }
                };
                restrictions.push(Restriction {
                    kind,
                    pairs: r.pairs,
                });
            }
            classes.push(OntologyClass {
                id: rc.id,
                label: rc.label,
                synonyms: rc.synonyms,
                parents: rc.parents,
                restrictions,
            });
        }
        Self::new(classes, raw.excluded_roots)
    }

    /// Validates the class list and removes every branch rooted at one of
    /// `excluded_roots` (the roots included).
    pub fn new(classes: Vec<OntologyClass>, excluded_roots: Vec<ClassId>) -> Result<Self> {
        let full = Self::validate(classes)?;
        if excluded_roots.is_empty() {
            return Ok(full);
        }

        let mut removed = vec![false; full.classes.len()];
        for root in &excluded_roots {
            let &start = full
                .index
                .get(root)
                .ok_or_else(|| OntologyError::DanglingReference {
                    from: "excluded_roots".into(),
                    to: root.clone(),
                    field: "excluded_roots",
                })?;
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                if removed[i] {
                    continue;
                }
                removed[i] = true;
                queue.extend(full.children[i].iter().copied());
            }
        }

        let removed_ids: BTreeSet<&ClassId> = full
            .classes
            .iter()
            .zip(&removed)
            .filter(|(_, &r)| r)
            .map(|(c, _)| &c.id)
            .collect();
        let mut kept = Vec::new();
        for (class, _) in full.classes.iter().zip(&removed).filter(|(_, &r)| !r) {
            let mut class = class.clone();
            // Parents of a surviving class cannot be removed (that would make it
            // a descendant of an excluded root), but restriction values can.
            class.restrictions = class
                .restrictions
                .into_iter()
                .filter_map(|mut r| {
                    r.pairs.retain(|p| {
                        let keep = !removed_ids.contains(&p.value);
                        if !keep {
                            log::warn!(
                                "class {}: dropping restriction value {} from an excluded branch",
                                class.id,
                                p.value
                            );
                        }
                        keep
                    });
                    (!r.pairs.is_empty()).then_some(r)
                })
                .collect();
            kept.push(class);
        }
        let mut pruned = Self::validate(kept)?;
        pruned.excluded_roots = excluded_roots;
        Ok(pruned)
    }

    fn validate(classes: Vec<OntologyClass>) -> Result<Self> {
        let mut index = HashMap::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if c.id.as_str().is_empty() {
                return Err(OntologyError::InvalidClass {
                    id: String::new(),
                    reason: "empty id".into(),
                });
            }
            if c.label.trim().is_empty() {
                return Err(OntologyError::InvalidClass {
                    id: c.id.to_string(),
                    reason: "empty label".into(),
                });
            }
            if index.insert(c.id.clone(), i).is_some() {
                return Err(OntologyError::DuplicateClass(c.id.clone()));
            }
        }

        let mut children = vec![Vec::new(); classes.len()];
        for (i, c) in classes.iter().enumerate() {
            for p in &c.parents {
                let &pi = index.get(p).ok_or_else(|| OntologyError::DanglingReference {
                    from: c.id.to_string(),
                    to: p.clone(),
                    field: "parents",
                })?;
                if !children[pi].contains(&i) {
                    children[pi].push(i);
                }
            }
            for r in &c.restrictions {
                if r.pairs.is_empty() {
                    return Err(OntologyError::InvalidClass {
                        id: c.id.to_string(),
                        reason: "restriction without pairs".into(),
                    });
                }
                for pair in &r.pairs {
                    if !index.contains_key(&pair.value) {
                        return Err(OntologyError::DanglingReference {
                            from: c.id.to_string(),
                            to: pair.value.clone(),
                            field: "restrictions",
                        });
                    }
                }
            }
        }

        // Kahn's algorithm over parent -> child edges.
        let mut indegree: Vec<usize> = classes
            .iter()
            .map(|c| c.parents.iter().collect::<BTreeSet<_>>().len())
            .collect();
        let mut queue: VecDeque<usize> = (0..classes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(i) = queue.pop_front() {
            visited += 1;
            for &ch in &children[i] {
                indegree[ch] -= 1;
                if indegree[ch] == 0 {
                    queue.push_back(ch);
                }
            }
        }
        if visited != classes.len() {
            let culprit = (0..classes.len())
                .find(|&i| indegree[i] > 0)
                .expect("unvisited node has positive indegree");
            return Err(OntologyError::Cycle(classes[culprit].id.clone()));
        }

        Ok(Ontology {
            classes,
            index,
            children,
            excluded_roots: Vec::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&OntologyDoc {
            classes: self.classes.iter().collect(),
            excluded_roots: &self.excluded_roots,
        })
        .expect("ontology serializes")
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, id: &ClassId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &ClassId) -> Option<&OntologyClass> {
        self.index.get(id).map(|&i| &self.classes[i])
    }

    pub fn class(&self, id: &ClassId) -> Result<&OntologyClass> {
        self.get(id)
            .ok_or_else(|| OntologyError::UnknownClass(id.clone()))
    }

    pub fn label(&self, id: &ClassId) -> Result<&str> {
        self.class(id).map(|c| c.label.as_str())
    }

    /// Classes in file order.
    pub fn classes(&self) -> impl Iterator<Item = &OntologyClass> {
        self.classes.iter()
    }

    pub fn excluded_roots(&self) -> &[ClassId] {
        &self.excluded_roots
    }

    fn position(&self, id: &ClassId) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| OntologyError::UnknownClass(id.clone()))
    }

    /// Transitive closure over parent edges, excluding `id` itself.
    pub fn ancestors(&self, id: &ClassId) -> Result<BTreeSet<ClassId>> {
        let start = self.position(id)?;
        let mut seen = vec![false; self.classes.len()];
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for p in &self.classes[i].parents {
                let pi = self.index[p];
                if !seen[pi] {
                    seen[pi] = true;
                    out.insert(p.clone());
                    queue.push_back(pi);
                }
            }
        }
        Ok(out)
    }

    pub fn is_ancestor(&self, ancestor: &ClassId, of: &ClassId) -> Result<bool> {
        self.position(ancestor)?;
        Ok(self.ancestors(of)?.contains(ancestor))
    }

    /// Classes reachable from `id` through at most `max_hops` child edges,
    /// excluding `id`.
    pub fn descendants_within(&self, id: &ClassId, max_hops: usize) -> Result<BTreeSet<ClassId>> {
        let start = self.position(id)?;
        let mut depth = vec![usize::MAX; self.classes.len()];
        depth[start] = 0;
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            if depth[i] == max_hops {
                continue;
            }
            for &ch in &self.children[i] {
                if depth[ch] == usize::MAX {
                    depth[ch] = depth[i] + 1;
                    out.insert(self.classes[ch].id.clone());
                    queue.push_back(ch);
                }
            }
        }
        Ok(out)
    }

    pub fn descendants(&self, id: &ClassId) -> Result<BTreeSet<ClassId>> {
        self.descendants_within(id, usize::MAX)
    }

    /// Union of restriction value classes of `id`.
    pub fn restriction_classes(&self, id: &ClassId) -> Result<BTreeSet<ClassId>> {
        Ok(self
            .class(id)?
            .restrictions
            .iter()
            .flat_map(|r| r.pairs.iter().map(|p| p.value.clone()))
            .collect())
    }

    /// Natural-language rendering of the restrictions of `id`: value labels of an
    /// `And` restriction are joined by spaces, those of an `Or` restriction by
    /// `" or "`, and separate restrictions by `" AND "`.
    pub fn verbalize_restrictions(&self, id: &ClassId) -> Result<String> {
        let class = self.class(id)?;
        let parts: Vec<String> = class
            .restrictions
            .iter()
            .map(|r| {
                let labels: Vec<&str> = r
                    .pairs
                    .iter()
                    .map(|p| self.classes[self.index[&p.value]].label.as_str())
                    .collect();
                match r.kind {
                    RestrictionKind::And => labels.join(" "),
                    RestrictionKind::Or => labels.join(" or "),
                }
            })
            .collect();
        Ok(parts.join(" AND "))
    }
}
