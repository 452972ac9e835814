//! Deterministic lexicon-based concept tagger.
//!
//! Surface forms (labels and synonyms) are normalized by lowercasing and
//! collapsing whitespace runs, then stored in a character trie. Matching is
//! greedy leftmost-longest on word boundaries, where a boundary is any
//! transition between alphanumeric and non-alphanumeric characters.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::ontology::{ClassId, Ontology};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("surface form {surface:?} is shared by classes {first} and {second}")]
    Collision {
        surface: String,
        first: ClassId,
        second: ClassId,
    },
}

/// A tagged span. Offsets are byte offsets into the annotated text, so
/// `&text[start..end] == surface`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub class_id: ClassId,
}

#[derive(Default, Clone, Debug)]
struct TrieNode {
    children: HashMap<char, usize>,
    terminal: Option<ClassId>,
}

#[derive(Clone, Debug)]
pub struct Lexicon {
    entries: BTreeMap<String, ClassId>,
    nodes: Vec<TrieNode>,
}

/// Lowercases and collapses whitespace runs into single spaces, trimming the ends.
pub fn normalize_surface(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

fn plural_variant(form: &str) -> Option<String> {
    let last = form.chars().last()?;
    (last.is_alphabetic() && last != 's').then(|| format!("{form}s"))
}

impl Lexicon {
    /// One entry per label and synonym, plus a trailing-"s" plural of each
    /// form's final token. Explicit forms shared by two classes are an error;
    /// a plural variant never overrides an explicit form.
    pub fn build(ontology: &Ontology) -> Result<Self, LexiconError> {
        let mut entries: BTreeMap<String, ClassId> = BTreeMap::new();
        for class in ontology.classes() {
            for form in std::iter::once(&class.label).chain(&class.synonyms) {
                let key = normalize_surface(form);
                if key.is_empty() {
                    continue;
                }
                match entries.get(&key) {
                    Some(existing) if existing != &class.id => {
                        return Err(LexiconError::Collision {
                            surface: key,
                            first: existing.clone(),
                            second: class.id.clone(),
                        })
                    }
                    Some(_) => {}
                    None => {
                        entries.insert(key, class.id.clone());
                    }
                }
            }
        }

        let mut plurals: BTreeMap<String, ClassId> = BTreeMap::new();
        for (key, id) in &entries {
            if let Some(p) = plural_variant(key) {
                if entries.contains_key(&p) {
                    continue;
                }
                match plurals.get(&p) {
                    Some(other) if other != id => {
                        return Err(LexiconError::Collision {
                            surface: p,
                            first: other.clone(),
                            second: id.clone(),
                        })
                    }
                    _ => {
                        plurals.insert(p, id.clone());
                    }
                }
            }
        }
        entries.extend(plurals);
        Ok(Self::from_entries(entries))
    }

    /// Builds a lexicon from already-normalized surface forms.
    pub fn from_entries(entries: BTreeMap<String, ClassId>) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (key, id) in &entries {
            let mut cur = 0;
            for ch in key.chars() {
                cur = match nodes[cur].children.get(&ch) {
                    Some(&next) => next,
                    None => {
                        nodes.push(TrieNode::default());
                        let next = nodes.len() - 1;
                        nodes[cur].children.insert(ch, next);
                        next
                    }
                };
            }
            nodes[cur].terminal = Some(id.clone());
        }
        Lexicon { entries, nodes }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, surface: &str) -> Option<&ClassId> {
        self.entries.get(&normalize_surface(surface))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ClassId)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Longest lexicon match starting at byte offset `start`, as (end, class).
    fn longest_at(&self, text: &str, start: usize) -> Option<(usize, &ClassId)> {
        let mut node = 0;
        let mut best = None;
        // True while inside a whitespace run that has already emitted its space.
        let mut pending_space = false;
        let mut chars = text[start..].char_indices().peekable();
        while let Some((off, ch)) = chars.next() {
            let pos = start + off;
            if ch.is_whitespace() {
                if pending_space {
                    continue;
                }
                pending_space = true;
                match self.nodes[node].children.get(&' ') {
                    Some(&next) => node = next,
                    None => break,
                }
                continue;
            }
            pending_space = false;
            let mut dead = false;
            for lc in ch.to_lowercase() {
                match self.nodes[node].children.get(&lc) {
                    Some(&next) => node = next,
                    None => {
                        dead = true;
                        break;
                    }
                }
            }
            if dead {
                break;
            }
            let end = pos + ch.len_utf8();
            if let Some(id) = &self.nodes[node].terminal {
                let next = chars.peek().map(|&(_, c)| c);
                if is_boundary(Some(ch), next) {
                    best = Some((end, id));
                }
            }
        }
        best
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// A boundary lies between `prev` and `next` unless both are word characters.
pub(crate) fn is_boundary(prev: Option<char>, next: Option<char>) -> bool {
    !matches!((prev, next), (Some(a), Some(b)) if is_word_char(a) && is_word_char(b))
}

/// Greedy leftmost-longest tagging. Spans never overlap and come out ordered
/// by start offset.
pub fn annotate(lexicon: &Lexicon, text: &str) -> Vec<Annotation> {
    let mut out = Vec::new();
    let mut prev: Option<char> = None;
    let mut resume_at = 0;
    for (pos, ch) in text.char_indices() {
        if pos >= resume_at && !ch.is_whitespace() && is_boundary(prev, Some(ch)) {
            if let Some((end, id)) = lexicon.longest_at(text, pos) {
                out.push(Annotation {
                    start: pos,
                    end,
                    surface: text[pos..end].to_string(),
                    class_id: id.clone(),
                });
                resume_at = end;
            }
        }
        prev = Some(ch);
    }
    out
}
