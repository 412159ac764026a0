use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::tables::Handler;
use super::SimError;

/// Index of a node inside its [`ElementTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementKind {
    Generic,
    TextInput,
    Checkbox,
    Radio,
}

impl ElementKind {
    /// Elements whose state changes without running any page handler.
    pub fn is_stateful(self) -> bool {
        !matches!(self, ElementKind::Generic)
    }
}

/// Content of a DOM0 property slot such as `onclick`.
#[derive(Debug, Clone)]
pub enum Dom0Slot {
    /// Set by the page and not yet seen by the interceptor.
    Raw(Handler),
    /// Replaced by a recording wrapper; the original lives in the handler table.
    Wrapped,
    /// Cleared: the follower keeps the original only in its table.
    Null,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub(crate) parent: Option<NodeRef>,
    pub(crate) children: Vec<NodeRef>,
    pub(crate) tag: String,
    pub(crate) authored_id: Option<String>,
    pub(crate) assigned_id: String,
    pub(crate) kind: ElementKind,
    pub(crate) value: String,
    pub(crate) checked: bool,
    pub(crate) dom0: BTreeMap<String, Dom0Slot>,
    /// DOM2 event types with a live recording wrapper installed.
    pub(crate) dom2_live: BTreeSet<String>,
}

impl Node {
    fn from_spec(spec: ElementSpec, parent: Option<NodeRef>) -> Node {
        Node {
            parent,
            children: Vec::new(),
            tag: spec.tag,
            authored_id: spec.id,
            assigned_id: String::new(),
            kind: spec.kind,
            value: spec.value,
            checked: spec.checked,
            dom0: spec.inline.into_iter().map(|(k, h)| (k, Dom0Slot::Raw(h))).collect(),
            dom2_live: BTreeSet::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.assigned_id
    }

    pub fn authored_id(&self) -> Option<&str> {
        self.authored_id.as_deref()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn checked(&self) -> bool {
        self.checked
    }

    pub fn parent(&self) -> Option<NodeRef> {
        self.parent
    }

    pub fn children(&self) -> &[NodeRef] {
        &self.children
    }

    pub fn dom0_slot(&self, event_type: &str) -> Option<&Dom0Slot> {
        self.dom0.get(event_type)
    }

    pub fn has_live_listener(&self, event_type: &str) -> bool {
        self.dom2_live.contains(event_type)
    }
}

/// Builder-side description of one element.
#[derive(Debug, Clone)]
pub struct ElementSpec {
    tag: String,
    id: Option<String>,
    kind: ElementKind,
    value: String,
    checked: bool,
    inline: Vec<(String, Handler)>,
}

impl ElementSpec {
    pub fn new(tag: impl Into<String>) -> Self {
        ElementSpec {
            tag: tag.into(),
            id: None,
            kind: ElementKind::Generic,
            value: String::new(),
            checked: false,
            inline: Vec::new(),
        }
    }

    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn kind(mut self, kind: ElementKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn value(mut self, value: impl Into<String>) -> Self {
        self.value = value.into();
        self
    }

    pub fn checked(mut self, checked: bool) -> Self {
        self.checked = checked;
        self
    }

    /// An inline DOM0 handler, e.g. `onclick="..."` in markup.
    pub fn inline(mut self, slot: impl Into<String>, handler: Handler) -> Self {
        self.inline.push((slot.into(), handler));
        self
    }
}

/// A rooted, ordered element tree standing in for a page's DOM.
#[derive(Debug, Clone)]
pub struct ElementTree {
    nodes: Vec<Node>,
    by_id: HashMap<String, NodeRef>,
}

impl Default for ElementTree {
    fn default() -> Self {
        Self::new()
    }
}

impl ElementTree {
    /// A tree holding only a `body` root.
    pub fn new() -> Self {
        Self::with_root(ElementSpec::new("body"))
    }

    pub fn with_root(spec: ElementSpec) -> Self {
        ElementTree { nodes: vec![Node::from_spec(spec, None)], by_id: HashMap::new() }
    }

    pub fn root(&self) -> NodeRef {
        NodeRef(0)
    }

    pub fn append(&mut self, parent: NodeRef, spec: ElementSpec) -> NodeRef {
        let r = NodeRef(self.nodes.len());
        self.nodes.push(Node::from_spec(spec, Some(parent)));
        self.nodes[parent.0].children.push(r);
        r
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, r: NodeRef) -> &Node {
        &self.nodes[r.0]
    }

    pub(crate) fn node_mut(&mut self, r: NodeRef) -> &mut Node {
        &mut self.nodes[r.0]
    }

    pub fn find(&self, id: &str) -> Option<NodeRef> {
        self.by_id.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Result<&Node, SimError> {
        self.find(id).map(|r| self.node(r)).ok_or_else(|| SimError::UnknownElement(id.to_owned()))
    }

    /// Depth-first pre-order walk from the root.
    pub fn preorder(&self) -> Vec<NodeRef> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root()];
        while let Some(r) = stack.pop() {
            out.push(r);
            stack.extend(self.nodes[r.0].children.iter().rev().copied());
        }
        out
    }

    /// `r` followed by its ancestors up to the root: the bubbling path.
    pub fn ancestry(&self, r: NodeRef) -> Vec<NodeRef> {
        let mut out = vec![r];
        let mut cur = self.nodes[r.0].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p.0].parent;
        }
        out
    }

    /// Gives every node an id: authored ids are kept, the rest receive
    /// `sid-1`, `sid-2`, ... in pre-order from `next_sid`. Returns the next
    /// unused counter value.
    pub(crate) fn assign_ids(&mut self, mut next_sid: u64) -> Result<u64, SimError> {
        self.by_id.clear();
        let order = self.preorder();
        for &r in &order {
            if let Some(id) = self.nodes[r.0].authored_id.clone() {
                if self.by_id.insert(id.clone(), r).is_some() {
                    return Err(SimError::DuplicateAuthoredId(id));
                }
                self.nodes[r.0].assigned_id = id;
            }
        }
        for &r in &order {
            if self.nodes[r.0].authored_id.is_none() {
                let id = self.fresh_id(&mut next_sid);
                self.by_id.insert(id.clone(), r);
                self.nodes[r.0].assigned_id = id;
            }
        }
        Ok(next_sid)
    }

    /// Appends a node created at run time and gives it the next id.
    pub(crate) fn create(&mut self, parent: NodeRef, spec: ElementSpec, next_sid: &mut u64) -> NodeRef {
        let r = self.append(parent, spec);
        let id = self.fresh_id(next_sid);
        self.by_id.insert(id.clone(), r);
        self.nodes[r.0].assigned_id = id;
        r
    }

    fn fresh_id(&self, next_sid: &mut u64) -> String {
        loop {
            let id = format!("sid-{next_sid}");
            *next_sid += 1;
            if !self.by_id.contains_key(&id) {
                return id;
            }
        }
    }
}
