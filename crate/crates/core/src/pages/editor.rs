//! A small rich-text editor: a toolbar of inline
//! `onclick` buttons above an editable area with DOM2 listeners.
//!
//! ```text
//! body
//! ├── div#toolbar                       no handler
//! │   ├── button#bold .. button#color   onclick each
//! │   └── span#logo                     no handler
//! ├── div#editor                        click listener
//! │   └── div#content (text)            click, keyup, mouseup listeners
//! └── button#save                       onclick
//! ```
//!
//! Every handler bumps `handled`, so the page itself counts handler runs.

use std::sync::Arc;

use serde_json::Value;

use crate::protocol::Payload;
use crate::simclient::{ElementKind, ElementSpec, ElementTree, Handler, Page, Scope, SimError};
use crate::workload::{Step, Workload};

pub const TOOLBAR: &str = "toolbar";
pub const LOGO: &str = "logo";
pub const EDITOR: &str = "editor";
pub const CONTENT: &str = "content";
pub const SAVE: &str = "save";

pub const COMMANDS: [&str; 13] = [
    "bold", "italic", "underline", "left", "center", "right", "ol", "ul", "indent", "outdent", "link", "fontsize",
    "color",
];

/// Parent of each element, by id; `None` for children of the body.
pub fn parent_of(id: &str) -> Option<&'static str> {
    match id {
        LOGO => Some(TOOLBAR),
        CONTENT => Some(EDITOR),
        _ if COMMANDS.contains(&id) => Some(TOOLBAR),
        _ => None,
    }
}

/// `(element, event type)` pairs with a handler, written out by hand from
/// the layout above.
pub fn handled(id: &str, event_type: &str) -> bool {
    match (id, event_type) {
        (EDITOR, "click") | (SAVE, "click") => true,
        (CONTENT, "click" | "keyup" | "mouseup") => true,
        (cmd, "click") => COMMANDS.contains(&cmd),
        _ => false,
    }
}

pub fn page() -> Page {
    let mut tree = ElementTree::new();
    let root = tree.root();
    let toolbar = tree.append(root, ElementSpec::new("div").id(TOOLBAR));
    for cmd in COMMANDS {
        tree.append(toolbar, ElementSpec::new("button").id(cmd).inline("onclick", command(cmd)));
    }
    tree.append(toolbar, ElementSpec::new("span").id(LOGO));
    let editor = tree.append(root, ElementSpec::new("div").id(EDITOR));
    tree.append(editor, ElementSpec::new("div").id(CONTENT).kind(ElementKind::TextInput));
    tree.append(root, ElementSpec::new("button").id(SAVE).inline("onclick", save()));
    Page { tree, onload: Some(Arc::new(onload)) }
}

fn onload(scope: &mut Scope<'_>) -> Result<(), SimError> {
    scope.add_event_listener(
        EDITOR,
        "click",
        Handler::new("focused = true", |s, _| {
            s.add("handled", 1);
            s.set_var("focused", true);
            Ok(())
        }),
    )?;
    scope.add_event_listener(
        CONTENT,
        "click",
        Handler::new("caret = ev.clientX", |s, ev| {
            s.add("handled", 1);
            s.set_var("caret", ev.get("clientX").cloned().unwrap_or(Value::Null));
            Ok(())
        }),
    )?;
    scope.add_event_listener(
        CONTENT,
        "keyup",
        Handler::new("this.textContent += ev.key", |s, ev| {
            s.add("handled", 1);
            let key = ev.get("key").and_then(Value::as_str).unwrap_or("");
            let text = format!("{}{key}", s.element(CONTENT)?.value());
            s.set_value(CONTENT, &text)
        }),
    )?;
    scope.add_event_listener(
        CONTENT,
        "mouseup",
        Handler::new("mouseups += 1", |s, _| {
            s.add("handled", 1);
            s.add("mouseups", 1);
            Ok(())
        }),
    )?;
    Ok(())
}

fn command(cmd: &'static str) -> Handler {
    Handler::new(format!("nicCommand('{cmd}')"), move |s, _| {
        s.add("handled", 1);
        s.add("commands", 1);
        let on = s.var(cmd) != Value::Bool(true);
        s.set_var(cmd, on);
        Ok(())
    })
}

fn save() -> Handler {
    Handler::new("saved = content.textContent", |s, _| {
        s.add("handled", 1);
        let text = s.element(CONTENT)?.value().to_owned();
        s.set_var("saved", text);
        Ok(())
    })
}

/// The scripted editing session: 74 dispatches, with virtual time passing
/// between them.
pub fn script() -> Workload {
    let mut steps = Vec::new();
    let mut push = |id: &str, ty: &str, payload: Payload| {
        steps.push(Step::Event { element_id: id.into(), event_type: ty.into(), payload });
        steps.push(Step::TimerAdvance(180));
    };
    let click = |x: u32| {
        let mut p = Payload::new();
        p.insert("clientX".into(), Value::from(x));
        p.insert("clientY".into(), Value::from(120));
        p
    };
    let key = |k: char| {
        let mut p = Payload::new();
        p.insert("key".into(), Value::String(k.to_string()));
        p
    };
    let typing = |push: &mut dyn FnMut(&str, &str, Payload), text: &str| {
        for k in text.chars() {
            push(CONTENT, "keyup", key(k));
        }
    };

    push(CONTENT, "click", click(40));
    typing(&mut push, "The quick brown fox ");
    push(CONTENT, "mouseup", click(40));
    push("bold", "click", click(10));
    typing(&mut push, "jumps ove");
    push("bold", "click", click(10));
    push("italic", "click", click(30));
    typing(&mut push, "r the la");
    push("italic", "click", click(30));
    for cmd in ["left", "center", "right", "ol", "ul", "indent", "outdent", "fontsize", "color"] {
        push(cmd, "click", click(200));
    }
    push(TOOLBAR, "click", click(600));
    push(LOGO, "click", click(640));
    push(CONTENT, "click", click(90));
    typing(&mut push, "zy dog. End");
    push(CONTENT, "mouseup", click(90));
    push("underline", "click", click(50));
    typing(&mut push, "!!!!");
    push("underline", "click", click(50));
    push(SAVE, "click", click(20));
    Workload::new(steps)
}
