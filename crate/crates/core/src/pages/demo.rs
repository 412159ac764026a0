//! Counter, checkbox, radio pair, repeating timer, random roll, a text
//! field and a list that grows at run time.
//!
//! ```text
//! body                          sid-1   click-less; "create" listener
//! ├── div#panel                         click listener (bubbling target)
//! │   ├── button#inc  onclick           counter += 1
//! │   ├── button#dec  onclick           counter -= 1
//! │   ├── button#roll onclick           roll = 1..6 from Math.random
//! │   ├── button#start onclick          starts a 250 ms interval once
//! │   ├── button#delay onclick          400 ms one-shot
//! │   └── span                  sid-2   no handler
//! ├── input#name  (text)                change + keyup listeners
//! ├── input#agree (checkbox)    onchange
//! ├── input#ra, input#rb (radio)
//! ├── p#text                            selection target
//! ├── ul#list                           parent for created buttons
//! └── div                       sid-3
//! ```

use std::sync::Arc;

use serde_json::Value;

use crate::simclient::{ElementKind, ElementSpec, ElementTree, Handler, Page, Scope, SimError};

pub const PANEL: &str = "panel";
pub const INC: &str = "inc";
pub const DEC: &str = "dec";
pub const ROLL: &str = "roll";
pub const START: &str = "start";
pub const DELAY: &str = "delay";
pub const BADGE: &str = "sid-2";
pub const NAME: &str = "name";
pub const AGREE: &str = "agree";
pub const RADIO_A: &str = "ra";
pub const RADIO_B: &str = "rb";
pub const TEXT: &str = "text";
pub const LIST: &str = "list";

/// Click targets inside the panel.
pub const BUTTONS: [&str; 6] = [INC, DEC, ROLL, START, DELAY, BADGE];

/// Counter value of the first element created at run time.
pub const FIRST_DYNAMIC_SID: u64 = 4;

pub const TICK_SOURCE: &str = "function tick(){ ticks += 1; tickRand = Math.random() }";
pub const DELAYED_SOURCE: &str = "function delayed(){ delayed += 1 }";

pub fn page() -> Page {
    let mut tree = ElementTree::new();
    let root = tree.root();
    let panel = tree.append(root, ElementSpec::new("div").id(PANEL));
    tree.append(panel, ElementSpec::new("button").id(INC).inline("onclick", bump("counter += 1", "counter", 1)));
    tree.append(panel, ElementSpec::new("button").id(DEC).inline("onclick", bump("counter -= 1", "counter", -1)));
    tree.append(panel, ElementSpec::new("button").id(ROLL).inline("onclick", roll()));
    tree.append(panel, ElementSpec::new("button").id(START).inline("onclick", start()));
    tree.append(panel, ElementSpec::new("button").id(DELAY).inline("onclick", delay()));
    tree.append(panel, ElementSpec::new("span"));
    tree.append(root, ElementSpec::new("input").id(NAME).kind(ElementKind::TextInput));
    tree.append(
        root,
        ElementSpec::new("input").id(AGREE).kind(ElementKind::Checkbox).inline("onchange", agree_changed()),
    );
    tree.append(root, ElementSpec::new("input").id(RADIO_A).kind(ElementKind::Radio));
    tree.append(root, ElementSpec::new("input").id(RADIO_B).kind(ElementKind::Radio));
    tree.append(root, ElementSpec::new("p").id(TEXT));
    tree.append(root, ElementSpec::new("ul").id(LIST));
    tree.append(root, ElementSpec::new("div"));
    Page { tree, onload: Some(Arc::new(onload)) }
}

fn onload(scope: &mut Scope<'_>) -> Result<(), SimError> {
    scope.set_var("counter", 0);
    scope.add_event_listener(PANEL, "click", bump("panelClicks += 1", "panelClicks", 1))?;
    scope.add_event_listener("sid-1", "create", create_item())?;
    scope.add_event_listener(
        NAME,
        "change",
        Handler::new("nameLen = this.value.length", |s, _| {
            let len = s.element(NAME)?.value().len();
            s.set_var("nameLen", len);
            Ok(())
        }),
    )?;
    scope.add_event_listener(
        NAME,
        "keyup",
        Handler::new("keys += 1; lastKey = ev.key", |s, ev| {
            s.add("keys", 1);
            s.set_var("lastKey", ev.get("key").cloned().unwrap_or(Value::Null));
            Ok(())
        }),
    )?;
    let first = scope.random()?;
    scope.set_var("theme", (first * 3.0) as i64);
    Ok(())
}

fn bump(source: &'static str, var: &'static str, delta: i64) -> Handler {
    Handler::new(source, move |s, _| {
        s.add(var, delta);
        Ok(())
    })
}

fn roll() -> Handler {
    Handler::new("roll = Math.floor(Math.random() * 6) + 1", |s, _| {
        let v = s.random()?;
        s.set_var("roll", (v * 6.0) as i64 + 1);
        s.add("rolls", 1);
        Ok(())
    })
}

fn start() -> Handler {
    Handler::new("if (!running) { running = true; setInterval(tick, 250) }", |s, _| {
        if s.var("running") == Value::Bool(true) {
            return Ok(());
        }
        s.set_var("running", true);
        s.set_interval(
            250,
            Handler::new(TICK_SOURCE, |s, _| {
                s.add("ticks", 1);
                let r = s.random()?;
                s.set_var("tickRand", r);
                Ok(())
            }),
        )?;
        Ok(())
    })
}

fn delay() -> Handler {
    Handler::new("setTimeout(delayed, 400)", |s, _| {
        s.set_timeout(400, bump(DELAYED_SOURCE, "delayed", 1))?;
        Ok(())
    })
}

fn agree_changed() -> Handler {
    Handler::new("agreeChanges += 1; agreed = this.checked", |s, _| {
        s.add("agreeChanges", 1);
        let checked = s.element(AGREE)?.checked();
        s.set_var("agreed", checked);
        Ok(())
    })
}

/// Body listener for the synthetic `create` event: appends a button to
/// `ev.parent` and gives it an inline click handler right away, before
/// the deferred sweep has run.
fn create_item() -> Handler {
    Handler::new("var b = document.createElement('button'); parent.appendChild(b); b.onclick = pick", |s, ev| {
        let parent = ev.get("parent").and_then(Value::as_str).unwrap_or(LIST).to_owned();
        let id = s.create_element(&parent, "button")?;
        s.add("created", 1);
        s.set_dom0(
            &id,
            "onclick",
            Handler::new("picks += 1; pick = Math.random()", |s, _| {
                s.add("picks", 1);
                let r = s.random()?;
                s.set_var("pick", r);
                Ok(())
            }),
        )
    })
}
