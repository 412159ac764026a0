//! Adds the loader tags to a static page so it boots the in-page shim
//! before any of its own code runs.

use std::cell::Cell;

use lol_html::html_content::ContentType;
use lol_html::{element, rewrite_str, RewriteStrSettings};
use thiserror::Error;

/// The shim's scripts, in load order.
pub const SCRIPTS: [&str; 4] = [
    r#"<script src="mvx/socket.io.js" type="text/javascript"></script>"#,
    r#"<script src="mvx/helpers.js"   type="text/javascript"></script>"#,
    r#"<script src="mvx/jquery.js"    type="text/javascript"></script>"#,
    r#"<script src="mvx/identity.js"  type="text/javascript"></script>"#,
];

const MARKER: &str = "mvx/identity.js";
const INIT: &str = "initSocket";

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("cannot parse page: {0}")]
    Parse(String),
    #[error("page has no <body> tag")]
    NoBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Injected {
    Rewritten(String),
    /// Both edits were already present; the page is returned unchanged.
    AlreadyInjected(String),
}

impl Injected {
    pub fn html(&self) -> &str {
        match self {
            Injected::Rewritten(s) | Injected::AlreadyInjected(s) => s,
        }
    }
}

/// Inserts [`SCRIPTS`] at the top of `<head>` (creating one before
/// `<body>` if missing) and wraps the body's `onload` in `initSocket(..)`.
/// Bytes outside those two places are kept as they are.
pub fn inject(html: &str) -> Result<Injected, InjectError> {
    let has_scripts = html.contains(MARKER);
    let saw_head = Cell::new(false);
    let saw_body = Cell::new(false);
    let changed = Cell::new(false);
    let tags = |indent: &str| SCRIPTS.iter().map(|s| format!("\n{indent}{s}")).collect::<String>();

    let settings = RewriteStrSettings::new()
        .append_element_content_handler(element!("head", |el| {
            if saw_head.replace(true) || has_scripts {
                return Ok(());
            }
            el.prepend(&tags(&indent_of(html, "<head")), ContentType::Html);
            changed.set(true);
            Ok(())
        }))
        .append_element_content_handler(element!("body", |el| {
            if saw_body.replace(true) {
                return Ok(());
            }
            if !saw_head.get() && !has_scripts {
                el.before(&format!("<head>{}\n</head>\n", tags("    ")), ContentType::Html);
                changed.set(true);
            }
            let onload = el.get_attribute("onload");
            if let Some(wrapped) = wrap_onload(onload.as_deref()) {
                el.set_attribute("onload", &wrapped)?;
                changed.set(true);
            }
            Ok(())
        }));
    let out = rewrite_str(html, settings)
    .map_err(|e| InjectError::Parse(e.to_string()))?;

    if !saw_body.get() {
        return Err(InjectError::NoBody);
    }
    Ok(if changed.get() { Injected::Rewritten(out) } else { Injected::AlreadyInjected(out) })
}

/// New `onload` value, or `None` if it already goes through `initSocket`.
fn wrap_onload(current: Option<&str>) -> Option<String> {
    let current = current.map(str::trim).unwrap_or("");
    if current.starts_with(INIT) {
        return None;
    }
    if current.is_empty() {
        return Some(format!("{INIT}(null)"));
    }
    // A handler name is passed as is; statements become a function so they
    // still run after the shim, not while its arguments are evaluated.
    if current.split('.').all(is_identifier) {
        Some(format!("{INIT}({current})"))
    } else {
        Some(format!("{INIT}(function(event){{{current}}})"))
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '$')
}

/// Indentation for lines inside the element whose start tag begins with
/// `open`: its own indentation plus four spaces.
fn indent_of(html: &str, open: &str) -> String {
    let lower = html.to_ascii_lowercase();
    let Some(at) = lower.find(open) else { return "    ".into() };
    let line_start = html[..at].rfind('\n').map_or(0, |i| i + 1);
    let lead: String = html[line_start..at].chars().take_while(|c| c.is_whitespace()).collect();
    format!("{lead}    ")
}
