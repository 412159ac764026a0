//! Built-in pages for the simulated client.

pub mod demo;
pub mod editor;

use crate::simclient::Page;

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 2] = ["demo", "editor"];

pub fn by_name(name: &str) -> Option<Page> {
    match name {
        "demo" => Some(demo::page()),
        "editor" => Some(editor::page()),
        _ => None,
    }
}
