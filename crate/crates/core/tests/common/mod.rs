#![allow(dead_code)]

pub mod codec;
pub mod phases;
