//! Network service around the note-taking session runtime.

pub mod config;
pub mod protocol;
pub mod server;
