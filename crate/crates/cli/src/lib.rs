//! `innoscope` command-line driver and HTTP/JSON service.

pub mod commands;
pub mod service;
