//! Configuration loading and subcommands of the `adiabat` command-line tool.

pub mod config;
pub mod presets;
pub mod run;

use adiabat::Error;
use serde_json::{json, Value};

/// Process exit code for an error: 2 for bad input, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        "ConfigError" | "ParseError" | "JsonError" => 2,
        _ => 1,
    }
}

/// `{"error": {"kind", "message", "path"?}}`
pub fn error_json(e: &Error) -> Value {
    let mut err = json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::Config { path, .. } = e {
        err["path"] = json!(path);
    }
    json!({ "error": err })
}
