//! JSON configuration loading with field-path error reporting.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deserialize `text`, reporting the offending field path on failure.
pub fn parse_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(path_error)
}

/// Deserialize an already-parsed JSON value, reporting the field path on failure.
pub fn parse_value<T: DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(path_error)
}

/// Separates an inner field path from the message in errors raised by [`tagged`].
const INNER_PATH: char = '\u{1f}';

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> Error {
    let outer = e.path().to_string();
    let msg = e.inner().to_string();
    match msg.split_once(INNER_PATH) {
        Some((inner, rest)) if outer == "." => Error::Config { path: inner.to_string(), msg: rest.to_string() },
        Some((inner, rest)) => Error::Config { path: format!("{outer}.{inner}"), msg: rest.to_string() },
        None => Error::Config { path: outer, msg },
    }
}

/// Deserialize the body of a hand-dispatched tagged enum, keeping the field path in the error.
pub(crate) fn tagged<T: DeserializeOwned, E: serde::de::Error>(v: serde_json::Value) -> std::result::Result<T, E> {
    serde_path_to_error::deserialize(v).map_err(|e| E::custom(format!("{}{INNER_PATH}{}", e.path(), e.inner())))
}

/// Config error at `path` for a value that parsed but is out of range.
pub fn field_error(path: &str, msg: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), msg: msg.into() }
}

/// Prefix the path of a nested config error with `parent`.
pub fn nested<T>(parent: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { path, msg } => Error::Config { path: format!("{parent}.{path}"), msg },
        Error::InvalidArgument(msg) => Error::Config { path: parent.to_string(), msg },
        other => other,
    })
}

/// Top level of an experiment config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub experiment: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}
