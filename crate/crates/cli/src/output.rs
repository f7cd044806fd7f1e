use std::fmt;

use serde_json::{Map, Value};

/// An error with a machine-readable name printed as `error=<name>`.
#[derive(Debug)]
pub struct Failure {
    pub name: String,
    pub message: String,
    /// Bad invocation or input files rather than a protocol failure.
    pub usage: bool,
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        if self.usage {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn fail(name: &str, message: impl fmt::Display) -> anyhow::Error {
    Failure {
        name: name.to_string(),
        message: message.to_string(),
        usage: false,
    }
    .into()
}

pub fn usage(name: &str, message: impl fmt::Display) -> anyhow::Error {
    Failure {
        name: name.to_string(),
        message: message.to_string(),
        usage: true,
    }
    .into()
}

/// Collects `key=value` records; repeated keys become JSON arrays.
pub struct Output {
    pub json: bool,
    fields: Vec<(String, Value)>,
}

impl Output {
    pub fn new(json: bool) -> Self {
        Self {
            json,
            fields: Vec::new(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl Into<Value>) {
        self.fields.push((key.to_string(), value.into()));
    }

    pub fn emit(&mut self) {
        let fields = std::mem::take(&mut self.fields);
        if self.json {
            let mut map = Map::new();
            for (k, v) in fields {
                match map.get_mut(&k) {
                    Some(Value::Array(items)) => items.push(v),
                    Some(prev) => *prev = Value::Array(vec![prev.take(), v]),
                    None => {
                        map.insert(k, v);
                    }
                }
            }
            println!("{}", Value::Object(map));
        } else {
            for (k, v) in fields {
                match v {
                    Value::String(s) => println!("{k}={s}"),
                    v => println!("{k}={v}"),
                }
            }
        }
        use std::io::Write;
        let _ = std::io::stdout().flush();
    }
}
