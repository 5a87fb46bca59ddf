//! Flat key/value output, printed as CSV rows (`key,v1,v2,...`) or one JSON
//! object with sorted keys.

use std::io::Write;

use serde_json::{Map, Value};

#[derive(Debug, Default)]
pub struct Report {
    fields: Vec<(&'static str, Field)>,
}

#[derive(Debug)]
enum Field {
    Floats(Vec<f64>),
    Counts(Vec<usize>),
    Float(f64),
    Count(usize),
    Flag(bool),
    Text(String),
}

impl Report {
    pub fn floats(mut self, key: &'static str, v: &[f64]) -> Self {
        self.fields.push((key, Field::Floats(v.to_vec())));
        self
    }

    pub fn counts(mut self, key: &'static str, v: &[usize]) -> Self {
        self.fields.push((key, Field::Counts(v.to_vec())));
        self
    }

    pub fn float(mut self, key: &'static str, v: f64) -> Self {
        self.fields.push((key, Field::Float(v)));
        self
    }

    pub fn count(mut self, key: &'static str, v: usize) -> Self {
        self.fields.push((key, Field::Count(v)));
        self
    }

    pub fn flag(mut self, key: &'static str, v: bool) -> Self {
        self.fields.push((key, Field::Flag(v)));
        self
    }

    pub fn text(mut self, key: &'static str, v: impl Into<String>) -> Self {
        self.fields.push((key, Field::Text(v.into())));
        self
    }

    pub fn to_csv(&self) -> String {
        let join = |items: Vec<String>| items.join(",");
        let mut out = String::new();
        for (key, field) in &self.fields {
            let values = match field {
                Field::Floats(v) => join(v.iter().map(f64::to_string).collect()),
                Field::Counts(v) => join(v.iter().map(usize::to_string).collect()),
                Field::Float(v) => v.to_string(),
                Field::Count(v) => v.to_string(),
                Field::Flag(v) => v.to_string(),
                Field::Text(v) => v.clone(),
            };
            out.push_str(key);
            out.push(',');
            out.push_str(&values);
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (key, field) in &self.fields {
            let value = match field {
                Field::Floats(v) => Value::from(v.clone()),
                Field::Counts(v) => Value::from(v.clone()),
                Field::Float(v) => Value::from(*v),
                Field::Count(v) => Value::from(*v),
                Field::Flag(v) => Value::from(*v),
                Field::Text(v) => Value::from(v.clone()),
            };
            map.insert(key.to_string(), value);
        }
        Value::Object(map)
    }

    pub fn print(&self, json: bool) {
        let text = if json { format!("{}\n", self.to_json()) } else { self.to_csv() };
        // A closed pipe (`| head`) is not an error worth reporting.
        let _ = std::io::stdout().lock().write_all(text.as_bytes());
    }
}
