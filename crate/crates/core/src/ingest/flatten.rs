use serde_json::Value;

use super::IngestError;

/// Flattens a JSON document into `(path, value)` rows.
///
/// Object keys and array indices are joined with `.`; object keys come out in
/// sorted order, array elements in document order. Scalars are stringified
/// (strings without quotes, `null` as `null`); empty containers keep a row of
/// their own so no path disappears.
pub fn flatten_record(raw: &str) -> Result<Vec<(String, String)>, IngestError> {
    let mut de = serde_json::Deserializer::from_str(raw);
    let value: Value = serde_path_to_error::deserialize(&mut de).map_err(|e| IngestError::MalformedDocument {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| IngestError::MalformedDocument {
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok(flatten_value(&value))
}

pub fn flatten_value(value: &Value) -> Vec<(String, String)> {
    let mut rows = Vec::new();
    walk(value, &mut String::new(), &mut rows);
    rows
}

fn walk(value: &Value, path: &mut String, rows: &mut Vec<(String, String)>) {
    let mut descend = |key: &str, child: &Value, path: &mut String| {
        let len = path.len();
        if !path.is_empty() {
            path.push('.');
        }
        path.push_str(key);
        walk(child, path, rows);
        path.truncate(len);
    };
    match value {
        Value::Object(map) if !map.is_empty() => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for k in keys {
                descend(k, &map[k], path);
            }
        }
        Value::Array(items) if !items.is_empty() => {
            for (i, child) in items.iter().enumerate() {
                descend(&i.to_string(), child, path);
            }
        }
        Value::Object(_) => rows.push((path.clone(), "{}".into())),
        Value::Array(_) => rows.push((path.clone(), "[]".into())),
        Value::String(s) => rows.push((path.clone(), s.clone())),
        other => rows.push((path.clone(), other.to_string())),
    }
}
