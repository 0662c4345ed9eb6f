//! Structured response schemas: one boolean verdict field plus up to four
//! string analysis fields.

use serde::{Deserialize, Serialize};

pub const VERDICT_FIELD: &str = "is_ai_generated";
pub const MAX_SCHEMA_FIELDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Bool,
    Str,
}

impl FieldKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FieldKind::Bool => "bool",
            FieldKind::Str => "str",
        }
    }

    pub fn parse(s: &str) -> Option<FieldKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bool" | "boolean" => Some(FieldKind::Bool),
            "str" | "string" => Some(FieldKind::Str),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    pub kind: FieldKind,
}

impl SchemaField {
    pub fn bool_field(name: &str) -> SchemaField {
        SchemaField { name: name.into(), kind: FieldKind::Bool }
    }

    pub fn str_field(name: &str) -> SchemaField {
        SchemaField { name: name.into(), kind: FieldKind::Str }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema has no fields")]
    Empty,
    #[error("schema has {0} fields; the cap is {MAX_SCHEMA_FIELDS}")]
    TooManyFields(usize),
    #[error("schema must contain exactly one bool field named {VERDICT_FIELD}")]
    MissingVerdict,
    #[error("field {0} must be of kind str")]
    NonStringField(String),
    #[error("duplicate field name {0}")]
    DuplicateName(String),
    #[error("invalid field identifier {0:?}")]
    InvalidIdentifier(String),
}

/// A validated ordered field list for schema-constrained responses.
///
/// Construction enforces the structural invariants; history-dependent rewrite
/// constraints live in the adaptation module and operate on raw field lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SchemaField>", into = "Vec<SchemaField>")]
pub struct StructuredSchema {
    fields: Vec<SchemaField>,
}

impl StructuredSchema {
    pub fn new(fields: Vec<SchemaField>) -> Result<Self, SchemaError> {
        if fields.is_empty() {
            return Err(SchemaError::Empty);
        }
        if fields.len() > MAX_SCHEMA_FIELDS {
            return Err(SchemaError::TooManyFields(fields.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &fields {
            if !is_identifier(&f.name) {
                return Err(SchemaError::InvalidIdentifier(f.name.clone()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateName(f.name.clone()));
            }
            if f.name != VERDICT_FIELD && f.kind != FieldKind::Str {
                return Err(SchemaError::NonStringField(f.name.clone()));
            }
        }
        match fields.iter().filter(|f| f.name == VERDICT_FIELD).count() {
            1 if fields.iter().any(|f| f.name == VERDICT_FIELD && f.kind == FieldKind::Bool) => {}
            _ => return Err(SchemaError::MissingVerdict),
        }
        Ok(StructuredSchema { fields })
    }

    pub fn fields(&self) -> &[SchemaField] {
        &self.fields
    }

    pub fn field_names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fields.iter().any(|f| f.name == name)
    }

    /// Class-style rendering used both in prompts (Fig-style response class)
    /// and as the fallback schema instruction for providers without native
    /// structured output.
    pub fn render_class_text(&self) -> String {
        let mut out = String::from("class StructuredResponse(BaseModel):\n");
        for f in &self.fields {
            out.push_str(&format!("    {}: {}\n", f.name, f.kind.as_str()));
        }
        out
    }
}

impl TryFrom<Vec<SchemaField>> for StructuredSchema {
    type Error = SchemaError;
    fn try_from(fields: Vec<SchemaField>) -> Result<Self, Self::Error> {
        StructuredSchema::new(fields)
    }
}

impl From<StructuredSchema> for Vec<SchemaField> {
    fn from(s: StructuredSchema) -> Vec<SchemaField> {
        s.fields
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Extract `name: kind` field lines from class-like text (the shape LVLMs
/// produce for rewrite proposals and that `render_class_text` emits).
/// Unknown kinds and non-field lines are skipped; order is preserved and
/// duplicates keep their first occurrence.
pub fn parse_class_fields(text: &str) -> Vec<SchemaField> {
    let mut fields: Vec<SchemaField> = Vec::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches('-').trim();
        let Some((name, kind)) = line.split_once(':') else {
            continue;
        };
        let name = name.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`');
        // Strip trailing annotations like `= Field(...)` or comments.
        let kind = kind
            .trim()
            .split(|c: char| c == '=' || c == '#' || c == ',' || c == '(')
            .next()
            .unwrap_or("")
            .trim();
        if !is_identifier(name) {
            continue;
        }
        let Some(kind) = FieldKind::parse(kind) else {
            continue;
        };
        if fields.iter().any(|f| f.name == name) {
            continue;
        }
        fields.push(SchemaField { name: name.to_string(), kind });
    }
    fields
}

#[cfg(test)]
mod tests {
    use super::*;

    fn initial() -> Vec<SchemaField> {
        vec![
            SchemaField::bool_field(VERDICT_FIELD),
            SchemaField::str_field("raw_frame_analysis"),
            SchemaField::str_field("edge_analysis"),
            SchemaField::str_field("explanation"),
        ]
    }

    #[test]
    fn accepts_the_initial_shape() {
        let s = StructuredSchema::new(initial()).unwrap();
        assert_eq!(s.fields().len(), 4);
        assert!(s.contains(VERDICT_FIELD));
    }

    #[test]
    fn rejects_structural_violations() {
        let mut six = initial();
        six.push(SchemaField::str_field("a"));
        six.push(SchemaField::str_field("b"));
        assert_eq!(StructuredSchema::new(six).unwrap_err(), SchemaError::TooManyFields(6));

        let no_verdict = vec![SchemaField::str_field("x")];
        assert_eq!(StructuredSchema::new(no_verdict).unwrap_err(), SchemaError::MissingVerdict);

        let bad = vec![
            SchemaField::bool_field(VERDICT_FIELD),
            SchemaField::bool_field("second_bool"),
        ];
        assert_eq!(
            StructuredSchema::new(bad).unwrap_err(),
            SchemaError::NonStringField("second_bool".into())
        );

        let dup = vec![
            SchemaField::bool_field(VERDICT_FIELD),
            SchemaField::str_field("x"),
            SchemaField::str_field("x"),
        ];
        assert_eq!(StructuredSchema::new(dup).unwrap_err(), SchemaError::DuplicateName("x".into()));

        let ident = vec![
            SchemaField::bool_field(VERDICT_FIELD),
            SchemaField::str_field("bad name"),
        ];
        assert!(matches!(
            StructuredSchema::new(ident).unwrap_err(),
            SchemaError::InvalidIdentifier(_)
        ));
    }

    #[test]
    fn render_then_parse_is_identity() {
        let s = StructuredSchema::new(initial()).unwrap();
        let parsed = parse_class_fields(&s.render_class_text());
        assert_eq!(parsed, s.fields());
    }

    #[test]
    fn parser_handles_llm_style_output() {
        let text = r#"
Here is the new class:

```python
class NewAnalysisResult(BaseModel):
    is_ai_generated: bool
    boundary_clarity: str
    texture_consistency: str  # texture notes
    object_delineation: str = Field(default="")
```
"#;
        let fields = parse_class_fields(text);
        let names: Vec<&str> = fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(
            names,
            ["is_ai_generated", "boundary_clarity", "texture_consistency", "object_delineation"]
        );
        assert_eq!(fields[0].kind, FieldKind::Bool);
    }
}
