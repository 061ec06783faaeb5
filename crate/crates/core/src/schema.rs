//! Label schemas and label vectors.
//!
//! A [`LabelSchema`] names an ordered set of finding categories together with
//! the integer value domain each cell may take: `{-1, 0, 1}` for diagnostic
//! schemas (uncertain / absent / present) and `{0, 1}` for visual-pattern
//! schemas. A [`LabelVector`] is one study's assignment.

use crate::error::CoreError;
use serde::{Deserialize, Serialize};

/// How the extraction prompt for a schema is phrased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaKind {
    /// Present / absent / uncertain diagnostic findings.
    Diagnostic,
    /// Binary visual-pattern flags.
    VisualPattern,
}

/// A group of visual-pattern categories, used only to render the
/// visual-pattern prompt ("- Density patterns -" etc.).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryGroup {
    pub title: String,
    /// (display name, category key) pairs; keys index into `categories`.
    pub entries: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub name: String,
    pub categories: Vec<String>,
    /// Allowed cell values, sorted ascending.
    pub value_domain: Vec<i8>,
    pub kind: SchemaKind,
    /// Example line rendered into the extraction prompt. Bundled schemas carry
    /// their published example; custom schemas get a generated one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_values: Option<Vec<i8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<CategoryGroup>>,
}

impl LabelSchema {
    pub fn new(
        name: impl Into<String>,
        categories: Vec<String>,
        value_domain: Vec<i8>,
        kind: SchemaKind,
    ) -> Result<Self, CoreError> {
        let schema = LabelSchema {
            name: name.into(),
            categories,
            value_domain,
            kind,
            example_values: None,
            groups: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn arity(&self) -> usize {
        self.categories.len()
    }

    pub fn allows(&self, v: i8) -> bool {
        self.value_domain.contains(&v)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.categories.is_empty() {
            return Err(CoreError::Config(format!(
                "schema {}: no categories",
                self.name
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.categories {
            if !seen.insert(c.as_str()) {
                return Err(CoreError::Config(format!(
                    "schema {}: duplicate category {c:?}",
                    self.name
                )));
            }
        }
        if self.value_domain.is_empty() {
            return Err(CoreError::Config(format!(
                "schema {}: empty value domain",
                self.name
            )));
        }
        if self.value_domain.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Config(format!(
                "schema {}: value domain must be sorted and unique",
                self.name
            )));
        }
        if let Some(ex) = &self.example_values {
            if ex.len() != self.arity() || ex.iter().any(|v| !self.allows(*v)) {
                return Err(CoreError::Config(format!(
                    "schema {}: invalid example values",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Example line for the prompt; generated by cycling the value domain when
    /// the schema does not carry a published example.
    pub fn example_line(&self) -> String {
        match &self.example_values {
            Some(v) => render_values(v),
            None => {
                let vals: Vec<i8> = (0..self.arity())
                    .map(|i| self.value_domain[i % self.value_domain.len()])
                    .collect();
                render_values(&vals)
            }
        }
    }

    /// Restriction of this schema to the given category indices (in order).
    pub fn subset(&self, keep: &[usize]) -> Result<LabelSchema, CoreError> {
        let mut categories = Vec::with_capacity(keep.len());
        for &i in keep {
            let c = self.categories.get(i).ok_or_else(|| {
                CoreError::Config(format!("schema {}: category index {i} out of range", self.name))
            })?;
            categories.push(c.clone());
        }
        let mut s = LabelSchema::new(
            format!("{}-subset", self.name),
            categories,
            self.value_domain.clone(),
            self.kind,
        )?;
        s.groups = None;
        Ok(s)
    }
}

/// One study's labels over a schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub schema: String,
    pub values: Vec<i8>,
}

impl LabelVector {
    pub fn new(schema: &LabelSchema, values: Vec<i8>) -> Result<Self, CoreError> {
        if values.len() != schema.arity() {
            return Err(CoreError::SchemaMismatch(format!(
                "expected {} values for schema {}, got {}",
                schema.arity(),
                schema.name,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !schema.allows(**v)) {
            return Err(CoreError::SchemaMismatch(format!(
                "value {v} not in domain of schema {}",
                schema.name
            )));
        }
        Ok(LabelVector {
            schema: schema.name.clone(),
            values,
        })
    }

    /// Canonical comma-separated rendering, e.g. `0,1,-1`.
    pub fn render(&self) -> String {
        render_values(&self.values)
    }
}

fn render_values(values: &[i8]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

const CHEST_18: [&str; 18] = [
    "medical material",
    "arterial wall calcification",
    "cardiomegaly",
    "pericardial effusion",
    "coronary artery wall calcification",
    "hiatal hernia",
    "lymphadenopathy",
    "emphysema",
    "atelectasis",
    "lung nodule",
    "lung opacity",
    "pulmonary fibrotic sequela",
    "pleural effusion",
    "mosaic attenuation pattern",
    "peribronchial thickening",
    "consolidation",
    "bronchiectasis",
    "interlobular septal thickening",
];

const ABDOMEN_30: [&str; 30] = [
    "submucosal_edema",
    "renal_hypodensities",
    "aortic_valve_calcification",
    "coronary_calcification",
    "thrombosis",
    "metastatic_disease",
    "pancreatic_atrophy",
    "renal_cyst",
    "osteopenia",
    "surgically_absent_gallbladder",
    "atelectasis",
    "abdominal_aortic_aneurysm",
    "anasarca",
    "hiatal_hernia",
    "lymphadenopathy",
    "prostatomegaly",
    "biliary_ductal_dilation",
    "cardiomegaly",
    "splenomegaly",
    "hepatomegaly",
    "atherosclerosis",
    "ascites",
    "pleural_effusion",
    "hepatic_steatosis",
    "appendicitis",
    "gallstones",
    "hydronephrosis",
    "bowel_obstruction",
    "free_air",
    "fracture",
];

const VISUAL_11: [(&str, &str); 11] = [
    ("High-attenuation focus", "density_high"),
    ("Low-attenuation focus", "density_low"),
    ("Mixed-attenuation focus", "density_mixed"),
    ("Nodular opacity", "morphology_nodular"),
    ("Patchy opacity", "morphology_patchy"),
    ("Linear/stripe-like opacity", "morphology_linear"),
    ("Reticular/network-like opacity", "morphology_reticular"),
    ("Focal distribution", "distribution_focal"),
    ("Diffuse distribution", "distribution_diffuse"),
    ("Bilateral symmetric distribution", "distribution_bilateral_symmetric"),
    ("Unilateral distribution", "distribution_unilateral"),
];

const DESK_8: [&str; 8] = [
    "nodule",
    "effusion",
    "emphysema",
    "consolidation",
    "atelectasis",
    "cardiomegaly",
    "fibrosis",
    "pneumothorax",
];

/// 18-finding chest CT diagnostic schema.
pub fn schema_diagnostic_18() -> LabelSchema {
    let mut s = LabelSchema::new(
        "diagnostic-18",
        CHEST_18.iter().map(|s| s.to_string()).collect(),
        vec![-1, 0, 1],
        SchemaKind::Diagnostic,
    )
    .expect("bundled schema");
    s.example_values = Some(vec![0, 1, -1, -1, 1, -1, -1, -1, -1, -1, 0, 0, 0, 0, 1, 0, 0, 0]);
    s
}

/// 30-finding abdominal CT diagnostic schema.
pub fn schema_diagnostic_30() -> LabelSchema {
    let mut s = LabelSchema::new(
        "diagnostic-30",
        ABDOMEN_30.iter().map(|s| s.to_string()).collect(),
        vec![-1, 0, 1],
        SchemaKind::Diagnostic,
    )
    .expect("bundled schema");
    s.example_values = Some(vec![
        0, 1, -1, -1, 1, -1, -1, -1, -1, -1, 0, 0, 0, 0, 1, 0, 0, 0, -1, 0, 0, 1, 0, 0, 0, 0, 0,
        0, 0, 0,
    ]);
    s
}

/// 11-flag binary visual-pattern schema.
pub fn schema_visual_11() -> LabelSchema {
    let mut s = LabelSchema::new(
        "visual-11",
        VISUAL_11.iter().map(|(_, key)| key.to_string()).collect(),
        vec![0, 1],
        SchemaKind::VisualPattern,
    )
    .expect("bundled schema");
    s.example_values = Some(vec![0, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0]);
    s.groups = Some(vec![
        CategoryGroup {
            title: "Density patterns".into(),
            entries: VISUAL_11[0..3]
                .iter()
                .map(|(d, k)| (d.to_string(), k.to_string()))
                .collect(),
        },
        CategoryGroup {
            title: "Morphology patterns".into(),
            entries: VISUAL_11[3..7]
                .iter()
                .map(|(d, k)| (d.to_string(), k.to_string()))
                .collect(),
        },
        CategoryGroup {
            title: "Distribution patterns".into(),
            entries: VISUAL_11[7..11]
                .iter()
                .map(|(d, k)| (d.to_string(), k.to_string()))
                .collect(),
        },
    ]);
    s
}

/// 8-finding desk-scale schema used by the synthetic corpus.
pub fn schema_desk_8() -> LabelSchema {
    LabelSchema::new(
        "desk-8",
        DESK_8.iter().map(|s| s.to_string()).collect(),
        vec![-1, 0, 1],
        SchemaKind::Diagnostic,
    )
    .expect("bundled schema")
}

/// Look up a bundled schema by name.
pub fn bundled_schema(name: &str) -> Option<LabelSchema> {
    match name {
        "diagnostic-18" => Some(schema_diagnostic_18()),
        "diagnostic-30" => Some(schema_diagnostic_30()),
        "visual-11" => Some(schema_visual_11()),
        "desk-8" => Some(schema_desk_8()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_schemas_validate() {
        for name in ["diagnostic-18", "diagnostic-30", "visual-11", "desk-8"] {
            let s = bundled_schema(name).unwrap();
            s.validate().unwrap();
        }
        assert_eq!(schema_diagnostic_18().arity(), 18);
        assert_eq!(schema_diagnostic_30().arity(), 30);
        assert_eq!(schema_visual_11().arity(), 11);
        assert_eq!(schema_desk_8().arity(), 8);
    }

    #[test]
    fn example_lines_match_published_text() {
        assert_eq!(
            schema_diagnostic_18().example_line(),
            "0,1,-1,-1,1,-1,-1,-1,-1,-1,0,0,0,0,1,0,0,0"
        );
        assert_eq!(
            schema_diagnostic_30().example_line(),
            "0,1,-1,-1,1,-1,-1,-1,-1,-1,0,0,0,0,1,0,0,0,-1,0,0,1,0,0,0,0,0,0,0,0"
        );
        assert_eq!(schema_visual_11().example_line(), "0,1,0,0,0,1,0,1,0,0,0");
    }

    #[test]
    fn label_vector_rejects_out_of_domain() {
        let s = schema_desk_8();
        assert!(LabelVector::new(&s, vec![0; 8]).is_ok());
        assert!(LabelVector::new(&s, vec![2, 0, 0, 0, 0, 0, 0, 0]).is_err());
        assert!(LabelVector::new(&s, vec![0; 7]).is_err());
    }

    #[test]
    fn duplicate_categories_rejected() {
        let r = LabelSchema::new(
            "dup",
            vec!["a".into(), "a".into()],
            vec![0, 1],
            SchemaKind::Diagnostic,
        );
        assert!(r.is_err());
    }

    #[test]
    fn subset_keeps_order() {
        let s = schema_desk_8();
        let sub = s.subset(&[1, 3]).unwrap();
        assert_eq!(sub.categories, vec!["effusion", "consolidation"]);
    }
}
