//! Versioned prompt templates for the four chat calls the pipeline makes.

use serde::{Deserialize, Serialize};

/// Bumped whenever any template text changes.
pub const PROMPT_VERSION: &str = "v1";

pub const CLAIM: &str = "<CLAIM>";
pub const EVIDENCE_PATHS: &str = "<EVIDENCE_PATHS>";
pub const EVIDENCE_SNIPPETS: &str = "<EVIDENCE_SNIPPETS>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStage {
    Kg,
    Web,
    ZeroShot,
    Rewrite,
}

impl PromptStage {
    pub const ALL: [PromptStage; 4] = [
        PromptStage::Kg,
        PromptStage::Web,
        PromptStage::ZeroShot,
        PromptStage::Rewrite,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub stage: PromptStage,
    pub system_text: &'static str,
    pub user_text: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn for_stage(stage: PromptStage) -> Self {
        let (system_text, user_text) = match stage {
            PromptStage::Kg => (
                include_str!("../../prompts/kg.system.txt"),
                include_str!("../../prompts/kg.user.txt"),
            ),
            PromptStage::Web => (
                include_str!("../../prompts/web.system.txt"),
                include_str!("../../prompts/web.user.txt"),
            ),
            PromptStage::ZeroShot => (
                include_str!("../../prompts/zero_shot.system.txt"),
                include_str!("../../prompts/zero_shot.user.txt"),
            ),
            PromptStage::Rewrite => (
                include_str!("../../prompts/rewrite.system.txt"),
                include_str!("../../prompts/rewrite.user.txt"),
            ),
        };
        Self {
            stage,
            system_text,
            user_text,
        }
    }

    /// Fills the placeholders in one pass, so placeholder-like text inside the
    /// claim or evidence is never expanded again.
    pub fn render(&self, claim: &str, evidence: &[String]) -> RenderedPrompt {
        let list = numbered_list(evidence);
        let user = substitute(
            self.user_text,
            &[(CLAIM, claim), (EVIDENCE_PATHS, &list), (EVIDENCE_SNIPPETS, &list)],
        );
        RenderedPrompt {
            system: self.system_text.to_string(),
            user,
        }
    }
}

/// `1. first\n2. second`, with internal whitespace of each item collapsed.
pub fn numbered_list(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, text)| {
            let flat: Vec<&str> = text.split_whitespace().collect();
            format!("{}. {}", i + 1, flat.join(" "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        let next = vars
            .iter()
            .filter_map(|(name, value)| rest.find(name).map(|pos| (pos, *name, *value)))
            .min_by_key(|(pos, _, _)| *pos);
        match next {
            Some((pos, name, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + name.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}
