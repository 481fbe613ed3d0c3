//! Prompt templates for the two stages.
//!
//! The shipped texts are reconstructions of the protocol (pairwise yes/no
//! check, then relationship labelling followed by a select-or-dismiss choice),
//! not verbatim copies of any published prompt. They are plain text assets
//! with the placeholders `{query}`, `{candidate}` and `{candidate_list}`, and
//! can be replaced from a directory at run time.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LlmError;

const SYSTEM: &str = include_str!("../../templates/system.txt");
const STAGE1: &str = include_str!("../../templates/stage1.txt");
const STAGE2: &str = include_str!("../../templates/stage2.txt");
const REASK: &str = include_str!("../../templates/reask.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub system: String,
    pub stage1: String,
    pub stage2: String,
    /// Appended to a prompt whose reply could not be parsed.
    pub reask_suffix: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            system: SYSTEM.trim_end().to_string(),
            stage1: STAGE1.trim_end().to_string(),
            stage2: STAGE2.trim_end().to_string(),
            reask_suffix: REASK.trim_end().to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads `system.txt`, `stage1.txt`, `stage2.txt` and `reask.txt` from
    /// `dir`, keeping the built-in text for any file that is absent.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, LlmError> {
        let dir = dir.as_ref();
        let mut t = PromptTemplates::default();
        for (name, slot) in [
            ("system.txt", &mut t.system),
            ("stage1.txt", &mut t.stage1),
            ("stage2.txt", &mut t.stage2),
            ("reask.txt", &mut t.reask_suffix),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(&path)
                    .map_err(|e| LlmError::Storage {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?
                    .trim_end()
                    .to_string();
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let need = |tpl: &str, name: &str, keys: &[&str]| {
            for k in keys {
                if !tpl.contains(k) {
                    return Err(LlmError::Script(format!("{name} template lacks {k}")));
                }
            }
            Ok(())
        };
        need(&self.stage1, "stage-1", &["{query}", "{candidate}"])?;
        need(&self.stage2, "stage-2", &["{query}", "{candidate_list}"])
    }

    pub fn render_stage1(&self, query: &str, candidate: &str) -> String {
        self.stage1.replace("{query}", query).replace("{candidate}", candidate)
    }

    /// Candidates are listed one per line as `1. name`, `2. name`, ...
    pub fn render_stage2<S: AsRef<str>>(&self, query: &str, candidates: &[S]) -> String {
        let list = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {}", i + 1, c.as_ref()))
            .collect::<Vec<_>>()
            .join("\n");
        self.stage2.replace("{query}", query).replace("{candidate_list}", &list)
    }

    pub fn reask(&self, user_text: &str) -> String {
        format!("{user_text}{}", self.reask_suffix)
    }

    /// The rendered line of `template` that carries `placeholder`, if the
    /// placeholder sits on a line of its own. Mock scripts key on these lines.
    pub fn line_for(template: &str, placeholder: &str, value: &str) -> Option<String> {
        template
            .lines()
            .find(|l| l.contains(placeholder))
            .map(|l| l.replace(placeholder, value).trim().to_string())
    }

    pub fn stage1_query_line(&self, query: &str) -> Option<String> {
        Self::line_for(&self.stage1, "{query}", query)
    }

    pub fn stage1_candidate_line(&self, candidate: &str) -> Option<String> {
        Self::line_for(&self.stage1, "{candidate}", candidate)
    }

    pub fn stage2_query_line(&self, query: &str) -> Option<String> {
        Self::line_for(&self.stage2, "{query}", query)
    }
}
