//! Versioned prompt templates.
//!
//! Templates are text assets compiled into the binary. Placeholders use
//! `{{name}}` and are substituted in a single pass, so substituted values are
//! never re-expanded.

use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    /// Stable `<agent>/<name>` identifier.
    pub name: &'static str,
    pub version: u32,
    pub body: &'static str,
}

/// A prompt ready to send, tagged with the template it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub template: String,
}

macro_rules! template {
    ($ident:ident, $name:literal, $version:literal, $path:literal) => {
        pub const $ident: PromptTemplate =
            PromptTemplate { name: $name, version: $version, body: include_str!($path) };
    };
}

template!(AGENT1_INTERPRET, "agent1/interpret", 1, "../prompts/agent1/interpret.v1.txt");
template!(AGENT1_REFORMAT, "agent1/reformat", 1, "../prompts/agent1/reformat.v1.txt");
template!(AGENT1A_REQUIREMENTS, "agent1a/requirements", 1, "../prompts/agent1a/requirements.v1.txt");
template!(AGENT1A_REVISION, "agent1a/revision", 1, "../prompts/agent1a/revision.v1.txt");
template!(AGENT1A_REFORMAT, "agent1a/reformat", 1, "../prompts/agent1a/reformat.v1.txt");
template!(AGENT2_GENERATE, "agent2/generate", 1, "../prompts/agent2/generate.v1.txt");
template!(AGENT2_REVISION, "agent2/revision", 1, "../prompts/agent2/revision.v1.txt");
template!(AGENT2_REPAIR, "agent2/repair", 1, "../prompts/agent2/repair.v1.txt");
template!(AGENT2_REFORMAT, "agent2/reformat", 1, "../prompts/agent2/reformat.v1.txt");
template!(AGENT3_CONTEXT, "agent3/context", 1, "../prompts/agent3/context.v1.txt");
template!(AGENT3_PERCEPTION, "agent3/perception", 1, "../prompts/agent3/perception.v1.txt");
template!(
    AGENT3_PERCEPTION_REFORMAT,
    "agent3/perception_reformat",
    1,
    "../prompts/agent3/perception_reformat.v1.txt"
);
template!(AGENT3_DIAGNOSIS, "agent3/diagnosis", 1, "../prompts/agent3/diagnosis.v1.txt");
template!(
    AGENT3_DIAGNOSIS_REFORMAT,
    "agent3/diagnosis_reformat",
    1,
    "../prompts/agent3/diagnosis_reformat.v1.txt"
);

pub const ALL_TEMPLATES: &[PromptTemplate] = &[
    AGENT1_INTERPRET,
    AGENT1_REFORMAT,
    AGENT1A_REQUIREMENTS,
    AGENT1A_REVISION,
    AGENT1A_REFORMAT,
    AGENT2_GENERATE,
    AGENT2_REVISION,
    AGENT2_REPAIR,
    AGENT2_REFORMAT,
    AGENT3_CONTEXT,
    AGENT3_PERCEPTION,
    AGENT3_PERCEPTION_REFORMAT,
    AGENT3_DIAGNOSIS,
    AGENT3_DIAGNOSIS_REFORMAT,
];

impl PromptTemplate {
    /// `agent1/interpret@v1`
    pub fn id(&self) -> String {
        format!("{}@v{}", self.name, self.version)
    }

    /// Names of all placeholders, in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        let mut rest = self.body;
        while let Some(start) = rest.find("{{") {
            let Some(len) = rest[start + 2..].find("}}") else { break };
            let name = &rest[start + 2..start + 2 + len];
            if !names.contains(&name) {
                names.push(name);
            }
            rest = &rest[start + 2 + len + 2..];
        }
        names
    }

    /// Substitutes `vars`. Placeholders with no binding are rendered empty.
    pub fn render(&self, vars: &[(&str, &str)]) -> RenderedPrompt {
        let vars: HashMap<&str, &str> = vars.iter().copied().collect();
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let tail = &rest[start + 2..];
            match tail.find("}}") {
                Some(len) => {
                    let name = &tail[..len];
                    debug_assert!(vars.contains_key(name), "{}: unbound placeholder {name}", self.name);
                    out.push_str(vars.get(name).copied().unwrap_or_default());
                    rest = &tail[len + 2..];
                }
                None => {
                    out.push_str("{{");
                    rest = tail;
                }
            }
        }
        out.push_str(rest);
        RenderedPrompt { text: out, template: self.id() }
    }
}

impl RenderedPrompt {
    /// Ad-hoc prompt not backed by a template.
    pub fn raw(text: impl Into<String>) -> Self {
        Self { text: text.into(), template: "raw".into() }
    }
}
