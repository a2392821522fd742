use std::fs;
use std::io;
use std::path::Path;

/// Prompt texts with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    /// `{available_tools}`
    pub system: String,
    /// `{user_context}`
    pub rough: String,
    /// `{user_context}`
    pub detailed: String,
    /// `{image_path}`
    pub continue_prompt: String,
    pub finalize: String,
    /// `{available_tools}`
    pub tool_scan: String,
    /// `{regional_narrative}`, `{user_query}`
    pub integration: String,
    /// `{user_query}`, `{step}`
    pub judge: String,
}

const FILES: [&str; 8] = [
    "system.txt",
    "rough.txt",
    "detailed.txt",
    "continue.txt",
    "finalize.txt",
    "tool_scan.txt",
    "integration.txt",
    "judge.txt",
];

impl Default for Templates {
    fn default() -> Self {
        Self::from_texts([
            include_str!("../../templates/system.txt"),
            include_str!("../../templates/rough.txt"),
            include_str!("../../templates/detailed.txt"),
            include_str!("../../templates/continue.txt"),
            include_str!("../../templates/finalize.txt"),
            include_str!("../../templates/tool_scan.txt"),
            include_str!("../../templates/integration.txt"),
            include_str!("../../templates/judge.txt"),
        ])
    }
}

impl Templates {
    fn from_texts(texts: [&str; 8]) -> Self {
        let [system, rough, detailed, continue_prompt, finalize, tool_scan, integration, judge] =
            texts.map(|t| t.trim_end().to_string());
        Self {
            system,
            rough,
            detailed,
            continue_prompt,
            finalize,
            tool_scan,
            integration,
            judge,
        }
    }

    /// Loads templates from a directory using the shipped file names. Files
    /// that are absent keep the built-in text.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        if !dir.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("template directory {} not found", dir.display()),
            ));
        }
        let defaults = Self::default();
        let mut texts: [String; 8] = [
            defaults.system,
            defaults.rough,
            defaults.detailed,
            defaults.continue_prompt,
            defaults.finalize,
            defaults.tool_scan,
            defaults.integration,
            defaults.judge,
        ];
        for (slot, file) in texts.iter_mut().zip(FILES) {
            let path = dir.join(file);
            if path.exists() {
                *slot = fs::read_to_string(&path)?;
            }
        }
        Ok(Self::from_texts(texts.each_ref().map(String::as_str)))
    }
}

/// Replaces each `{key}` with its value. Unknown placeholders stay as they are.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_templates_carry_their_placeholders() {
        let t = Templates::default();
        assert!(t.system.contains("{available_tools}"));
        assert!(t.rough.contains("{user_context}"));
        assert!(t.detailed.contains("{user_context}"));
        assert!(t.continue_prompt.contains("{image_path}"));
        assert!(t.tool_scan.contains("{available_tools}"));
        assert!(
            t.integration.contains("{regional_narrative}")
                && t.integration.contains("{user_query}")
        );
    }

    #[test]
    fn render_substitutes_all_occurrences() {
        assert_eq!(render("{a}-{a}-{b}", &[("a", "x")]), "x-x-{b}");
    }

    #[test]
    fn load_dir_overrides_present_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("finalize.txt"), "done now\n").unwrap();
        let t = Templates::load_dir(dir.path()).unwrap();
        assert_eq!(t.finalize, "done now");
        assert_eq!(t.system, Templates::default().system);
    }
}
