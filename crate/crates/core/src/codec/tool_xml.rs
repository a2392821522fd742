use std::collections::BTreeSet;

use serde_json::Value;

use super::{CodecError, ToolDescriptor};

pub(crate) const TOOLS_HEADER: &str = "<tools>\n";
pub(crate) const TOOLS_FOOTER: &str = "</tools>\n";

/// Renders the tool documentation block substituted for `{available_tools}`.
///
/// Tools are ordered by (category, server, tool) so the output does not depend
/// on discovery order. Each property is listed once with its sub-schema as
/// compact JSON; schema keys other than `type`, `properties` and `required`
/// are carried in a `<schema_options>` element so distinct descriptors never
/// render identically.
pub fn generate_tool_xml(tools: &[ToolDescriptor]) -> Result<String, CodecError> {
    let mut seen = BTreeSet::new();
    for tool in tools {
        tool.check()?;
        if !seen.insert((tool.server_name.as_str(), tool.tool_name.as_str())) {
            return Err(CodecError::DuplicateTool(tool.qualified_name()));
        }
    }

    let mut ordered: Vec<&ToolDescriptor> = tools.iter().collect();
    ordered.sort_by(|a, b| {
        (a.category, &a.server_name, &a.tool_name).cmp(&(b.category, &b.server_name, &b.tool_name))
    });

    let mut out = String::from(TOOLS_HEADER);
    for tool in ordered {
        render_tool(&mut out, tool);
    }
    out.push_str(TOOLS_FOOTER);
    Ok(out)
}

fn render_tool(out: &mut String, tool: &ToolDescriptor) {
    let required: BTreeSet<&str> = tool.required().collect();
    out.push_str("<tool>\n");
    out.push_str(&format!(
        "  <server_name>{}</server_name>\n",
        tool.server_name
    ));
    out.push_str(&format!("  <tool_name>{}</tool_name>\n", tool.tool_name));
    out.push_str(&format!("  <category>{}</category>\n", tool.category));
    out.push_str(&format!(
        "  <description>{}</description>\n",
        escape(&tool.description)
    ));
    out.push_str("  <parameters>\n");
    for (name, schema) in tool.properties() {
        out.push_str(&format!(
            "    <parameter name=\"{}\" required=\"{}\">{}</parameter>\n",
            escape(name),
            required.contains(name.as_str()),
            escape(&schema.to_string())
        ));
    }
    out.push_str("  </parameters>\n");
    if let Some(schema) = tool.input_schema.as_object() {
        let extra: serde_json::Map<String, Value> = schema
            .iter()
            .filter(|(key, _)| !matches!(key.as_str(), "type" | "properties" | "required"))
            .map(|(key, value)| (key.clone(), value.clone()))
            .collect();
        let non_object_type = schema.get("type").is_some_and(|t| t != "object");
        if !extra.is_empty() || non_object_type {
            let mut options = extra;
            if non_object_type {
                options.insert("type".into(), schema["type"].clone());
            }
            out.push_str(&format!(
                "  <schema_options>{}</schema_options>\n",
                escape(&Value::Object(options).to_string())
            ));
        }
    }
    out.push_str("</tool>\n");
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}
