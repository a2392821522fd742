use std::path::Path;
use std::time::Duration;

use proptest::prelude::*;
use serde_json::{json, Map, Value};
use vicot::agent::feedback_error;
use vicot::codec::{parse_tool_call, render_tool_call, strip_think, ToolCall};
use vicot::transport::ToolResult;

fn identifier() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_.-]{0,15}"
}

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
        Just(Value::Null),
        (-1.0e6f64..1.0e6).prop_map(Value::from),
        any::<String>().prop_map(Value::from),
        "[<>&\"'/ a-z{}\\[\\]]{0,20}".prop_map(Value::from),
    ]
}

fn value() -> impl Strategy<Value = Value> {
    leaf().prop_recursive(3, 16, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map("[a-z_]{1,8}", inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn tool_call() -> impl Strategy<Value = ToolCall> {
    (
        identifier(),
        identifier(),
        prop::collection::btree_map("[a-zA-Z_][a-zA-Z0-9_]{0,12}", value(), 0..6),
    )
        .prop_map(|(server, tool, args)| ToolCall::new(server, tool, args.into_iter().collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn render_then_parse_is_identity(call in tool_call()) {
        let text = render_tool_call(&call);
        let parsed = parse_tool_call(&text).unwrap().unwrap();
        prop_assert_eq!(parsed, call);
    }

    #[test]
    fn surrounding_reasoning_does_not_change_the_call(call in tool_call(), think in "[a-zA-Z .,]{0,80}") {
        let text = format!("<think>\n{think}\n</think>\n{}", render_tool_call(&call));
        let (_, rest) = strip_think(&text);
        prop_assert_eq!(parse_tool_call(&rest).unwrap().unwrap(), call);
    }
}

fn tool_block(tool: &str, args: &str) -> String {
    format!(
        "<use_mcp_tool>\n    <server_name>mcp_vision_server</server_name>\n    <tool_name>{tool}</tool_name>\n    <arguments>\n    {args}\n    </arguments>\n</use_mcp_tool>"
    )
}

#[test]
fn walkthrough_blocks_parse_to_known_fields() {
    let script: Value = serde_json::from_str(
        &std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/walkthrough/think.json"),
        )
        .unwrap(),
    )
    .unwrap();
    let replies: Vec<&str> = script["responses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["text"].as_str().unwrap())
        .collect();
    let expected = [
        (
            "image_detection",
            json!({"image_path": "test.png", "txt_prompt": "military warship . cargo ship . aircraft . warship tail number . aircraft tail number . marking on tail of ship . marking of aircraft . building on port ."}),
        ),
        (
            "image_binary",
            json!({"image_path": "test.png", "x1": 172, "y1": 192, "x2": 205, "y2": 231}),
        ),
        (
            "image_crop",
            json!({"image_path": "test.png", "x1": 149, "y1": 172, "x2": 477, "y2": 796}),
        ),
    ];
    for (reply, (tool, args)) in replies.iter().zip(expected) {
        let (_, rest) = strip_think(reply);
        let call = parse_tool_call(&rest).unwrap().unwrap();
        assert_eq!(call.server_name, "mcp_vision_server");
        assert_eq!(call.tool_name, tool);
        assert_eq!(Value::Object(call.arguments), args);
    }
    let (_, rest) = strip_think(replies[3]);
    assert_eq!(parse_tool_call(&rest).unwrap(), None);
}

#[test]
fn format_template_block_parses() {
    let block = tool_block(
        "image_super_resolution",
        "{\"image_path\": \"100001290.png\"}",
    );
    let call = parse_tool_call(&block).unwrap().unwrap();
    let mut args = Map::new();
    args.insert("image_path".into(), json!("100001290.png"));
    assert_eq!(
        call,
        ToolCall::new("mcp_vision_server", "image_super_resolution", args)
    );
}

#[test]
fn error_cases_become_feedback_with_the_quoted_text() {
    let cases: Vec<Value> = serde_json::from_str(
        &std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/error_cases.json"),
        )
        .unwrap(),
    )
    .unwrap();
    let quoted = [
        "Error: OpenCV(4.11.0) /io/opencv/modules/imgcodecs/src/loadsave.cpp:929: error: (-215:Assertion failed) !_img.empty() in function 'imwrite'\n",
        "Error: [Errno 2] No such file or directory: 'datasets/label/temp/temp/100001035_cropped_250807174005_esrgan_250807174032_boxes.txt'",
    ];
    for (payload, text) in cases.into_iter().zip(quoted) {
        let result = ToolResult::from_payload(payload.clone(), Duration::ZERO);
        assert!(result.is_error);
        let evidence = feedback_error(&result);
        assert!(evidence.is_error);
        assert!(evidence.text.starts_with("[tool error] "));
        assert!(evidence.text.contains(text));
        assert_eq!(evidence.payload, payload);
    }
}
