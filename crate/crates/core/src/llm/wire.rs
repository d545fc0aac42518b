//! Chat-completions JSON: request encoding and response decoding.

use serde_json::{json, Value};

use super::{AssistantReply, ChatTurn, TurnContent};
use crate::registry::{SchemaRegistry, ToolCall};

/// Request body for `POST /chat/completions`.
pub fn encode_request(model: &str, turns: &[ChatTurn], registry: &SchemaRegistry) -> Value {
    let messages: Vec<Value> = turns.iter().map(encode_turn).collect();
    json!({
        "model": model,
        "messages": messages,
        "tools": registry.tool_declarations(),
        "tool_choice": "auto",
    })
}

fn encode_turn(turn: &ChatTurn) -> Value {
    match &turn.content {
        TurnContent::System { text } => json!({"role": "system", "content": text}),
        TurnContent::Notice { text } => json!({"role": "user", "content": text}),
        TurnContent::ToolResult { result } => json!({
            "role": "tool",
            "tool_call_id": result.call_id,
            "content": result.payload,
        }),
        TurnContent::Assistant { text, calls } => {
            let mut msg = json!({"role": "assistant", "content": text});
            if !calls.is_empty() {
                msg["tool_calls"] = calls
                    .iter()
                    .map(|c| {
                        json!({
                            "id": c.call_id,
                            "type": "function",
                            "function": {"name": c.name, "arguments": c.arguments.to_string()},
                        })
                    })
                    .collect();
            }
            msg
        }
    }
}

/// Decodes the first choice. Arguments that are not valid JSON are kept as
/// a string so schema validation reports them to the model.
pub fn parse_response(body: &Value) -> Result<AssistantReply, String> {
    let message = body["choices"]
        .get(0)
        .map(|c| &c["message"])
        .filter(|m| m.is_object())
        .ok_or_else(|| "response has no choices[0].message".to_string())?;
    let text = message["content"]
        .as_str()
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string);
    let mut calls = Vec::new();
    for (i, raw) in message["tool_calls"]
        .as_array()
        .map(Vec::as_slice)
        .unwrap_or_default()
        .iter()
        .enumerate()
    {
        let name = raw["function"]["name"]
            .as_str()
            .ok_or_else(|| format!("tool call {i} has no function name"))?;
        let id = raw["id"].as_str().map(str::to_string).unwrap_or_else(|| format!("call_{i}"));
        let arguments = match &raw["function"]["arguments"] {
            Value::String(s) if s.trim().is_empty() => json!({}),
            Value::String(s) => serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone())),
            Value::Null => json!({}),
            other => other.clone(),
        };
        calls.push(ToolCall::new(id, name, arguments));
    }
    Ok(AssistantReply { text, calls })
}
