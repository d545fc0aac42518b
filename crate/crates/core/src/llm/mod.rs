//! Dialogue with the model: conversation history, token accounting, and
//! feedback-driven pruning of oversized tool results.

mod backend;
mod prompt;
mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    AssistantReply, BackendError, ChatBackend, LiveBackend, ScriptStep, ScriptedBackend, DEFAULT_MODEL,
};
pub use prompt::build_initial_prompt;
pub use wire::{encode_request, parse_response};

use crate::domain::Budgets;
use crate::registry::{SchemaRegistry, ToolCall, ToolResult};

/// Assistant turns a feedback request may be ignored before it is resolved
/// by discarding.
pub const FEEDBACK_GRACE_TURNS: u32 = 2;

/// Token estimate used for every budget: one token per four bytes.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

pub fn omitted_notice(call_id: &str, byte_size: usize) -> String {
    format!("[omitted: result of {call_id} ({byte_size} bytes) discarded by feedback]")
}

fn feedback_request(call_id: &str, byte_size: usize) -> String {
    format!(
        "\n\n[feedback requested: this result is {byte_size} bytes. Before anything else, call \
         feedback with call_id \"{call_id}\" and verdict \"discard\" if it is not useful or \
         \"preserve\" if you still need it.]"
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Discard,
    Preserve,
}

impl Verdict {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "discard" => Some(Verdict::Discard),
            "preserve" => Some(Verdict::Preserve),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Discard => "discard",
            Verdict::Preserve => "preserve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum TurnContent {
    System { text: String },
    Assistant { text: Option<String>, calls: Vec<ToolCall> },
    ToolResult { result: ToolResult },
    /// A correction sent when the model answered without calling a tool.
    /// Goes out as a user message since there is no call to answer.
    Notice { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub content: TurnContent,
    pub token_estimate: u64,
}

impl ChatTurn {
    pub fn system(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            token_estimate: estimate_tokens(&text),
            content: TurnContent::System { text },
        }
    }

    pub fn assistant(text: Option<String>, calls: Vec<ToolCall>) -> Self {
        let mut estimate = text.as_deref().map(estimate_tokens).unwrap_or(0);
        for call in &calls {
            estimate += estimate_tokens(&call.name) + estimate_tokens(&call.arguments.to_string());
        }
        Self {
            content: TurnContent::Assistant { text, calls },
            token_estimate: estimate,
        }
    }

    pub fn tool_result(result: ToolResult) -> Self {
        Self {
            token_estimate: estimate_tokens(&result.payload),
            content: TurnContent::ToolResult { result },
        }
    }

    pub fn notice(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            token_estimate: estimate_tokens(&text),
            content: TurnContent::Notice { text },
        }
    }

    pub fn role(&self) -> &'static str {
        match self.content {
            TurnContent::System { .. } => "system",
            TurnContent::Assistant { .. } => "assistant",
            TurnContent::ToolResult { .. } => "tool_result",
            TurnContent::Notice { .. } => "notice",
        }
    }
}

/// Per-turn estimates in history order. Pruning replaces an entry, so the
/// total is always the size of what the next request would carry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    estimates: Vec<u64>,
    cumulative_total: u64,
}

impl TokenLedger {
    pub fn push(&mut self, estimate: u64) {
        self.estimates.push(estimate);
        self.cumulative_total += estimate;
    }

    pub fn replace(&mut self, index: usize, estimate: u64) {
        let old = std::mem::replace(&mut self.estimates[index], estimate);
        self.cumulative_total = self.cumulative_total - old + estimate;
    }

    pub fn estimates(&self) -> &[u64] {
        &self.estimates
    }

    pub fn cumulative_total(&self) -> u64 {
        self.cumulative_total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingFeedback {
    pub call_id: String,
    pub byte_size: usize,
    /// Assistant turns seen since the request was raised without answering it.
    pub ignored_turns: u32,
    turn_index: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeedbackError {
    #[error("no feedback is pending for `{0}`")]
    NotPending(String),
}

/// History plus its ledger. Every mutation keeps the two in step.
#[derive(Debug, Clone, Default)]
pub struct Conversation {
    turns: Vec<ChatTurn>,
    ledger: TokenLedger,
    pending: Vec<PendingFeedback>,
    feedback_threshold_bytes: usize,
}

impl Conversation {
    pub fn new(system: ChatTurn, budgets: &Budgets) -> Self {
        let mut conv = Self {
            feedback_threshold_bytes: budgets.feedback_threshold_bytes,
            ..Self::default()
        };
        conv.push(system);
        conv
    }

    fn push(&mut self, turn: ChatTurn) {
        self.ledger.push(turn.token_estimate);
        self.turns.push(turn);
    }

    pub fn turns(&self) -> &[ChatTurn] {
        &self.turns
    }

    pub fn ledger(&self) -> &TokenLedger {
        &self.ledger
    }

    pub fn pending(&self) -> &[PendingFeedback] {
        &self.pending
    }

    pub fn is_pending(&self, call_id: &str) -> bool {
        self.pending.iter().any(|p| p.call_id == call_id)
    }

    /// Records an assistant turn and ages every outstanding feedback request.
    pub fn push_assistant(&mut self, reply: &AssistantReply) {
        for p in &mut self.pending {
            p.ignored_turns += 1;
        }
        self.push(ChatTurn::assistant(reply.text.clone(), reply.calls.clone()));
    }

    /// Appends a tool result. Results above the threshold get a feedback
    /// request appended and become pending. Returns whether that happened.
    pub fn push_result(&mut self, mut result: ToolResult) -> bool {
        let oversized = result.byte_size > self.feedback_threshold_bytes;
        if oversized {
            result.payload.push_str(&feedback_request(&result.call_id, result.byte_size));
            self.pending.push(PendingFeedback {
                call_id: result.call_id.clone(),
                byte_size: result.byte_size,
                ignored_turns: 0,
                turn_index: self.turns.len(),
            });
        }
        self.push(ChatTurn::tool_result(result));
        oversized
    }

    pub fn push_notice(&mut self, text: impl Into<String>) {
        self.push(ChatTurn::notice(text));
    }

    /// Applies a verdict to a pending result. Discard swaps the payload for
    /// the omitted notice; both verdicts clear the pending flag.
    pub fn apply_feedback(&mut self, call_id: &str, verdict: Verdict) -> Result<(), FeedbackError> {
        let at = self
            .pending
            .iter()
            .position(|p| p.call_id == call_id)
            .ok_or_else(|| FeedbackError::NotPending(call_id.to_string()))?;
        let pending = self.pending.remove(at);
        if verdict == Verdict::Discard {
            self.discard(pending.turn_index, &pending.call_id, pending.byte_size);
        }
        Ok(())
    }

    fn discard(&mut self, index: usize, call_id: &str, byte_size: usize) {
        let notice = omitted_notice(call_id, byte_size);
        let estimate = estimate_tokens(&notice);
        if let TurnContent::ToolResult { result } = &mut self.turns[index].content {
            result.payload = notice;
            result.pruned = true;
        }
        self.turns[index].token_estimate = estimate;
        self.ledger.replace(index, estimate);
    }

    /// Discards results whose feedback request was ignored for
    /// [`FEEDBACK_GRACE_TURNS`] assistant turns. Returns the call ids.
    pub fn expire_feedback(&mut self) -> Vec<String> {
        let (expired, live): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|p| p.ignored_turns >= FEEDBACK_GRACE_TURNS);
        self.pending = live;
        for p in &expired {
            log::debug!("feedback for {} ignored; discarding", p.call_id);
            self.discard(p.turn_index, &p.call_id, p.byte_size);
        }
        expired.into_iter().map(|p| p.call_id).collect()
    }
}

/// One model round trip: encodes the history and tool declarations, sends
/// them through `backend`, and returns the reply. The caller records it.
pub fn next_action(
    conversation: &Conversation,
    registry: &SchemaRegistry,
    model: &str,
    backend: &mut dyn ChatBackend,
) -> Result<AssistantReply, BackendError> {
    let body = encode_request(model, conversation.turns(), registry);
    backend.complete(&body)
}
