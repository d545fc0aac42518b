use super::{estimate_tokens, ChatTurn};
use crate::domain::Budgets;
use crate::registry::SchemaRegistry;

/// System turn that opens every session. Its estimate also covers the tool
/// declarations, which ride along with every request.
pub fn build_initial_prompt(issue_url: &str, budgets: &Budgets, registry: &SchemaRegistry) -> ChatTurn {
    let tools = registry.names().join(", ");
    let text = format!(
        "You link issues to commits. Your task: find the commit in the repository that finally \
resolved the issue at {issue_url} and call `finish` with its full 40-character commit hash.

You can only learn about the issue, the repository, and the code by calling functions. \
Available functions: {tools}.

Rules:
- You have at most {iterations} turns of function calls, and must produce a final result \
within them: either `finish` with a commit hash or `give_up` when the data is not enough. \
Make one function call per turn.
- The whole conversation is limited to about {tokens} tokens.
- Commit queries are limited by default to the issue's safe lifespan: from one week before the \
issue was created to one week after it was closed (or until now for open issues). \
`list_commits` accepts `since`/`until` to look outside that window.
- Several commits often contribute to one fix. Return the last commit of that chain, the one \
that completed the resolution.
- Every hash you pass to `finish` is checked against the repository. Unknown hashes are \
rejected and cost you a turn.

Feedback: when a function returns more than {threshold} bytes, its result ends with a feedback \
request. Answer it with your next call: `feedback` with the call id of that result and the \
verdict `discard` (the result is replaced by a short omitted notice and stops using up context) \
or `preserve` (it stays). Ignored requests are resolved as discard. Example: after \
`list_files` with id call_4 returns a very long file list you no longer need, call \
feedback(call_id=\"call_4\", verdict=\"discard\").

Guidelines:
- To find the developers involved, choose from the participants in the issue's comment thread \
(`issue_participants`) and look up their work with `commits_of_author` instead of paging \
through every commit.
- Before calling `commits_on_file`, verify the file paths with `list_files`; paths must match \
the repository exactly.
- Use `commit_diff` and the code functions to confirm that a candidate commit really \
addresses the issue before you finish.",
        iterations = budgets.max_iterations,
        tokens = budgets.max_total_tokens,
        threshold = budgets.feedback_threshold_bytes,
    );
    let mut turn = ChatTurn::system(text);
    turn.token_estimate += estimate_tokens(&registry.tool_declarations().to_string());
    turn
}
