use base64::Engine;
use chrono::{DateTime, Utc};
use serde_json::Value;

use super::{CommentMeta, IssueClient, IssueError, IssueSnapshot, Platform};
use crate::domain::{Author, Timestamp};
use crate::http::HttpRequest;

pub(super) const ISSUE_FIELDS: &str = "summary,description,created,resolutiondate,creator,comment,status";

fn request(client: &IssueClient, url: String) -> HttpRequest {
    let mut req = HttpRequest::get(url).header("Accept", "application/json");
    let auth = client.auth();
    if let Some(token) = &auth.jira_bearer {
        req = req.header("Authorization", format!("Bearer {token}"));
    } else if let Some((user, token)) = &auth.jira_basic {
        let encoded = base64::engine::general_purpose::STANDARD.encode(format!("{user}:{token}"));
        req = req.header("Authorization", format!("Basic {encoded}"));
    }
    req
}

pub(crate) fn issue_url(base: &str, key: &str) -> String {
    format!("{base}/rest/api/2/issue/{key}?fields={ISSUE_FIELDS}&expand=changelog")
}

pub(crate) fn comments_url(base: &str, key: &str, start_at: usize) -> String {
    format!("{base}/rest/api/2/issue/{key}/comment?startAt={start_at}&maxResults=100")
}

pub(super) fn fetch(client: &IssueClient, base: &str, key: &str) -> Result<IssueSnapshot, IssueError> {
    let url = issue_url(base, key);
    let issue = client.get_json(request(client, url.clone()))?;
    let malformed = |reason: &str| IssueError::Malformed {
        url: url.clone(),
        reason: reason.to_string(),
    };
    let fields = &issue["fields"];
    if !fields.is_object() {
        return Err(malformed("missing fields object"));
    }

    let mut comments = Vec::new();
    let block = &fields["comment"];
    push_comments(&block["comments"], &mut comments, &url)?;
    let total = block["total"].as_u64().unwrap_or(0) as usize;
    while comments.len() < total {
        let page_url = comments_url(base, key, comments.len());
        let page = client.get_json(request(client, page_url.clone()))?;
        let before = comments.len();
        push_comments(&page["comments"], &mut comments, &page_url)?;
        if comments.len() == before {
            break;
        }
    }

    let closed_at = time(&fields["resolutiondate"]).or_else(|| terminal_status_change(&issue));

    Ok(IssueSnapshot {
        platform: Platform::Jira,
        key: issue["key"].as_str().unwrap_or(key).to_string(),
        url: String::new(),
        title: fields["summary"]
            .as_str()
            .ok_or_else(|| malformed("missing summary"))?
            .to_string(),
        description: fields["description"].as_str().unwrap_or_default().to_string(),
        created_at: time(&fields["created"]).ok_or_else(|| malformed("missing created"))?,
        closed_at,
        author: user(&fields["creator"]),
        comments,
    })
}

fn push_comments(items: &Value, out: &mut Vec<CommentMeta>, url: &str) -> Result<(), IssueError> {
    for item in items.as_array().map(Vec::as_slice).unwrap_or_default() {
        out.push(CommentMeta {
            author: user(&item["author"]),
            body: item["body"].as_str().unwrap_or_default().to_string(),
            created_at: time(&item["created"]).ok_or_else(|| IssueError::Malformed {
                url: url.to_string(),
                reason: "comment without created".into(),
            })?,
        });
    }
    Ok(())
}

/// Last status transition, used when a done issue has no resolutiondate.
fn terminal_status_change(issue: &Value) -> Option<Timestamp> {
    let category = issue["fields"]["status"]["statusCategory"]["key"].as_str()?;
    if category != "done" {
        return None;
    }
    issue["changelog"]["histories"]
        .as_array()?
        .iter()
        .filter(|h| {
            h["items"]
                .as_array()
                .is_some_and(|items| items.iter().any(|i| i["field"] == "status"))
        })
        .filter_map(|h| time(&h["created"]))
        .max()
}

fn user(value: &Value) -> Author {
    let username = value["name"]
        .as_str()
        .or_else(|| value["accountId"].as_str())
        .or_else(|| value["key"].as_str())
        .unwrap_or("unknown");
    let display = value["displayName"].as_str().unwrap_or(username);
    let mut author = Author::tracker(username, display);
    if let Some(email) = value["emailAddress"].as_str() {
        author.email = email.to_string();
    }
    author
}

/// Jira renders `2019-03-04T05:06:07.000+0000`; RFC 3339 is accepted too.
pub(super) fn time(value: &Value) -> Option<Timestamp> {
    let s = value.as_str()?;
    DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f%z")
        .or_else(|_| DateTime::parse_from_rfc3339(s))
        .ok()
        .map(|t| t.with_timezone(&Utc))
}
