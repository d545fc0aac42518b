use serde_json::Value;

use super::{CommentMeta, IssueClient, IssueError, IssueSnapshot, Platform};
use crate::domain::{Author, Timestamp};
use crate::http::HttpRequest;

const PER_PAGE: usize = 100;

fn request(client: &IssueClient, url: String) -> HttpRequest {
    let mut req = HttpRequest::get(url)
        .header("Accept", "application/vnd.github+json")
        .header("X-GitHub-Api-Version", "2022-11-28");
    if let Some(token) = &client.auth().github_token {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    req
}

pub(crate) fn issue_url(api_base: &str, owner: &str, repo: &str, number: u64) -> String {
    format!("{api_base}/repos/{owner}/{repo}/issues/{number}")
}

pub(crate) fn comments_url(api_base: &str, owner: &str, repo: &str, number: u64, page: usize) -> String {
    format!(
        "{}/comments?per_page={PER_PAGE}&page={page}",
        issue_url(api_base, owner, repo, number)
    )
}

pub(super) fn fetch(
    client: &IssueClient,
    api_base: &str,
    owner: &str,
    repo: &str,
    number: u64,
) -> Result<IssueSnapshot, IssueError> {
    let url = issue_url(api_base, owner, repo, number);
    let issue = client.get_json(request(client, url.clone()))?;
    let malformed = |reason: &str| IssueError::Malformed {
        url: url.clone(),
        reason: reason.to_string(),
    };

    let mut comments = Vec::new();
    for page in 1.. {
        let page_url = comments_url(api_base, owner, repo, number, page);
        let body = client.get_json(request(client, page_url.clone()))?;
        let items = body.as_array().ok_or_else(|| IssueError::Malformed {
            url: page_url.clone(),
            reason: "comments response is not an array".into(),
        })?;
        for item in items {
            comments.push(CommentMeta {
                author: user(&item["user"]),
                body: item["body"].as_str().unwrap_or_default().to_string(),
                created_at: time(&item["created_at"]).ok_or_else(|| IssueError::Malformed {
                    url: page_url.clone(),
                    reason: "comment without created_at".into(),
                })?,
            });
        }
        if items.len() < PER_PAGE {
            break;
        }
    }

    Ok(IssueSnapshot {
        platform: Platform::Github,
        key: number.to_string(),
        url: String::new(),
        title: issue["title"].as_str().ok_or_else(|| malformed("missing title"))?.to_string(),
        description: issue["body"].as_str().unwrap_or_default().to_string(),
        created_at: time(&issue["created_at"]).ok_or_else(|| malformed("missing created_at"))?,
        closed_at: time(&issue["closed_at"]),
        author: user(&issue["user"]),
        comments,
    })
}

fn user(value: &Value) -> Author {
    let login = value["login"].as_str().unwrap_or("ghost");
    Author::tracker(login, login)
}

fn time(value: &Value) -> Option<Timestamp> {
    value
        .as_str()
        .and_then(|s| chrono::DateTime::parse_from_rfc3339(s).ok())
        .map(|t| t.with_timezone(&chrono::Utc))
}
