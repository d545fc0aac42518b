//! Codebase functions: definition, doc comment and line-range lookups at an
//! arbitrary commit.
//!
//! Files are read straight from the object store, so nothing is checked out
//! and the working tree is never touched.

mod profiles;

use std::path::Path;
use std::sync::Arc;

use git2::Oid;
use thiserror::Error;
use tree_sitter::{Node, Parser, Query, QueryCursor, StreamingIterator};

pub use profiles::{DocRule, LanguageProfile, ProfileSet};

use crate::domain::CommitHash;
use crate::git::RepoHandle;
use crate::registry::{Args, Extractor, ParamSpec, ParamType, ToolError, ToolSchema};

#[derive(Debug, Error)]
pub enum CodeError {
    #[error("commit not found: {0}")]
    CommitNotFound(CommitHash),
    #[error("file not found at commit {commit}: {path}")]
    FileNotFound { commit: CommitHash, path: String },
    #[error("unsupported language for {path}: no profile for this file extension (supported: {supported})")]
    UnsupportedLanguage { path: String, supported: String },
    #[error("{}", name_not_found(.name, .path, .available, *.parse_failed, .hints))]
    NameNotFound {
        name: String,
        path: String,
        available: Vec<String>,
        parse_failed: bool,
        hints: Vec<(usize, String)>,
    },
    #[error("invalid line range {start}..{end}: need 1 <= start <= end")]
    InvalidRange { start: u64, end: u64 },
    #[error("start beyond end of file: line {start} requested, file has {len} lines")]
    StartBeyondEof { start: u64, len: usize },
    #[error("query: {0}")]
    Query(String),
    #[error("git: {0}")]
    Git(#[from] git2::Error),
}

fn name_not_found(
    name: &str,
    path: &str,
    available: &[String],
    parse_failed: bool,
    hints: &[(usize, String)],
) -> String {
    let mut out = if parse_failed {
        format!("definition not found (file did not parse): `{name}` in {path}")
    } else {
        format!("definition not found: `{name}` in {path}")
    };
    if available.is_empty() {
        out.push_str(". No definitions found in this file");
    } else {
        out.push_str(&format!(". Available names: {}", available.join(", ")));
    }
    if !hints.is_empty() {
        out.push_str(". Lines mentioning it:");
        for (n, line) in hints {
            out.push_str(&format!("\n{n}: {line}"));
        }
    }
    out
}

impl From<CodeError> for ToolError {
    fn from(err: CodeError) -> Self {
        match err {
            CodeError::InvalidRange { .. } => ToolError::InvalidArguments(err.to_string()),
            CodeError::Query(_) | CodeError::Git(_) => ToolError::Failed(err.to_string()),
            other => ToolError::NotFound(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeLocation {
    pub commit: CommitHash,
    pub path: String,
    pub name: String,
}

impl CodeLocation {
    pub fn new(commit: CommitHash, path: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            commit,
            path: path.into(),
            name: name.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefinitionKind {
    Function,
    Structure,
}

impl DefinitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefinitionKind::Function => "function",
            DefinitionKind::Structure => "structure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Definition {
    pub name: String,
    pub kind: DefinitionKind,
    /// 1-based, inclusive.
    pub start_line: usize,
    pub end_line: usize,
    /// The full source lines spanned by the definition.
    pub text: String,
    pub doc: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionLookup {
    pub matches: Vec<Definition>,
    /// The name matched both a function and a structure.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineRange {
    pub lines: Vec<(usize, String)>,
    /// `end` was past the last line and got clamped.
    pub clamped: bool,
}

impl LineRange {
    pub fn render(&self) -> String {
        let mut out: String = self
            .lines
            .iter()
            .map(|(n, line)| format!("{n}: {line}\n"))
            .collect();
        if self.clamped {
            out.push_str("(end of file)\n");
        }
        out
    }
}

/// Splits on `\n`; a trailing newline does not start another line.
pub fn split_lines(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
}

pub struct CodeNavigator {
    repo: Arc<RepoHandle>,
    profiles: Arc<ProfileSet>,
}

impl CodeNavigator {
    pub fn new(repo: Arc<RepoHandle>, profiles: Arc<ProfileSet>) -> Self {
        Self { repo, profiles }
    }

    fn commit_tree_entry(&self, commit: &CommitHash, path: &str) -> Result<Option<Vec<u8>>, CodeError> {
        let repo = self.repo.lock();
        let oid = Oid::from_str(commit.as_str())?;
        let found = repo
            .find_commit(oid)
            .map_err(|_| CodeError::CommitNotFound(commit.clone()))?;
        let tree = found.tree()?;
        let entry = match tree.get_path(Path::new(path.trim_start_matches("./"))) {
            Ok(entry) => entry,
            Err(_) => return Ok(None),
        };
        let object = entry.to_object(&repo)?;
        Ok(object.as_blob().map(|b| b.content().to_vec()))
    }

    fn ensure_commit(&self, commit: &CommitHash) -> Result<(), CodeError> {
        let repo = self.repo.lock();
        let oid = Oid::from_str(commit.as_str())?;
        repo.find_commit(oid)
            .map(|_| ())
            .map_err(|_| CodeError::CommitNotFound(commit.clone()))
    }

    /// File contents at `commit`, read from the object store.
    pub fn read_blob(&self, commit: &CommitHash, path: &str) -> Result<String, CodeError> {
        match self.commit_tree_entry(commit, path)? {
            Some(bytes) => Ok(String::from_utf8_lossy(&bytes).into_owned()),
            None => Err(CodeError::FileNotFound {
                commit: commit.clone(),
                path: path.to_string(),
            }),
        }
    }

    fn profile_for(&self, path: &str) -> Result<&LanguageProfile, CodeError> {
        self.profiles.for_path(path).ok_or_else(|| CodeError::UnsupportedLanguage {
            path: path.to_string(),
            supported: self
                .profiles
                .profiles()
                .iter()
                .flat_map(|p| p.extensions.iter().map(|e| format!(".{e}")))
                .collect::<Vec<_>>()
                .join(" "),
        })
    }

    /// Every function and structure definition in the file.
    pub fn all_definitions(&self, commit: &CommitHash, path: &str) -> Result<(Vec<Definition>, bool), CodeError> {
        self.ensure_commit(commit)?;
        let profile = self.profile_for(path)?;
        let source = self.read_blob(commit, path)?;
        parse_definitions(profile, &source)
    }

    pub fn fetch_definition(&self, loc: &CodeLocation) -> Result<DefinitionLookup, CodeError> {
        let (defs, parse_failed) = self.all_definitions(&loc.commit, &loc.path)?;
        let wanted = loc.name.trim();
        let mut matches: Vec<Definition> = defs.iter().filter(|d| d.name == wanted).cloned().collect();
        if matches.is_empty() {
            matches = defs
                .iter()
                .filter(|d| d.name.eq_ignore_ascii_case(wanted))
                .cloned()
                .collect();
        }
        if matches.is_empty() {
            let mut available: Vec<String> = defs.into_iter().map(|d| d.name).collect();
            available.sort();
            available.dedup();
            let hints = if parse_failed && !wanted.is_empty() {
                let source = self.read_blob(&loc.commit, &loc.path)?;
                split_lines(&source)
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| l.contains(wanted))
                    .take(10)
                    .map(|(i, l)| (i + 1, l.to_string()))
                    .collect()
            } else {
                Vec::new()
            };
            return Err(CodeError::NameNotFound {
                name: wanted.to_string(),
                path: loc.path.clone(),
                available,
                parse_failed,
                hints,
            });
        }
        // Function matches come first, then structures, each in file order.
        matches.sort_by_key(|d| (d.kind != DefinitionKind::Function, d.start_line));
        let ambiguous = matches.iter().any(|d| d.kind == DefinitionKind::Function)
            && matches.iter().any(|d| d.kind == DefinitionKind::Structure);
        Ok(DefinitionLookup { matches, ambiguous })
    }

    pub fn fetch_document(&self, loc: &CodeLocation) -> Result<Vec<(Definition, Option<String>)>, CodeError> {
        Ok(self
            .fetch_definition(loc)?
            .matches
            .into_iter()
            .map(|d| {
                let doc = d.doc.clone();
                (d, doc)
            })
            .collect())
    }

    pub fn fetch_lines_in_file(
        &self,
        commit: &CommitHash,
        path: &str,
        start: u64,
        end: u64,
    ) -> Result<LineRange, CodeError> {
        if start < 1 || start > end {
            return Err(CodeError::InvalidRange { start, end });
        }
        let source = self.read_blob(commit, path)?;
        let lines = split_lines(&source);
        if start as usize > lines.len() {
            return Err(CodeError::StartBeyondEof {
                start,
                len: lines.len(),
            });
        }
        let last = (end.min(lines.len() as u64)) as usize;
        Ok(LineRange {
            lines: (start as usize..=last)
                .map(|n| (n, lines[n - 1].to_string()))
                .collect(),
            clamped: end as usize > lines.len(),
        })
    }
}

/// Runs both queries of `profile` over `source`. The flag reports syntax errors.
pub fn parse_definitions(profile: &LanguageProfile, source: &str) -> Result<(Vec<Definition>, bool), CodeError> {
    let mut parser = Parser::new();
    parser
        .set_language(&profile.language)
        .map_err(|e| CodeError::Query(e.to_string()))?;
    let Some(tree) = parser.parse(source, None) else {
        return Ok((Vec::new(), true));
    };
    let root = tree.root_node();
    let lines = split_lines(source);
    let mut defs = Vec::new();
    for (query, kind) in [
        (&profile.definition_query, DefinitionKind::Function),
        (&profile.structure_query, DefinitionKind::Structure),
    ] {
        collect(query, kind, root, source, &lines, profile.doc_rule, &mut defs);
    }
    defs.sort_by_key(|d| (d.start_line, d.kind != DefinitionKind::Function));
    defs.dedup_by(|a, b| a.name == b.name && a.start_line == b.start_line && a.kind == b.kind);
    Ok((defs, root.has_error()))
}

fn collect(
    query: &Query,
    kind: DefinitionKind,
    root: Node<'_>,
    source: &str,
    lines: &[&str],
    doc_rule: DocRule,
    out: &mut Vec<Definition>,
) {
    let (Some(name_idx), Some(def_idx)) = (
        query.capture_index_for_name("name"),
        query.capture_index_for_name("definition"),
    ) else {
        return;
    };
    let mut cursor = QueryCursor::new();
    let mut matches = cursor.matches(query, root, source.as_bytes());
    while let Some(m) = matches.next() {
        let node_of = |idx| m.captures.iter().find(|c| c.index == idx).map(|c| c.node);
        let (Some(name), Some(def)) = (node_of(name_idx), node_of(def_idx)) else {
            continue;
        };
        let Ok(name) = name.utf8_text(source.as_bytes()) else {
            continue;
        };
        let start_row = def.start_position().row;
        let mut end_row = def.end_position().row;
        if def.end_position().column == 0 && end_row > start_row {
            end_row -= 1;
        }
        let end_row = end_row.min(lines.len().saturating_sub(1));
        out.push(Definition {
            name: name.to_string(),
            kind,
            start_line: start_row + 1,
            end_line: end_row + 1,
            text: lines[start_row..=end_row].join("\n"),
            doc: extract_doc(def, source, doc_rule),
        });
    }
}

fn extract_doc(def: Node<'_>, source: &str, rule: DocRule) -> Option<String> {
    let text_of = |n: Node<'_>| n.utf8_text(source.as_bytes()).unwrap_or_default().to_string();
    match rule {
        DocRule::PrecedingComments { prefixes, adjacent } => {
            let mut blocks = Vec::new();
            let mut next_row = def.start_position().row;
            let mut cursor = def.prev_sibling();
            while let Some(node) = cursor {
                let kind = node.kind();
                if kind == "attribute_item" {
                    next_row = node.start_position().row;
                    cursor = node.prev_sibling();
                    continue;
                }
                if !kind.contains("comment") {
                    break;
                }
                let text = text_of(node);
                let doc_like = prefixes.iter().any(|p| text.starts_with(p))
                    && !text.starts_with("////")
                    && !text.starts_with("/***");
                if !doc_like {
                    break;
                }
                let end_row = {
                    let end = node.end_position();
                    if end.column == 0 && end.row > node.start_position().row {
                        end.row - 1
                    } else {
                        end.row
                    }
                };
                if adjacent && end_row + 1 < next_row {
                    break;
                }
                blocks.push(text);
                next_row = node.start_position().row;
                cursor = node.prev_sibling();
            }
            if blocks.is_empty() {
                return None;
            }
            blocks.reverse();
            let lines: Vec<String> = blocks.iter().flat_map(|b| strip_comment(b)).collect();
            let doc = lines.join("\n").trim().to_string();
            (!doc.is_empty()).then_some(doc)
        }
        DocRule::InteriorDocstring => {
            let body = def.child_by_field_name("body")?;
            let first = body.named_child(0)?;
            if first.kind() != "expression_statement" {
                return None;
            }
            let string = first.named_child(0)?;
            if string.kind() != "string" {
                return None;
            }
            let doc = clean_docstring(&strip_string_literal(&text_of(string)));
            (!doc.is_empty()).then_some(doc)
        }
    }
}

fn strip_comment(block: &str) -> Vec<String> {
    let block = block.trim_end();
    if let Some(inner) = block.strip_prefix("/*") {
        let inner = inner.trim_start_matches('*').trim_end_matches("*/");
        return inner
            .lines()
            .map(|l| {
                let l = l.trim();
                l.strip_prefix("* ").or_else(|| l.strip_prefix('*')).unwrap_or(l).to_string()
            })
            .collect();
    }
    block
        .lines()
        .map(|l| {
            let l = l.trim_start();
            let l = l
                .strip_prefix("///")
                .or_else(|| l.strip_prefix("//!"))
                .or_else(|| l.strip_prefix("//"))
                .unwrap_or(l);
            l.strip_prefix(' ').unwrap_or(l).trim_end().to_string()
        })
        .collect()
}

fn strip_string_literal(literal: &str) -> String {
    let body = literal.trim_start_matches(|c: char| "rRuUbBfF".contains(c));
    for quote in ["\"\"\"", "'''", "\"", "'"] {
        if let Some(inner) = body.strip_prefix(quote).and_then(|s| s.strip_suffix(quote)) {
            return inner.to_string();
        }
    }
    body.to_string()
}

/// Like Python's `inspect.cleandoc`.
fn clean_docstring(doc: &str) -> String {
    let lines: Vec<&str> = doc.lines().collect();
    let Some((first, rest)) = lines.split_first() else {
        return String::new();
    };
    let indent = rest
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let mut out = vec![first.trim().to_string()];
    out.extend(rest.iter().map(|l| l.get(indent..).unwrap_or("").trim_end().to_string()));
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    while out.first().is_some_and(|l| l.is_empty()) {
        out.remove(0);
    }
    out.join("\n")
}

fn render_definitions(loc: &CodeLocation, lookup: &DefinitionLookup) -> String {
    let mut out = String::new();
    if lookup.ambiguous {
        out.push_str(&format!(
            "note: `{}` names both a function and a structure; all matches shown\n",
            loc.name
        ));
    }
    for (i, d) in lookup.matches.iter().enumerate() {
        if i > 0 {
            out.push_str("-----\n");
        }
        out.push_str(&format!(
            "# {}:{}-{} {} `{}` at {}\n{}\n",
            loc.path,
            d.start_line,
            d.end_line,
            d.kind.as_str(),
            d.name,
            loc.commit.short(),
            d.text
        ));
    }
    out
}

impl Extractor for CodeNavigator {
    fn schemas(&self) -> Vec<ToolSchema> {
        let loc = || {
            vec![
                ParamSpec::required("commit", ParamType::CommitHash, "commit to read the code at"),
                ParamSpec::required("path", ParamType::Path, "repo-relative file path"),
                ParamSpec::required("name", ParamType::Text, "function, method, class or type name"),
            ]
        };
        let languages: Vec<&str> = self.profiles.profiles().iter().map(|p| p.id).collect();
        vec![
            ToolSchema::new(
                "fetch_definition",
                &format!(
                    "Returns the source code of a specific function/class as of the given commit, with \
                     its line span. Languages: {}.",
                    languages.join(", ")
                ),
                loc(),
            ),
            ToolSchema::new(
                "fetch_document",
                "Returns the docstring or doc comment of a specific function/class as of the given commit.",
                loc(),
            ),
            ToolSchema::new(
                "fetch_lines_in_file",
                "Returns a range of lines (1-based, inclusive) from a file as of the given commit.",
                vec![
                    ParamSpec::required("commit", ParamType::CommitHash, "commit to read the file at"),
                    ParamSpec::required("file", ParamType::Path, "repo-relative file path"),
                    ParamSpec::required("start", ParamType::Integer, "first line, 1-based"),
                    ParamSpec::required("end", ParamType::Integer, "last line, inclusive"),
                ],
            ),
        ]
    }

    fn invoke(&self, tool: &str, args: Args<'_>) -> Result<String, ToolError> {
        match tool {
            "fetch_definition" | "fetch_document" => {
                let loc = CodeLocation::new(args.hash("commit")?, args.str("path")?, args.str("name")?);
                if tool == "fetch_definition" {
                    return Ok(render_definitions(&loc, &self.fetch_definition(&loc)?));
                }
                let docs = self.fetch_document(&loc)?;
                let mut out = String::new();
                for (i, (d, doc)) in docs.iter().enumerate() {
                    if i > 0 {
                        out.push_str("-----\n");
                    }
                    if docs.len() > 1 {
                        out.push_str(&format!("# {} `{}` at line {}\n", d.kind.as_str(), d.name, d.start_line));
                    }
                    match doc {
                        Some(text) => {
                            out.push_str(text);
                            out.push('\n');
                        }
                        None => out.push_str(&format!(
                            "no documentation for `{}` in {} at {}\n",
                            d.name,
                            loc.path,
                            loc.commit.short()
                        )),
                    }
                }
                Ok(out)
            }
            "fetch_lines_in_file" => {
                let range = self.fetch_lines_in_file(
                    &args.hash("commit")?,
                    args.str("file")?,
                    args.u64("start")?,
                    args.u64("end")?,
                )?;
                Ok(range.render())
            }
            other => Err(ToolError::Failed(format!("code navigator has no tool `{other}`"))),
        }
    }
}
