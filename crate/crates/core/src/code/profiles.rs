use tree_sitter::{Language, Query};

use super::CodeError;

/// Where documentation lives relative to a definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocRule {
    /// Comment lines directly above the definition starting with one of
    /// `prefixes`. With `adjacent`, a blank line ends the block.
    PrecedingComments {
        prefixes: &'static [&'static str],
        adjacent: bool,
    },
    /// A string literal as the first statement of the body.
    InteriorDocstring,
}

pub struct LanguageProfile {
    pub id: &'static str,
    pub extensions: &'static [&'static str],
    pub language: Language,
    pub definition_query: Query,
    pub structure_query: Query,
    pub doc_rule: DocRule,
}

impl std::fmt::Debug for LanguageProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LanguageProfile")
            .field("id", &self.id)
            .field("extensions", &self.extensions)
            .finish()
    }
}

struct ProfileSource {
    id: &'static str,
    extensions: &'static [&'static str],
    language: fn() -> Language,
    definitions: &'static str,
    structures: &'static str,
    doc_rule: DocRule,
}

const SOURCES: &[ProfileSource] = &[
    ProfileSource {
        id: "rust",
        extensions: &["rs"],
        language: || tree_sitter_rust::LANGUAGE.into(),
        definitions: include_str!("../../queries/rust/definitions.scm"),
        structures: include_str!("../../queries/rust/structures.scm"),
        doc_rule: DocRule::PrecedingComments {
            prefixes: &["///", "/**"],
            adjacent: false,
        },
    },
    ProfileSource {
        id: "python",
        extensions: &["py", "pyi"],
        language: || tree_sitter_python::LANGUAGE.into(),
        definitions: include_str!("../../queries/python/definitions.scm"),
        structures: include_str!("../../queries/python/structures.scm"),
        doc_rule: DocRule::InteriorDocstring,
    },
    ProfileSource {
        id: "go",
        extensions: &["go"],
        language: || tree_sitter_go::LANGUAGE.into(),
        definitions: include_str!("../../queries/go/definitions.scm"),
        structures: include_str!("../../queries/go/structures.scm"),
        doc_rule: DocRule::PrecedingComments {
            prefixes: &["//", "/*"],
            adjacent: true,
        },
    },
];

#[derive(Debug)]
pub struct ProfileSet {
    profiles: Vec<LanguageProfile>,
}

impl ProfileSet {
    /// Compiles the bundled query files.
    pub fn builtin() -> Result<Self, CodeError> {
        let mut profiles = Vec::with_capacity(SOURCES.len());
        for src in SOURCES {
            let language = (src.language)();
            let compile = |text: &str, which: &str| {
                Query::new(&language, text).map_err(|e| CodeError::Query(format!("{} {which}: {e}", src.id)))
            };
            profiles.push(LanguageProfile {
                id: src.id,
                extensions: src.extensions,
                definition_query: compile(src.definitions, "definitions")?,
                structure_query: compile(src.structures, "structures")?,
                language,
                doc_rule: src.doc_rule,
            });
        }
        Ok(Self { profiles })
    }

    pub fn profiles(&self) -> &[LanguageProfile] {
        &self.profiles
    }

    /// Dispatch is by file extension only.
    pub fn for_path(&self, path: &str) -> Option<&LanguageProfile> {
        let file = path.rsplit('/').next().unwrap_or(path);
        let (_, ext) = file.rsplit_once('.')?;
        self.profiles.iter().find(|p| p.extensions.contains(&ext))
    }
}
