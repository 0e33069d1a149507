//! Two-part prompt assembly.
//!
//! The description part is a Python docstring telling the model which frame to
//! use, what each column holds, how to label the chart and which runtime to
//! target, followed by the user's query verbatim. The code part is the script
//! preamble the model continues from: imports, a fixed-size single subplot,
//! and a copy of the pre-loaded frame bound to the alias.
//!
//! The wording below is frozen; `prompts/*.txt` at the repository root are the
//! golden copies and any change here must be reflected there deliberately.

use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::profile::{ColumnProfile, SchemaProfile, DEFAULT_CATEGORICAL_THRESHOLD};

pub const DOCSTRING_DELIMITER: &str = "\"\"\"";
pub const DEFAULT_FRAME_ALIAS: &str = "df";
pub const DEFAULT_EXPECTED_FILE_NAME: &str = "data_file.csv";
pub const DEFAULT_RUNTIME_LABEL: &str = "Python version 3.9";
pub const DEFAULT_SOURCE_FRAME: &str = "df_data";
pub const DEFAULT_FIGURE_WIDTH: f64 = 10.0;
pub const DEFAULT_FIGURE_HEIGHT: f64 = 4.0;

const LABEL_INSTRUCTION: &str = "Label the x and y axes appropriately.";
const TITLE_INSTRUCTION: &str = "Add a title. Set the fig suptitle as empty.";
const IMPORTS: &str = "import pandas as pd\nimport matplotlib.pyplot as plt\n";

static IDENTIFIER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap());

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("`{0}` is not a valid identifier")]
    InvalidIdentifier(String),
    #[error("figure size must be positive, got {width}x{height}")]
    InvalidFigureSize { width: f64, height: f64 },
    #[error("categorical threshold must be positive")]
    InvalidThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Name the model is told to use for the frame.
    pub frame_alias: String,
    /// File name the model is told the data came from; lines reading it are
    /// stripped from completions.
    pub expected_file_name: String,
    pub runtime_version_label: String,
    /// Variable holding the pre-loaded dataset in the execution environment.
    /// The code prompt binds a copy of it to `frame_alias`.
    pub source_frame: String,
    pub figure_width: f64,
    pub figure_height: f64,
    pub categorical_threshold: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            frame_alias: DEFAULT_FRAME_ALIAS.to_string(),
            expected_file_name: DEFAULT_EXPECTED_FILE_NAME.to_string(),
            runtime_version_label: DEFAULT_RUNTIME_LABEL.to_string(),
            source_frame: DEFAULT_SOURCE_FRAME.to_string(),
            figure_width: DEFAULT_FIGURE_WIDTH,
            figure_height: DEFAULT_FIGURE_HEIGHT,
            categorical_threshold: DEFAULT_CATEGORICAL_THRESHOLD,
        }
    }
}

impl PromptConfig {
    /// Default settings with the source variable derived from a frame name,
    /// e.g. `products` becomes `df_products`.
    pub fn for_frame(frame_name: &str) -> Self {
        Self {
            source_frame: source_variable(frame_name),
            ..Self::default()
        }
    }

    pub fn with_source_frame(mut self, frame_name: &str) -> Self {
        self.source_frame = source_variable(frame_name);
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for ident in [&self.frame_alias, &self.source_frame] {
            if !IDENTIFIER.is_match(ident) {
                return Err(PromptError::InvalidIdentifier(ident.clone()));
            }
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.figure_width) || !positive(self.figure_height) {
            return Err(PromptError::InvalidFigureSize {
                width: self.figure_width,
                height: self.figure_height,
            });
        }
        if self.categorical_threshold == 0 {
            return Err(PromptError::InvalidThreshold);
        }
        Ok(())
    }
}

/// `df_` followed by the frame name with every non-identifier character
/// replaced by `_`.
pub fn source_variable(frame_name: &str) -> String {
    let cleaned: String = frame_name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    format!("df_{cleaned}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionPrompt {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodePrompt {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineeredPrompt {
    pub description: DescriptionPrompt,
    pub code: CodePrompt,
    pub full_text: String,
    pub boundary_offset: usize,
}

impl EngineeredPrompt {
    pub fn description_part(&self) -> &str {
        &self.full_text[..self.boundary_offset]
    }

    pub fn code_part(&self) -> &str {
        &self.full_text[self.boundary_offset..]
    }
}

/// Names and values are kept to one line each.
fn single_line(s: &str) -> String {
    s.replace('\r', "\\r").replace('\n', "\\n")
}

fn quoted_list<'a>(items: impl Iterator<Item = &'a str>) -> String {
    items
        .map(|s| format!("'{}'", single_line(s)))
        .collect::<Vec<_>>()
        .join(",")
}

/// The schema line for one column.
pub fn schema_line(column: &ColumnProfile) -> String {
    let mut line = format!(
        "The column '{}' has dtype {}",
        single_line(&column.name),
        column.dtype
    );
    if let Some(values) = &column.categorical_values {
        let _ = write!(
            line,
            " and categorical values {}",
            quoted_list(values.iter().map(String::as_str))
        );
    }
    line.push('.');
    line
}

pub fn build_description(
    profile: &SchemaProfile,
    query: &str,
    config: &PromptConfig,
) -> Result<DescriptionPrompt, PromptError> {
    if query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    config.validate()?;

    let mut text = String::new();
    text.push_str(DOCSTRING_DELIMITER);
    text.push('\n');
    let _ = writeln!(
        text,
        "Use a dataframe called {} from {} with columns {}.",
        config.frame_alias,
        config.expected_file_name,
        quoted_list(profile.columns.iter().map(|c| c.name.as_str()))
    );
    for column in &profile.columns {
        text.push_str(&schema_line(column));
        text.push('\n');
    }
    text.push_str(LABEL_INSTRUCTION);
    text.push('\n');
    text.push_str(TITLE_INSTRUCTION);
    text.push('\n');
    let _ = writeln!(
        text,
        "Using {}, create a script using the dataframe {} to graph the following: {}",
        config.runtime_version_label, config.frame_alias, query
    );
    text.push_str(DOCSTRING_DELIMITER);
    text.push('\n');
    Ok(DescriptionPrompt { text })
}

pub fn build_code_prompt(config: &PromptConfig) -> CodePrompt {
    let mut text = String::from(IMPORTS);
    let _ = writeln!(
        text,
        "fig,ax = plt.subplots(1,1,figsize=({},{}))",
        config.figure_width, config.figure_height
    );
    let _ = writeln!(text, "{}={}.copy()", config.frame_alias, config.source_frame);
    CodePrompt { text }
}

pub fn assemble(description: DescriptionPrompt, code: CodePrompt) -> EngineeredPrompt {
    let boundary_offset = description.text.len();
    let full_text = format!("{}{}", description.text, code.text);
    EngineeredPrompt {
        description,
        code,
        full_text,
        boundary_offset,
    }
}

/// Description, code prompt and assembly in one step.
pub fn engineer(
    profile: &SchemaProfile,
    query: &str,
    config: &PromptConfig,
) -> Result<EngineeredPrompt, PromptError> {
    let description = build_description(profile, query, config)?;
    Ok(assemble(description, build_code_prompt(config)))
}
