//! Deterministic provider backed by recorded completions.
//!
//! Layout: `<store>/<case>/<wire_name>.txt` holds a recorded reply and
//! `<store>/index.json` maps `fixture_key(wire_name, prompt)` to that relative
//! path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{CompletionRequest, CompletionResult, FinishReason, GatewayError, Provider};

pub const INDEX_FILE: &str = "index.json";

/// SHA-256 over the wire name, a NUL separator and the prompt, hex encoded.
pub fn fixture_key(wire_name: &str, prompt_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(wire_name.as_bytes());
    hasher.update([0u8]);
    hasher.update(prompt_text.as_bytes());
    hex::encode(hasher.finalize())
}

/// Hash to relative fixture path. Sorted so the file diffs cleanly.
pub type FixtureIndex = BTreeMap<String, String>;

#[derive(Debug, Clone)]
pub struct ReplayProvider {
    root: PathBuf,
    index: FixtureIndex,
    case_scope: Option<String>,
}

impl ReplayProvider {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let root = root.into();
        let index_path = root.join(INDEX_FILE);
        let raw = std::fs::read_to_string(&index_path).map_err(|e| {
            GatewayError::FixtureStore(format!("{}: {e}", index_path.display()))
        })?;
        let index: FixtureIndex = serde_json::from_str(&raw).map_err(|e| {
            GatewayError::FixtureStore(format!("{}: {e}", index_path.display()))
        })?;
        Ok(Self {
            root,
            index,
            case_scope: None,
        })
    }

    /// Name the case in `FixtureMissing` errors.
    pub fn scoped_to(mut self, case_id: impl Into<String>) -> Self {
        self.case_scope = Some(case_id.into());
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index(&self) -> &FixtureIndex {
        &self.index
    }

    pub fn lookup(&self, wire_name: &str, prompt_text: &str) -> Result<String, GatewayError> {
        let key = fixture_key(wire_name, prompt_text);
        let Some(relative) = self.index.get(&key) else {
            let case = self.case_scope.as_deref().unwrap_or("<case>");
            return Err(GatewayError::FixtureMissing {
                wire_name: wire_name.to_string(),
                expected_path: self
                    .root
                    .join(case)
                    .join(format!("{wire_name}.txt"))
                    .display()
                    .to_string(),
                key,
            });
        };
        let path = self.root.join(relative);
        std::fs::read_to_string(&path)
            .map_err(|e| GatewayError::FixtureStore(format!("{}: {e}", path.display())))
    }
}

#[async_trait]
impl Provider for ReplayProvider {
    fn name(&self) -> &str {
        "replay"
    }

    async fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let text = self.lookup(&request.model.wire_name, &request.prompt_text)?;
        Ok(CompletionResult::new(text, FinishReason::Stop, 0, self.name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{complete, ModelId};

    fn store() -> (tempfile::TempDir, ReplayProvider) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("case1")).unwrap();
        std::fs::write(
            dir.path().join("case1/text-davinci-003.txt"),
            "ax.bar(x, y)\n",
        )
        .unwrap();
        let mut index = FixtureIndex::new();
        index.insert(
            fixture_key("text-davinci-003", "PROMPT"),
            "case1/text-davinci-003.txt".into(),
        );
        std::fs::write(
            dir.path().join(INDEX_FILE),
            serde_json::to_string_pretty(&index).unwrap(),
        )
        .unwrap();
        let provider = ReplayProvider::open(dir.path()).unwrap();
        (dir, provider)
    }

    #[tokio::test]
    async fn replay_is_pure() {
        let (_dir, provider) = store();
        let req = CompletionRequest::new(ModelId::completion("text-davinci-003"), "PROMPT");
        let a = complete(&req, &provider).await.unwrap();
        let b = complete(&req, &provider).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(a.raw_text, "ax.bar(x, y)\n");
    }

    #[tokio::test]
    async fn one_byte_off_is_missing() {
        let (_dir, provider) = store();
        let provider = provider.scoped_to("case1");
        let req = CompletionRequest::new(ModelId::completion("text-davinci-003"), "PROMPT ");
        match complete(&req, &provider).await {
            Err(GatewayError::FixtureMissing { expected_path, .. }) => {
                assert!(expected_path.ends_with("case1/text-davinci-003.txt"));
            }
            other => panic!("unexpected {other:?}"),
        }
        // Same prompt, other model.
        let req = CompletionRequest::new(ModelId::completion("code-davinci-002"), "PROMPT");
        assert!(matches!(
            complete(&req, &provider).await,
            Err(GatewayError::FixtureMissing { .. })
        ));
    }

    #[tokio::test]
    async fn empty_prompt_is_a_precondition_error() {
        let (_dir, provider) = store();
        let req = CompletionRequest::new(ModelId::completion("text-davinci-003"), "");
        assert_eq!(
            complete(&req, &provider).await,
            Err(GatewayError::EmptyPrompt)
        );
    }

    #[test]
    fn key_separates_fields() {
        assert_ne!(fixture_key("ab", "c"), fixture_key("a", "bc"));
        assert_eq!(fixture_key("m", "p").len(), 64);
    }

    #[test]
    fn missing_store() {
        assert!(matches!(
            ReplayProvider::open("/nonexistent/fixtures"),
            Err(GatewayError::FixtureStore(_))
        ));
    }
}
