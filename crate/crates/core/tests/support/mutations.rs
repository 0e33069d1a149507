//! Randomized corruptions of the recorded fixture replies: extra data-file
//! loads, echoed code prompts, trailing alternatives after the stop marker,
//! different chat wrappings.

use std::sync::LazyLock;

use nl2vis_core::gateway::{ModelKind, STOP_MARKER};
use nl2vis_core::harness::load_fixtures;
use nl2vis_core::prompt::CodePrompt;
use nl2vis_core::sanitize::{sanitize, DenyPolicy, SanitizeOptions};
use proptest::prelude::*;

use super::workspace_root;

pub const LOAD_LINES: &[&str] = &[
    "df = pd.read_csv('data_file.csv')",
    "df = pd.read_csv(\"data_file.csv\", index_col=0)",
    "    data = pd.read_csv('./data_file.csv')",
    "df=pd.read_csv('data_file.csv')  # load the data",
];

const FILLER_LINES: &[&str] = &["", "# Plot the data", "    ", "# TODO: tidy labels"];

const TRAILING_JUNK: &[&str] = &[
    "",
    "# Alternative solution",
    "ax.plot(df.index, df.iloc[:, 0])",
    "print(df.describe())",
];

#[derive(Debug, Clone)]
pub struct Reply {
    pub case_id: String,
    pub wire_name: String,
    pub kind: ModelKind,
    pub raw: String,
}

/// The 18 recorded replies.
pub static REPLIES: LazyLock<Vec<Reply>> = LazyLock::new(|| {
    let root = workspace_root().join("fixtures");
    load_fixtures(&root)
        .expect("fixtures load")
        .into_iter()
        .flat_map(|fixture| {
            let root = root.clone();
            fixture.models.into_iter().map(move |model| Reply {
                case_id: fixture.case_id.clone(),
                raw: std::fs::read_to_string(
                    root.join(&fixture.case_id).join(format!("{}.txt", model.wire_name)),
                )
                .expect("reply file"),
                wire_name: model.wire_name,
                kind: model.kind,
            })
        })
        .collect()
});

/// Code lines of a reply: the first fenced block for chat replies.
pub fn code_lines(reply: &Reply) -> Vec<String> {
    let lines: Vec<&str> = reply.raw.lines().collect();
    match reply.kind {
        ModelKind::Completion => lines.iter().map(|l| l.to_string()).collect(),
        ModelKind::Chat => {
            let open = lines
                .iter()
                .position(|l| l.trim_start().starts_with("```"))
                .expect("chat fixture is fenced");
            lines[open + 1..]
                .iter()
                .take_while(|l| !l.trim_start().starts_with("```"))
                .map(|l| l.to_string())
                .collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mutated {
    pub kind: ModelKind,
    pub raw: String,
    /// Every line the sanitizer may legitimately keep.
    pub allowed_lines: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub reply: usize,
    pub loads: Vec<(usize, usize)>,
    pub fillers: Vec<(usize, usize)>,
    pub junk_after_stop: Option<Vec<usize>>,
    pub echo_code_prompt: bool,
    pub chat_wrapping: usize,
    pub trailing_newline: bool,
}

pub fn plan() -> impl Strategy<Value = Plan> {
    (
        0..REPLIES.len(),
        prop::collection::vec((0usize..64, 0..LOAD_LINES.len()), 0..4),
        prop::collection::vec((0usize..64, 0..FILLER_LINES.len()), 0..4),
        prop::option::of(prop::collection::vec(0..TRAILING_JUNK.len(), 0..4)),
        any::<bool>(),
        0usize..3,
        any::<bool>(),
    )
        .prop_map(
            |(reply, loads, fillers, junk_after_stop, echo_code_prompt, chat_wrapping, trailing_newline)| Plan {
                reply,
                loads,
                fillers,
                junk_after_stop,
                echo_code_prompt,
                chat_wrapping,
                trailing_newline,
            },
        )
}

/// Apply a plan. `code_prompt` is echoed at the top when the plan asks for it.
pub fn apply(plan: &Plan, code_prompt: &str) -> Mutated {
    let reply = &REPLIES[plan.reply];
    let mut lines = code_lines(reply);
    // Chat replies carry their own stop marker; drop it so the plan decides.
    if let Some(pos) = lines.iter().position(|l| l.contains("plt.show()")) {
        lines.truncate(pos);
    }
    for &(pos, which) in &plan.fillers {
        let at = pos % (lines.len() + 1);
        lines.insert(at, FILLER_LINES[which].to_string());
    }
    for &(pos, which) in &plan.loads {
        let at = pos % (lines.len() + 1);
        lines.insert(at, LOAD_LINES[which].to_string());
    }
    let mut allowed_lines = lines.clone();
    if plan.echo_code_prompt {
        let echoed: Vec<String> = code_prompt.lines().map(str::to_string).collect();
        allowed_lines.extend(echoed.iter().cloned());
        lines.splice(0..0, echoed);
    }
    if let Some(junk) = &plan.junk_after_stop {
        lines.push("plt.show()".to_string());
        lines.extend(junk.iter().map(|&j| TRAILING_JUNK[j].to_string()));
    }
    allowed_lines.extend(code_prompt.lines().map(str::to_string));

    let mut code = lines.join("\n");
    if plan.trailing_newline {
        code.push('\n');
    }
    let raw = match (reply.kind, plan.chat_wrapping) {
        (ModelKind::Completion, _) => code,
        (ModelKind::Chat, 0) => format!(
            "Here is a script that answers the question:\n\n```python\n{code}\n```\n\nLet me know if you need changes.\n"
        ),
        (ModelKind::Chat, 1) => format!("```\n{code}\n```"),
        (ModelKind::Chat, _) => format!(
            "Sure, here you go:\n\n{code}\n\nThis draws the chart you asked for.\n"
        ),
    };
    Mutated {
        kind: reply.kind,
        raw,
        allowed_lines,
    }
}

/// Sanitize a mutated reply and verify everything the sanitizer promises:
/// no load line, no stop marker, one leading code prompt, no invented lines,
/// no denial, and a fixed point on a second pass.
pub fn check(mutated: &Mutated, code_prompt: &CodePrompt, policy: &DenyPolicy) -> Result<(), String> {
    let stop = vec![STOP_MARKER.to_string()];
    let options = SanitizeOptions {
        code_prompt,
        expected_file_name: "data_file.csv",
        stop: &stop,
        policy,
    };
    let out = sanitize(&mutated.raw, mutated.kind, &options).map_err(|e| e.to_string())?;
    let text = &out.text;

    if let Some(line) = text.lines().find(|l| l.contains("data_file.csv")) {
        return Err(format!("load line survived: {line}"));
    }
    if text.contains(STOP_MARKER) {
        return Err("stop marker survived".into());
    }
    if !text.starts_with(&code_prompt.text) || text.matches(&code_prompt.text).count() != 1 {
        return Err("code prompt missing or duplicated".into());
    }
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if !mutated.allowed_lines.iter().any(|a| a == line) {
            return Err(format!("line not in the reply: {line:?}"));
        }
    }
    if out.denied.is_some() {
        return Err(format!("fixture denied: {:?}", out.denied));
    }
    let again = sanitize(text, mutated.kind, &options).map_err(|e| e.to_string())?;
    if &again.text != text {
        return Err(format!("not idempotent:\n{text}\n---\n{}", again.text));
    }
    Ok(())
}
