//! Prompts never reveal values from columns that are not enumerated.

mod support;

use nl2vis_core::profile::profile_table;
use nl2vis_core::prompt::{engineer, PromptConfig};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use support::frames::{frame, spelled};

#[test]
fn hundred_random_frames() {
    let config = Config {
        cases: 100,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner
        .run(&frame(), |frame| {
            let prompt_config = PromptConfig::for_frame(frame.name());
            let profile = profile_table(&frame, prompt_config.categorical_threshold);
            let prompt = engineer(&profile, "show me everything", &prompt_config).unwrap();
            for (column, profiled) in frame.columns().iter().zip(&profile.columns) {
                if profiled.categorical_values.is_some() {
                    continue;
                }
                for value in column.cells.iter().filter_map(spelled) {
                    proptest::prop_assert!(
                        !prompt.full_text.contains(&value),
                        "value {value} of {} leaked",
                        column.name
                    );
                }
            }
            Ok(())
        })
        .unwrap();
}
