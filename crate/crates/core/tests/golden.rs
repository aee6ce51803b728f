//! Pins the fixture run byte for byte. Any change to generation, the tick
//! loop or the save format shows up here first.
//!
//! After an intended change, refresh with `UPDATE_GOLDEN=1 cargo test --test golden`.

mod common;

use std::path::PathBuf;

use sha2::{Digest, Sha256};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fixture.txt")
}

fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn fixture_run_matches_the_golden_digests() {
    let (mut world, trace) = common::fixture();
    let mut lines = vec![format!("generated {}", digest(&world.to_save_string(true).unwrap()))];
    for ticks in [480u64, 960] {
        let remaining = ticks - world.tick_count();
        common::run_with_trace(&mut world, &trace, remaining);
        lines.push(format!("tick-{ticks} {}", digest(&world.to_save_string(true).unwrap())));
    }
    let actual = lines.join("\n") + "\n";
    if std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1") {
        std::fs::write(golden_path(), &actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(golden_path()).expect("golden file present");
    assert_eq!(actual, expected, "fixture run drifted from the golden digests");
}
