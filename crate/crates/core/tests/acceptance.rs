//! One line per acceptance criterion. Exits nonzero if any criterion fails.

mod common;

use common::criteria::{self, Check};

fn main() {
    let checks: [(&str, fn() -> Check); 8] = [
        ("fixture end-to-end accuracy report", criteria::fixture_end_to_end),
        ("banding totality and monotonicity", criteria::banding_grid),
        ("correction-policy invariants", criteria::correction_policy),
        ("accuracy identity", criteria::accuracy_identity),
        ("share normalization", criteria::share_normalization),
        ("prompt leakage", criteria::prompt_leakage),
        ("determinism", criteria::determinism),
        ("resumability", criteria::resumability),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
