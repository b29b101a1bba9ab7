use sepam::harness::acceptance;
use std::process::ExitCode;

fn main() -> ExitCode {
    let mut failed = 0;
    for id in 1..=acceptance::NAMES.len() {
        let c = acceptance::run(id);
        println!("{}", c.line());
        failed += usize::from(!c.pass);
    }
    println!(
        "{} of {} criteria passed",
        acceptance::NAMES.len() - failed,
        acceptance::NAMES.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
