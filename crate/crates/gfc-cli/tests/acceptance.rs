use gfc_cli::suite::{run_suite, SuiteOptions};

fn main() {
    let results = match run_suite(&SuiteOptions::bundled(1)) {
        Ok(r) => r,
        Err(e) => {
            println!("acceptance setup failed: {e}");
            std::process::exit(1);
        }
    };
    for r in &results {
        println!(
            "criterion {:>2} {:<30} {} ({:.1}s) {}",
            r.id,
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    if results.iter().any(|r| !r.passed) {
        std::process::exit(1);
    }
}
