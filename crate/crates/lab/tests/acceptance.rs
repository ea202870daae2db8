//! Acceptance suite: every bundled experiment, run once on one thread and
//! again on three, with one pass/fail line per criterion.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use selkov_lab::config::RunConfig;
use selkov_lab::experiments::{self, Verdict};

struct Criterion {
    number: u32,
    config: &'static str,
    limit_seconds: f64,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { number: 1, config: "operator-identity", limit_seconds: 1.0 },
    Criterion { number: 2, config: "dissipativity-inequality", limit_seconds: 5.0 },
    Criterion { number: 3, config: "section7", limit_seconds: 30.0 },
    Criterion { number: 4, config: "strong-convergence", limit_seconds: 300.0 },
    Criterion { number: 5, config: "moment-decay", limit_seconds: 300.0 },
    Criterion { number: 6, config: "tail-uniformity", limit_seconds: 600.0 },
    Criterion { number: 7, config: "absorption", limit_seconds: 600.0 },
    Criterion { number: 8, config: "distance-validation", limit_seconds: 60.0 },
    Criterion { number: 9, config: "upper-semicontinuity", limit_seconds: 900.0 },
    Criterion { number: 10, config: "periodicity", limit_seconds: 600.0 },
];

struct Outcome {
    verdict: Result<Verdict, String>,
    detail: String,
    seconds: f64,
    dir: PathBuf,
}

fn run_once(cfg: &RunConfig, threads: usize, root: &Path) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    let start = Instant::now();
    let result = pool.install(|| experiments::run(cfg));
    let seconds = start.elapsed().as_secs_f64();
    let dir = root.join(format!("threads{threads}")).join(cfg.run_id());
    match result {
        Ok(out) => {
            for (name, bytes) in out.result_files(cfg) {
                selkov_lab::output::write_file(&dir, &name, &bytes).expect("write result file");
            }
            let failed: Vec<String> = out.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
            let detail = if failed.is_empty() {
                out.checks.iter().map(|c| c.detail.clone()).collect::<Vec<_>>().join("; ")
            } else {
                failed.join("; ")
            };
            Outcome { verdict: Ok(out.verdict), detail, seconds, dir }
        }
        Err(e) => Outcome { verdict: Err(e.to_string()), detail: String::new(), seconds, dir },
    }
}

/// Names of files whose bytes differ between the two directories.
fn differing_files(a: &Path, b: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut out = Vec::new();
    if names.is_empty() {
        out.push("<no files>".into());
    }
    for n in names {
        if std::fs::read(a.join(&n)).ok() != std::fs::read(b.join(&n)).ok() {
            out.push(n);
        }
    }
    let count = |d: &Path| std::fs::read_dir(d).map(|r| r.count()).unwrap_or(0);
    if count(a) != count(b) {
        out.push("<file sets differ>".into());
    }
    out
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--list` or a name filter;
    // the suite has a single entry point and ignores them, except listing.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);

    let mut all_ok = true;
    let mut reproducible = Vec::new();
    for c in &CRITERIA {
        let path = configs.join(format!("{}.cfg", c.config));
        let cfg = match RunConfig::from_file(&path) {
            Ok(cfg) => cfg,
            Err(e) => {
                println!("FAIL criterion {:>2} {}: config error: {e}", c.number, c.config);
                all_ok = false;
                reproducible.push((c.config, vec!["<config error>".to_string()]));
                continue;
            }
        };
        let first = run_once(&cfg, 1, &root);
        let second = run_once(&cfg, 3, &root);
        let passed = matches!(first.verdict, Ok(Verdict::Pass)) && first.seconds < c.limit_seconds;
        all_ok &= passed;
        let verdict = match &first.verdict {
            Ok(v) => format!("{v:?}").to_lowercase(),
            Err(e) => format!("error: {e}"),
        };
        println!(
            "{} criterion {:>2} {}: verdict {verdict}, {:.2} s on 1 thread ({:.2} s on 3), limit {} s; {}",
            if passed { "PASS" } else { "FAIL" },
            c.number,
            c.config,
            first.seconds,
            second.seconds,
            c.limit_seconds,
            first.detail
        );
        reproducible.push((c.config, differing_files(&first.dir, &second.dir)));
    }

    let diffs: Vec<String> =
        reproducible.iter().filter(|(_, d)| !d.is_empty()).map(|(n, d)| format!("{n}: {}", d.join(", "))).collect();
    let ok = diffs.is_empty();
    all_ok &= ok;
    println!(
        "{} criterion 11 reproducibility: {}",
        if ok { "PASS" } else { "FAIL" },
        if ok {
            format!("result files of all {} runs byte-identical on 1 and 3 threads", reproducible.len())
        } else {
            format!("differences in {}", diffs.join("; "))
        }
    );
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
