use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use objledger_sim::checks::{self, Report, Verdict};
use objledger_sim::metrics::{self, Metrics};
use objledger_sim::scenario::ClientBehavior;
use objledger_sim::trace::TraceEvent;
use objledger_sim::{run, Scenario, Trace};

mod bundled;

const OUT_DIR_ENV: &str = "OBJLEDGER_OUT_DIR";

#[derive(Parser)]
#[command(name = "objledger", version, about = "Run and check object-ledger simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario, write its trace, metrics and check report.
    RunScenario {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: $OBJLEDGER_OUT_DIR, else ./objledger-out].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run every trace check on a stored trace.
    VerifyTrace {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Sweep the number of clients and tabulate latency and throughput.
    Bench {
        #[arg(long)]
        scenario: String,
        /// Client counts to run, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        loads: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the bundled scenarios.
    Scenarios,
}

/// A failure that ends the command with a usage-error exit.
struct UsageError(String);

impl<E: std::fmt::Display> From<E> for UsageError {
    fn from(e: E) -> Self {
        UsageError(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::RunScenario {
            scenario,
            seed,
            out,
        } => run_scenario(&scenario, seed, out),
        Command::VerifyTrace { trace } => verify_trace(&trace),
        Command::Bench {
            scenario,
            loads,
            seed,
        } => bench(&scenario, &loads, seed),
        Command::Scenarios => {
            for (name, _) in bundled::SCENARIOS {
                println!("{name}");
            }
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(arg: &str, seed: Option<u64>) -> Result<Scenario, UsageError> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| UsageError(format!("{arg}: {e}")))?
    } else if let Some(text) = bundled::get(arg) {
        text.to_string()
    } else {
        let names: Vec<&str> = bundled::SCENARIOS.iter().map(|(n, _)| *n).collect();
        return Err(UsageError(format!(
            "no scenario file or bundled scenario named {arg:?} (bundled: {})",
            names.join(", ")
        )));
    };
    let mut sc = Scenario::from_toml(&text).map_err(|e| UsageError(format!("{arg}: {e}")))?;
    if let Some(seed) = seed {
        sc.seed = seed;
        sc.validate().map_err(|e| UsageError(format!("{arg}: {e}")))?;
    }
    Ok(sc)
}

fn run_scenario(arg: &str, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool, UsageError> {
    let sc = load_scenario(arg, seed)?;
    let out = out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("objledger-out"));
    fs::create_dir_all(&out).map_err(|e| UsageError(format!("{}: {e}", out.display())))?;

    let trace = run(&sc)?;
    let report = checks::verify(&trace);
    let m = metrics::compute(&trace);
    let text = render(&trace, &report, &m, Some(&sc));

    let write = |name: &str, bytes: &[u8]| -> Result<(), UsageError> {
        let path = out.join(name);
        fs::write(&path, bytes).map_err(|e| UsageError(format!("{}: {e}", path.display())))
    };
    let mut ndjson = BufWriter::new(
        File::create(out.join("trace.ndjson"))
            .map_err(|e| UsageError(format!("{}: {e}", out.display())))?,
    );
    trace.write_to(&mut ndjson)?;
    write("metrics.json", serde_json::to_string_pretty(&m)?.as_bytes())?;
    write("report.txt", text.as_bytes())?;

    print!("{text}");
    println!("wrote trace.ndjson, metrics.json and report.txt to {}", out.display());
    Ok(report.all_ok())
}

fn verify_trace(path: &Path) -> Result<bool, UsageError> {
    let file = File::open(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let trace = Trace::read_from(BufReader::new(file))
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let report = checks::verify(&trace);
    let m = metrics::compute(&trace);
    print!("{}", render(&trace, &report, &m, None));
    Ok(report.all_ok())
}

fn render(trace: &Trace, report: &Report, m: &Metrics, sc: Option<&Scenario>) -> String {
    let h = &trace.header;
    let mut s = format!("scenario {} seed {}\n", h.scenario, h.seed);
    s += &format!(
        "{} events, {} at t={}\n\n",
        trace.events.len(),
        if trace.footer.complete { "complete" } else { "incomplete, deadline reached" },
        trace.footer.t
    );
    s += &report.render();
    s.push('\n');

    let finals = trace
        .events
        .iter()
        .filter(|e| matches!(e, TraceEvent::Final { .. }))
        .count();
    if let Ok(n) = checks::two_wave_count(trace) {
        s += &format!("two-wave finality: {n} of {finals} final transactions needed no retry and finished in two round trips\n");
    }
    let rtt = m.get("rtt.mean").copied().unwrap_or(0.0);
    for kind in ["owned", "shared", "ptb"] {
        for stage in ["finality", "settlement"] {
            let key = |stat: &str| m.get(&format!("{stage}.{kind}.{stat}")).copied();
            if let (Some(count), Some(mean), Some(p50), Some(p95)) =
                (key("count"), key("mean"), key("p50"), key("p95"))
            {
                s += &format!(
                    "{stage:<10} {kind:<6} n={count:<4} mean {mean:>7.1}  p50 {p50:>6.0}  p95 {p95:>6.0}  ({:.2} rtt)\n",
                    if rtt > 0.0 { mean / rtt } else { 0.0 }
                );
            }
        }
    }
    s += &format!(
        "certificates {}, settled {}, checkpoints {}, mean rtt {rtt:.1}\n",
        m.get("certificates").copied().unwrap_or(0.0),
        m.get("settled").copied().unwrap_or(0.0),
        m.get("checkpoints").copied().unwrap_or(0.0),
    );
    for note in notes(trace, report, sc) {
        s += &format!("note: {note}\n");
    }
    s += &format!(
        "result: {}\n",
        if report.all_ok() {
            "pass"
        } else if report.safety_ok() {
            "FAIL (liveness)"
        } else {
            "FAIL (safety violation)"
        }
    );
    s
}

fn notes(trace: &Trace, report: &Report, sc: Option<&Scenario>) -> Vec<String> {
    let mut notes = Vec::new();
    let stalled = trace
        .events
        .iter()
        .any(|e| matches!(e, TraceEvent::Stalled { .. }));
    let equivocates = sc.is_some_and(|sc| {
        sc.faults
            .clients
            .iter()
            .any(|c| matches!(c.behavior, ClientBehavior::Equivocator { .. }))
    });
    if (stalled || equivocates) && report.get("bcb_consistency") == Some(&Verdict::Pass) {
        notes.push("no conflicting certificate formed; liveness deferred to next epoch".into());
    }
    if let Some(e) = trace.events.iter().find_map(|e| match e {
        TraceEvent::ClientCrash { client, .. } => Some(*client),
        _ => None,
    }) {
        if report.get("finality_inclusion") == Some(&Verdict::Pass) {
            notes.push(format!(
                "client {e} crashed holding a certificate; it was still checkpointed"
            ));
        }
    }
    notes
}

fn bench(arg: &str, loads: &[usize], seed: Option<u64>) -> Result<bool, UsageError> {
    let base = load_scenario(arg, seed)?;
    let runs: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = loads
            .iter()
            .map(|&clients| {
                let mut sc = base.clone();
                sc.workload.clients = clients;
                scope.spawn(move || {
                    sc.validate()?;
                    let trace = run(&sc)?;
                    let safe = checks::verify(&trace).safety_ok();
                    Ok::<_, UsageError>((clients, safe, bench_row(&trace)))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench run")).collect()
    });

    println!("scenario {} seed {}", base.name, base.seed);
    println!(
        "{:>7} {:>6} {:>8} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8} {:>7} {:>5}",
        "clients", "certs", "settled", "cert/kt", "ops/kt", "fin p50", "fin p95", "set p50",
        "set p95", "ckpt/kt", "safe"
    );
    let mut all_safe = true;
    for r in runs {
        let (clients, safe, row) = r?;
        all_safe &= safe;
        println!(
            "{clients:>7} {:>6} {:>8} {:>10.2} {:>10.2} {:>8} {:>8} {:>8} {:>8} {:>7.2} {:>5}",
            row.certs,
            row.settled,
            row.cert_rate,
            row.op_rate,
            row.fin.0,
            row.fin.1,
            row.set.0,
            row.set.1,
            row.checkpoint_rate,
            if safe { "yes" } else { "NO" }
        );
    }
    println!("latencies in ticks; rates per 1000 ticks");
    Ok(all_safe)
}

struct Row {
    certs: u64,
    settled: u64,
    cert_rate: f64,
    op_rate: f64,
    fin: (f64, f64),
    set: (f64, f64),
    checkpoint_rate: f64,
}

fn bench_row(trace: &Trace) -> Row {
    let m = metrics::compute(trace);
    let lat = metrics::latencies(trace);
    let pct = |by_kind: &std::collections::BTreeMap<String, Vec<u64>>| {
        let all: Vec<u64> = by_kind.values().flatten().copied().collect();
        (metrics::percentile(&all, 50.0), metrics::percentile(&all, 95.0))
    };
    let get = |k: &str| m.get(k).copied().unwrap_or(0.0);
    Row {
        certs: get("certificates") as u64,
        settled: get("settled") as u64,
        cert_rate: get("goodput_per_1000"),
        op_rate: get("ops_per_1000"),
        fin: pct(&lat.finality),
        set: pct(&lat.settlement),
        checkpoint_rate: get("checkpoints") * 1000.0 / get("end_time").max(1.0),
    }
}
