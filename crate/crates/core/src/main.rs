use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};

use doorwatch::attributes::PatchClassifier;
use doorwatch::backend::stub::{load_annotations, serve_http, serve_lines};
use doorwatch::backend::StubBackend;
use doorwatch::calibrate::{calibrate, load_labeled};
use doorwatch::clock::{Clock, SystemClock};
use doorwatch::config::{assemble, EngineConfig};
use doorwatch::describe::TrigramRefiner;
use doorwatch::orchestrate::{prune, run_cameras, summarize_history, TimeRange};
use doorwatch::profile::{Chip, Demographics, ProfileStore, DEFAULT_BLUR_FLOOR};
use doorwatch::{Error, Result};

#[derive(Parser)]
#[command(name = "doorwatch", version, about = "Premises camera monitoring engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process camera frames and raise alerts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Keep polling camera directories for new frames until interrupted.
        #[arg(long)]
        follow: bool,
        #[arg(long, default_value_t = 500)]
        poll_ms: u64,
    },
    /// Manage enrolled persons.
    Enroll {
        #[command(flatten)]
        store: StoreArgs,
        #[command(subcommand)]
        action: EnrollAction,
    },
    /// Summarize the event log.
    History {
        #[arg(long, conflicts_with = "log", required_unless_present = "log")]
        config: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Inclusive start: RFC 3339 or YYYY-MM-DD.
        #[arg(long)]
        since: Option<String>,
        /// Exclusive end: RFC 3339 or YYYY-MM-DD.
        #[arg(long)]
        until: Option<String>,
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[arg(long)]
        json: bool,
    },
    /// Choose an identification threshold from labeled chips.
    Calibrate {
        /// Directory of <person>/ subdirectories.
        #[arg(long)]
        genuine: PathBuf,
        #[arg(long)]
        impostor: PathBuf,
        #[arg(long)]
        json: bool,
        /// Write the threshold into the config file.
        #[arg(long, requires = "config")]
        apply: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit the patch attribute classifier from <class>/ directories.
    TrainAttributes {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = doorwatch::attributes::DEFAULT_PERSON_RADIUS)]
        person_radius: f64,
    },
    /// Write the description refiner's trigram model.
    TrainRefiner {
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the fixture backend over stdio or HTTP.
    #[command(hide = true)]
    ServeStub {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        strict: bool,
        /// Listen address for HTTP; stdio when absent.
        #[arg(long)]
        http: Option<String>,
    },
}

#[derive(Args)]
struct StoreArgs {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    profile_root: Option<PathBuf>,
    #[arg(long, global = true)]
    blur_floor: Option<f64>,
}

#[derive(Subcommand)]
enum EnrollAction {
    AddPerson {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        email: String,
        #[arg(long, default_value = "")]
        contact: String,
        #[arg(long)]
        chips: PathBuf,
    },
    AddViews {
        /// Person id or name.
        #[arg(long)]
        person: String,
        #[arg(long)]
        chips: PathBuf,
    },
    DeletePerson {
        #[arg(long)]
        person: String,
    },
    Summary,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, follow, poll_ms } => run(&config, follow.then(|| Duration::from_millis(poll_ms))),
        Command::Enroll { store, action } => enroll(&store, action),
        Command::History {
            config,
            log,
            since,
            until,
            top,
            json,
        } => {
            let log = match (log, config) {
                (Some(l), _) => l,
                (None, Some(c)) => EngineConfig::load(&c)?.storage.event_log,
                (None, None) => unreachable!("clap requires one"),
            };
            let range = TimeRange {
                since: since.as_deref().map(parse_time).transpose()?,
                until: until.as_deref().map(parse_time).transpose()?,
            };
            let summary = summarize_history(&log, &range, top)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{summary}");
            }
            Ok(())
        }
        Command::Calibrate {
            genuine,
            impostor,
            json,
            apply,
            config,
        } => {
            let cal = calibrate(&load_labeled(&genuine)?, &load_labeled(&impostor)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&cal)?);
            } else {
                for (name, s) in [("genuine", &cal.genuine), ("impostor", &cal.impostor)] {
                    println!(
                        "{name:>8}: n={} min={:.6} median={:.6} mean={:.6} max={:.6}",
                        s.count, s.min, s.median, s.mean, s.max
                    );
                }
                println!(
                    "threshold {:.6} (F1 {:.4}, FAR {:.4}, FRR {:.4}; {} genuine / {} impostor pairs)",
                    cal.threshold,
                    cal.f1,
                    cal.false_accept_rate,
                    cal.false_reject_rate,
                    cal.genuine_pairs,
                    cal.impostor_pairs
                );
            }
            if cal.degenerate {
                eprintln!("warning: genuine and impostor sets are identical");
            }
            if apply {
                apply_threshold(config.as_deref().expect("clap requires config"), cal.threshold)?;
            }
            Ok(())
        }
        Command::TrainAttributes {
            data,
            out,
            person_radius,
        } => {
            let model = PatchClassifier::train_from_dir(&data, person_radius)?;
            model.save(&out)?;
            println!("{} centroids written to {}", model.centroids.len(), out.display());
            Ok(())
        }
        Command::TrainRefiner { out } => {
            TrigramRefiner::from_grammar().save(&out)?;
            println!("refiner model written to {}", out.display());
            Ok(())
        }
        Command::ServeStub {
            annotations,
            strict,
            http,
        } => {
            let stub = StubBackend::new(load_annotations(&annotations)?, strict);
            match http {
                None => {
                    let stdin = std::io::stdin();
                    serve_lines(&stub, stdin.lock(), std::io::stdout().lock())?;
                }
                Some(addr) => {
                    let server = tiny_http_server(&addr)?;
                    serve_http(&stub, &server)?;
                }
            }
            Ok(())
        }
    }
}

fn tiny_http_server(addr: &str) -> Result<doorwatch::backend::stub::HttpServer> {
    let server = doorwatch::backend::stub::HttpServer::http(addr)
        .map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))?;
    if let Some(a) = server.server_addr().to_ip() {
        println!("listening on {a}");
    }
    use std::io::Write;
    std::io::stdout().flush()?;
    Ok(server)
}

fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| Error::InvalidInput(format!("cannot parse time {s:?}; use RFC 3339 or YYYY-MM-DD")))
}

fn run(config: &Path, follow: Option<Duration>) -> Result<()> {
    let cfg = EngineConfig::load(config)?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let retention = cfg.storage.retention;
    if retention.max_age_days.is_some() || retention.max_events.is_some() {
        let removed = prune(&cfg.storage.event_log, &retention, clock.now())?;
        if removed > 0 {
            log::info!("retention removed {removed} events");
        }
    }
    let rt = assemble(&cfg, clock, None)?;
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))
            .map_err(|e| Error::Config(format!("cannot install signal handler: {e}")))?;
    }
    let result = run_cameras(rt.engine.clone(), &cfg.cameras, cfg.change, stop, follow);
    rt.shutdown();
    for (camera, s) in result? {
        println!(
            "{camera}: {} frames, {} active, {} skipped, {} events, {} unreadable",
            s.frames, s.active_frames, s.skipped_frames, s.events, s.source_errors
        );
    }
    if rt.engine.backend_failures() > 0 {
        log::warn!("{} frames skipped on backend failure", rt.engine.backend_failures());
    }
    Ok(())
}

fn open_store(args: &StoreArgs) -> Result<ProfileStore> {
    let cfg = args.config.as_deref().map(EngineConfig::load).transpose()?;
    let root = match (&args.profile_root, &cfg) {
        (Some(r), _) => r.clone(),
        (None, Some(c)) => c.storage.profile_root.clone(),
        (None, None) => return Err(Error::InvalidInput("give --profile-root or --config".into())),
    };
    let floor = args
        .blur_floor
        .or_else(|| cfg.as_ref().map(EngineConfig::blur_floor))
        .unwrap_or(DEFAULT_BLUR_FLOOR);
    Ok(ProfileStore::open(&root, Arc::new(SystemClock))?.with_blur_floor(floor))
}

fn enroll(args: &StoreArgs, action: EnrollAction) -> Result<()> {
    let mut store = open_store(args)?;
    match action {
        EnrollAction::AddPerson {
            name,
            email,
            contact,
            chips,
        } => {
            let chips = Chip::load_dir(&chips)?;
            let rec = store.add_person(&Demographics { name, email, contact }, &chips)?;
            println!("enrolled {} as {} with {} templates", rec.name, rec.person_id, rec.templates.len());
        }
        EnrollAction::AddViews { person, chips } => {
            let id = store.resolve(&person)?;
            let out = store.add_views(&id, &Chip::load_dir(&chips)?)?;
            println!(
                "{}: {} added, {} duplicates, {} rejected",
                out.record.name,
                out.added,
                out.duplicates,
                out.rejected.len()
            );
            for r in &out.rejected {
                println!("  {}: {}", r.chip, r.reasons.join(", "));
            }
        }
        EnrollAction::DeletePerson { person } => {
            let id = store.resolve(&person)?;
            store.delete_person(&id)?;
            println!("deleted {id}");
        }
        EnrollAction::Summary => println!("{}", store.readout_summary()?),
    }
    Ok(())
}

/// Rewrites `recognition.threshold` in place, leaving the rest of the file's values untouched.
fn apply_threshold(config: &Path, threshold: f64) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    let rec = value
        .get_mut("recognition")
        .and_then(|r| r.as_object_mut())
        .ok_or_else(|| Error::Config("config has no recognition section".into()))?;
    rec.insert("threshold".into(), serde_json::json!(threshold));
    let out = serde_json::to_string_pretty(&value)? + "\n";
    EngineConfig::parse(&out)?;
    doorwatch::storage::write_atomic(config, out.as_bytes())?;
    println!("threshold written to {}", config.display());
    Ok(())
}
