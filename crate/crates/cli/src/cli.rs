use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use eigenflow::decomposition::TouchList;
use eigenflow::formula;
use eigenflow::gallery::FlowRef;
use eigenflow::session::{Progress, Session, TraceMethod};
use eigenflow::tracker::ZnnConfig;

/// Environment variable naming the directory of the default session file.
pub const SESSION_DIR_ENV: &str = "EIGENCURVE_SESSION_DIR";
pub const DEFAULT_SESSION_FILE: &str = "session.json";

#[derive(Debug, Parser)]
#[command(
    name = "eigenflow",
    version,
    about = "Trace eigencurves of matrix flows and infer their block structure"
)]
pub struct Cli {
    /// Session file [default: $EIGENCURVE_SESSION_DIR/session.json, else ./session.json]
    #[arg(long, global = true)]
    pub session: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trace all eigencurves of a gallery flow and start a new session
    Trace(TraceArgs),
    /// Detect crossings, build R1 and the near-approach table
    Analyze,
    /// Infer the label vector and block structure
    Infer,
    /// Apply a Touch file (one "a b" pair per line) and re-infer
    Touch {
        #[arg(long)]
        pairs: PathBuf,
    },
    /// List almost-touch candidates
    Suggest {
        #[arg(long, default_value_t = 0.2)]
        gap: f64,
        /// Slope window in samples [default: about 0.05 time units]
        #[arg(long)]
        window: Option<usize>,
    },
    /// Re-run the pipeline on a larger interval
    Extend {
        #[arg(long, allow_hyphen_values = true)]
        t0: f64,
        #[arg(long, allow_hyphen_values = true)]
        tf: f64,
    },
    /// Write one CSV per curve and plot.json
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the session over HTTP
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Znn,
    Oracle,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub flow: String,
    /// Seed of the obscuring similarity (or of random_hermitean)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra flow parameter, e.g. `n=8` or `shift_from=1`
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    #[arg(long, allow_hyphen_values = true)]
    pub t0: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub tf: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tau: f64,
    #[arg(long, default_value_t = 50.0)]
    pub eta: f64,
    /// Look-ahead formula: truncation order and number of past points
    #[arg(long, num_args = 2, value_names = ["J", "S"])]
    pub formula: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = Method::Znn)]
    pub method: Method,
    /// Store eigenvectors along with the eigenvalues
    #[arg(long)]
    pub keep_vectors: bool,
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// `--session`, else `$EIGENCURVE_SESSION_DIR/session.json`, else
/// `./session.json`.
pub fn session_path(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(SESSION_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(DEFAULT_SESSION_FILE),
        _ => PathBuf::from(DEFAULT_SESSION_FILE),
    }
}

/// Process exit code for an error: 2 for a Touch conflict, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let touch = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<eigenflow::Error>(),
            Some(eigenflow::Error::Touch(_))
        )
    });
    if touch {
        2
    } else {
        1
    }
}

fn note(msg: &str) {
    eprintln!("note: {msg}");
}

fn progress(p: Progress) {
    if p.fraction >= 1.0 {
        eprintln!("{} done", p.phase);
    }
}

/// Builds the tracking configuration, swapping an unusable formula for the
/// closest stable one. Returns the notice describing the swap, if any.
pub fn config(args: &TraceArgs) -> Result<(ZnnConfig, Option<String>)> {
    let mut cfg = ZnnConfig {
        tau: args.tau,
        eta: args.eta,
        keep_vectors: args.keep_vectors,
        ..ZnnConfig::default()
    };
    if let Some(f) = &args.formula {
        cfg.formula = (f[0], f[1]);
    }
    let (j, s) = cfg.formula;
    let h = cfg.tau * cfg.eta;
    if !(h.is_finite() && h > 0.0) {
        bail!("tau and eta must be positive");
    }
    let usable = formula::derive_formula(j, s)?;
    if usable.stability_ok && usable.tau_eta_limit >= h {
        return Ok((cfg, None));
    }
    let Some(alt) = formula::fallback(j, s, h) else {
        bail!("formula ({j},{s}) is unusable at tau*eta = {h} and no stable fallback was found");
    };
    let why = if usable.stability_ok {
        format!("its tau*eta limit {:.4} is below {h}", usable.tau_eta_limit)
    } else {
        format!(
            "it is not zero-stable (extraneous root modulus {:.4})",
            usable.max_extraneous_root
        )
    };
    let msg = format!("formula ({j},{s}) replaced by ({},{}): {why}", alt.j, alt.s);
    cfg.formula = (alt.j, alt.s);
    Ok((cfg, Some(msg)))
}

fn load(path: &Path) -> Result<Session> {
    Session::load(path).with_context(|| format!("loading {}", path.display()))
}

fn save(s: &Session, path: &Path) -> Result<()> {
    s.save(path)
        .with_context(|| format!("saving {}", path.display()))
}

fn print_labels(s: &Session) {
    if let (Some(ve), Some(blocks)) = (&s.ve, &s.blocks) {
        println!("ve = {ve}");
        let sizes: Vec<String> = blocks.sizes.iter().map(usize::to_string).collect();
        println!("block sizes: {{{}}}", sizes.join(", "));
    }
    for n in &s.notices {
        note(n);
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let path = session_path(cli.session.as_deref());
    match cli.command {
        Command::Trace(args) => {
            let (cfg, swap) = config(&args)?;
            let mut flow = FlowRef::new(&args.flow, args.seed);
            for (k, v) in &args.params {
                flow = flow.with_param(k, *v);
            }
            flow.build().context("building the flow")?;
            let method = match args.method {
                Method::Znn => TraceMethod::Znn,
                Method::Oracle => TraceMethod::Oracle,
            };
            let mut s = Session::new(flow, args.t0, args.tf, cfg, method);
            s.trace(&progress)?;
            if let Some(msg) = swap {
                s.notices.insert(0, msg);
            }
            for n in &s.notices {
                note(n);
            }
            let restarts: usize = s.traces.iter().map(|t| t.restarts.len()).sum();
            println!(
                "traced {} curves on [{}, {}] with {} samples each ({} restarts)",
                s.n(),
                args.t0,
                args.tf,
                s.traces.first().map_or(0, |t| t.times.len()),
                restarts
            );
            save(&s, &path)?;
        }
        Command::Analyze => {
            let mut s = load(&path)?;
            s.analyze()?;
            match (&s.crossings, &s.r1) {
                (Some(cs), Some(r1)) => {
                    println!(
                        "{} crossings between {} pairs",
                        cs.crossings.len(),
                        cs.pairs().len()
                    );
                    for i in 1..r1.n() {
                        let p: Vec<String> = r1.partners(i).map(|j| j.to_string()).collect();
                        if !p.is_empty() {
                            println!("  {i} crosses {}", p.join(" "));
                        }
                    }
                }
                _ => println!(
                    "complex traces: crossings are not defined, see the near-approach table"
                ),
            }
            if let Some(c) = s.rc.as_ref().and_then(|rc| rc.closest()) {
                println!(
                    "closest pair ({}, {}): distance {:.4e} at t = {:.6}",
                    c.i, c.j, c.d_min, c.t_min
                );
            }
            save(&s, &path)?;
        }
        Command::Infer => {
            let mut s = load(&path)?;
            s.infer()?;
            print_labels(&s);
            save(&s, &path)?;
        }
        Command::Touch { pairs } => {
            let text = fs::read_to_string(&pairs)
                .with_context(|| format!("reading {}", pairs.display()))?;
            let touch = TouchList::parse(&text)?;
            let mut s = load(&path)?;
            s.apply_touch(touch)?;
            print_labels(&s);
            save(&s, &path)?;
        }
        Command::Suggest { gap, window } => {
            let s = load(&path)?;
            let cands = s.suggestions(gap, window)?;
            if cands.is_empty() {
                println!("no candidates below gap {gap}");
            }
            for c in cands {
                println!(
                    "{} {}\t# gap {:.3e} at t = {:.4}, score {:.2}",
                    c.a, c.b, c.d_min, c.t_min, c.score
                );
            }
        }
        Command::Extend { t0, tf } => {
            let mut s = load(&path)?;
            s.extend_interval(t0, tf, &progress)?;
            print_labels(&s);
            save(&s, &path)?;
        }
        Command::Export { out } => {
            let s = load(&path)?;
            let files = s.export_csv(&out)?;
            let plot = out.join("plot.json");
            fs::write(&plot, serde_json::to_string(&s.plot_data())?)?;
            println!("wrote {} curve files and {}", files.len(), plot.display());
        }
        Command::Serve { port, host } => {
            let s = load(&path)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::server::serve(s, Some(path), &host, port))?;
        }
    }
    Ok(())
}
