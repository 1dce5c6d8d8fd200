use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tracemap_core::pipeline::{run, RunConfig};
use tracemap_core::render::{resolve_color, OutputFormat, RenderConfig};
use tracemap_core::tracegen::{generate, GenSpec, LinkDelay, MANIFEST_FILE};
use tracemap_core::{sample, CountryCode, Direction, GeoDb, RejectReason};

/// Map traceroute corpora onto a world map.
///
/// Reads every file under FOLDER, drops unusable traces, and writes
/// stats.txt, trace.txt, map_all.<ext> and (with --focus) map_last.<ext>.
#[derive(Parser, Debug)]
#[command(name = "tracemap", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    #[command(flatten)]
    analyze: Analyze,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus and its manifest.
    Gen(Gen),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DirectionArg {
    Leaving,
    Entering,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Png,
    Svg,
}

#[derive(Args, Debug)]
struct GeoArgs {
    /// Prefix table (`prefix,country` rows); bundled sample when absent
    #[arg(long, requires = "geo_points")]
    geo_prefixes: Option<PathBuf>,
    /// Country point table (`country,x,y` rows); bundled sample when absent
    #[arg(long, requires = "geo_prefixes")]
    geo_points: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Analyze {
    /// Folder holding the traceroute files
    folder: Option<PathBuf>,

    #[command(flatten)]
    geo: GeoArgs,
    /// Base map PNG; bundled 3950x2100 map when absent
    #[arg(long)]
    map: Option<PathBuf>,
    /// Country adjacency table; enables invisible MPLS detection
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Country code for the last-links map
    #[arg(long)]
    focus: Option<CountryCode>,
    #[arg(long, value_enum, default_value = "leaving")]
    direction: DirectionArg,
    /// Scale line thickness with occurrences
    #[arg(long)]
    redraw: bool,
    /// Segment color, `#rrggbb` or a CSS name
    #[arg(long, default_value = "blue")]
    color: String,
    /// Color of segments with explicit MPLS evidence
    #[arg(long, default_value = "red")]
    mpls_color: String,
    /// Color of invisible MPLS candidates
    #[arg(long, default_value = "orange")]
    invisible_color: String,
    #[arg(long, default_value_t = 2)]
    min_thickness: u32,
    #[arg(long, default_value_t = 12)]
    max_thickness: u32,
    #[arg(long, value_enum, default_value = "png")]
    format: FormatArg,
    /// Output folder, created if missing
    #[arg(long, default_value = "tracemap_out")]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct Gen {
    /// Output folder for the corpus
    #[arg(long)]
    out: PathBuf,
    /// JSON generator spec; flags below override its fields
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Country path and weight, e.g. `RE,MU,FR=3`; repeatable
    #[arg(long = "path")]
    paths: Vec<String>,
    /// Planted defect rate, e.g. `ThreeStarsLastHop=0.2`; repeatable
    #[arg(long = "defect")]
    defects: Vec<String>,
    /// Directional hop delay, e.g. `FR,RE=173.3+5`; repeatable
    #[arg(long = "delay")]
    delays: Vec<String>,
    #[arg(long)]
    json_fraction: Option<f64>,
    #[arg(long)]
    mpls_rate: Option<f64>,
    #[arg(long)]
    star_rate: Option<f64>,
    #[command(flatten)]
    geo: GeoArgs,
}

fn countries(list: &str) -> Result<Vec<CountryCode>, String> {
    list.split(',').map(|c| c.trim().parse()).collect()
}

fn split_kv<'a>(arg: &'a str, what: &str) -> Result<(&'a str, &'a str), String> {
    arg.rsplit_once('=')
        .ok_or_else(|| format!("{what} {arg:?} needs `=`"))
}

fn number<T: std::str::FromStr>(s: &str, arg: &str) -> Result<T, String> {
    s.trim()
        .parse()
        .map_err(|_| format!("bad number in {arg:?}"))
}

fn load_geo(geo: &GeoArgs) -> Result<GeoDb, String> {
    match (&geo.geo_prefixes, &geo.geo_points) {
        (Some(p), Some(c)) => GeoDb::load(p, c).map_err(|e| e.to_string()),
        _ => Ok(sample::geodb()),
    }
}

fn gen(args: Gen) -> Result<ExitCode, String> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            GenSpec::from_json(&text).map_err(|e| e.to_string())?
        }
        None => GenSpec::new(1000, Vec::new(), 0),
    };
    if let Some(n) = args.count {
        spec.trace_count = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if !args.paths.is_empty() {
        spec.country_path_distribution.clear();
        for p in &args.paths {
            let (list, w) = p.rsplit_once('=').unwrap_or((p, "1"));
            spec.country_path_distribution
                .push(tracemap_core::tracegen::WeightedPath {
                    countries: countries(list)?,
                    weight: number(w, p)?,
                });
        }
    }
    for d in &args.defects {
        let (name, rate) = split_kv(d, "defect")?;
        spec.defect_rates
            .insert(name.trim().parse::<RejectReason>()?, number(rate, d)?);
    }
    for d in &args.delays {
        let (pair, ms) = split_kv(d, "delay")?;
        let pair = countries(pair)?;
        let [from, to] = pair[..] else {
            return Err(format!("delay {d:?} needs two countries"));
        };
        let (base, jitter) = ms.split_once('+').unwrap_or((ms, "0"));
        spec.rtt_model
            .links
            .retain(|l| (l.from, l.to) != (from, to));
        spec.rtt_model.links.push(LinkDelay {
            from,
            to,
            base_ms: number(base, d)?,
            jitter_ms: number(jitter, d)?,
        });
    }
    if let Some(v) = args.json_fraction {
        spec.json_fraction = v;
    }
    if let Some(v) = args.mpls_rate {
        spec.mpls_rate = v;
    }
    if let Some(v) = args.star_rate {
        spec.star_rate = v;
    }
    let db = load_geo(&args.geo)?;
    let manifest = generate(&spec, &db, &args.out).map_err(|e| e.to_string())?;
    let defects = manifest
        .records
        .iter()
        .filter(|r| r.defect.is_some())
        .count();
    println!(
        "wrote {} traces ({} with planted defects) to {}; manifest {}",
        manifest.records.len(),
        defects,
        args.out.display(),
        args.out.join(MANIFEST_FILE).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn analyze(a: Analyze) -> Result<ExitCode, String> {
    let folder = a.folder.ok_or("missing input folder (see --help)")?;
    let color = |s: &str| resolve_color(s).map_err(|e| e.to_string());
    let mut cfg = RunConfig::new(folder, a.out);
    cfg.geo_prefixes = a.geo.geo_prefixes;
    cfg.geo_points = a.geo.geo_points;
    cfg.map = a.map;
    cfg.adjacency = a.adjacency;
    cfg.focus = a.focus;
    cfg.direction = match a.direction {
        DirectionArg::Leaving => Direction::Leaving,
        DirectionArg::Entering => Direction::Entering,
    };
    cfg.render = RenderConfig {
        line_color: color(&a.color)?,
        mpls_explicit_color: color(&a.mpls_color)?,
        mpls_invisible_color: color(&a.invisible_color)?,
        proportional: a.redraw,
        min_thickness: a.min_thickness,
        max_thickness: a.max_thickness,
        format: match a.format {
            FormatArg::Png => OutputFormat::Png,
            FormatArg::Svg => OutputFormat::Svg,
        },
    };
    cfg.jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let summary = run(&cfg).map_err(|e| e.to_string())?;
    let r = &summary.report;
    println!(
        "{} inputs, {} accepted, {} rejected; {} segments, {} MPLS links",
        r.input_count,
        r.accepted_count,
        r.rejected_count(),
        summary.segments,
        summary.mpls_links
    );
    for out in &summary.outputs {
        println!("  {}", out.display());
    }
    Ok(ExitCode::from(summary.exit_code() as u8))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Some(Command::Gen(g)) => gen(g),
        None => analyze(cli.analyze),
    };
    result.unwrap_or_else(|msg| {
        eprintln!("tracemap: {msg}");
        ExitCode::from(1)
    })
}
