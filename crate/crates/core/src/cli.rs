//! The `carto-qa` command line.
//!
//! Exit status: 0 on success, 1 when an input file is missing or invalid,
//! 2 on usage errors. Output files are written to a temporary file next to
//! the destination and renamed into place, so a failed run leaves no
//! partial output behind.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, IsTerminal, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cartography::{self, CartographyMap, Region};
use crate::ingest::{self, IngestWarning, PredictionSet, QaDataset};
use crate::metrics::{self, round2};
use crate::report::{self, TableRow};

pub const NO_COLOR_ENV: &str = "CARTO_QA_NO_COLOR";

#[derive(Debug, Parser)]
#[command(
    name = "carto-qa",
    version,
    about = "Dataset cartography and adversarial EM/F1 evaluation for extractive QA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct MapSource {
    /// Data map CSV written by `stats`
    #[arg(long, conflicts_with = "log")]
    pub map: Option<PathBuf>,
    /// Training-dynamics JSONL log
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SubsetKind {
    Easy,
    Ambiguous,
    Hard,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
    Svg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the data map from a dynamics log
    Stats {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Split a data map into easy / ambiguous / hard id sets
    Partition {
        #[command(flatten)]
        source: MapSource,
        #[arg(long, default_value_t = 0.33)]
        fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a seeded random subset of dataset ids
    Sample {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.33)]
        fraction: f64,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lenient: bool,
    },
    /// Write one subset of a dataset as a SQuAD-format training file
    Export {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        subset: SubsetKind,
        #[command(flatten)]
        source: MapSource,
        #[arg(long, default_value_t = 0.33)]
        fraction: f64,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
    /// Score a prediction file with exact match and token F1
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        lenient: bool,
    },
    /// Compare predictions on original and adversarial datasets
    AdvReport {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        adv_dataset: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        adv_preds: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        lenient: bool,
    },
    /// Render the data map as SVG
    Map {
        #[command(flatten)]
        source: MapSource,
        #[arg(long, default_value_t = 0.33)]
        fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "svg")]
        format: Format,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Data {
        path: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn data<E>(path: &Path, source: E) -> Self
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        CliError::Data {
            path: path.display().to_string(),
            source: Box::new(source),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

struct Io<'a> {
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
    color: bool,
}

impl Io<'_> {
    fn warn(&mut self, msg: impl std::fmt::Display) {
        let prefix = if self.color {
            "\x1b[33mwarning\x1b[0m"
        } else {
            "warning"
        };
        let _ = writeln!(self.stderr, "{prefix}: {msg}");
    }

    fn out(&mut self, bytes: &[u8]) -> CliResult<()> {
        self.stdout
            .write_all(bytes)
            .map_err(|e| CliError::Other(format!("writing to stdout: {e}")))
    }
}

/// Parses `args` (including the program name) and runs one subcommand.
/// Returns the process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let color = std::env::var_os(NO_COLOR_ENV).is_none() && io::stderr().is_terminal();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    2
                }
            };
        }
    };

    let mut io = Io {
        stdout,
        stderr,
        color,
    };
    match execute(cli.command, &mut io) {
        Ok(()) => 0,
        Err(e) => {
            let prefix = if color {
                "\x1b[31merror\x1b[0m"
            } else {
                "error"
            };
            let _ = writeln!(io.stderr, "{prefix}: {e}");
            e.exit_code()
        }
    }
}

fn check_fraction(fraction: f64, max: f64) -> CliResult<()> {
    if fraction > 0.0 && fraction <= max {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "--fraction must be in (0, {max}], got {fraction}"
        )))
    }
}

fn check_format(format: Format, allowed: &[Format], command: &str) -> CliResult<()> {
    if allowed.contains(&format) {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "--format {} is not supported by {command}",
            format
                .to_possible_value()
                .map(|v| v.get_name().to_string())
                .unwrap_or_default()
        )))
    }
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::data(path, e))
}

fn load_dataset(path: &Path, lenient: bool, io: &mut Io<'_>) -> CliResult<QaDataset> {
    let bytes = read_file(path)?;
    if lenient {
        let (dataset, warnings) =
            ingest::parse_dataset_lenient(&bytes).map_err(|e| CliError::data(path, e))?;
        for w in warnings {
            report_warning(io, path, &w);
        }
        Ok(dataset)
    } else {
        ingest::parse_dataset(&bytes).map_err(|e| CliError::data(path, e))
    }
}

fn report_warning(io: &mut Io<'_>, path: &Path, w: &IngestWarning) {
    io.warn(format_args!("{}: {w}", path.display()));
}

fn load_predictions(path: &Path) -> CliResult<PredictionSet> {
    ingest::parse_predictions(&read_file(path)?).map_err(|e| CliError::data(path, e))
}

fn load_map_from_log(path: &Path) -> CliResult<CartographyMap> {
    let file = fs::File::open(path).map_err(|e| CliError::data(path, e))?;
    let table =
        ingest::parse_dynamics_log(BufReader::new(file)).map_err(|e| CliError::data(path, e))?;
    cartography::compute_map(&table).map_err(|e| CliError::data(path, e))
}

fn load_map(source: &MapSource) -> CliResult<CartographyMap> {
    match (&source.map, &source.log) {
        (Some(path), _) => {
            let file = fs::File::open(path).map_err(|e| CliError::data(path, e))?;
            CartographyMap::from_csv(BufReader::new(file)).map_err(|e| CliError::data(path, e))
        }
        (None, Some(path)) => load_map_from_log(path),
        (None, None) => Err(CliError::Usage("one of --map or --log is required".into())),
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn emit(io: &mut Io<'_>, out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => write_atomic(path, bytes).map_err(|e| CliError::data(path, e)),
        None => io.out(bytes),
    }
}

fn execute(command: Command, io: &mut Io<'_>) -> CliResult<()> {
    match command {
        Command::Stats { log, out, format } => {
            check_format(format, &[Format::Csv, Format::Json], "stats")?;
            let map = load_map_from_log(&log)?;
            let bytes = match format {
                Format::Json => {
                    let mut v = serde_json::to_vec_pretty(map.points()).expect("points serialize");
                    v.push(b'\n');
                    v
                }
                _ => map.to_csv(),
            };
            emit(io, out.as_deref(), &bytes)
        }
        Command::Partition {
            source,
            fraction,
            out,
        } => {
            check_fraction(fraction, 0.5)?;
            let map = load_map(&source)?;
            let part = cartography::partition(&map, fraction)
                .map_err(|e| CliError::Other(e.to_string()))?;
            emit(io, out.as_deref(), &part.to_json())
        }
        Command::Sample {
            dataset,
            fraction,
            seed,
            out,
            lenient,
        } => {
            check_fraction(fraction, 1.0)?;
            let data = load_dataset(&dataset, lenient, io)?;
            let ids: Vec<&str> = data.ids().collect();
            let sample = cartography::random_sample(&ids, fraction, seed)
                .map_err(|e| CliError::Other(e.to_string()))?;
            let mut bytes = serde_json::to_vec_pretty(&sample).expect("ids serialize");
            bytes.push(b'\n');
            emit(io, out.as_deref(), &bytes)
        }
        Command::Export {
            dataset,
            subset,
            source,
            fraction,
            seed,
            out,
            lenient,
        } => {
            let data = load_dataset(&dataset, lenient, io)?;
            let keep: Vec<String> = match subset {
                SubsetKind::Random => {
                    check_fraction(fraction, 1.0)?;
                    let ids: Vec<&str> = data.ids().collect();
                    cartography::random_sample(&ids, fraction, seed)
                        .map_err(|e| CliError::Other(e.to_string()))?
                }
                region => {
                    check_fraction(fraction, 0.5)?;
                    let map = load_map(&source)?;
                    let part = cartography::partition(&map, fraction)
                        .map_err(|e| CliError::Other(e.to_string()))?;
                    let region = match region {
                        SubsetKind::Easy => Region::Easy,
                        SubsetKind::Ambiguous => Region::Ambiguous,
                        _ => Region::Hard,
                    };
                    part.subset(region).iter().cloned().collect()
                }
            };
            let bytes =
                ingest::write_subset(&data, &keep).map_err(|e| CliError::data(&dataset, e))?;
            write_atomic(&out, &bytes).map_err(|e| CliError::data(&out, e))?;
            let _ = writeln!(
                io.stderr,
                "wrote {} examples to {}",
                keep.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            dataset,
            preds,
            out,
            format,
            lenient,
        } => {
            check_format(format, &[Format::Json, Format::Csv, Format::Text], "eval")?;
            let data = load_dataset(&dataset, lenient, io)?;
            let predictions = load_predictions(&preds)?;
            let report =
                metrics::evaluate(&predictions, &data).map_err(|e| CliError::data(&dataset, e))?;
            warn_missing(io, &preds, &report.missing_predictions);
            let summary = format!(
                "EM {:.2} / F1 {:.2}\n",
                round2(report.aggregate_em),
                round2(report.aggregate_f1)
            );
            io.out(summary.as_bytes())?;
            if let Some(path) = out {
                let bytes = match format {
                    Format::Csv => report.per_example_csv(),
                    Format::Text => {
                        let label = dataset
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned());
                        report::render_table(&[TableRow::new(
                            label.unwrap_or_default(),
                            report.aggregate_em,
                            report.aggregate_f1,
                        )])
                        .expect("one valid row")
                        .into_bytes()
                    }
                    _ => report.to_json(),
                };
                write_atomic(&path, &bytes).map_err(|e| CliError::data(&path, e))?;
            }
            Ok(())
        }
        Command::AdvReport {
            dataset,
            adv_dataset,
            preds,
            adv_preds,
            out,
            format,
            lenient,
        } => {
            check_format(format, &[Format::Json, Format::Text], "adv-report")?;
            let orig = load_dataset(&dataset, lenient, io)?;
            let adv = load_dataset(&adv_dataset, lenient, io)?;
            let orig_preds = load_predictions(&preds)?;
            let adv_preds_set = load_predictions(&adv_preds)?;
            let orig_report =
                metrics::evaluate(&orig_preds, &orig).map_err(|e| CliError::data(&dataset, e))?;
            let adv_report = metrics::evaluate(&adv_preds_set, &adv)
                .map_err(|e| CliError::data(&adv_dataset, e))?;
            warn_missing(io, &preds, &orig_report.missing_predictions);
            warn_missing(io, &adv_preds, &adv_report.missing_predictions);

            let pairing = report::pair_examples(&orig, &adv);
            if !pairing.unmatched_adversarial.is_empty() {
                io.warn(format_args!(
                    "{}: {} adversarial examples match no original id: {}",
                    adv_dataset.display(),
                    pairing.unmatched_adversarial.len(),
                    preview(&pairing.unmatched_adversarial)
                ));
            }
            let cmp = report::adversarial_compare(
                &orig_report,
                &adv_report,
                &pairing,
                &orig_preds,
                &adv_preds_set,
            );
            let table = cmp.to_table();
            io.out(table.as_bytes())?;
            io.out(
                format!(
                    "flips: {}, gains: {}, unmatched: {}\n",
                    cmp.flips.len(),
                    cmp.gains.len(),
                    cmp.unmatched.len()
                )
                .as_bytes(),
            )?;
            if let Some(path) = out {
                let bytes = match format {
                    Format::Text => table.into_bytes(),
                    _ => cmp.to_json(),
                };
                write_atomic(&path, &bytes).map_err(|e| CliError::data(&path, e))?;
            }
            Ok(())
        }
        Command::Map {
            source,
            fraction,
            out,
            format,
        } => {
            check_format(format, &[Format::Svg], "map")?;
            check_fraction(fraction, 0.5)?;
            let map = load_map(&source)?;
            let part = cartography::partition(&map, fraction)
                .map_err(|e| CliError::Other(e.to_string()))?;
            let svg =
                report::render_datamap(&map, &part).map_err(|e| CliError::Other(e.to_string()))?;
            emit(io, out.as_deref(), svg.as_bytes())
        }
    }
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids
        .iter()
        .take(SHOWN)
        .cloned()
        .collect::<Vec<_>>()
        .join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", ids.len() - SHOWN));
    }
    s
}

fn warn_missing(io: &mut Io<'_>, preds: &Path, missing: &[String]) {
    if !missing.is_empty() {
        io.warn(format_args!(
            "{}: {} examples have no prediction and score 0: {}",
            preds.display(),
            missing.len(),
            preview(missing)
        ));
    }
}
