use std::fs::File;
use std::io::{self, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use gzpar::io::SharedSource;
use gzpar::{FetcherOptions, GzipIndex, ParallelGzipReader};

/// Parallel gzip decompressor with seek point indexes.
#[derive(Debug, Parser)]
#[command(name = "gzpar", version)]
struct Cli {
    /// Input file, or "-" for standard input.
    input: String,

    /// Decompress (the only mode; accepted for compatibility).
    #[arg(short = 'd', long)]
    decompress: bool,

    /// Write to standard output.
    #[arg(short = 'c', long = "stdout", conflicts_with = "output")]
    to_stdout: bool,

    /// Write to this file.
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,

    /// Worker threads (default: available cores).
    #[arg(short = 'P', long, value_parser = clap::value_parser!(u32).range(1..))]
    parallelism: Option<u32>,

    /// Compressed chunk size in KiB.
    #[arg(long, default_value_t = 4096, value_parser = clap::value_parser!(u64).range(64..))]
    chunk_size: u64,

    /// Read seek points from this index file instead of building them.
    #[arg(long, value_name = "FILE")]
    import_index: Option<PathBuf>,

    /// Write the seek point index to this file.
    #[arg(long, value_name = "FILE")]
    export_index: Option<PathBuf>,

    /// Check the CRC32 of every member.
    #[arg(long)]
    verify: bool,

    /// Start at this decompressed byte offset.
    #[arg(long, value_name = "BYTES")]
    seek: Option<u64>,

    /// Write at most this many bytes.
    #[arg(long, value_name = "BYTES")]
    length: Option<u64>,

    /// Overwrite an existing output file.
    #[arg(short = 'f', long)]
    force: bool,

    #[arg(short = 'q', long, conflicts_with = "verbose")]
    quiet: bool,

    /// Print decoder statistics to standard error.
    #[arg(short = 'v', long)]
    verbose: bool,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<gzpar::Error> for Failure {
    fn from(e: gzpar::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn io_failure(what: &str, e: io::Error) -> Failure {
    // Decoder errors travel through `Read` wrapped in io::Error.
    match e.get_ref().and_then(|inner| inner.downcast_ref::<gzpar::Error>()) {
        Some(inner) => Failure::Runtime(inner.to_string()),
        None => Failure::Runtime(format!("{what}: {e}")),
    }
}

fn output_sink(cli: &Cli) -> Result<Box<dyn Write>, Failure> {
    let path = match (&cli.output, cli.to_stdout || cli.input == "-") {
        (Some(path), _) => path.clone(),
        (None, true) => return Ok(Box::new(io::stdout().lock())),
        (None, false) => match cli.input.strip_suffix(".gz") {
            Some(stem) if !stem.is_empty() => PathBuf::from(stem),
            _ => {
                return Err(Failure::Usage(format!(
                    "{}: unknown suffix, use -c or -o",
                    cli.input
                )))
            }
        },
    };
    if !cli.force && path.exists() && !is_device(&path) {
        return Err(Failure::Usage(format!(
            "{} already exists, use -f to overwrite",
            path.display()
        )));
    }
    let file = File::create(&path).map_err(|e| io_failure(&path.display().to_string(), e))?;
    Ok(Box::new(file))
}

fn is_device(path: &Path) -> bool {
    path.starts_with("/dev/")
}

fn open(cli: &Cli) -> Result<ParallelGzipReader, Failure> {
    let mut options = FetcherOptions {
        chunk_size: (cli.chunk_size as usize) << 10,
        verify_crc: cli.verify,
        ..Default::default()
    };
    if let Some(p) = cli.parallelism {
        options.parallelism = p as usize;
    }
    let source = if cli.input == "-" {
        SharedSource::spool(io::stdin().lock(), gzpar::io::DEFAULT_SPOOL_SEGMENT)?
    } else {
        SharedSource::open(&cli.input)?
    };
    let reader = match &cli.import_index {
        Some(path) => {
            let file = File::open(path).map_err(|e| io_failure(&path.display().to_string(), e))?;
            let index = GzipIndex::import(io::BufReader::new(file))?;
            ParallelGzipReader::with_index(source, options, index)?
        }
        None => ParallelGzipReader::from_source(source, options)?,
    };
    Ok(reader)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut reader = open(cli)?;
    let mut sink = BufWriter::with_capacity(1 << 20, output_sink(cli)?);
    if let Some(offset) = cli.seek {
        reader
            .seek(SeekFrom::Start(offset))
            .map_err(|e| io_failure("seek", e))?;
    }
    let mut remaining = cli.length.unwrap_or(u64::MAX);
    while remaining > 0 {
        let part = reader.read_chunk(remaining.min(usize::MAX as u64) as usize)?;
        if part.is_empty() {
            break;
        }
        sink.write_all(&part).map_err(|e| io_failure("write", e))?;
        remaining -= part.len() as u64;
    }
    sink.flush().map_err(|e| io_failure("write", e))?;

    if let Some(path) = &cli.export_index {
        let file = File::create(path).map_err(|e| io_failure(&path.display().to_string(), e))?;
        let mut file = BufWriter::new(file);
        reader.export_index(&mut file)?;
        file.flush().map_err(|e| io_failure(&path.display().to_string(), e))?;
    }
    if cli.verbose {
        let stats = reader.stats();
        eprintln!("{stats:#?}");
        if let Some(size) = reader.size() {
            eprintln!("decompressed size: {size}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("gzpar: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            if !cli.quiet {
                eprintln!("gzpar: {}: {msg}", cli.input);
            }
            ExitCode::from(1)
        }
    }
}
