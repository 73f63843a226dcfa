//! Reference child process for the external backend: answers every request
//! with the identity estimate over stdin/stdout.

use std::io::{self, BufReader, BufWriter};
use std::process::ExitCode;

use clap::Parser;
use gridsynth_core::backend::protocol::{serve, VERSION};
use gridsynth_core::backend::IdentityDenoiser;

#[derive(Parser)]
#[command(
    name = "gridsynth-echo",
    version,
    about = "Identity denoiser speaking the backend protocol"
)]
struct Args {
    /// Protocol version to report in the handshake.
    #[arg(long, default_value_t = VERSION)]
    advertise_version: u32,
    /// Exit without replying after this many requests.
    #[arg(long)]
    exit_after: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut reader = BufReader::new(stdin.lock());
    let mut writer = BufWriter::new(stdout.lock());
    match serve(
        &IdentityDenoiser::new(),
        &mut reader,
        &mut writer,
        args.advertise_version,
        args.exit_after,
    ) {
        Ok(stats) => {
            eprintln!(
                "gridsynth-echo: served {} requests ({} rejected)",
                stats.requests, stats.errors
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gridsynth-echo: {e}");
            ExitCode::FAILURE
        }
    }
}
