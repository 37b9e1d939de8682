use clap::Parser;
use latthiggs::cli::{main_with, Cli};
use latthiggs::Error;

fn main() {
    match main_with(Cli::parse()) {
        Ok(()) => {}
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
