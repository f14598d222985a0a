use clap::Parser;
use soboltrace::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let code = e.exit_code();
        eprintln!("{}", serde_json::json!({ "error": e.to_string(), "code": code }));
        std::process::exit(code);
    }
}
