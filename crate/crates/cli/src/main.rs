fn main() {
    match ctxprop_cli::run(std::env::args_os()) {
        Ok(report) => println!("{}", report.trim_end()),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
