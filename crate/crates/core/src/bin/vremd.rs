fn main() {
    let args: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let code = vremd::cli::run(&args, &mut std::io::stdout());
    std::process::exit(code);
}
