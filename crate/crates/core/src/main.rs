fn main() {
    let code = flowsentry::cli::dispatch(std::env::args_os());
    std::process::exit(code);
}
