fn main() {
    let code = asc_lens_core::cli::run(std::env::args_os());
    std::process::exit(code);
}
