fn main() {
    std::process::exit(welsch_regression::cli::cli_main(std::env::args_os()));
}
