fn main() {
    std::process::exit(bht_arima::cli::main_with_args(std::env::args_os()));
}
