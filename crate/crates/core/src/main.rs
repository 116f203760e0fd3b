fn main() {
    std::process::exit(rankone_rmt::cli::run(std::env::args_os()));
}
