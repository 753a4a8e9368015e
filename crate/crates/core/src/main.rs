fn main() {
    std::process::exit(tracklet_reid::cli::run(std::env::args_os()));
}
