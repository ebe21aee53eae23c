fn main() {
    std::process::exit(pipetree_cli::run(std::env::args()));
}
