fn main() {
    std::process::exit(outfitsynth::cli::run(std::env::args_os()));
}
