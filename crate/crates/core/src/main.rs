fn main() {
    std::process::exit(colab_forge::cli::run(std::env::args_os()));
}
