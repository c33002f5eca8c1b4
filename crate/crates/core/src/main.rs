fn main() {
    std::process::exit(cnn_scene_char::cli::run(std::env::args_os()));
}
