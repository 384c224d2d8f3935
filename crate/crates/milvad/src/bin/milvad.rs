fn main() {
    std::process::exit(milvad::cli::main_with(std::env::args_os()));
}
