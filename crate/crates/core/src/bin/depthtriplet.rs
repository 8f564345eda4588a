fn main() {
    std::process::exit(depthtriplet::cli::main_with_args(std::env::args_os()));
}
