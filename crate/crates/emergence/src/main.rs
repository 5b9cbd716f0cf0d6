fn main() {
    std::process::exit(emergence::cli::main_entry());
}
