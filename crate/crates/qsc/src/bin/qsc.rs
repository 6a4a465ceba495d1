fn main() {
    std::process::exit(qsc::cli::main_entry());
}
