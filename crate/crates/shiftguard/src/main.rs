fn main() {
    std::process::exit(shiftguard::cli::main_entry());
}
