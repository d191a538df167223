fn main() {
    std::process::exit(fcfs_matching::cli::main_entry());
}
