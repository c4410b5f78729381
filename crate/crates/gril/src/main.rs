fn main() {
    // CLI wiring lands with the report module.
    eprintln!("gril: not yet wired");
    std::process::exit(2);
}
