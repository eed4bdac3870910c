fn main() {
    // CLI wiring lands with the cli module.
    eprintln!("lvgen: not yet wired");
    std::process::exit(2);
}
