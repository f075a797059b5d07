fn main() {
    // placeholder until the CLI lands
    eprintln!("regmg: not yet wired");
    std::process::exit(2);
}
