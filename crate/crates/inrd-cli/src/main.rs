fn main() {
    // placeholder while the library comes up; the real CLI lands last
    eprintln!("inrd: not yet wired");
    std::process::exit(1);
}
