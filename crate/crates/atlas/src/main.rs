fn main() {
    std::process::exit(snic_atlas::run(std::env::args().skip(1)));
}
