fn main() {
    splinemix::cli::main();
}
