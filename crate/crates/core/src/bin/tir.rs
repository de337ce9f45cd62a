fn main() {
    tir::cli::main();
}
