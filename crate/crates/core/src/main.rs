use graph_pretrain::cli;

fn main() {
    std::process::exit(cli::run());
}
