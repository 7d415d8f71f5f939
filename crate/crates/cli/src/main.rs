use clap::Parser;

fn main() -> anyhow::Result<()> {
    memcart_cli::run(memcart_cli::Cli::parse())
}
