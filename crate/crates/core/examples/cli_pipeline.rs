//! The command line driven from code: gen, fuse, eval, fit-prior, compare and
//! sweep into a scratch directory.
//!
//! `cargo run --release --example cli_pipeline -- [OUT_DIR]`

use clap::Parser;
use relfuse::cli::{run as run_cli, Cli};
use relfuse::Result;

fn relfuse(args: &[&str]) -> Result<()> {
    println!("$ relfuse {}", args.join(" "));
    run_cli(Cli::parse_from(std::iter::once("relfuse").chain(args.iter().copied())))
}

fn main() -> Result<()> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| relfuse::Error::Io { path: "tempdir".into(), source: e })?;
    let root = args.first().map_or_else(|| tmp.path().to_path_buf(), Into::into);
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let (train, data, pred) = (p("train"), p("data"), p("pred"));

    relfuse(&["gen", "--scenes", "200", "--seed", "1", "--out", &train])?;
    relfuse(&["gen", "--scenes", "40", "--seed", "2", "--out", &data])?;
    relfuse(&["fuse", "--in", &data, "--out", &pred])?;
    relfuse(&["eval", "--pred", &pred, "--gt", &data, "--out", &p("eval/report.json")])?;
    relfuse(&["fit-prior", "--in", &train, "--components", "3", "--out", &p("priors.json")])?;
    relfuse(&[
        "compare",
        "--in",
        &data,
        "--methods",
        "unary,fused,crf",
        "--priors",
        &p("priors.json"),
        "--out",
        &p("compare.csv"),
    ])?;
    relfuse(&["sweep", "--in", &data, "--param", "lambda", "--values", "0.1,1,10", "--out", &p("sweep.csv")])?;

    let table = std::fs::read_to_string(root.join("compare.csv"))
        .map_err(|e| relfuse::Error::Io { path: root.join("compare.csv"), source: e })?;
    print!("{table}");
    let mut files: Vec<String> = std::fs::read_dir(root.join("eval"))
        .map_err(|e| relfuse::Error::Io { path: root.join("eval"), source: e })?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    files.sort();
    println!("eval outputs: {}", files.join(", "));
    Ok(())
}
