//! Writes the bundled contract fixtures as IR JSON, plus a full attack
//! scenario file, into a directory (default `fixtures/`). Starting points
//! for `batchsim rewrite` and `batchsim attack --scenario`.

use batchsim::rewriter::fixtures;

fn main() -> std::io::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixtures".to_string());
    let dir = std::path::PathBuf::from(dir);
    std::fs::create_dir_all(&dir)?;

    for (name, contract) in [
        ("erc20", fixtures::erc20()),
        ("htlc", fixtures::htlc()),
        ("exchange", fixtures::exchange()),
    ] {
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, contract.to_json())?;
        println!("wrote {}", path.display());
    }

    let scenario = "\
# one attack per line: kind,target-index
forge,0
r1,1
r2,2
r3,3
r4,0
omit,1
impersonate,2
";
    let path = dir.join("attacks.txt");
    std::fs::write(&path, scenario)?;
    println!("wrote {}", path.display());
    Ok(())
}
