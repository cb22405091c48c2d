//! Writes the bundled head-preset configuration to stdout (or a path).

fn main() {
    let preset = licp::pipeline::head_preset();
    let json = preset.to_json_pretty();
    match std::env::args().nth(1) {
        Some(path) => std::fs::write(path, json + "\n").expect("write preset"),
        None => println!("{json}"),
    }
}
