//! Normalizes comments given as arguments, or one per stdin line.
//!
//! ```text
//! cargo run -p codemix --example normalize -- "EATING Biryani @anna http://x.io 4ever!!"
//! ```

use std::io::BufRead;

use codemix::textprep::{normalize, strip_noise, LemmaLexicon};

fn main() {
    let lexicon = LemmaLexicon::english();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let lines: Vec<String> = if args.is_empty() {
        std::io::stdin().lock().lines().map_while(Result::ok).collect()
    } else {
        args
    };
    for raw in lines {
        println!("{raw:?}");
        println!("  stripped   {:?}", strip_noise(&raw));
        println!("  normalized {:?}", normalize(&raw, &lexicon).as_str());
    }
}
