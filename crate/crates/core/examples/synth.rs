//! Generate the default synthetic bilingual corpus and describe it. With a
//! directory argument the corpus is also written to disk.
//!
//! ```text
//! cargo run --release --example synth [out_dir]
//! ```

use codeswitch::synth::{generate_corpus, write_corpus, Condition, CorpusConfig, Split};

fn main() -> codeswitch::Result<()> {
    let corpus = generate_corpus(&CorpusConfig::default())?;
    for c in Condition::ALL {
        for s in Split::ALL {
            let utts = corpus.select(c, s);
            let frames: usize = utts.iter().map(|u| u.n_frames).sum();
            println!("{:<7} {:<5} {:>4} utterances {:>6} frames", c.name(), s.name(), utts.len(), frames);
        }
    }
    let cs = corpus.select(Condition::CodeSwitched, Split::Train);
    let embedded: usize = cs.iter().map(|u| u.embedded_frame_count()).sum();
    let total: usize = cs.iter().map(|u| u.n_frames).sum();
    println!("embedded frame fraction in cs train: {:.3}", embedded as f64 / total as f64);
    for u in cs.iter().take(3) {
        let langs: String = u.frame_lang.iter().map(|&l| if l == 0 { 'a' } else { 'B' }).collect();
        println!("{} {:?}\n    {langs}", u.id, u.transcript);
    }
    println!("merged table: {} entries", corpus.merged_vocab().len());
    if let Some(dir) = std::env::args().nth(1) {
        write_corpus(&corpus, &dir)?;
        println!("wrote {dir}");
    }
    Ok(())
}
