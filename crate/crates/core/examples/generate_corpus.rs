//! Generates the synthetic corpus and prints what it contains. With a
//! directory argument the manifest, registry and spectrograms are written
//! there.

use std::path::Path;

use stylefusion::corpus::{generate_corpus, write_manifest, CorpusParams};

fn main() {
    let corpus = generate_corpus(&CorpusParams::new(6, 4, 10, 7));
    println!("{} utterances", corpus.utterances.len());
    for s in corpus.speakers() {
        let formants: Vec<String> = s.formants.iter().map(|f| format!("{f:.0}")).collect();
        println!("speaker {}: f0 {:.1} Hz, formants {} Hz, tilt {:.2}", s.speaker_id, s.f0_base, formants.join("/"), s.timbre_tilt);
    }
    for s in corpus.styles() {
        let items: Vec<_> = corpus.utterances.iter().filter(|u| u.style_id == s.style_id).collect();
        let frames: usize = items.iter().map(|u| u.spectrogram.rows()).sum();
        let chars: usize = items.iter().map(|u| u.text.chars().count()).sum();
        println!("style {:<8} {:?}: {:.2} frames per character", s.style_name, s.valence, frames as f64 / chars as f64);
    }
    let u = &corpus.utterances[0];
    println!(
        "first utterance {}: \"{}\" / prompt \"{}\" / {} x {} spectrogram",
        u.id,
        u.text,
        u.prompt,
        u.spectrogram.rows(),
        u.spectrogram.cols()
    );
    for w in &corpus.warnings {
        println!("note: {w}");
    }
    if let Some(dir) = std::env::args().nth(1) {
        write_manifest(Path::new(&dir), &corpus.manifest, Some(&corpus.utterances)).expect("writable directory");
        println!("wrote {dir}");
    }
}
