use std::collections::HashSet;
use std::io::Write;

use stylefusion::corpus::{
    augment_prompt, char_samples, generate_corpus, load_manifest, render, speaker_bank, style_bank, write_manifest, CorpusParams,
    PromptLexicon, PromptStrategy, SignalParams, StyleSpec, MANIFEST_FILE,
};

#[test]
fn generation_is_bit_identical_across_runs() {
    let a = generate_corpus(&CorpusParams::new(1, 1, 1, 0));
    let b = generate_corpus(&CorpusParams::new(1, 1, 1, 0));
    assert_eq!(a.utterances.len(), 1);
    assert_eq!(a.utterances[0].spectrogram.data(), b.utterances[0].spectrogram.data());
    assert_eq!(a.manifest, b.manifest);
}

#[test]
fn counts_per_cell() {
    let c = generate_corpus(&CorpusParams::new(6, 4, 10, 7));
    assert_eq!(c.manifest.records.len(), 240);
    let cells: HashSet<(u32, u32)> = c.utterances.iter().map(|u| (u.speaker_id, u.style_id)).collect();
    assert_eq!(cells.len(), 24);
    for cell in &cells {
        assert_eq!(c.utterances.iter().filter(|u| (u.speaker_id, u.style_id) == *cell).count(), 10);
    }
    let (train, held) = c.split(2);
    assert_eq!(train.len(), 192);
    assert_eq!(held.len(), 48);
}

#[test]
fn spectrograms_are_valid() {
    let c = generate_corpus(&CorpusParams::new(2, 4, 2, 1));
    for u in &c.utterances {
        assert_eq!(u.spectrogram.cols(), 513);
        assert!(u.spectrogram.rows() >= u.text.chars().count());
        assert!(u.spectrogram.data().iter().all(|&x| x >= 0.0 && x.is_finite()));
        assert_eq!(u.sample_rate, 16_000);
    }
}

#[test]
fn rate_factor_scales_frame_count() {
    let speaker = &speaker_bank(1, 0, 3)[0];
    let base = &style_bank(1)[0];
    let slow = StyleSpec { style_id: 1, rate_factor: 2.0, ..base.clone() };
    let normal = StyleSpec { rate_factor: 1.0, ..base.clone() };
    let params = SignalParams::default();
    for (seed, text) in [(1u64, "the cat sat down"), (2, "leave it on the desk"), (3, "count to ten")] {
        let a = render(text, speaker, &normal, seed, &params).rows() as f64;
        let b = render(text, speaker, &slow, seed + 100, &params).rows() as f64;
        let ratio = b / a;
        assert!((ratio - 2.0).abs() <= 0.2, "{text}: ratio {ratio}");
    }
}

#[test]
fn every_character_gets_at_least_one_hop() {
    let style = StyleSpec { rate_factor: 0.5, ..style_bank(1)[0].clone() };
    let params = SignalParams::default();
    let mut rng = rand::rng();
    let lens = char_samples("a, b", &style, &params, &mut rng);
    assert!(lens.iter().all(|&l| l >= params.hop));
}

#[test]
fn prompt_draws_cover_lexicon() {
    let lex = PromptLexicon::builtin();
    let entry = lex.get("happy").unwrap();
    let kw: HashSet<String> = (0..1000).map(|s| augment_prompt("happy", &lex, PromptStrategy::Keyword, s).unwrap()).collect();
    assert_eq!(kw, entry.keywords.iter().cloned().collect());
    let full: HashSet<String> = (0..1000).map(|s| augment_prompt("happy", &lex, PromptStrategy::FullSentence, s).unwrap()).collect();
    assert_eq!(full, entry.full_sentences.iter().cloned().collect());
    let templ: HashSet<String> = (0..1000).map(|s| augment_prompt("happy", &lex, PromptStrategy::Template, s).unwrap()).collect();
    assert_eq!(templ.len(), entry.keywords.len() * entry.templates.len());
}

#[test]
fn prompts_only_use_own_keywords() {
    let lex = PromptLexicon::builtin();
    for name in lex.styles.keys() {
        let foreign: Vec<&String> = lex.styles.iter().filter(|(n, _)| *n != name).flat_map(|(_, p)| &p.keywords).collect();
        for strategy in PromptStrategy::ALL {
            for seed in 0..200 {
                let p = augment_prompt(name, &lex, strategy, seed).unwrap();
                let words: HashSet<&str> = p.split(|c: char| !c.is_ascii_alphabetic()).filter(|w| !w.is_empty()).collect();
                for k in &foreign {
                    assert!(!words.contains(k.as_str()), "prompt `{p}` for {name} contains foreign keyword {k}");
                }
            }
        }
    }
}

#[test]
fn augment_is_deterministic() {
    let lex = PromptLexicon::builtin();
    for strategy in PromptStrategy::ALL {
        assert_eq!(augment_prompt("sad", &lex, strategy, 42).unwrap(), augment_prompt("sad", &lex, strategy, 42).unwrap());
    }
}

#[test]
fn empty_manifest_loads_empty() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join(MANIFEST_FILE);
    std::fs::File::create(&p).unwrap();
    let m = load_manifest(&p).unwrap();
    assert!(m.records.is_empty());
}

#[test]
fn malformed_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join(MANIFEST_FILE);
    let mut f = std::fs::File::create(&p).unwrap();
    let ok = r#"{"id":"a","text":"hi","speaker_id":0,"style_id":0,"prompt":"plain"}"#;
    writeln!(f, "{ok}\n{ok}\n{{\"id\": 3,").unwrap();
    let err = load_manifest(&p).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn dangling_ids_named() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusParams::new(1, 1, 1, 0));
    let mut manifest = corpus.manifest.clone();
    manifest.records[0].speaker_id = 17;
    write_manifest(dir.path(), &manifest, None).unwrap();
    let err = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap_err().to_string();
    assert!(err.contains("17"), "{err}");

    manifest.records[0].speaker_id = 0;
    manifest.records[0].style_id = 9;
    write_manifest(dir.path(), &manifest, None).unwrap();
    let err = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap_err().to_string();
    assert!(err.contains("style id 9"), "{err}");
}

#[test]
fn generated_manifest_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusParams::new(2, 2, 2, 5));

    let lazy = write_manifest(dir.path(), &corpus.manifest, None).unwrap();
    let loaded = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, lazy);
    assert_eq!(loaded.materialize(dir.path()).unwrap(), corpus.utterances);

    let cached = write_manifest(dir.path(), &corpus.manifest, Some(&corpus.utterances)).unwrap();
    let loaded = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, cached);
    assert!(loaded.records.iter().all(|r| r.audio.is_some()));
    assert_eq!(loaded.materialize(dir.path()).unwrap(), corpus.utterances);
}
