//! Writes per-utterance fusion features of the last flow layer at the
//! input, post-speaker and post-style sites to `embeddings.tsv`, for
//! plotting. Optional argument: checkpoint.

use stylefusion::eval::{export_embeddings, Site};

mod support;

fn main() {
    let (cfg, model, store, data) = support::model_and_data();
    let dump = export_embeddings(&model, &store, &data.corpus.utterances, &Site::ALL).unwrap();
    let path = std::path::Path::new("embeddings.tsv");
    dump.write_tsv(path, &format!("config_hash {} seed {}", cfg.hash(), cfg.seed)).unwrap();
    for site in Site::ALL {
        let (vectors, speakers, _) = dump.site(site);
        println!("{:<13} {} rows of dim {}, {} speakers", site.name(), vectors.len(), vectors[0].len(), speakers.iter().max().unwrap() + 1);
    }
    println!("wrote {}", path.display());
}
