//! Throwaway diagnostic (deleted before ship).

use voxalign_core::corpus::presets::preset_desk;
use voxalign_core::corpus::synth::{synth_corpus, write_corpus, SynthParams};
use voxalign_core::corpus::Split;
use voxalign_core::encoders::{split_words, Tokenizer};
use voxalign_core::runcfg::RunConfig;
use voxalign_core::schema::schema_desk_8;
use voxalign_core::training::{run_stage1_text, Dataset, LoadOptions};

#[test]
#[ignore]
fn diagnose_text_learning() {
    let dir = tempfile::tempdir().unwrap();
    let schema = schema_desk_8();
    let params = SynthParams::default(); // 500 studies
    let studies = synth_corpus(1, &schema, &params).unwrap();
    write_corpus(dir.path(), &studies, &schema).unwrap();
    let cfg = RunConfig::desk_default(1);
    let tokenizer = Tokenizer::build(
        studies
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| s.report.as_str()),
    );
    println!("vocab size {}", tokenizer.vocab_size());
    for name in &schema.categories {
        let ids = tokenizer.encode(name, 96);
        println!("category {name:?} -> tokens {ids:?}");
    }
    let ds = Dataset::load(
        &dir.path().join("manifest.jsonl"),
        &preset_desk(),
        &schema,
        &tokenizer,
        cfg.text.max_tokens,
        &LoadOptions::default(),
    )
    .unwrap();

    // Bag-of-words logistic regression floor: feature = counts of each vocab
    // word, 8 independent logistic regressions via plain gradient descent.
    let v = tokenizer.vocab_size();
    let train: Vec<usize> = ds.indices(Split::Train);
    let val: Vec<usize> = ds.indices(Split::Val);
    let feats: Vec<Vec<f64>> = ds
        .studies
        .iter()
        .map(|s| {
            let mut f = vec![0.0; v];
            for w in split_words(&s.report) {
                f[tokenizer.word_id(&w) as usize] += 1.0;
            }
            f
        })
        .collect();
    let mut w = vec![vec![0.0f64; v + 1]; 8];
    let lr = 0.5;
    for _epoch in 0..200 {
        for c in 0..8 {
            let mut grad = vec![0.0f64; v + 1];
            let mut n = 0.0;
            for &i in &train {
                let lab = ds.studies[i].labels[c];
                if lab == -1 {
                    continue;
                }
                let y = lab as f64;
                let z: f64 =
                    feats[i].iter().zip(&w[c][..v]).map(|(a, b)| a * b).sum::<f64>() + w[c][v];
                let p = 1.0 / (1.0 + (-z).exp());
                for (g, x) in grad.iter_mut().zip(&feats[i]) {
                    *g += (p - y) * x;
                }
                grad[v] += p - y;
                n += 1.0;
            }
            for (wi, g) in w[c].iter_mut().zip(&grad) {
                *wi -= lr * g / n;
            }
        }
    }
    let mut bow_val_bce = 0.0;
    let mut cells = 0usize;
    for &i in &val {
        for c in 0..8 {
            let lab = ds.studies[i].labels[c];
            if lab == -1 {
                continue;
            }
            let y = lab as f64;
            let z: f64 =
                feats[i].iter().zip(&w[c][..v]).map(|(a, b)| a * b).sum::<f64>() + w[c][v];
            bow_val_bce += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            cells += 1;
        }
    }
    println!("bag-of-words val bce floor: {:.4}", bow_val_bce / cells as f64);

    // Transformer stage-1
    let mut tc = cfg.training.text_pretrain.clone();
    tc.epochs = 12;
    let out = run_stage1_text(&ds, &tokenizer, &cfg.text, &tc).map_err(|a| a.error).unwrap();
    println!("transformer val bce: {:?}", out.trace.values("val", "bce"));

    // inspect a few val predictions
    let m = &out.model;
    for &i in val.iter().take(4) {
        let e = m.encoder.forward(&ds.studies[i].tokens).unwrap();
        let logits = m.classifier.forward(&e);
        let probs: Vec<f64> = logits.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        println!(
            "study {}: labels {:?} probs {:?}",
            ds.studies[i].id,
            ds.studies[i].labels,
            probs.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>()
        );
        println!("  report: {}", ds.studies[i].report);
    }
}
