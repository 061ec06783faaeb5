//! Throwaway diagnostic (deleted before ship).
use voxalign_core::corpus::presets::preset_desk;
use voxalign_core::corpus::Split;
use voxalign_core::encoders::{volume_to_input, VisionStage1, TextStage1};
use voxalign_core::eval::auc;
use voxalign_core::schema::schema_desk_8;
use voxalign_core::training::{Dataset, LoadOptions};
use std::path::Path;

#[test]
#[ignore]
fn stage1_probe_auc() {
    let dir = Path::new("/tmp/vx-desk");
    let vision = VisionStage1::load(&dir.join("vbig/vision.ckpt")).unwrap();
    let text = TextStage1::load(&dir.join("tbig/text.ckpt")).unwrap();
    let schema = schema_desk_8();
    let ds = Dataset::load(
        &dir.join("corpus4/manifest.jsonl"),
        &preset_desk(),
        &schema,
        &text.tokenizer,
        96,
        &LoadOptions::default(),
    )
    .unwrap();
    for (name, split) in [("val", Split::Val), ("test", Split::Test)] {
        let idx = ds.indices(split);
        let mut aucs_v = Vec::new();
        let mut aucs_t = Vec::new();
        for c in 0..8 {
            let mut sv = Vec::new();
            let mut st = Vec::new();
            let mut gold = Vec::new();
            for &i in &idx {
                let lab = ds.studies[i].labels[c];
                if lab == -1 { continue; }
                let (crop, _) = ds.eval_crop(i);
                let (_, e) = vision.encoder.forward(&volume_to_input(&crop)).unwrap();
                sv.push(vision.classifier.forward(&e)[c]);
                let te = text.encoder.forward(&ds.studies[i].tokens).unwrap();
                st.push(text.classifier.forward(&te)[c]);
                gold.push(lab == 1);
            }
            aucs_v.push(auc(&sv, &gold).unwrap_or(f64::NAN));
            aucs_t.push(auc(&st, &gold).unwrap_or(f64::NAN));
        }
        let mv: f64 = aucs_v.iter().sum::<f64>() / 8.0;
        let mt: f64 = aucs_t.iter().sum::<f64>() / 8.0;
        println!("{name}: vision cls AUC {:?} macro {mv:.4}", aucs_v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>());
        println!("{name}: text   cls AUC {:?} macro {mt:.4}", aucs_t.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>());
    }
}
