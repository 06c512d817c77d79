//! Models and datasets on disk: `DCM1` checkpoints and labeled CSV files.

use dcm::datagen::{gen_standard_ood, BenchmarkKind, BenchmarkSpec, LabeledDataset};
use dcm::netcore::{init_model, load_checkpoint, save_checkpoint, Activation};

fn main() -> dcm::Result<()> {
    let dir = std::env::temp_dir().join("dcm-checkpoint-example");
    let spec = BenchmarkSpec {
        n_test: 10,
        ..BenchmarkSpec::canonical(BenchmarkKind::StandardOod)
    };
    let splits = gen_standard_ood(&spec)?;
    let data_path = dir.join("test.csv");
    std::fs::create_dir_all(&dir).map_err(|e| dcm::DcmError::Io {
        path: dir.clone(),
        source: e,
    })?;
    splits.test.write_csv(&data_path)?;
    let reloaded = LabeledDataset::read_csv(&data_path, Some(spec.n_classes))?;
    assert_eq!(reloaded, splits.test);
    println!(
        "{}",
        splits
            .test
            .to_csv_string()
            .lines()
            .take(3)
            .collect::<Vec<_>>()
            .join("\n")
    );

    let model = init_model(&[spec.dim, 16, spec.n_classes], Activation::Tanh, 5)?;
    let ckpt = dir.join("model.ckpt");
    save_checkpoint(&model, &ckpt)?;
    let back = load_checkpoint(&ckpt)?;
    assert_eq!(back, model);
    let a = model.predict_proba(reloaded.features())?;
    let b = back.predict_proba(reloaded.features())?;
    assert_eq!(a, b);
    println!(
        "\n{} parameters, layers {:?}, {} bytes on disk",
        back.n_params(),
        back.layer_dims(),
        std::fs::metadata(&ckpt).map(|m| m.len()).unwrap_or(0)
    );
    Ok(())
}
