//! Builds `tests/c/smoke.c` against the generated header and the static
//! library, then runs it on a fresh checkpoint.

use std::path::PathBuf;
use std::process::Command;

use somnoflow::data::StandardizationStats;
use somnoflow::model::{Model, ModelConfig};
use somnoflow::training::{AdamState, Checkpoint, CheckpointMeta};

/// `target/<profile>`, where cargo places the static library.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|deps| deps.parent()).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = artifact_dir().join("libsomnoflow_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let ckpt = Checkpoint {
        model: Model::new(ModelConfig::tiny(), 3).unwrap(),
        standardization: StandardizationStats { mean: 62.0, std: 7.0 },
        optimizer: AdamState::default(),
        meta: CheckpointMeta {
            epoch: 0,
            val_acc: None,
            seed: 3,
        },
    };
    let ckpt_path = dir.path().join("model.ckpt");
    ckpt.save(&ckpt_path).unwrap();

    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "compiling smoke.c failed");

    let out = Command::new(&exe).arg(&ckpt_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("40 epochs staged"), "{stdout}");
}
