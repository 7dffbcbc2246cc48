//! Builds a C program against the generated header and the static library
//! and checks its output against the same calls made from Rust.

use std::path::{Path, PathBuf};
use std::process::Command;

use rqgmm::{encode, evaluate, fit, EmbeddingMatrix, FitConfig, Method};

const N: usize = 400;
const D: usize = 3;

/// Same lattice as `tests/c/smoke.c`.
fn lattice() -> EmbeddingMatrix {
    let mut data = vec![0.0; N * D];
    for i in 0..N {
        let blob = i % 4;
        for j in 0..D {
            let jitter = ((i * 7 + j * 13) % 11) as f64 / 100.0;
            data[i * D + j] = 10.0 * ((blob >> (j % 2)) & 1) as f64 + jitter;
        }
    }
    EmbeddingMatrix::new(data, N, D).unwrap()
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_agrees_with_rust() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // `cargo test` links the rlib only, so build the static library here.
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let mut cmd = Command::new(cargo);
    cmd.args(["build", "--quiet", "-p", "rqgmm-ffi", "--lib", "--target-dir"])
        .arg(target_dir().parent().unwrap());
    if target_dir().ends_with("release") {
        cmd.arg("--release");
    }
    let status = cmd
        .current_dir(manifest)
        .status()
        .unwrap();
    assert!(status.success(), "building the static library failed");
    let lib = target_dir().join("librqgmm_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let build = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap_or_else(|e| panic!("cannot run C compiler {cc:?}: {e}"));
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));

    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "exit {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();

    let data = lattice();
    let model = fit(&data, Method::RqGmm, 2, 4, &FitConfig::default()).unwrap();
    let q = evaluate(&data, &model).unwrap();
    let mut expected = format!(
        "rmse {} util {} {}\n",
        fmt17(q.rmse),
        fmt17(q.utilization_per_level[0]),
        fmt17(q.utilization_per_level[1])
    );
    for row in data.rows().take(8) {
        let id = encode(row, &model).unwrap();
        expected.push_str(&format!("{} {}\n", id.codes()[0], id.codes()[1]));
    }
    assert_eq!(stdout, expected);
}

/// Mirrors printf's `%.17g` for the values this test prints.
fn fmt17(v: f64) -> String {
    let s = format!("{v:.16e}");
    let (mant, exp) = s.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..17).contains(&exp) {
        let digits = (16 - exp).max(0) as usize;
        let fixed = format!("{v:.digits$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}
