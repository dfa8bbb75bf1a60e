//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use aisc_core::cli;
use aisc_core::data::{assign_folds, generate_synthetic, shuffle_labels, SynthConfig};
use aisc_core::eval::{ablation, cross_validate};
use aisc_core::gradcheck::{self, GradcheckConfig};
use aisc_core::grassmann::spectrum_gap;
use aisc_core::network::TrainConfig;
use aisc_core::{Aisc, Error};
use common::*;
use rand::Rng;

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit: Duration) -> std::result::Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.1?}, limit {limit:?}"))
    }
}

fn affine_invariance() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let m = if i % 2 == 0 { 5 } else { 68 };
        let s = random_shape(&mut r, m);
        let a = random_invertible_2x2(&mut r);
        let moved = s.transform(&a).unwrap();
        for centering in [true, false] {
            let f = Aisc::new(centering).forward(&s, &moved).map_err(|e| e.to_string())?;
            worst = worst.max(f.frobenius_norm());
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    ensure(
        worst <= 1e-8,
        format!("1000 pairs, m in {{5, 68}}, max ||B||_F = {worst:.2e} in {:.2?}", start.elapsed()),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let summary = gradcheck::run(&GradcheckConfig::default()).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(60))?;
    let denominator = summary.matching_denominator();
    let msg = format!(
        "{} trials: svd {:.2e}, projector {:.2e}, path diff {:.2e}, min gap {:.2e}, matching denominator {:?} (sum form err {:.2e}) in {:.1?}",
        summary.trials,
        summary.svd_max_rel_err,
        summary.projector_max_rel_err,
        summary.path_max_rel_diff,
        summary.min_spectrum_gap,
        denominator,
        summary.sum_denominator_max_rel_err,
        start.elapsed()
    );
    ensure(summary.passed() && summary.trials == 100 && denominator.is_some(), msg)
}

fn projector_and_feature_invariants() -> Outcome {
    let mut r = rng(3);
    let (mut sym, mut idem, mut tr, mut b_sym, mut b_tr, mut pairing, mut bound) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut checked = 0;
    for _ in 0..300 {
        let m = r.gen_range(4..70);
        let centering = r.gen_bool(0.5);
        let aisc = Aisc::new(centering);
        let (s0, s1) = (random_shape(&mut r, m), random_shape(&mut r, m));
        let Ok((f, d0, d1)) = aisc.forward_with_decompositions(&s0, &s1) else {
            continue;
        };
        checked += 1;
        for p in [&d0.projector, &d1.projector] {
            sym = sym.max(p.asymmetry().unwrap());
            idem = idem.max(p.matmul(p).unwrap().sub(p).unwrap().max_abs());
            tr = tr.max((p.trace() - 2.0).abs());
        }
        b_sym = b_sym.max(f.b.asymmetry().unwrap());
        b_tr = b_tr.max(f.b.trace().abs());
        let eig = aisc.geodesic_info(&f, &d0, &d1).unwrap().geodesic_generator_eigenvalues;
        bound = bound.max(eig.iter().map(|l| l.abs()).fold(0.0, f64::max) - 1.0);
        for i in 0..eig.len() {
            pairing = pairing.max((eig[i] + eig[eig.len() - 1 - i]).abs());
        }
    }
    let msg = format!(
        "{checked} pairs: P asym {sym:.1e}, P^2-P {idem:.1e}, tr-2 {tr:.1e}; B asym {b_sym:.1e}, tr {b_tr:.1e}, |lambda|-1 {bound:.1e}, pairing {pairing:.1e}"
    );
    ensure(
        checked >= 250
            && sym <= 1e-12
            && idem <= 1e-9
            && tr <= 1e-9
            && b_sym <= 1e-12
            && b_tr <= 1e-9
            && bound <= 1e-9
            && pairing <= 1e-9,
        msg,
    )
}

/// Criteria 4 and 5 share one score-fusion cross-validation on the default data.
fn learning_and_ablation() -> (Outcome, Outcome) {
    let start = Instant::now();
    let cfg = SynthConfig::default();
    let mut samples = generate_synthetic(&cfg).unwrap();
    assign_folds(&mut samples, 5, cfg.seed).unwrap();
    let train = TrainConfig::default();
    let table = ablation(&samples, &train, 5, 1).unwrap();
    let fused = table.get("fused").unwrap();
    let control = cross_validate(&shuffle_labels(&samples, 99), &train, 5, 1).unwrap().mean_accuracy;
    let elapsed = start.elapsed();

    let learning = format!(
        "{} families, 5-fold fused {fused:.4}, random-label control {control:.4} in {elapsed:.1?}",
        cfg.family_count
    );
    let learning = ensure(
        fused >= 0.90 && (0.4..=0.6).contains(&control) && elapsed < Duration::from_secs(600),
        learning,
    );

    let app = table.get("appearance-only").unwrap();
    let shape = table.get("shape-only").unwrap();
    let ablation = ensure(
        fused >= app.max(shape) - 0.02 && app >= 0.65 && shape >= 0.65,
        format!("appearance-only {app:.4}, shape-only {shape:.4}, fused {fused:.4}"),
    );
    (learning, ablation)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |x: &std::path::Path| x.to_str().unwrap().to_string();
    let data = dir.path().join("data");
    let run = |args: &[String]| {
        let mut sink = Vec::new();
        let argv = std::iter::once("aisc".to_string()).chain(args.iter().cloned());
        cli::run(argv, &mut sink, &mut Vec::new())
    };
    let code = run(&["synth".into(), "--out".into(), p(&data), "--families".into(), "60".into()]);
    if code != 0 {
        return Err(format!("synth exited {code}"));
    }
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        for cmd in ["train", "eval"] {
            let code = run(&[
                cmd.into(),
                "--data".into(),
                p(&data),
                "--out".into(),
                p(&out),
                "--seed".into(),
                "11".into(),
                "--epochs".into(),
                "5".into(),
            ]);
            if code != 0 {
                return Err(format!("{cmd} exited {code}"));
            }
        }
        files.push(
            ["model.ckpt", "report.txt", "report.json"]
                .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    ensure(files[0] == files[1], "train + eval twice with seed 11: checkpoint and reports byte-identical".into())
}

fn degeneracy() -> Outcome {
    let mut r = rng(7);
    let aisc = Aisc::default();
    let mut worst = 0.0f64;
    for m in [5, 8, 12] {
        let s0 = repeated_singular_value_shape(&mut r, m, 3.0);
        let s1 = random_shape(&mut r, m);
        let (_, d0, d1) = aisc.forward_with_decompositions(&s0, &s1).map_err(|e| e.to_string())?;
        let g = random_matrix(&mut r, m, m);
        let up = g.add(&g.transpose()).unwrap();
        match aisc.backward_svd(&d0, &d1, &up) {
            Err(e @ Error::DegenerateSpectrum { .. }) => {
                if e.exit_code() != 4 {
                    return Err("degenerate spectrum does not map to exit code 4".into());
                }
            }
            other => return Err(format!("m={m}: SVD path gave {:?}, gap {:.1e}", other.map(|_| ()), spectrum_gap(&d0.svd))),
        }
        let (p0, p1) = aisc.backward_projector(&d0, &d1, &up).map_err(|e| e.to_string())?;
        let fd0 = numeric_gradient(s0.points(), 1e-6, |x| probe_loss(&aisc, x, s1.points(), &up).unwrap());
        let fd1 = numeric_gradient(s1.points(), 1e-6, |x| probe_loss(&aisc, s0.points(), x, &up).unwrap());
        worst = worst.max(rel_err(&p0, &fd0)).max(rel_err(&p1, &fd1));
    }
    ensure(
        worst < 1e-4,
        format!("SVD path refuses repeated singular values; projector path vs FD max rel err {worst:.2e}"),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 affine invariance", guarded(affine_invariance)),
        ("2 gradient correctness", guarded(gradient_correctness)),
        ("3 projector and feature invariants", guarded(projector_and_feature_invariants)),
    ];
    let (learning, abl) = catch_unwind(learning_and_ablation)
        .unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    results.push(("4 end-to-end learning", learning));
    results.push(("5 ablation pattern", abl));
    results.push(("6 determinism", guarded(determinism)));
    results.push(("7 degeneracy handling", guarded(degeneracy)));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
