//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! `PASS`/`FAIL` line each, and exits non-zero if any failed.
//!
//! Unspecified trial parameters (SNR for classification trials, tilt jitter,
//! pooling depth) are fixed here and listed next to each criterion.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ppc_core::circstats::arithmetic_mean_frame;
use ppc_core::io::{decode_stack, encode_stack};
use ppc_core::metrics::UnitDisk;
use ppc_core::synth::{FrameLabel, SnrReference};
use ppc_core::unwrap::unwrap_from;
use ppc_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn circular_rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter()
        .zip(b)
        .map(|(x, y)| wrap_angle(x - y).powi(2))
        .sum::<f64>()
        / a.len() as f64)
        .sqrt()
}

/// Shared residue-elimination data: 20 seeds of 8 frames at 5 dB on the 512² surface.
struct Fig8Seed {
    circular_residues: usize,
    arithmetic_residues: usize,
    elapsed: Duration,
    circular_row_err: f64,
    arithmetic_row_err: f64,
}

fn fig8_runs() -> (Vec<Fig8Seed>, usize) {
    let truth = peaks_surface(512, 37.82).expect("truth");
    let clean = truth.wrapped().expect("wrap");
    let full = ApertureMask::full(512, 512).expect("mask");
    let clean_residues = detect_residues(&clean, &full).expect("residues").count();
    let row = 256;
    let runs = (0..20u64)
        .map(|seed| {
            let start = Instant::now();
            let spec = TrialSpec {
                frame_count: 8,
                snr_db: 5.0,
                snr_reference: SnrReference::UnitPower,
                seed,
                ..TrialSpec::default()
            };
            let trial = make_trial(&truth, &spec).expect("trial");
            let frames: Vec<&PhaseFrame> = trial.stack.frames().iter().collect();
            let mask = trial.stack.mask();
            let circ = circular_mean_frame(&frames, mask).expect("circular mean");
            let arith = arithmetic_mean_frame(&frames, mask).expect("arithmetic mean");
            let circular_residues = detect_residues(&circ.frame, &circ.mask).expect("r").count();
            let arithmetic_residues = detect_residues(&arith, mask).expect("r").count();
            let elapsed = start.elapsed();
            Fig8Seed {
                circular_residues,
                arithmetic_residues,
                elapsed,
                circular_row_err: circular_rms(circ.frame.row(row), clean.row(row)),
                arithmetic_row_err: circular_rms(arith.row(row), clean.row(row)),
            }
        })
        .collect();
    (runs, clean_residues)
}

fn criterion_1(runs: &[Fig8Seed], clean_residues: usize) -> Verdict {
    let zero = runs.iter().filter(|r| r.circular_residues == 0).count();
    let arith_min = runs
        .iter()
        .map(|r| r.arithmetic_residues)
        .min()
        .unwrap_or(0);
    let arith_max = runs
        .iter()
        .map(|r| r.arithmetic_residues)
        .max()
        .unwrap_or(0);
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    verdict(
        zero >= 19 && arith_min >= 1 && clean_residues == 0 && slowest < Duration::from_secs(10),
        format!(
            "circular mean residue-free on {zero}/20 seeds; arithmetic mean {arith_min}..{arith_max} residues; \
             noise-free {clean_residues}; slowest seed {:.2}s",
            slowest.as_secs_f64()
        ),
    )
}

fn criterion_2(runs: &[Fig8Seed]) -> Verdict {
    let worst = runs.iter().map(|r| r.circular_row_err).fold(0.0, f64::max);
    let ordered = runs
        .iter()
        .filter(|r| r.arithmetic_row_err > r.circular_row_err)
        .count();
    let arith_min = runs
        .iter()
        .map(|r| r.arithmetic_row_err)
        .fold(f64::INFINITY, f64::min);
    verdict(
        worst < 0.3 && ordered == runs.len(),
        format!(
            "middle-row circular RMS error: circular mean max {worst:.4} rad, \
             arithmetic mean min {arith_min:.4} rad, arithmetic worse on {ordered}/{}",
            runs.len()
        ),
    )
}

fn criterion_3() -> Verdict {
    let expected = [
        (0.02, 16.9),
        (0.03, 15.1),
        (0.04, 13.8),
        (0.05, 12.8),
        (0.06, 11.9),
    ];
    let mut worst: f64 = 0.0;
    let mut got = Vec::new();
    for (f, db) in expected {
        let v = snr_from_min_fraction(f).expect("in range");
        worst = worst.max((v - db).abs());
        got.push(format!("{v:.2}"));
    }
    verdict(
        worst <= 0.05,
        format!("{} dB; max deviation {worst:.3} dB", got.join(", ")),
    )
}

// 64², N = 20, two families, 25 dB, one contaminant per stack.
fn criterion_4() -> Verdict {
    let truth = peaks_surface(64, 15.0).expect("truth");
    let params = PipelineParams {
        cut: 1e-9,
        min_sampling: MinSampling::MinSamples(1),
        ..PipelineParams::default()
    };
    let mut worst: f64 = 0.0;
    let mut singletons = true;
    for seed in 0..10u64 {
        let spec = TrialSpec {
            frame_count: 20,
            snr_db: 25.0,
            snr_reference: SnrReference::UnitPower,
            perturbation_count: 2,
            contaminant_fraction: 0.05,
            tilt_jitter: 4.0,
            seed: 100 + seed,
            ..TrialSpec::default()
        };
        let trial = make_trial(&truth, &spec).expect("trial");
        let ppc = run_ppc(&trial.stack, &params).expect("ppc");
        let conv = run_conventional(&trial.stack, &params).expect("conventional");
        singletons &= ppc.census.chosen.len() == 20 && ppc.unwrap_call_count == 20;
        worst = worst.max((ppc.rmse_rad - conv.rmse_rad).abs());
    }
    verdict(
        worst < 1e-6 && singletons,
        format!("max |RMSE_ppc - RMSE_conv| = {worst:.3e} rad over 10 stacks; singleton clustering: {singletons}"),
    )
}

// 256², PV 37.82, 20 dB, jitter 8, Q = 4, two pooling levels, min_fraction 10%.
fn criterion_5() -> Verdict {
    let truth = peaks_surface(256, 37.82).expect("truth");
    let params = PipelineParams {
        pool_levels: 2,
        min_sampling: MinSampling::MinFraction(0.1),
        ..PipelineParams::default()
    };
    let sizes = [40usize, 80, 160];
    let trials: Vec<_> = sizes
        .iter()
        .map(|&n| {
            let spec = TrialSpec {
                frame_count: n,
                snr_db: 20.0,
                snr_reference: SnrReference::UnitPower,
                perturbation_count: 4,
                tilt_jitter: 8.0,
                seed: 5,
                ..TrialSpec::default()
            };
            make_trial(&truth, &spec).expect("trial")
        })
        .collect();
    let mut ppc_best = [f64::INFINITY; 3];
    let mut conv_best = [f64::INFINITY; 3];
    let mut ppc_calls = [0usize; 3];
    let mut chosen = [0usize; 3];
    let mut conv_calls = [0usize; 3];
    // Minimum over repetitions suppresses scheduler noise.
    for _ in 0..3 {
        for (k, t) in trials.iter().enumerate() {
            let start = Instant::now();
            let p = run_ppc(&t.stack, &params).expect("ppc");
            ppc_best[k] = ppc_best[k].min(start.elapsed().as_secs_f64());
            let start = Instant::now();
            let c = run_conventional(&t.stack, &params).expect("conventional");
            conv_best[k] = conv_best[k].min(start.elapsed().as_secs_f64());
            ppc_calls[k] = p.unwrap_call_count;
            chosen[k] = p.census.chosen.len();
            conv_calls[k] = c.unwrap_call_count;
        }
    }
    let ratio: Vec<f64> = (0..3).map(|k| ppc_best[k] / conv_best[k]).collect();
    let constant = ppc_calls.iter().all(|&c| c == ppc_calls[0]);
    let counts_ok =
        (0..3).all(|k| ppc_calls[k] == chosen[k] && chosen[k] <= 4 && conv_calls[k] == sizes[k]);
    let decreasing = ratio[0] > ratio[1] && ratio[1] > ratio[2];
    verdict(
        constant && counts_ok && decreasing,
        format!(
            "N = 40/80/160: PPC unwraps {:?}, conventional {:?}, time ratio {:.3}/{:.3}/{:.3}",
            ppc_calls, conv_calls, ratio[0], ratio[1], ratio[2]
        ),
    )
}

// 128², PV 37.82, 20 dB, jitter 16 (contaminant tilts 80–160 rad), no extra pooling.
fn criterion_6() -> Verdict {
    let start = Instant::now();
    let truth = peaks_surface(128, 37.82).expect("truth");
    let params = PipelineParams {
        min_sampling: MinSampling::MinFraction(0.04),
        ..PipelineParams::default()
    };
    let mut trials = Vec::new();
    let (mut caught, mut contaminants) = (0, 0);
    for seed in 0..10u64 {
        let spec = TrialSpec {
            frame_count: 100,
            snr_db: 20.0,
            snr_reference: SnrReference::UnitPower,
            perturbation_count: 2,
            contaminant_fraction: 0.03,
            tilt_jitter: 16.0,
            seed,
            ..TrialSpec::default()
        };
        let trial = make_trial(&truth, &spec).expect("trial");
        let report = run_ppc(&trial.stack, &params).expect("ppc");
        let abandoned = report
            .clusters
            .as_ref()
            .expect("clusters")
            .abandoned_positions();
        for (i, label) in trial.labels.labels.iter().enumerate() {
            if *label == FrameLabel::Contaminant {
                contaminants += 1;
                caught += abandoned.contains(&i) as usize;
            }
        }
        trials.push((trial.stack, params.clone()));
    }
    let cmp = compare(&trials).expect("compare");
    let elapsed = start.elapsed();
    let frac = caught as f64 / contaminants as f64;
    verdict(
        cmp.ppc.count == 10
            && cmp.conventional.count == 10
            && cmp.ppc.rmse_sd_rad <= cmp.conventional.rmse_sd_rad
            && frac >= 0.9
            && elapsed < Duration::from_secs(120),
        format!(
            "SD ppc {:.3e} vs conventional {:.3e} rad; contaminants abandoned {caught}/{contaminants}; {:.1}s",
            cmp.ppc.rmse_sd_rad,
            cmp.conventional.rmse_sd_rad,
            elapsed.as_secs_f64()
        ),
    )
}

fn mean_removed_rms(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let m = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n;
    (a.iter()
        .zip(b)
        .map(|(x, y)| (x - y - m).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

fn criterion_7() -> Verdict {
    let n = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_trip: f64 = 0.0;
    let mut worst_seed: f64 = 0.0;
    let mut cases: Vec<(Vec<f64>, ApertureMask)> = Vec::new();
    for k in 0..6 {
        let (a, b, c) = (
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-PI..PI),
        );
        let plane = (0..n * n)
            .map(|i| a * (i % n) as f64 + b * (i / n) as f64 + c)
            .collect();
        let mask = if k % 2 == 0 {
            ApertureMask::full(n, n)
        } else {
            ApertureMask::disk(n, n)
        }
        .expect("mask");
        cases.push((plane, mask));
    }
    let peaks = peaks_surface(n, 37.82).expect("peaks");
    cases.push((
        peaks.values().to_vec(),
        ApertureMask::full(n, n).expect("mask"),
    ));
    cases.push((
        peaks.values().to_vec(),
        ApertureMask::disk(n, n).expect("mask"),
    ));

    for (truth, mask) in &cases {
        let frame = PhaseFrame::from_unwrapped(n, n, truth).expect("wrap");
        let idx: Vec<usize> = (0..n * n).filter(|&i| mask.valid()[i]).collect();
        let pick = |s: &Surface| idx.iter().map(|&i| s.values()[i]).collect::<Vec<_>>();
        let expect: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
        let base = unwrap(&frame, mask).expect("unwrap");
        worst_trip = worst_trip.max(mean_removed_rms(&pick(&base), &expect));
        for _ in 0..3 {
            let seed = idx[rng.random_range(0..idx.len())];
            let other = unwrap_from(&frame, mask, (seed / n, seed % n)).expect("unwrap");
            let (u, v) = (pick(&base), pick(&other.surface));
            let offset = v[0] - u[0];
            let dev = u
                .iter()
                .zip(&v)
                .map(|(x, y)| (y - x - offset).abs())
                .fold(0.0, f64::max);
            worst_seed = worst_seed.max(dev);
        }
    }
    verdict(
        worst_trip < 1e-9 && worst_seed < 1e-9,
        format!(
            "{} surfaces: round-trip RMS deviation {worst_trip:.2e} rad; seed dependence {worst_seed:.2e} rad",
            cases.len()
        ),
    )
}

/// Grid minimizer of `cost(δ)` summed over samples, δ = wrap(θ − μ).
fn grid_argmin(samples: &[f64], cost: impl Fn(f64) -> f64) -> f64 {
    let points = 1_000_000;
    let mut best = (f64::INFINITY, 0.0);
    for j in 1..=points {
        let mu = -PI + TAU * j as f64 / points as f64;
        let v: f64 = samples.iter().map(|&t| cost(wrap_angle(t - mu))).sum();
        if v < best.0 {
            best = (v, mu);
        }
    }
    best.1
}

// The circular mean of the circular-statistics module is the minimizer of
// the summed squared chord distance |e^{iθ} − e^{iμ}|² = 2 − 2cos(θ − μ).
// The summed squared arc length wrap(θ − μ)² has a different minimizer
// (the intrinsic mean); its disagreement is reported for reference.
fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut sets, mut worst, mut arc_worst) = (0, 0.0f64, 0.0f64);
    let mut arc = Vec::new();
    while sets < 100 {
        let k = rng.random_range(5..=50);
        let center = rng.random_range(-PI..PI);
        let spread = rng.random_range(0.05..2.0);
        let samples: Vec<f64> = (0..k)
            .map(|_| wrap_angle(center + spread * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let summary = circular_mean(&samples).expect("mean");
        if summary.resultant_length <= 0.1 {
            continue;
        }
        sets += 1;
        let mean = summary.mean.expect("defined");
        let chord = grid_argmin(&samples, |d| 2.0 - 2.0 * d.cos());
        worst = worst.max(wrap_angle(chord - mean).abs());
        let arc_min = grid_argmin(&samples, |d| d * d);
        let e = wrap_angle(arc_min - mean).abs();
        arc_worst = arc_worst.max(e);
        arc.push(e);
    }
    arc.sort_by(f64::total_cmp);
    verdict(
        worst < 2e-5,
        format!(
            "100 sets: max |grid - circular_mean| = {worst:.2e} rad (chord objective); \
             arc-length objective differs by median {:.2e}, max {arc_worst:.2e}",
            arc[arc.len() / 2]
        ),
    )
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = peaks_surface(64, 20.0).expect("peaks");
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let mask = if case % 2 == 0 {
            ApertureMask::full(64, 64)
        } else {
            ApertureMask::disk(64, 64)
        }
        .expect("mask");
        let values: Vec<f64> = base
            .values()
            .iter()
            .map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let surface = Surface::new(values.clone(), mask.clone()).expect("surface");
        let (r0, _) = zernike_fit_remove(&surface, &ZernikeMode::ALL).expect("fit");
        let disk = UnitDisk::of(&mask);
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-50.0..50.0)).collect();
        let perturbed: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (x, y) = disk.normalize(i / 64, i % 64);
                v + ZernikeMode::ALL
                    .iter()
                    .zip(&c)
                    .map(|(m, ci)| ci * m.eval(x, y))
                    .sum::<f64>()
            })
            .collect();
        let (r1, _) = zernike_fit_remove(
            &Surface::new(perturbed, mask).expect("surface"),
            &ZernikeMode::ALL,
        )
        .expect("fit");
        worst = worst.max((rmse(&r0) - rmse(&r1)).abs());
    }
    verdict(
        worst < 1e-9,
        format!("100 cases: max RMSE change {worst:.2e} rad"),
    )
}

fn criterion_10() -> Verdict {
    let truth = peaks_surface(64, 30.0).expect("truth");
    let spec = TrialSpec {
        frame_count: 8,
        snr_db: 15.0,
        snr_reference: SnrReference::UnitPower,
        perturbation_count: 2,
        tilt_jitter: 3.0,
        seed: 10,
        ..TrialSpec::default()
    };
    let stack = make_trial(&truth, &spec).expect("trial").stack;
    let bytes = encode_stack(&stack);
    let back = decode_stack(&bytes).expect("decode");
    let identical = encode_stack(&back) == bytes
        && back.frames().iter().zip(stack.frames()).all(|(a, b)| {
            a.values()
                .iter()
                .zip(b.values())
                .all(|(x, y)| (*x as f32).to_bits() == (*y as f32).to_bits())
        });
    let l = bytes.len();
    let truncated = decode_stack(&bytes[..l - 1])
        .err()
        .map(|e| {
            e.to_string()
                .contains(&format!("truncated at offset {}", l - 1))
        })
        .unwrap_or(false);
    let mut bad = bytes.clone();
    bad[0..4].copy_from_slice(b"WPHZ");
    let magic = matches!(decode_stack(&bad), Err(Error::Parse { offset: 0, .. }));
    verdict(
        identical && truncated && magic,
        format!("64x64x8 payload bitwise identical: {identical}; truncation error: {truncated}; bad magic error: {magic}"),
    )
}

fn main() -> ExitCode {
    let (runs, clean) = fig8_runs();
    let results: Vec<(&str, Verdict)> = vec![
        ("residue elimination", criterion_1(&runs, clean)),
        ("profile reconstruction", criterion_2(&runs)),
        ("snr mapping", criterion_3()),
        ("reduction to conventional", criterion_4()),
        ("unwrap-count scaling", criterion_5()),
        ("repeatability", criterion_6()),
        ("unwrapper correctness", criterion_7()),
        ("circular-statistics oracle", criterion_8()),
        ("zernike invariance", criterion_9()),
        ("format round-trip", criterion_10()),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!(
            "criterion {:>2} {:<28} {}  {}",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += !v.pass as usize;
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
