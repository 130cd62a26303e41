//! Acceptance run: each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any fails.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use bimodal_core::authenticator::Authenticator;
use bimodal_core::authsvc::{serve, AuthService, Client, Request, RequestEnvelope};
use bimodal_core::config::Config;
use bimodal_core::eigenfaces::train_from_vectors;
use bimodal_core::evaluation::{
    compute_metrics, evaluate_corpus, generate_synthetic_corpus, grid, threshold_sweep, ConfusionMatrix, SweepTarget,
};
use bimodal_core::face_detect::{
    detect_objects, CascadeModel, DetectParams, DetectionImage, Stage, WeakClassifier, WeightedRect,
};
use bimodal_core::fusion::{fuse_wss, normalize_double_sigmoid, ModalityParams};
use bimodal_core::imaging::GrayImage;
use bimodal_core::profile_store::ProfileStore;
use bimodal_core::speech_features::{cepstral_transform, hz_to_mel, magnitude_spectrum, make_window, HAMMING};
use bimodal_core::vq_model::lbg_train_traced;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

type Check = Result<String, String>;

fn require(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn metric_reproduction() -> Check {
    let tables = [
        ("table 4", (15321, 2256, 1352, 14124), [89.08, 91.26, 12.84, 87.17, 8.74, 86.23]),
        ("table 6", (12122, 370, 192, 11958), [97.72, 98.42, 2.96, 97.04, 1.58, 96.99]),
        ("table 10", (181, 3, 2, 196), [98.69, 98.98, 1.63, 98.36, 1.01, 98.49]),
        ("table 13", (27443, 198, 222, 26082), [99.22, 99.15, 0.71, 99.28, 0.84, 99.24]),
    ];
    let mut worst = 0.0f64;
    for (name, (tn, fp, fn_, tp), want) in tables {
        let m = compute_metrics(&ConfusionMatrix::new(tn, fp, fn_, tp));
        for (got, w) in m.values().into_iter().zip(want) {
            let got = got.ok_or(format!("{name}: undefined metric"))?;
            worst = worst.max((got - w).abs());
        }
    }
    require(worst <= 0.01, format!("max deviation {worst:.4} pp"))?;
    Ok(format!("max deviation {worst:.4} pp"))
}

fn naive_dft(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &x) in frame.iter().enumerate() {
                let a = -std::f64::consts::TAU * ((k * t) % n) as f64 / n as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// DCT-II through a mirrored FFT, independent of the direct sum.
fn dct_via_fft(x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().chain(x.iter().rev()).map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(2 * m).process(&mut buf);
    (0..m)
        .map(|k| {
            let tw = Complex::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2 * m) as f64);
            0.5 * (tw * buf[k]).re
        })
        .collect()
}

fn dsp_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut fft_err = 0.0f64;
    for _ in 0..8 {
        let frame: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = magnitude_spectrum(&frame).map_err(|e| e.to_string())?;
        for (a, b) in fast.iter().zip(naive_dft(&frame)) {
            fft_err = fft_err.max((a - b).abs());
        }
    }
    require(fft_err < 1e-9, format!("fft error {fft_err:e}"))?;

    let w = make_window(511, HAMMING).map_err(|e| e.to_string())?;
    let c = w.coefficients();
    require((c[0] - 0.08).abs() < 1e-15, format!("w(0) = {}", c[0]))?;
    require(c[255] == 1.0, format!("w(mid) = {}", c[255]))?;

    require(hz_to_mel(0.0) == 0.0, "mel(0) != 0")?;
    let m1000 = hz_to_mel(1000.0);
    require((m1000 - 999.99).abs() <= 0.01, format!("mel(1000) = {m1000}"))?;

    let mut dct_err = 0.0f64;
    for _ in 0..8 {
        let e: Vec<f64> = (0..26).map(|_| rng.random_range(-20.0..5.0)).collect();
        let got = cepstral_transform(&e, 12).map_err(|e| e.to_string())?;
        let oracle = dct_via_fft(&e);
        for (n, g) in got.iter().enumerate() {
            dct_err = dct_err.max((g - oracle[n + 1]).abs());
        }
    }
    require(dct_err < 1e-9, format!("dct error {dct_err:e}"))?;
    Ok(format!("fft err {fft_err:.1e}, dct err {dct_err:.1e}, mel(1000) {m1000:.4}"))
}

fn pca_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let images: Vec<Vec<f64>> = (0..5).map(|_| (0..16).map(|_| rng.random_range(0..=255u8) as f64).collect()).collect();
    let model = train_from_vectors(&images).map_err(|e| e.to_string())?;
    let mean: Vec<f64> = (0..16).map(|j| images.iter().map(|f| f[j]).sum::<f64>() / 5.0).collect();
    let a = DMatrix::from_fn(16, 5, |i, k| images[k][i] - mean[i]);
    let dense = SymmetricEigen::new(&a * a.transpose() / 5.0);
    let mut order: Vec<usize> = (0..16).collect();
    order.sort_by(|&i, &j| dense.eigenvalues[j].total_cmp(&dense.eigenvalues[i]));
    require(model.components() == 4, format!("{} components", model.components()))?;
    let mut worst = 0.0f64;
    for (k, &idx) in order.iter().take(4).enumerate() {
        worst = worst.max((model.eigenvalues()[k] - dense.eigenvalues[idx]).abs());
        let col = dense.eigenvectors.column(idx);
        let sign = (0..16).map(|i| col[i] * model.eigenvectors()[k][i]).sum::<f64>().signum();
        for i in 0..16 {
            worst = worst.max((model.eigenvectors()[k][i] - sign * col[i]).abs());
        }
    }
    let mut recon = 0.0f64;
    for img in &images {
        let coef = model.project_vector(img).map_err(|e| e.to_string())?;
        for (a, b) in model.reconstruct(&coef).iter().zip(img) {
            recon = recon.max((a - b).abs());
        }
    }
    require(worst < 1e-6, format!("eigenpair error {worst:e}"))?;
    require(recon < 1e-6, format!("reconstruction error {recon:e}"))?;
    Ok(format!("eigenpair err {worst:.1e}, reconstruction err {recon:.1e}"))
}

fn lbg() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut iterations = 0usize;
    for inst in 0..50 {
        let n = rng.random_range(8..40);
        let d = rng.random_range(1..5);
        let vs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let k = [1usize, 2, 4, 8][rng.random_range(0..4)];
        let (_, trace) = lbg_train_traced(&vs, k).map_err(|e| e.to_string())?;
        for stage in &trace {
            iterations += stage.len();
            require(stage.windows(2).all(|w| w[1] <= w[0]), format!("instance {inst}: distortion rose: {stage:?}"))?;
        }
    }
    let toy = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
    let (cb, _) = lbg_train_traced(&toy, 2).map_err(|e| e.to_string())?;
    let mut words = cb.codewords.clone();
    words.sort_by(|a, b| a[0].total_cmp(&b[0]));
    require(words == vec![vec![0.0, 0.5], vec![10.0, 0.5]], format!("toy codewords {words:?}"))?;
    require(cb.distortion == 0.25, format!("toy distortion {}", cb.distortion))?;
    Ok(format!("50 instances, {iterations} Lloyd steps monotone; toy distortion 0.25"))
}

fn two_stage_cascade() -> CascadeModel {
    let r = |x, y, w, h, weight| WeightedRect { x, y, w, h, weight };
    CascadeModel {
        window_w: 12,
        window_h: 12,
        stages: vec![
            Stage {
                threshold: 0.5,
                weak: vec![
                    WeakClassifier { threshold: 0.02, leaf_lo: 0.0, leaf_hi: 1.0, rects: vec![r(0, 0, 12, 12, -1.0), r(3, 3, 6, 6, 4.0)] },
                    WeakClassifier { threshold: -0.05, leaf_lo: 0.0, leaf_hi: 0.6, rects: vec![r(0, 0, 6, 12, 1.0), r(6, 0, 6, 12, -1.0)] },
                ],
            },
            Stage {
                threshold: 0.9,
                weak: vec![WeakClassifier { threshold: 0.0, leaf_lo: 0.2, leaf_hi: 1.0, rects: vec![r(0, 0, 12, 6, -1.0), r(0, 6, 12, 6, 1.0)] }],
            },
        ],
    }
}

/// Direct pixel loops; no integral images.
fn brute_classify(img: &GrayImage, m: &CascadeModel, x0: usize, y0: usize) -> bool {
    let (w, h) = (m.window_w as usize, m.window_h as usize);
    let px = |x: usize, y: usize| img.get(x0 + x, y0 + y) as f64;
    let sum = |rx: usize, ry: usize, rw: usize, rh: usize| -> f64 {
        let mut s = 0.0;
        for y in ry..ry + rh {
            for x in rx..rx + rw {
                s += px(x, y);
            }
        }
        s
    };
    let area = (w * h) as f64;
    let mean = sum(0, 0, w, h) / area;
    let mut sq = 0.0;
    for y in 0..h {
        for x in 0..w {
            sq += px(x, y) * px(x, y);
        }
    }
    let std = (sq / area - mean * mean).max(0.0).sqrt().max(1.0);
    m.stages.iter().all(|stage| {
        let total: f64 = stage
            .weak
            .iter()
            .map(|weak| {
                let raw: f64 = weak.rects.iter().map(|r| r.weight * sum(r.x as usize, r.y as usize, r.w as usize, r.h as usize)).sum();
                if raw / (area * std) < weak.threshold {
                    weak.leaf_lo
                } else {
                    weak.leaf_hi
                }
            })
            .sum();
        total >= stage.threshold
    })
}

fn detector_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = GrayImage::from_fn(64, 64, |_, _| rng.random());
    let model = two_stage_cascade();
    model.validate().map_err(|e| e.to_string())?;
    let di = DetectionImage::new(&img);
    let (mut windows, mut passing) = (0usize, 0usize);
    for y in 0..=64 - 12 {
        for x in 0..=64 - 12 {
            let fast = model.classify_window(&di, x, y);
            let slow = brute_classify(&img, &model, x, y);
            require(fast == slow, format!("window ({x},{y}): cascade {fast} vs brute force {slow}"))?;
            windows += 1;
            passing += fast as usize;
        }
    }
    require(passing > 0 && passing < windows, format!("degenerate oracle: {passing}/{windows} pass"))?;

    let mut planted = GrayImage::filled(64, 64, 30);
    for y in 20..28 {
        for x in 28..36 {
            planted.set(x, y, 200);
        }
    }
    let square = bimodal_core::face_detect::handcrafted::bright_square(1.5);
    let dets = detect_objects(&planted, &square, DetectParams { scale_factor: 1.1, min_neighbors: 1 }).map_err(|e| e.to_string())?;
    require(dets.len() == 1, format!("{} detections of the planted square", dets.len()))?;
    let r = dets[0].rect;
    require(
        (r.x as i64 - 24).abs() <= 2 && (r.y as i64 - 16).abs() <= 2,
        format!("planted square found at {r:?}"),
    )?;
    Ok(format!("{windows} windows agree ({passing} pass); planted square at ({}, {})", r.x, r.y))
}

fn fusion() -> Check {
    let (face, voice) = (ModalityParams::FACE, ModalityParams::VOICE);
    let phi = |s, p: &ModalityParams| normalize_double_sigmoid(s, p).expect("finite score");
    require(phi(face.tau, &face) == 0.5 && phi(voice.tau, &voice) == 0.5, "Φ(τ) != 0.5")?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100_000 {
        let (p, hi) = if rng.random() { (&face, 3.0 * face.tau) } else { (&voice, 3.0 * voice.tau) };
        let a: f64 = rng.random_range(0.0..hi);
        let b: f64 = rng.random_range(0.0..hi);
        let (lo, up) = if a < b { (a, b) } else { (b, a) };
        let (pl, pu) = (phi(lo, p), phi(up, p));
        require(pl > 0.0 && pu < 1.0, format!("Φ outside (0,1) at {lo} or {up}"))?;
        require(lo == up || pl < pu, format!("Φ not strictly increasing on {lo} < {up}"))?;
        let (fa, vb) = (phi(a, &face), phi(b / 3.0, &voice));
        let fused = fuse_wss(&[(fa, face.weight), (vb, voice.weight)]).map_err(|e| e.to_string())?;
        require(fused >= fa.min(vb) - 1e-15 && fused <= fa.max(vb) + 1e-15, "WSS outside convex hull")?;
    }
    let v = phi(2.0, &voice);
    let f = phi(4500.0, &face);
    require((v - 0.01799).abs() < 1e-4, format!("Φ_voice(2.0) = {v}"))?;
    require((f - 0.7311).abs() < 1e-4, format!("Φ_face(4500) = {f}"))?;
    Ok(format!("Φ_voice(2.0) = {v:.5}, Φ_face(4500) = {f:.4}"))
}

struct EndToEnd {
    passed: bool,
    summary: String,
    face_sweep_ok: Result<String, String>,
}

fn end_to_end() -> Result<EndToEnd, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let layout = generate_synthetic_corpus(dir.path(), 7, 12, 16).map_err(|e| e.to_string())?;
    let mut cfg = Config::default();
    cfg.evaluation.iterations = 5;
    let auth = Authenticator::with_cascades(cfg.clone(), None, None).map_err(|e| e.to_string())?;
    let (_, report) = evaluate_corpus(&layout, &auth, &cfg.evaluation).map_err(|e| e.to_string())?;
    let acc = |m: &bimodal_core::evaluation::ModalityReport| m.metrics.accuracy.unwrap_or(0.0);
    let (fa, va, ea) = (acc(&report.face), acc(&report.voice), acc(&report.ensemble));
    let fpr = report.ensemble.metrics.fpr.unwrap_or(100.0);
    let fnr = report.ensemble.metrics.fnr.unwrap_or(100.0);
    let summary = format!(
        "accuracy face {fa:.2} voice {va:.2} ensemble {ea:.2}; ensemble FPR {fpr:.2} FNR {fnr:.2}; exclusions {}",
        report.exclusions
    );

    let points = threshold_sweep(&report.probes, SweepTarget::Face, &grid(1000.0, 5000.0, 200.0).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mono = |vals: Vec<Option<f64>>, up: bool| {
        let v: Vec<f64> = vals.into_iter().flatten().collect();
        v.windows(2).all(|w| if up { w[1] >= w[0] } else { w[1] <= w[0] })
    };
    let fprs: Vec<Option<f64>> = points.iter().map(|p| p.fpr).collect();
    let fnrs: Vec<Option<f64>> = points.iter().map(|p| p.fnr).collect();
    let face_sweep_ok = if points.len() == 21 && mono(fprs, true) && mono(fnrs, false) {
        Ok(format!(
            "21 thresholds; FPR {:.2}→{:.2}, FNR {:.2}→{:.2}",
            points[0].fpr.unwrap_or(f64::NAN),
            points[20].fpr.unwrap_or(f64::NAN),
            points[0].fnr.unwrap_or(f64::NAN),
            points[20].fnr.unwrap_or(f64::NAN)
        ))
    } else {
        Err(format!("sweep not monotone: {points:?}"))
    };

    Ok(EndToEnd {
        passed: ea >= fa.max(va) && ea >= 95.0 && fpr <= 5.0 && fnr <= 5.0,
        summary,
        face_sweep_ok,
    })
}

fn service_equivalence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let auth = Authenticator::with_cascades(Config::default(), None, None).map_err(|e| e.to_string())?;
    let store = ProfileStore::init(dir.path()).map_err(|e| e.to_string())?;
    let svc = Arc::new(AuthService::new(auth, store).map_err(|e| e.to_string())?);
    let handle = serve(svc.clone(), "127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = handle.local_addr();

    let subjects: Vec<common::Subject> = (0..8).map(|i| common::subject(900 + i, 21, 6)).collect();
    let failures: Vec<String> = std::thread::scope(|scope| {
        let joins: Vec<_> = subjects
            .iter()
            .enumerate()
            .map(|(i, s)| {
                scope.spawn(move || {
                    let mut c = Client::connect(addr).map_err(|e| e.to_string())?;
                    let r = c.call(&s.register(&format!("user{i}"), 0..20, 0..5)).map_err(|e| e.to_string())?;
                    if r.is_ok() {
                        Ok(())
                    } else {
                        Err(format!("user{i}: {}", r.status))
                    }
                })
            })
            .collect();
        joins.into_iter().filter_map(|j| j.join().expect("client thread").err()).collect()
    });
    require(failures.is_empty(), format!("registrations failed: {failures:?}"))?;
    let stored = ProfileStore::open(dir.path()).and_then(|s| s.load_all()).map_err(|e| e.to_string())?;
    require(stored.len() == 8, format!("{} of 8 profiles persisted", stored.len()))?;

    let mut c = Client::connect(addr).map_err(|e| e.to_string())?;
    let r = c
        .call(&RequestEnvelope { request_id: None, request: Request::TrainModel })
        .map_err(|e| e.to_string())?;
    require(r.is_ok(), format!("train_model: {}", r.status))?;
    let mut accepted = 0;
    for (i, s) in subjects.iter().enumerate() {
        let claim = format!("user{i}");
        for claim in [None, Some(claim.as_str())] {
            let r = c.call(&s.probe(20, 5, claim)).map_err(|e| e.to_string())?;
            require(r.is_ok(), format!("auth user{i}: {}", r.status))?;
            let lib = common::library_outcome(svc.authenticator(), svc.store(), s, 20, 5, claim);
            let same = r.fused_score.map(f64::to_bits) == Some(lib.fused_score.to_bits())
                && r.face_score.map(f64::to_bits) == Some(lib.face_score.to_bits())
                && r.voice_score.map(f64::to_bits) == Some(lib.voice_score.to_bits())
                && r.matched_user.as_deref() == Some(lib.matched_user.as_str())
                && (r.decision == Some(bimodal_core::authsvc::Decision::Accept)) == lib.accept;
            require(same, format!("user{i}: service {r:?} vs library {lib:?}"))?;
            accepted += lib.accept as usize;
        }
    }
    handle.shutdown();
    Ok(format!("8/8 registrations persisted; 16 probes bit-identical ({accepted} accepted)"))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let mut result = f();
        let took = start.elapsed();
        if let (Ok(_), Some(l)) = (&result, limit) {
            if took > l {
                result = Err(format!("took {took:.2?}, limit {l:?}"));
            }
        }
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        if result.is_err() {
            failed += 1;
        }
        println!("criterion {n} {tag} {name} [{took:.2?}]: {detail}");
    };
    report(1, "metric reproduction", Some(Duration::from_secs(1)), &mut metric_reproduction);
    report(2, "DSP oracles", Some(Duration::from_secs(5)), &mut dsp_oracles);
    report(3, "PCA oracle", None, &mut pca_oracle);
    report(4, "LBG", None, &mut lbg);
    report(5, "detector oracle", None, &mut detector_oracle);
    report(6, "fusion", None, &mut fusion);
    let mut sweep: Check = Err("end-to-end run failed".into());
    report(7, "end-to-end synthetic", Some(Duration::from_secs(120)), &mut || {
        let e = end_to_end()?;
        sweep = e.face_sweep_ok;
        if e.passed {
            Ok(e.summary)
        } else {
            Err(e.summary)
        }
    });
    report(8, "face threshold sweep shape", None, &mut || sweep.clone());
    report(9, "service equivalence", None, &mut service_equivalence);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
