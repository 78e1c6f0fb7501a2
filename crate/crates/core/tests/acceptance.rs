//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits with a
//! non-zero status if any criterion fails.
//!
//! Run with `cargo test -p writerid-core --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use num_bigint::BigUint;
use rand::Rng;

use writerid_core::augment::{
    apply_drop, count_variants, count_variants_constrained, DropPlan, SegmentProfile,
};
use writerid_core::nn::{Network, NetworkSpec, Tensor4};
use writerid_core::pipeline::{evaluate, train, TrainConfig};
use writerid_core::rng::{stream, Purpose};
use writerid_core::signature::{channel_count, chen_concat, path_signature, rasterize};
use writerid_core::synthgen::{default_styles, generate_dataset, DatasetConfig};
use writerid_core::{Point, PseudoCharacter, SegmentedStroke};

use common::{point_segment_distance, riemann_signature};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn counts() -> Outcome {
    let p = |v: Vec<usize>| SegmentProfile::new(v).unwrap();
    let cases = [
        ("{2,3,4}", count_variants(&p(vec![2, 3, 4])), 511u64),
        ("8×{3}", count_variants(&p(vec![3; 8])), 16_777_215),
        (
            "constrained ŝ=9",
            count_variants_constrained(&p(vec![9])),
            256,
        ),
        (
            "constrained ŝ=24",
            count_variants_constrained(&p(vec![3; 8])),
            9_740_686,
        ),
    ];
    for (name, got, want) in &cases {
        ensure(
            *got == BigUint::from(*want),
            format!("{name}: {got} != {want}"),
        )?;
    }
    Ok("511, 16777215, 256, 9740686".into())
}

fn random_path(rng: &mut impl Rng, steps: usize) -> Vec<Point> {
    let mut p = vec![Point::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )];
    for _ in 0..steps {
        let last = *p.last().unwrap();
        p.push(Point::new(
            last.x + rng.random_range(-1.0..1.0),
            last.y + rng.random_range(-1.0..1.0),
        ));
    }
    p
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn signatures() -> Outcome {
    let mut rng = stream(7, Purpose::Synth, 0);
    let mut worst_oracle = 0.0f64;
    for _ in 0..50 {
        let steps = rng.random_range(1..=3);
        let path = random_path(&mut rng, steps);
        let sig = path_signature(&path, 3);
        let oracle = riemann_signature(&path, 3, 1000);
        for (k, level) in oracle.iter().enumerate() {
            for (a, b) in sig.term(k).iter().zip(level) {
                worst_oracle = worst_oracle.max(rel_err(*a, *b));
            }
        }
    }
    ensure(
        worst_oracle < 1e-6,
        format!("oracle error {worst_oracle:.2e}"),
    )?;

    let mut worst_chen = 0.0f64;
    let mut worst_reparam = 0.0f64;
    for _ in 0..100 {
        let (na, nb) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let a = random_path(&mut rng, na);
        let mut b = random_path(&mut rng, nb);
        let shift = (a.last().unwrap().x - b[0].x, a.last().unwrap().y - b[0].y);
        b.iter_mut().for_each(|p| {
            p.x += shift.0;
            p.y += shift.1;
        });
        let joined: Vec<Point> = a.iter().chain(&b[1..]).copied().collect();
        let whole = path_signature(&joined, 4).flatten();
        let chained = chen_concat(&path_signature(&a, 4), &path_signature(&b, 4))
            .unwrap()
            .flatten();
        for (x, y) in whole.iter().zip(&chained) {
            worst_chen = worst_chen.max(rel_err(*x, *y));
        }

        // insert a point at a random fraction of every linear piece
        let mut refined = vec![a[0]];
        for w in a.windows(2) {
            let t: f64 = rng.random_range(0.05..0.95);
            refined.push(Point::new(
                w[0].x + t * (w[1].x - w[0].x),
                w[0].y + t * (w[1].y - w[0].y),
            ));
            refined.push(w[1]);
        }
        let plain = path_signature(&a, 4).flatten();
        let fine = path_signature(&refined, 4).flatten();
        for (x, y) in plain.iter().zip(&fine) {
            worst_reparam = worst_reparam.max(rel_err(*x, *y));
        }
    }
    ensure(worst_chen < 1e-12, format!("Chen error {worst_chen:.2e}"))?;
    ensure(
        worst_reparam < 1e-12,
        format!("reparameterization error {worst_reparam:.2e}"),
    )?;
    Ok(format!(
        "oracle {worst_oracle:.1e}, Chen {worst_chen:.1e}, reparam {worst_reparam:.1e}"
    ))
}

fn sample_characters(n: usize) -> Vec<PseudoCharacter> {
    let data = generate_dataset(&default_styles(3), &DatasetConfig::new(1, 4), 3).unwrap();
    let chars =
        writerid_core::pipeline::preprocess_pages(&data.train, &Default::default()).unwrap();
    chars.into_iter().flatten().take(n).collect()
}

fn feature_maps() -> Outcome {
    let chars = sample_characters(8);
    for c in &chars {
        for n in 0..=5 {
            let stack = rasterize(c, n, 2);
            ensure(
                stack.channels() == (1 << (n + 1)) - 1 && channel_count(n) == stack.channels(),
                format!("level {n}: {} channels", stack.channels()),
            )?;
        }
        let bitmap = rasterize(c, 0, 2);
        let size = bitmap.size();
        ensure(
            bitmap.data().iter().all(|&v| v == 0.0 || v == 1.0),
            "level-0 map is not binary",
        )?;
        for p in c.points() {
            let (x, y) = (p.x.floor() as usize, p.y.floor() as usize);
            ensure(
                bitmap.data()[y * size + x] == 1.0,
                format!("sample ({}, {}) not set", p.x, p.y),
            )?;
        }
        for px in bitmap.foreground() {
            let centre = Point::new((px % size) as f64 + 0.5, (px / size) as f64 + 0.5);
            let near = c.strokes.iter().any(|s| {
                s.points.len() == 1 && s.points[0].dist(&centre) <= 1.0
                    || s.points
                        .windows(2)
                        .any(|w| point_segment_distance(centre, w[0], w[1]) <= 1.0)
            });
            ensure(near, format!("pixel {px} is off the trajectory"))?;
        }
        ensure(
            rasterize(c, 2, 2).channel(0) == bitmap.channel(0),
            "level-2 channel 0 differs",
        )?;
    }
    Ok(format!("{} characters, levels 0..=5", chars.len()))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut spec = NetworkSpec::standard(3, 5, 0.05);
    spec.input_size = 32;
    let mut net = Network::<f64>::new(spec.clone(), 21).map_err(|e| e.to_string())?;
    let mut rng = stream(22, Purpose::Augment, 0);
    // parameters alternate weights, bias; non-zero biases keep ReLU inputs
    // away from the kink
    for p in net.params_mut().into_iter().skip(1).step_by(2) {
        p.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
    }
    let shape = [4, 3, spec.input_size, spec.input_size];
    let x = Tensor4::from_vec(
        shape,
        (0..shape.iter().product())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let labels = [0, 4, 2, 1];
    let loss_at = |net: &Network<f64>| {
        net.gradients(&x, &labels, &mut stream(9, Purpose::Dropout, 0))
            .unwrap()
            .0
    };
    let (_, grads) = net
        .gradients(&x, &labels, &mut stream(9, Purpose::Dropout, 0))
        .map_err(|e| e.to_string())?;
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for t in 0..grads.len() {
        let len = grads[t].len();
        for i in (0..len).step_by((len / 12).max(1)) {
            let orig = net.params()[t][i];
            net.params_mut()[t][i] = orig + eps;
            let up = loss_at(&net);
            net.params_mut()[t][i] = orig - eps;
            let down = loss_at(&net);
            net.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads[t][i];
            let diff = (numeric - analytic).abs();
            worst = worst.max(diff / numeric.abs().max(analytic.abs()).max(1e-6));
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4, format!("worst relative error {worst:.2e}"))?;
    ensure(secs < 60.0, format!("took {secs:.0}s"))?;
    Ok(format!(
        "{} tensors, {checked} entries, worst {worst:.1e}, {secs:.1}s",
        grads.len()
    ))
}

fn architecture() -> Outcome {
    let spec = NetworkSpec::standard(7, 10, 1.0);
    let want = "7×96×96 Input-80C3-MP2-160C2-MP2-240C2-MP2-320C2-MP2-400C2-MP2-480FC-512FC-Output";
    ensure(
        spec.describe() == want,
        format!("description {}", spec.describe()),
    )?;
    let trace = spec.shape_trace();
    let convs: Vec<[usize; 3]> = trace
        .iter()
        .filter(|l| l.name.starts_with("conv"))
        .map(|l| l.shape)
        .collect();
    let pools: Vec<usize> = trace
        .iter()
        .filter(|l| l.name.starts_with("pool"))
        .map(|l| l.shape[1])
        .collect();
    let fcs: Vec<usize> = trace
        .iter()
        .filter(|l| l.name.starts_with("fc"))
        .map(|l| l.shape[0])
        .collect();
    ensure(
        convs
            == [
                [80, 96, 96],
                [160, 48, 48],
                [240, 24, 24],
                [320, 12, 12],
                [400, 6, 6],
            ],
        format!("conv shapes {convs:?}"),
    )?;
    ensure(pools == [48, 24, 12, 6, 3], format!("pool sizes {pools:?}"))?;
    ensure(fcs == [480, 512], format!("fc widths {fcs:?}"))?;

    // the trace must agree with what the network actually computes
    let net = Network::<f32>::new(spec.clone(), 0).map_err(|e| e.to_string())?;
    let x = Tensor4::<f32>::zeros([1, 7, 96, 96]);
    let out = net.predict(&x).map_err(|e| e.to_string())?;
    ensure(out.len() == 10, "output width")?;
    let params: usize = trace.iter().map(|l| l.params).sum();
    ensure(
        params == net.param_count(),
        format!("trace {params} vs network {}", net.param_count()),
    )?;
    Ok(format!("{want}, {params} parameters"))
}

fn three_segments() -> PseudoCharacter {
    let points = vec![
        Point::new(0.0, 0.0),
        Point::new(1.0, 0.0),
        Point::new(2.0, 0.0),
        Point::new(2.0, 1.0),
        Point::new(2.0, 2.0),
        Point::new(3.0, 3.0),
        Point::new(4.0, 4.0),
    ];
    PseudoCharacter {
        writer_id: "w".into(),
        source_page: "p".into(),
        strokes: vec![SegmentedStroke::new(points, vec![2, 4]).unwrap()],
    }
}

/// Straight pieces with pairwise distinct directions, one stroke per entry.
fn distinct_character(counts: &[usize]) -> PseudoCharacter {
    let mut strokes = Vec::new();
    let mut angle = 0.3f64;
    for (s, &n) in counts.iter().enumerate() {
        let mut pts = vec![Point::new(20.0 * s as f64, 0.0)];
        let mut corners = Vec::new();
        for j in 0..n {
            angle += 0.9;
            let last = *pts.last().unwrap();
            pts.push(Point::new(
                last.x + 2.0 * angle.cos(),
                last.y + 2.0 * angle.sin(),
            ));
            if j + 1 < n {
                corners.push(pts.len() - 1);
            }
        }
        strokes.push(SegmentedStroke::new(pts, corners).unwrap());
    }
    PseudoCharacter {
        writer_id: "w".into(),
        source_page: "p".into(),
        strokes,
    }
}

fn drop_segment() -> Outcome {
    // stroke counts by hand: mask bit i set = segment i dropped
    let c = three_segments();
    let expected = [1, 1, 2, 1, 1, 1, 1];
    for (mask, &want) in expected.iter().enumerate() {
        let dropped = (0..3).filter(|i| mask & (1 << i) != 0).collect();
        let out = apply_drop(&c, &DropPlan::new(dropped, 3).unwrap()).map_err(|e| e.to_string())?;
        ensure(
            out.strokes.len() == want,
            format!("mask {mask:03b}: {} strokes", out.strokes.len()),
        )?;
    }

    let profiles: [&[usize]; 8] = [
        &[1],
        &[2],
        &[1, 1],
        &[3],
        &[2, 1],
        &[4],
        &[2, 2],
        &[1, 1, 1, 1],
    ];
    for counts in profiles {
        let c = distinct_character(counts);
        let total = c.total_segments();
        let mut seen = BTreeSet::new();
        for mask in 0u32..(1 << total) - 1 {
            let dropped = (0..total).filter(|i| mask & (1 << i) != 0).collect();
            let out = apply_drop(&c, &DropPlan::new(dropped, total).unwrap())
                .map_err(|e| e.to_string())?;
            let key: Vec<Vec<(u64, u64)>> = out
                .strokes
                .iter()
                .map(|s| {
                    s.points
                        .iter()
                        .map(|p| (p.x.to_bits(), p.y.to_bits()))
                        .collect()
                })
                .collect();
            seen.insert(key);
        }
        ensure(
            seen.len() == (1 << total) - 1,
            format!("{counts:?}: {} distinct outputs", seen.len()),
        )?;
    }

    // dropping every segment of whole strokes is DropStroke
    let c = distinct_character(&[2, 3, 1, 2]);
    let offsets = [0, 2, 5, 6, 8];
    for mask in 1u32..15 {
        let kept: Vec<usize> = (0..4).filter(|s| mask & (1 << s) == 0).collect();
        let dropped = (0..4)
            .filter(|s| mask & (1 << s) != 0)
            .flat_map(|s| offsets[s]..offsets[s + 1])
            .collect();
        let out = apply_drop(&c, &DropPlan::new(dropped, 8).unwrap()).map_err(|e| e.to_string())?;
        let want: Vec<_> = kept.iter().map(|&s| c.strokes[s].clone()).collect();
        ensure(
            out.strokes == want,
            format!("stroke mask {mask:04b} differs from DropStroke"),
        )?;
    }
    Ok("truth table [1,1,2,1,1,1,1], 2^ŝ−1 distinct for ŝ≤4, DropStroke equivalence".into())
}

fn trend_config(level: usize, drop_segment: bool, seed: u64) -> TrainConfig {
    TrainConfig {
        level,
        drop_segment,
        seed,
        batch_size: 50,
        epochs: 6,
        iterations_per_epoch: Some(50),
        learning_rate: 0.02,
        dropout: vec![],
        ..TrainConfig::default()
    }
}

fn trend() -> Outcome {
    let start = Instant::now();
    let data_config = DatasetConfig {
        pages_per_writer: 2,
        chars_per_page: 20,
        test_pages_per_writer: 3,
        test_chars_per_page: Some(20),
    };
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let data =
            generate_dataset(&default_styles(10), &data_config, seed).map_err(|e| e.to_string())?;
        let run = |level, drop| {
            train(&trend_config(level, drop, seed), &data.train).map_err(|e| e.to_string())
        };
        let bitmap = run(0, false)?;
        let sign = run(2, false)?;
        let full = run(2, true)?;
        let top1 = |m, tests| {
            evaluate(m, &data.test, tests, seed)
                .map(|r| r.top1)
                .map_err(|e| e.to_string())
        };
        let row = [
            top1(&bitmap, 1)?,
            top1(&sign, 1)?,
            top1(&full, 1)?,
            top1(&full, 20)?,
        ];
        eprintln!(
            "  seed {seed}: bitmap {:.3}  sign2 {:.3}  sign2+drop {:.3}  sign2+drop 20-test {:.3}  ({:.0}s)",
            row[0],
            row[1],
            row[2],
            row[3],
            start.elapsed().as_secs_f64()
        );
        rows.push(row);
    }
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
    let (bitmap, sign, full, full20) = (mean(0), mean(1), mean(2), mean(3));
    let wins = rows.iter().filter(|r| r[3] >= r[2]).count();
    let secs = start.elapsed().as_secs_f64();
    let summary = format!(
        "bitmap {bitmap:.3}, sign2 {sign:.3}, +drop {full:.3}, +20 test {full20:.3}, 20-test wins {wins}/3, {secs:.0}s"
    );
    let mut failures = Vec::new();
    if sign < bitmap + 0.05 {
        failures.push("(a) sign2 < bitmap + 5pp");
    }
    if full < sign {
        failures.push("(b) drop-trained < plain");
    }
    if wins < 2 {
        failures.push("(c) 20-test won fewer than 2 seeds");
    }
    if full20 < 0.80 {
        failures.push("(d) full pipeline < 0.80");
    }
    if secs > 1800.0 {
        failures.push("runtime over 30 minutes");
    }
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join(", ")))
    }
}

fn determinism() -> Outcome {
    let data = generate_dataset(&default_styles(3), &DatasetConfig::new(1, 8), 4)
        .map_err(|e| e.to_string())?;
    let config = TrainConfig {
        batch_size: 8,
        epochs: 2,
        iterations_per_epoch: Some(3),
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || -> Result<(Vec<u8>, String), String> {
        let model = train(&config, &data.train).map_err(|e| e.to_string())?;
        let report = evaluate(&model, &data.test, 20, 4).map_err(|e| e.to_string())?;
        Ok((
            model.to_bytes().map_err(|e| e.to_string())?,
            serde_json::to_string(&report).map_err(|e| e.to_string())?,
        ))
    };
    let (bytes_a, report_a) = run()?;
    let (bytes_b, report_b) = run()?;
    ensure(bytes_a == bytes_b, "model bytes differ")?;
    ensure(report_a == report_b, "evaluation reports differ")?;
    Ok(format!("{} model bytes, report identical", bytes_a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 exact variant counts", counts),
        ("2 signature correctness", signatures),
        ("3 feature-map shape", feature_maps),
        ("4 gradient integrity", gradients),
        ("5 architecture audit", architecture),
        ("6 DropSegment semantics", drop_segment),
        ("7 end-to-end trends", trend),
        ("8 determinism", determinism),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in criteria {
        if only.as_deref().is_some_and(|o| !name.starts_with(o)) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
