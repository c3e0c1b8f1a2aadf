use stv_core::phantom::{random_step_signal, Disk, PhantomKind, PhantomSpec};
use stv_core::spectral::{self, stv_filter, TransferFunction};
use stv_core::{FlowConfig, GrayImage};

fn interior_mean(img: &GrayImage, d: &Disk) -> f64 {
    let (mut sum, mut n) = (0.0, 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (dx, dy) = (x as f64 - d.cx, y as f64 - d.cy);
            if (dx * dx + dy * dy).sqrt() <= d.radius - 1.0 {
                sum += img.get(x, y);
                n += 1;
            }
        }
    }
    sum / n as f64
}

/// Mean over the annulus 3..6 px outside the rim.
fn ring_mean(img: &GrayImage, d: &Disk) -> f64 {
    let (mut sum, mut n) = (0.0, 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let r = (x as f64 - d.cx).hypot(y as f64 - d.cy);
            if r >= d.radius + 3.0 && r <= d.radius + 6.0 {
                sum += img.get(x, y);
                n += 1;
            }
        }
    }
    sum / n as f64
}

#[test]
fn high_pass_removes_the_small_disk_only() {
    // on 64x64 the rising background makes the large disk vanish before t = 6
    let small = Disk { cx: 100.0, cy: 64.0, radius: 4.0, contrast: 1.0 };
    let large = Disk { cx: 40.0, cy: 64.0, radius: 16.0, contrast: 1.0 };
    let f = PhantomSpec { width: 128, height: 128, kind: PhantomKind::TwoDisks(large, small) }
        .render()
        .unwrap();
    let flow = FlowConfig { n_components: 60, ..FlowConfig::default() };
    let (stack, _) = spectral::decompose(&f, &flow).unwrap();
    let transfer = TransferFunction::from_scales(60, flow.dt, |t| t > 6.0);
    let g = stv_filter(&stack, &transfer).unwrap();
    let small_mean = interior_mean(&g, &small) - ring_mean(&g, &small);
    let large_mean = interior_mean(&g, &large) - ring_mean(&g, &large);
    assert!(small_mean <= 0.1, "small disk interior {small_mean}");
    assert!(large_mean >= 0.8, "large disk interior {large_mean}");
}

fn peak(values: &[f64]) -> usize {
    (0..values.len()).max_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs())).unwrap()
}

/// Flow of the 2x replicated image at `dt` against the replicated flow of the
/// original at `dt / 2`: relative L2 over all frames, and spectral peak indices.
fn rescale_gap(f: &GrayImage) -> (f64, usize, usize) {
    let coarse = FlowConfig { n_components: 60, ..FlowConfig::default() };
    let fine = FlowConfig { dt: coarse.dt / 2.0, ..coarse };
    let g = f.replicate(2);
    let (big_stack, big) = spectral::decompose(&g, &coarse).unwrap();
    let (small_stack, small) = spectral::decompose(f, &fine).unwrap();
    let (mut diff, mut norm) = (0.0, 0.0);
    for (a, b) in big.frames.iter().zip(&small.frames) {
        let expect = b.replicate(2);
        diff += a.values().iter().zip(expect.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        norm += expect.norm_sq();
    }
    let s_big = spectral::spectrum(&g, &big_stack).unwrap();
    let s_small = spectral::spectrum(f, &small_stack).unwrap();
    ((diff / norm).sqrt(), peak(&s_big.values), peak(&s_small.values))
}

#[test]
fn replicated_image_follows_rescaled_time() {
    let rect = GrayImage::from_fn(32, 32, |x, y| {
        if (8..24).contains(&x) && (10..22).contains(&y) { 1.0 } else { 0.0 }
    })
    .unwrap();
    let (gap, a, b) = rescale_gap(&rect);
    assert!(gap <= 0.05, "rectangle frames differ by {gap}");
    assert!(a.abs_diff(b) <= 1, "rectangle peaks {a} vs {b}");

    // the digital disk staircase is not scale invariant, hence the looser bound
    let disk = PhantomSpec::disk(32, 5.0, 1.0).render().unwrap();
    let (gap, a, b) = rescale_gap(&disk);
    assert!(gap <= 0.08, "disk frames differ by {gap}");
    assert_eq!(a, b);
}

#[test]
fn step_signal_components_are_nearly_orthogonal() {
    let flow = FlowConfig::default();
    for seed in [1, 2, 3] {
        let f = random_step_signal(96, 6, seed).unwrap();
        let (stack, _) = spectral::decompose(&f, &flow).unwrap();
        let floor = 1e-8 * f.norm();
        let comps = stack.components();
        for i in 0..comps.len() {
            for j in i + 2..comps.len() {
                let (a, b) = (comps[i].norm(), comps[j].norm());
                if a > floor && b > floor {
                    let c = comps[i].dot(&comps[j]).abs() / (a * b);
                    assert!(c <= 0.05, "seed {seed}: components {i} and {j} correlate {c}");
                }
            }
        }
    }
}
