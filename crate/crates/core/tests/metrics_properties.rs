use evshake::frame::{AccumFrame, BinaryFrame};
use evshake::metrics::{
    frame_variance, gradient_magnitude, label_components, shannon_entropy, zhang_suen,
};
use proptest::prelude::*;

fn bitmap(w: usize, h: usize) -> impl Strategy<Value = BinaryFrame> {
    (0.05f64..0.7).prop_flat_map(move |d| {
        prop::collection::vec(prop::bool::weighted(d), w * h)
            .prop_map(move |bits| BinaryFrame::new(w, h, bits))
    })
}

fn counts(w: usize, h: usize) -> impl Strategy<Value = AccumFrame> {
    prop::collection::vec(0u32..50, w * h).prop_map(move |c| AccumFrame::from_counts(w, h, c))
}

/// Stack-based flood fill over 8-neighbours.
fn flood_count(img: &BinaryFrame) -> usize {
    let (w, h) = (img.width as i64, img.height as i64);
    let mut seen = vec![false; img.bits.len()];
    let mut n = 0;
    for start in 0..img.bits.len() {
        if !img.bits[start] || seen[start] {
            continue;
        }
        n += 1;
        seen[start] = true;
        let mut todo = vec![start];
        while let Some(i) = todo.pop() {
            let (x, y) = (i as i64 % w, i as i64 / w);
            for (dx, dy) in [
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ] {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    let j = (ny * w + nx) as usize;
                    if img.bits[j] && !seen[j] {
                        seen[j] = true;
                        todo.push(j);
                    }
                }
            }
        }
    }
    n
}

fn paint(img: &mut BinaryFrame, x0: usize, y0: usize, x1: usize, y1: usize) {
    for y in y0..y1 {
        for x in x0..x1 {
            img.set(x, y, true);
        }
    }
}

/// Three pixel thick line, L, plus and ring, each on its own canvas.
fn shapes() -> Vec<(&'static str, BinaryFrame)> {
    let canvas = || BinaryFrame::zeros(40, 40);
    let mut line = canvas();
    paint(&mut line, 5, 18, 35, 21);
    let mut ell = canvas();
    paint(&mut ell, 8, 5, 11, 32);
    paint(&mut ell, 8, 29, 32, 32);
    let mut plus = canvas();
    paint(&mut plus, 5, 18, 35, 21);
    paint(&mut plus, 18, 5, 21, 35);
    let mut ring = canvas();
    for y in 0..40 {
        for x in 0..40 {
            let r = ((x as f64 - 19.5).powi(2) + (y as f64 - 19.5).powi(2)).sqrt();
            ring.set(x, y, (10.0..13.0).contains(&r));
        }
    }
    vec![("line", line), ("L", ell), ("plus", plus), ("ring", ring)]
}

#[test]
fn thinning_keeps_shape_components() {
    let mut all = BinaryFrame::zeros(80, 80);
    for (k, (name, img)) in shapes().into_iter().enumerate() {
        let thin = zhang_suen(&img);
        assert_eq!(label_components(&thin).1, 1, "{name}");
        assert!(thin.popcount() < img.popcount(), "{name} not thinned");
        assert_eq!(zhang_suen(&thin), thin, "{name}");
        let (ox, oy) = ((k % 2) * 40, (k / 2) * 40);
        for y in 0..40 {
            for x in 0..40 {
                if img.get(x, y) {
                    all.set(ox + x, oy + y, true);
                }
            }
        }
    }
    assert_eq!(label_components(&all).1, 4);
    assert_eq!(label_components(&zhang_suen(&all)).1, 4);
}

proptest! {
    #[test]
    fn entropy_of_complement(img in bitmap(17, 11)) {
        let h = shannon_entropy(&img).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - shannon_entropy(&img.complement()).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn variance_scales_quadratically(f in counts(9, 7), s in 0u32..20) {
        let v = frame_variance(&f).unwrap();
        prop_assert!(v >= 0.0);
        let scaled = AccumFrame::from_counts(9, 7, f.counts.iter().map(|c| c * s).collect());
        let vs = frame_variance(&scaled).unwrap();
        prop_assert!((vs - f64::from(s * s) * v).abs() <= 1e-9 * vs.max(1.0));
    }

    #[test]
    fn gradient_is_transpose_invariant(f in counts(8, 13)) {
        let g = gradient_magnitude(&f).unwrap();
        prop_assert!((gradient_magnitude(&f.transpose()).unwrap() - g).abs() < 1e-12);
    }

    #[test]
    fn labeling_matches_flood_fill(img in bitmap(64, 64)) {
        prop_assert_eq!(label_components(&img).1, flood_count(&img));
    }

    #[test]
    fn thinning_is_idempotent(img in bitmap(32, 32)) {
        let thin = zhang_suen(&img);
        prop_assert_eq!(zhang_suen(&thin), thin);
    }
}
