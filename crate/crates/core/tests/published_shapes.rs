use completep::scaling::{ShapePoint, DEFAULT_SEQ_LEN, DEFAULT_TPP, DEFAULT_VOCAB};

/// Published shapes: (non-embedding M, total M, tokens B, FLOPs, batch, N, L).
const ROWS: [(f64, f64, f64, f64, usize, usize, usize); 25] = [
    (49.8, 75.5, 1.5, 1.25e+18, 152, 256, 63),
    (49.3, 81.5, 1.6, 1.26e+18, 152, 320, 40),
    (49.7, 88.3, 1.8, 1.34e+18, 152, 384, 28),
    (50.4, 101.9, 2.0, 1.56e+18, 168, 512, 16),
    (49.2, 113.6, 2.3, 1.76e+18, 176, 640, 10),
    (49.6, 126.8, 2.5, 2.07e+18, 184, 768, 7),
    (48.2, 138.3, 2.8, 2.35e+18, 192, 896, 5),
    (50.4, 153.3, 3.1, 2.82e+18, 208, 1024, 4),
    (47.8, 163.6, 3.3, 3.11e+18, 216, 1152, 3),
    (47.6, 189.1, 3.8, 4.02e+18, 240, 1408, 2),
    (301.8, 346.8, 6.9, 2.38e+19, 408, 448, 125),
    (305.3, 369.6, 7.4, 2.32e+19, 408, 640, 62),
    (299.4, 383.1, 7.7, 2.27e+19, 400, 832, 36),
    (302.3, 405.2, 8.1, 2.38e+19, 408, 1024, 24),
    (314.8, 443.5, 8.9, 2.70e+19, 424, 1280, 16),
    (307.4, 468.2, 9.4, 2.85e+19, 424, 1600, 10),
    (302.1, 508.0, 10.2, 3.20e+19, 440, 2048, 6),
    (298.7, 588.2, 11.8, 4.06e+19, 472, 2880, 3),
    (1488.8, 1572.5, 31.4, 4.10e+20, 800, 832, 179),
    (1498.4, 1614.2, 32.3, 3.96e+20, 792, 1152, 94),
    (1501.6, 1656.0, 33.1, 3.91e+20, 792, 1536, 53),
    (1512.3, 1711.8, 34.2, 3.99e+20, 792, 1984, 32),
    (1487.9, 1751.6, 35.0, 4.00e+20, 792, 2624, 18),
    (1487.3, 1841.1, 36.8, 4.26e+20, 800, 3520, 10),
    (1487.0, 1943.8, 38.9, 4.62e+20, 816, 4544, 6),
];

fn shape(n: usize, l: usize) -> ShapePoint {
    ShapePoint::new(n, l, DEFAULT_VOCAB, DEFAULT_SEQ_LEN, DEFAULT_TPP).unwrap()
}

/// The published counts include LayerNorm and bias terms that `12N²L` leaves out.
#[test]
fn parameter_counts_match_published_shapes() {
    for (pn, pt, _, _, _, n, l) in ROWS {
        let s = shape(n, l);
        assert!((s.p_nonemb as f64 / (pn * 1e6) - 1.0).abs() <= 0.01, "N={n} L={l}: {} vs {pn}M", s.p_nonemb);
        assert!((s.p_total as f64 / (pt * 1e6) - 1.0).abs() <= 0.01, "N={n} L={l}: {} vs {pt}M", s.p_total);
    }
}

#[test]
fn token_budgets_match_published_shapes() {
    for (_, _, tok, _, _, n, l) in ROWS {
        let s = shape(n, l);
        assert!((s.tokens as f64 / 1e9 - tok).abs() <= 0.05 + 1e-9, "N={n} L={l}: {} vs {tok}B", s.tokens);
    }
}

#[test]
fn detailed_flops_within_band_of_published_values() {
    for (_, _, _, flops, _, n, l) in ROWS {
        let s = shape(n, l);
        let ratio = s.train_flops / flops;
        assert!((0.65..=1.35).contains(&ratio), "N={n} L={l}: {:.3e} vs {flops:.2e}", s.train_flops);
    }
}

#[test]
fn batch_law_on_published_flops() {
    for (_, _, _, flops, batch, n, l) in ROWS {
        assert_eq!(completep::scaling::batch_size_from_flops(flops), batch, "N={n} L={l}");
    }
}
