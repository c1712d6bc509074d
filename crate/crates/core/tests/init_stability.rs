use completep::model::{ModelConfig, Transformer};
use completep::parameterization::{resolve_plan, BaseHyperparams, ParamKind};

const DEPTHS: [usize; 7] = [2, 4, 8, 16, 32, 64, 128];

/// Smallest and largest `‖h^ℓ‖²/N` over all residual merges, relative to the embedding output.
fn init_power_range(kind: ParamKind, layers: usize) -> (f64, f64) {
    let base = BaseHyperparams { n_base: 64, l_base: 2, ..BaseHyperparams::default() };
    let plan = resolve_plan(kind, &base, 64, layers).unwrap();
    let config = ModelConfig { width: 64, layers, d_head: 16, vocab_size: 256, seq_len: 16 };
    let model = Transformer::<f64>::new(config, plan, 3).unwrap();
    let tokens: Vec<u32> = (0..32u32).map(|i| (i * 37 + 11) % 256).collect();
    let trace = model.forward(&tokens, 2).unwrap().trace;
    let h0 = trace.embedding_rms.powi(2);
    trace.entries.iter().map(|e| e.rms.powi(2) / h0).fold((f64::INFINITY, 0.0), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

#[test]
fn depth_scaled_residuals_stay_stable_at_init() {
    for kind in [ParamKind::depth_alpha(0.5).unwrap(), ParamKind::COMPLETE_P] {
        for l in DEPTHS {
            let (lo, hi) = init_power_range(kind, l);
            assert!(lo >= 1.0 / 3.0 && hi <= 3.0, "{kind:?} L={l}: range {lo:.3}..{hi:.3}");
        }
    }
}

#[test]
fn standard_parameterization_grows_with_depth() {
    let growth: Vec<f64> = DEPTHS.iter().map(|&l| init_power_range(ParamKind::Sp, l).1).collect();
    assert!(*growth.last().unwrap() > 3.0, "{growth:?}");
    assert!(growth.last() > growth.first());
}
