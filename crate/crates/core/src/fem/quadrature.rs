use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

/// Gauss–Legendre rule of the given order mapped to `[0, 1]` as `(node, weight)` pairs.
pub(crate) fn unit_rule(order: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(order).expect("order must be positive"));
    rule.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}

macro_rules! cached_rule {
    ($name:ident, $order:expr) => {
        pub(crate) fn $name() -> &'static [(f64, f64)] {
            static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
            RULE.get_or_init(|| unit_rule($order))
        }
    };
}

cached_rule!(gauss5, 5);
cached_rule!(gauss16, 16);
cached_rule!(gauss32, 32);

/// Integrate `f` over `[lo, hi]` with a `[0, 1]` rule.
pub(crate) fn integrate(rule: &[(f64, f64)], lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let len = hi - lo;
    rule.iter().map(|&(t, w)| w * f(lo + t * len)).sum::<f64>() * len
}
