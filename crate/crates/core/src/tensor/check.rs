use rand::Rng;

use super::{Gradients, ParamId, ParamStore};

/// One scalar entry of a stored parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coord {
    pub param: ParamId,
    pub index: usize,
}

/// Picks `n` coordinates: a parameter block uniformly, then an entry within it.
///
/// Sampling per block keeps small blocks (biases, the attention pooler) from
/// being drowned out by the embedding tables.
pub fn sample_coords<R: Rng + ?Sized>(store: &ParamStore, n: usize, rng: &mut R) -> Vec<Coord> {
    if store.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let param = ParamId(rng.gen_range(0..store.len()));
            let index = rng.gen_range(0..store.get(param).numel());
            Coord { param, index }
        })
        .collect()
}

/// Like [`sample_coords`] but only over the blocks in `among`.
pub fn sample_coords_among<R: Rng + ?Sized>(
    store: &ParamStore,
    among: &[ParamId],
    n: usize,
    rng: &mut R,
) -> Vec<Coord> {
    if among.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let param = among[rng.gen_range(0..among.len())];
            let index = rng.gen_range(0..store.get(param).numel());
            Coord { param, index }
        })
        .collect()
}

/// Largest relative disagreement between `analytic` and a central difference
/// of `f` over `coords`:
/// `|a − fd| / (|a| + |fd| + 1e-12)`.
///
/// `f` must be a deterministic function of the parameters. Each coordinate is
/// restored after probing.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &mut ParamStore,
    analytic: &Gradients,
    coords: &[Coord],
    h: f64,
) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut worst = 0.0f64;
    for c in coords {
        let orig = params.get(c.param).data()[c.index];
        params.get_mut(c.param).data_mut()[c.index] = orig + h;
        let up = f(params);
        params.get_mut(c.param).data_mut()[c.index] = orig - h;
        let down = f(params);
        params.get_mut(c.param).data_mut()[c.index] = orig;

        let fd = (up - down) / (2.0 * h);
        let a = analytic.get(c.param)[c.index];
        let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-12);
        worst = worst.max(rel);
    }
    worst
}
