//! A small tree-structured Parzen estimator.
//!
//! History is split at the top `GAMMA` quantile. Each dimension gets an
//! independent density for the good and the bad set: Gaussian kernels plus
//! one prior component on continuous axes, smoothed frequencies on choices.
//! Candidates come from the good densities and the one with the largest
//! good/bad log ratio wins.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::space::{point_arch, Dim, Dist, Point, SearchSpace, ARCH_DIM};

pub const GAMMA: f64 = 0.25;
pub const N_CANDIDATES: usize = 24;
/// Below this many finished trials suggestions are plain prior samples.
pub const MIN_HISTORY: usize = 10;

/// Per-dimension density over the coordinate axis.
enum Density {
    Categorical(Vec<f64>),
    Kernel {
        centers: Vec<f64>,
        bandwidth: f64,
        prior: Prior,
    },
}

#[derive(Clone, Copy)]
enum Prior {
    Uniform(f64, f64),
    Normal(f64, f64),
}

impl Prior {
    fn of(dist: &Dist) -> Self {
        match (dist, dist.coord_bounds()) {
            (Dist::LogNormal { mu, sigma }, _) => Prior::Normal(*mu, *sigma),
            (_, Some((lo, hi))) => Prior::Uniform(lo, hi),
            _ => unreachable!("every bounded dimension reports bounds"),
        }
    }

    fn width(self) -> f64 {
        match self {
            Prior::Uniform(lo, hi) => (hi - lo).max(1e-12),
            Prior::Normal(_, s) => 4.0 * s,
        }
    }

    fn pdf(self, x: f64) -> f64 {
        match self {
            Prior::Uniform(lo, hi) => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo).max(1e-12)
                } else {
                    0.0
                }
            }
            Prior::Normal(m, s) => normal_pdf(x, m, s),
        }
    }

    fn sample(self, rng: &mut impl Rng) -> f64 {
        match self {
            Prior::Uniform(lo, hi) => rng.random_range(lo..=hi),
            Prior::Normal(m, s) => Normal::new(m, s).expect("positive sigma").sample(rng),
        }
    }
}

fn normal_pdf(x: f64, m: f64, s: f64) -> f64 {
    let z = (x - m) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

impl Density {
    fn fit(dist: &Dist, obs: &[f64]) -> Self {
        if let Dist::Choice { options } = dist {
            let mut w = vec![1.0; options.len()];
            for &o in obs {
                w[o as usize] += 1.0;
            }
            let z: f64 = w.iter().sum();
            return Density::Categorical(w.into_iter().map(|v| v / z).collect());
        }
        let prior = Prior::of(dist);
        let n = obs.len() as f64;
        let spread = if obs.len() > 1 {
            let m = obs.iter().sum::<f64>() / n;
            (obs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        // Scott's rule, kept between a hundredth and the whole prior width.
        let w = prior.width();
        let bandwidth = if spread > 0.0 { spread * n.powf(-0.2) } else { 0.1 * w }.clamp(0.01 * w, w);
        Density::Kernel {
            centers: obs.to_vec(),
            bandwidth,
            prior,
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        match self {
            Density::Categorical(p) => p[x as usize],
            Density::Kernel {
                centers,
                bandwidth,
                prior,
            } => {
                let k = centers.len() as f64 + 1.0;
                (prior.pdf(x) + centers.iter().map(|&c| normal_pdf(x, c, *bandwidth)).sum::<f64>()) / k
            }
        }
    }

    fn sample(&self, dist: &Dist, rng: &mut impl Rng) -> f64 {
        match self {
            Density::Categorical(p) => {
                let mut u: f64 = rng.random();
                for (i, &pi) in p.iter().enumerate() {
                    if u < pi {
                        return i as f64;
                    }
                    u -= pi;
                }
                (p.len() - 1) as f64
            }
            Density::Kernel {
                centers,
                bandwidth,
                prior,
            } => {
                let pick = rng.random_range(0..=centers.len());
                let x = if pick == centers.len() {
                    prior.sample(rng)
                } else {
                    centers[pick] + bandwidth * rng.sample::<f64, _>(rand_distr::StandardNormal)
                };
                match dist.coord_bounds() {
                    Some((lo, hi)) => x.clamp(lo, hi),
                    None => x,
                }
            }
        }
    }
}

fn coords(dim: &Dim, pts: &[&Point]) -> Vec<f64> {
    pts.iter()
        .filter_map(|p| p.get(&dim.name).and_then(|v| dim.dist.coord(v)))
        .collect()
}

/// Next configuration to try given finished `(point, objective)` pairs,
/// where larger objectives are better.
pub fn tpe_suggest(space: &SearchSpace, history: &[(Point, f64)], rng: &mut impl Rng) -> Point {
    let finite: Vec<&(Point, f64)> = history.iter().filter(|(_, y)| y.is_finite()).collect();
    let degenerate = finite.windows(2).all(|w| w[0].1 == w[1].1);
    if finite.len() < MIN_HISTORY || degenerate {
        return space.sample(rng);
    }
    let mut order: Vec<usize> = (0..finite.len()).collect();
    order.sort_by(|&a, &b| finite[b].1.total_cmp(&finite[a].1).then(a.cmp(&b)));
    let n_good = ((GAMMA * finite.len() as f64).ceil() as usize).max(1);
    let good: Vec<&Point> = order[..n_good].iter().map(|&i| &finite[i].0).collect();
    let bad: Vec<&Point> = order[n_good..].iter().map(|&i| &finite[i].0).collect();

    let fitted: Vec<(Density, Density)> = space
        .dims
        .iter()
        .map(|d| (Density::fit(&d.dist, &coords(d, &good)), Density::fit(&d.dist, &coords(d, &bad))))
        .collect();

    let mut best: Option<(f64, Point)> = None;
    for _ in 0..N_CANDIDATES {
        let mut cand = Point::new();
        let mut score = 0.0;
        let arch_x = fitted[0].0.sample(&space.dims[0].dist, rng);
        cand.insert(ARCH_DIM.into(), space.dims[0].dist.from_coord(arch_x));
        score += fitted[0].0.pdf(arch_x).ln() - fitted[0].1.pdf(arch_x).ln();
        let arch = point_arch(&cand).expect("architecture drawn from the space");
        for (d, (l, g)) in space.dims.iter().zip(&fitted).skip(1) {
            if d.arch.is_some_and(|a| a != arch) {
                continue;
            }
            let x = l.sample(&d.dist, rng);
            let v = d.dist.from_coord(x);
            // Score the value actually emitted, after rounding and clamping.
            let xs = d.dist.coord(&v).expect("value from the same dimension");
            score += l.pdf(xs).max(1e-300).ln() - g.pdf(xs).max(1e-300).ln();
            cand.insert(d.name.clone(), v);
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    best.expect("at least one candidate").1
}
