//! Brute-force reference values for the 1D P1 operators.
//!
//! Everything here uses double-exponential quadrature on the raw kernel
//! `|x - y|^{-1-2s}` and no code from the solver crate.

use quadrature::double_exponential::integrate;

const TOL: f64 = 1e-14;

/// Nodal hat function on a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hat {
    pub center: f64,
    pub h: f64,
}

impl Hat {
    pub fn eval(&self, x: f64) -> f64 {
        (1.0 - (x - self.center).abs() / self.h).max(0.0)
    }

    /// Exact value at a grid node.
    fn at_node(&self, x: f64) -> f64 {
        if (x - self.center).abs() < 0.5 * self.h {
            1.0
        } else {
            0.0
        }
    }

    /// Derivative on the element `[l, r]`.
    fn slope(&self, l: f64, r: f64) -> f64 {
        let mid = 0.5 * (l + r);
        if (mid - self.center).abs() >= self.h {
            0.0
        } else if mid < self.center {
            1.0 / self.h
        } else {
            -1.0 / self.h
        }
    }

    fn elements(&self) -> [(f64, f64); 2] {
        [(self.center - self.h, self.center), (self.center, self.center + self.h)]
    }
}

/// Half of an element, parametrised by the distance `t` from its end node.
/// Points near a node are then represented without cancellation.
#[derive(Debug, Clone, Copy)]
struct Half {
    anchor: f64,
    dir: f64,
    elem: (f64, f64),
}

impl Half {
    fn of(elem: (f64, f64)) -> [Half; 2] {
        [
            Half {
                anchor: elem.0,
                dir: 1.0,
                elem,
            },
            Half {
                anchor: elem.1,
                dir: -1.0,
                elem,
            },
        ]
    }

    fn len(&self) -> f64 {
        0.5 * (self.elem.1 - self.elem.0)
    }

    fn value(&self, f: &Hat, t: f64) -> f64 {
        f.at_node(self.anchor) + self.dir * t * f.slope(self.elem.0, self.elem.1)
    }

    /// `(x - l, r - x)` for the point at offset `t`.
    fn ends(&self, t: f64) -> (f64, f64) {
        let full = self.elem.1 - self.elem.0;
        if self.dir > 0.0 {
            (t, full - t)
        } else {
            (full - t, t)
        }
    }
}

fn same(a: f64, b: f64, h: f64) -> bool {
    (a - b).abs() < 1e-9 * h
}

fn de(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    integrate(f, a, b, TOL).integral
}

/// `c_{1,s} = 4^s s Γ(1/2 + s) / (√π Γ(1 - s))`.
pub fn c1(s: f64) -> f64 {
    4f64.powf(s) * s * gamma(0.5 + s) / (std::f64::consts::PI.sqrt() * gamma(1.0 - s))
}

/// Lanczos approximation with reflection below 1/2.
fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    const G: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (k, g) in G.iter().enumerate().skip(1) {
        a += g / (x + k as f64);
    }
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// `a(φ, ψ) = (c/2) ∬_{R×R} (φ(x)-φ(y))(ψ(x)-ψ(y)) |x-y|^{-1-2s}`.
///
/// With `U = supp φ ∪ supp ψ` the double integral reduces to `U × U` plus
/// `2 ∫_U φψ(x) ∫_{R\U} |x-y|^{-1-2s} dy dx`, whose inner integral is exact.
/// On `U × U` the inner integral over the element containing `x` is exact as
/// well; all other pieces use nested double-exponential quadrature.
pub fn stiffness_entry(s: f64, a: Hat, b: Hat) -> f64 {
    let h = a.h;
    let e = 1.0 + 2.0 * s;
    let mut elems: Vec<(f64, f64)> = a.elements().into_iter().chain(b.elements()).collect();
    elems.sort_by(|p, q| p.0.total_cmp(&q.0));
    elems.dedup_by(|p, q| same(p.0, q.0, h));
    let lo = elems[0].0;
    let hi = elems[elems.len() - 1].1;
    let overlap = (a.center - b.center).abs() < 1.5 * h;

    let inner = |hx: &Half, t1: f64| -> f64 {
        let (sa, sb) = (a.slope(hx.elem.0, hx.elem.1), b.slope(hx.elem.0, hx.elem.1));
        let (dl, dr) = hx.ends(t1);
        let mut acc = sa * sb * (dl.powf(2.0 - 2.0 * s) + dr.powf(2.0 - 2.0 * s)) / (2.0 - 2.0 * s);
        let (ax, bx) = (hx.value(&a, t1), hx.value(&b, t1));
        for &q in &elems {
            if same(q.0, hx.elem.0, h) {
                continue;
            }
            for hy in Half::of(q) {
                acc += de(
                    |t2| {
                        let d = if same(hy.anchor, hx.anchor, h) {
                            t1 + t2
                        } else {
                            ((hy.anchor - hx.anchor) + hy.dir * t2 - hx.dir * t1).abs()
                        };
                        (ax - hy.value(&a, t2)) * (bx - hy.value(&b, t2)) * d.powf(-e)
                    },
                    0.0,
                    hy.len(),
                );
            }
        }
        acc
    };

    let mut total = 0.0;
    for &el in &elems {
        for hx in Half::of(el) {
            total += de(
                |t1| {
                    let mut v = 0.5 * inner(&hx, t1);
                    if overlap {
                        let dl = if same(hx.anchor, lo, h) {
                            t1
                        } else {
                            (hx.anchor - lo) + hx.dir * t1
                        };
                        let dr = if same(hx.anchor, hi, h) {
                            t1
                        } else {
                            (hi - hx.anchor) - hx.dir * t1
                        };
                        let w = (dl.powf(-2.0 * s) + dr.powf(-2.0 * s)) / (2.0 * s);
                        v += hx.value(&a, t1) * hx.value(&b, t1) * w;
                    }
                    v
                },
                0.0,
                hx.len(),
            );
        }
    }
    c1(s) * total
}

/// `((-Δ)^s φ)(x) = -c ∫ φ(y) |x-y|^{-1-2s} dy` for `x` outside `supp φ`.
pub fn observation_entry(s: f64, x: f64, a: Hat) -> f64 {
    let e = 1.0 + 2.0 * s;
    let total: f64 = a
        .elements()
        .iter()
        .map(|&(l, r)| de(|y| a.eval(y) * (x - y).abs().powf(-e), l, r))
        .sum();
    -c1(s) * total
}
