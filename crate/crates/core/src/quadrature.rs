//! Adaptive Gauss-Kronrod integration over the half line.
//!
//! The half line is mapped onto `[0, 1)` with `x = t / (1 - t)` and the
//! 15-point Kronrod rule (with its embedded 7-point Gauss rule) is applied
//! on a globally adaptive set of subintervals. The nodes are interior, so the
//! integrand is never evaluated at `x = 0` or `x = inf`.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;
const INITIAL_PIECES: usize = 16;

#[derive(Debug, Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Piece {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kron += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Piece {
        lo,
        hi,
        value: kron * half,
        error: ((kron - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[lo, hi]` to absolute tolerance `abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, abs_tol: f64) -> Result<f64> {
    let width = (hi - lo) / INITIAL_PIECES as f64;
    let mut pieces: Vec<Piece> = (0..INITIAL_PIECES)
        .map(|i| {
            let a = lo + width * i as f64;
            let b = if i + 1 == INITIAL_PIECES { hi } else { a + width };
            kronrod(&f, a, b)
        })
        .collect();

    loop {
        let total_err: f64 = pieces.iter().map(|p| p.error).sum();
        if !total_err.is_finite() {
            return Err(Error::Quadrature { residual: total_err });
        }
        if total_err <= abs_tol {
            return Ok(pieces.iter().map(|p| p.value).sum());
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature { residual: total_err });
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
            .expect("nonempty");
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.lo + p.hi);
        if mid <= p.lo || mid >= p.hi {
            // interval collapsed to adjacent floats
            return Err(Error::Quadrature { residual: total_err });
        }
        pieces.push(kronrod(&f, p.lo, mid));
        pieces.push(kronrod(&f, mid, p.hi));
    }
}

/// Integrates `f` over `(0, inf)` to absolute tolerance `abs_tol`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, abs_tol: f64) -> Result<f64> {
    integrate(
        |t| {
            let one_minus = 1.0 - t;
            let x = t / one_minus;
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v / (one_minus * one_minus)
            }
        },
        0.0,
        1.0,
        abs_tol,
    )
}
