//! Proportion losses over two-class proportions `(r, 1 - r)` and their
//! derivatives with respect to the estimated proportion.
//!
//! All three training modes reduce to one function: the KL proportion loss
//! scaled by the focal factor `|r - r_hat|^gamma`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{IntervalId, ProportionInterval};
use crate::error::{Error, Result};

/// Clamp applied to the estimated proportion before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossMode {
    /// Plain proportion loss (uniform gamma = 0).
    Prop,
    /// Focal proportion loss with uniform gamma = 2.
    FocalProp,
    /// Weighted focal proportion loss: per-interval gamma.
    #[serde(rename = "WFL")]
    Wfl,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Prop => "Prop",
            LossMode::FocalProp => "FocalProp",
            LossMode::Wfl => "WFL",
        }
    }

    pub fn gamma_for(self, interval: &ProportionInterval) -> f64 {
        match self {
            LossMode::Prop => 0.0,
            LossMode::FocalProp => 2.0,
            LossMode::Wfl => interval.gamma,
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prop" => Ok(LossMode::Prop),
            "focalprop" | "focal-prop" | "focal_prop" => Ok(LossMode::FocalProp),
            "wfl" => Ok(LossMode::Wfl),
            _ => Err(Error::Config(format!("unknown loss mode '{s}'"))),
        }
    }
}

/// Loss value and its derivative with respect to `r_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: f64,
}

/// Ground-truth and estimated positive proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionPair {
    pub r: f64,
    pub r_hat: f64,
}

impl ProportionPair {
    pub fn new(r: f64, r_hat: f64) -> Self {
        Self { r, r_hat }
    }

    fn clamped_hat(&self) -> f64 {
        self.r_hat.clamp(EPS, 1.0 - EPS)
    }
}

/// `t * ln(t / q)` with `0 * ln 0 = 0`.
#[inline]
fn xlogx_over(t: f64, q: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * (t / q).ln()
    }
}

/// KL divergence between `(r, 1-r)` and `(r_hat, 1-r_hat)`.
pub fn proportion_loss(p: ProportionPair) -> LossGrad {
    let q = p.clamped_hat();
    let r = p.r;
    let loss = xlogx_over(r, q) + xlogx_over(1.0 - r, 1.0 - q);
    let grad = -r / q + (1.0 - r) / (1.0 - q);
    LossGrad {
        // rounding can leave a tiny negative residue when q == r
        loss: loss.max(0.0),
        grad,
    }
}

/// `|r - r_hat|^gamma * KL(r || r_hat)`, with `x^0 = 1` for every `x`.
pub fn weighted_focal_proportion_loss(p: ProportionPair, gamma: f64) -> LossGrad {
    assert!(gamma.is_finite() && gamma >= 0.0, "gamma must be finite and >= 0");
    let kl = proportion_loss(p);
    if gamma == 0.0 {
        return kl;
    }
    let q = p.clamped_hat();
    let gap = p.r - q;
    let a = gap.abs();
    let focal = a.powf(gamma);
    // d|r - q|^gamma / dq = -gamma * sign(r - q) * |r - q|^(gamma - 1), taken
    // as 0 at q == r.
    let dfocal = if a == 0.0 {
        0.0
    } else {
        -gamma * gap.signum() * a.powf(gamma - 1.0)
    };
    LossGrad {
        loss: focal * kl.loss,
        grad: dfocal * kl.loss + focal * kl.grad,
    }
}

/// Loss of an estimate against an interval label under a training mode.
pub fn loss_for_interval(interval: &ProportionInterval, r_hat: f64, mode: LossMode) -> LossGrad {
    weighted_focal_proportion_loss(
        ProportionPair::new(interval.midpoint, r_hat),
        mode.gamma_for(interval),
    )
}

/// One sampled point of a loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub interval: IntervalId,
    pub mode: LossMode,
    pub r_hat: f64,
    pub loss: f64,
    pub grad: f64,
}

/// Modes drawn in the loss-curve figure: uniform gamma = 2 and the weighted
/// schedule.
pub const CURVE_MODES: [LossMode; 2] = [LossMode::FocalProp, LossMode::Wfl];

/// Samples every interval's loss on `r_hat = 0.001, 0.002, ..., 0.999`.
pub fn loss_curves() -> Vec<CurvePoint> {
    let mut out = Vec::with_capacity(5 * 2 * 999);
    for mode in CURVE_MODES {
        for id in IntervalId::ALL {
            let iv = id.interval();
            for k in 1..=999 {
                let r_hat = k as f64 / 1000.0;
                let lg = loss_for_interval(&iv, r_hat, mode);
                out.push(CurvePoint {
                    interval: id,
                    mode,
                    r_hat,
                    loss: lg.loss,
                    grad: lg.grad,
                });
            }
        }
    }
    out
}

/// Writes `loss_curves.csv` and a two-panel `loss_curves.ppm` plot into `out`.
pub fn plot_loss_curves(out: &Path) -> Result<Vec<CurvePoint>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let curves = loss_curves();
    let csv_path = out.join("loss_curves.csv");
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?,
    );
    let io = |e| Error::io(&csv_path, e);
    writeln!(csv, "interval,mode,r_hat,loss,grad").map_err(io)?;
    for p in &curves {
        writeln!(
            csv,
            "{},{},{:.3},{:.12e},{:.12e}",
            p.interval,
            p.mode.name(),
            p.r_hat,
            p.loss,
            p.grad
        )
        .map_err(io)?;
    }
    csv.flush().map_err(io)?;
    render_curves(&out.join("loss_curves.ppm"), &curves)?;
    Ok(curves)
}

const PALETTE: [[u8; 3]; 5] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
];

fn render_curves(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    const PW: usize = 400;
    const H: usize = 300;
    const Y_MAX: f64 = 0.2;
    let width = 2 * PW;
    let mut rgb = vec![255u8; width * H * 3];
    for (panel, mode) in CURVE_MODES.into_iter().enumerate() {
        let x0 = panel * PW;
        for row in 0..H {
            let i = (row * width + x0) * 3;
            rgb[i..i + 3].copy_from_slice(&[0, 0, 0]);
        }
        for p in curves.iter().filter(|p| p.mode == mode) {
            let col = x0 + ((p.r_hat * (PW - 1) as f64).round() as usize).min(PW - 1);
            let y = (p.loss / Y_MAX).min(1.0);
            let row = H - 1 - ((y * (H - 1) as f64).round() as usize);
            let i = (row * width + col) * 3;
            rgb[i..i + 3].copy_from_slice(&PALETTE[p.interval.index()]);
        }
    }
    crate::pnm::write_rgb8(path, width, H, rgb)
}
