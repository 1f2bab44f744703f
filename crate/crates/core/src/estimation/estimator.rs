use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{rational, EstimationError, TrialRecord};

pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Floor on each rational-baseline denominator.
pub const RATIONAL_FLOOR: f64 = 1e-6;

/// Performance-estimator families. Parameter layouts (`m` sources):
///
/// | kind | form | params |
/// |---|---|---|
/// | `affine_combinewad` | `a1 W + a0` | `[a1, a0]` |
/// | `enhanced_combinewad` | `sum_i (b2_i p_i^2 + b1_i p_i + b0) W + sum_i c1_i p_i` | `[b2; m, b1; m, b0, c1; m]` |
/// | `delta_form` | `v_ref + d.(p - p_ref) + e (W - w_ref)` | `[v_ref, w_ref, p_ref; m, d; m, e]` |
/// | `linear` | `a ln N + b.p + c` | `[a, b; m, c]` |
/// | `pseudo_quadratic` | `sum_i (c2_i p_i^2 + c1_i p_i + c0) + b ln N` | `[c2; m, c1; m, c0, b]` |
/// | `quadratic` | pseudo-quadratic `+ sum_{j<=i} c3_ij p_i p_j` | `[c2; m, c1; m, c0, b, c3; m(m+1)/2]` |
/// | `rational` | `sum_i 1 / max(sum_j c_ij p_j, floor) + b ln N` | `[c; m*m row-major, b]` |
/// | `aggwad` | `a W + b.p + c`, with `W` the aggregated pairwise distance | `[a, b; m, c]` |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    AffineCombinewad,
    EnhancedCombinewad,
    DeltaForm,
    Linear,
    PseudoQuadratic,
    Quadratic,
    Rational,
    Aggwad,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::AffineCombinewad,
        EstimatorKind::EnhancedCombinewad,
        EstimatorKind::DeltaForm,
        EstimatorKind::Linear,
        EstimatorKind::PseudoQuadratic,
        EstimatorKind::Quadratic,
        EstimatorKind::Rational,
        EstimatorKind::Aggwad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::AffineCombinewad => "affine_combinewad",
            EstimatorKind::EnhancedCombinewad => "enhanced_combinewad",
            EstimatorKind::DeltaForm => "delta_form",
            EstimatorKind::Linear => "linear",
            EstimatorKind::PseudoQuadratic => "pseudo_quadratic",
            EstimatorKind::Quadratic => "quadratic",
            EstimatorKind::Rational => "rational",
            EstimatorKind::Aggwad => "aggwad",
        }
    }

    pub fn parse(s: &str) -> Result<Self, EstimationError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EstimationError::UnknownKind(s.to_string()))
    }

    pub fn num_params(self, m: usize) -> usize {
        match self {
            EstimatorKind::AffineCombinewad => 2,
            EstimatorKind::EnhancedCombinewad => 3 * m + 1,
            EstimatorKind::DeltaForm => 2 * m + 3,
            EstimatorKind::Linear | EstimatorKind::Aggwad => m + 2,
            EstimatorKind::PseudoQuadratic => 2 * m + 2,
            EstimatorKind::Quadratic => 2 * m + 2 + m * (m + 1) / 2,
            EstimatorKind::Rational => m * m + 1,
        }
    }

    /// Kinds without a budget term only make sense at a single scale.
    pub fn scale_specific(self) -> bool {
        matches!(
            self,
            EstimatorKind::AffineCombinewad
                | EstimatorKind::EnhancedCombinewad
                | EstimatorKind::DeltaForm
                | EstimatorKind::Aggwad
        )
    }

    /// Whether predictions depend on the distance input.
    pub fn uses_distance(self) -> bool {
        matches!(
            self,
            EstimatorKind::AffineCombinewad
                | EstimatorKind::EnhancedCombinewad
                | EstimatorKind::DeltaForm
                | EstimatorKind::Aggwad
        )
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEstimator {
    pub kind: EstimatorKind,
    pub params: Vec<f64>,
    pub r2_train: f64,
    pub m: usize,
    pub n_fit: usize,
}

/// Coefficient of determination; `degenerate` marks zero-variance targets,
/// for which the value is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSquared {
    pub value: f64,
    pub degenerate: bool,
}

fn ln_n(n: usize) -> f64 {
    (n as f64).ln()
}

/// Regression features of the linear-in-parameters kinds, in layout order,
/// with a flag marking features proportional to `W`. For the delta form the
/// features are the displacements from the anchor.
fn features(kind: EstimatorKind, m: usize, p: &[f64], w: f64, n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut f = Vec::with_capacity(kind.num_params(m));
    let mut in_w = Vec::with_capacity(kind.num_params(m));
    let mut push = |v: f64, w_term: bool, f: &mut Vec<f64>| {
        f.push(v);
        in_w.push(w_term);
    };
    match kind {
        EstimatorKind::AffineCombinewad => {
            push(w, true, &mut f);
            push(1.0, false, &mut f);
        }
        EstimatorKind::EnhancedCombinewad => {
            p.iter().for_each(|pi| push(pi * pi * w, true, &mut f));
            p.iter().for_each(|pi| push(pi * w, true, &mut f));
            push(m as f64 * w, true, &mut f);
            p.iter().for_each(|&pi| push(pi, false, &mut f));
        }
        EstimatorKind::Linear => {
            push(ln_n(n), false, &mut f);
            p.iter().for_each(|&pi| push(pi, false, &mut f));
            push(1.0, false, &mut f);
        }
        EstimatorKind::PseudoQuadratic | EstimatorKind::Quadratic => {
            p.iter().for_each(|pi| push(pi * pi, false, &mut f));
            p.iter().for_each(|&pi| push(pi, false, &mut f));
            push(m as f64, false, &mut f);
            push(ln_n(n), false, &mut f);
            if kind == EstimatorKind::Quadratic {
                for i in 0..m {
                    for j in 0..=i {
                        push(p[i] * p[j], false, &mut f);
                    }
                }
            }
        }
        EstimatorKind::Aggwad => {
            push(w, true, &mut f);
            p.iter().for_each(|&pi| push(pi, false, &mut f));
            push(1.0, false, &mut f);
        }
        EstimatorKind::DeltaForm | EstimatorKind::Rational => unreachable!("not a plain linear form"),
    }
    (f, in_w)
}

fn check_records(records: &[TrialRecord], kind: EstimatorKind) -> Result<usize, EstimationError> {
    let first = records.first().ok_or(EstimationError::EmptyRecords)?;
    let m = first.p.len();
    for r in records {
        r.validate()?;
        if r.p.len() != m {
            return Err(EstimationError::DimensionMismatch { expected: m, got: r.p.len() });
        }
        if kind.scale_specific() && r.n != first.n {
            return Err(EstimationError::MixedBudgets(kind, first.n, r.n));
        }
    }
    Ok(m)
}

/// Ridge least squares via SVD: `argmin |X b - y|^2 + ridge |b|^2`.
pub(super) fn ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<DVector<f64>, EstimationError> {
    let svd = x.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().expect("requested"), svd.v_t.as_ref().expect("requested"));
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > smax * 1e-12).count();
    if ridge == 0.0 && rank < x.ncols() {
        return Err(EstimationError::RankDeficient { rank, params: x.ncols() });
    }
    let uty = u.transpose() * y;
    let mut coef = DVector::zeros(svd.singular_values.len());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let denom = s * s + ridge;
        if denom > 0.0 && (ridge > 0.0 || s > smax * 1e-12) {
            coef[k] = s * uty[k] / denom;
        }
    }
    Ok(v_t.transpose() * coef)
}

fn distance_scale(records: &[TrialRecord]) -> f64 {
    let ws: Vec<f64> = records.iter().map(|r| r.w).collect();
    let s = crate::stats::std_dev(&ws);
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Least-squares fit of one estimator family.
pub fn fit(records: &[TrialRecord], kind: EstimatorKind, ridge: f64) -> Result<FittedEstimator, EstimationError> {
    if !(ridge >= 0.0) {
        return Err(EstimationError::InvalidRidge(ridge));
    }
    let m = check_records(records, kind)?;
    let n_fit = records.iter().map(|r| r.n).max().expect("nonempty");
    let params = match kind {
        EstimatorKind::Rational => rational::fit(records, m)?,
        EstimatorKind::DeltaForm => fit_delta(records, m, ridge)?,
        _ => {
            // distances are rescaled to unit spread for conditioning; the
            // forms are homogeneous in W so only the W-terms need unscaling
            let scale = distance_scale(records);
            let rows: Vec<(Vec<f64>, Vec<bool>)> = records
                .iter()
                .map(|r| features(kind, m, &r.p, r.w / scale, r.n))
                .collect();
            let in_w = rows[0].1.clone();
            let x = DMatrix::from_fn(records.len(), in_w.len(), |i, j| rows[i].0[j]);
            let y = DVector::from_iterator(records.len(), records.iter().map(|r| r.v));
            let beta = ridge_solve(&x, &y, ridge)?;
            beta.iter()
                .zip(&in_w)
                .map(|(&b, &w_term)| if w_term { b / scale } else { b })
                .collect()
        }
    };
    if params.iter().any(|p| !p.is_finite()) {
        return Err(EstimationError::NonFinite);
    }
    let mut est = FittedEstimator {
        kind,
        params,
        r2_train: 0.0,
        m,
        n_fit,
    };
    est.r2_train = r_squared(&est, records)?.value;
    Ok(est)
}

/// Anchor at the first record and regress `V - v_ref` on `(p - p_ref, W - w_ref)`.
fn fit_delta(records: &[TrialRecord], m: usize, ridge: f64) -> Result<Vec<f64>, EstimationError> {
    let anchor = &records[0];
    let scale = distance_scale(records);
    let x = DMatrix::from_fn(records.len(), m + 1, |i, j| {
        let r = &records[i];
        if j < m {
            r.p[j] - anchor.p[j]
        } else {
            (r.w - anchor.w) / scale
        }
    });
    let y = DVector::from_iterator(records.len(), records.iter().map(|r| r.v - anchor.v));
    let beta = ridge_solve(&x, &y, ridge)?;
    let mut params = vec![anchor.v, anchor.w];
    params.extend(&anchor.p);
    params.extend(beta.iter().take(m));
    params.push(beta[m] / scale);
    Ok(params)
}

impl FittedEstimator {
    pub fn from_params(kind: EstimatorKind, m: usize, params: Vec<f64>, n_fit: usize) -> Result<Self, EstimationError> {
        if params.len() != kind.num_params(m) {
            return Err(EstimationError::ParamLength {
                kind,
                expected: kind.num_params(m),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(EstimationError::NonFinite);
        }
        Ok(Self {
            kind,
            params,
            r2_train: f64::NAN,
            m,
            n_fit,
        })
    }

    fn check_dim(&self, p: &[f64]) -> Result<(), EstimationError> {
        if p.len() != self.m {
            return Err(EstimationError::DimensionMismatch { expected: self.m, got: p.len() });
        }
        Ok(())
    }

    /// Unclamped value of the fitted form.
    pub fn evaluate(&self, p: &[f64], w: f64, n: usize) -> Result<f64, EstimationError> {
        self.check_dim(p)?;
        let m = self.m;
        let th = &self.params;
        Ok(match self.kind {
            EstimatorKind::DeltaForm => {
                let (v_ref, w_ref) = (th[0], th[1]);
                let p_ref = &th[2..2 + m];
                let d = &th[2 + m..2 + 2 * m];
                let e = th[2 + 2 * m];
                v_ref + (0..m).map(|i| d[i] * (p[i] - p_ref[i])).sum::<f64>() + e * (w - w_ref)
            }
            EstimatorKind::Rational => rational::evaluate(th, m, p, n),
            kind => {
                let (f, _) = features(kind, m, p, w, n);
                f.iter().zip(th).map(|(a, b)| a * b).sum()
            }
        })
    }

    /// Prediction clamped to `[0, 1]`.
    pub fn predict(&self, p: &[f64], w: f64, n: usize) -> Result<f64, EstimationError> {
        Ok(self.evaluate(p, w, n)?.clamp(0.0, 1.0))
    }

    /// Partial derivatives of the unclamped form: `(df/dp, df/dW)`.
    pub fn partials(&self, p: &[f64], w: f64, _n: usize) -> Result<(Vec<f64>, f64), EstimationError> {
        self.check_dim(p)?;
        let m = self.m;
        let th = &self.params;
        Ok(match self.kind {
            EstimatorKind::AffineCombinewad => (vec![0.0; m], th[0]),
            EstimatorKind::EnhancedCombinewad => {
                let (b2, b1, b0, c1) = (&th[..m], &th[m..2 * m], th[2 * m], &th[2 * m + 1..]);
                let dp = (0..m).map(|i| (2.0 * b2[i] * p[i] + b1[i]) * w + c1[i]).collect();
                let dw = (0..m).map(|i| b2[i] * p[i] * p[i] + b1[i] * p[i]).sum::<f64>() + m as f64 * b0;
                (dp, dw)
            }
            EstimatorKind::DeltaForm => (th[2 + m..2 + 2 * m].to_vec(), th[2 + 2 * m]),
            EstimatorKind::Linear => (th[1..1 + m].to_vec(), 0.0),
            EstimatorKind::Aggwad => (th[1..1 + m].to_vec(), th[0]),
            EstimatorKind::PseudoQuadratic | EstimatorKind::Quadratic => {
                let (c2, c1) = (&th[..m], &th[m..2 * m]);
                let mut dp: Vec<f64> = (0..m).map(|i| 2.0 * c2[i] * p[i] + c1[i]).collect();
                if self.kind == EstimatorKind::Quadratic {
                    let c3 = &th[2 * m + 2..];
                    let mut k = 0;
                    for i in 0..m {
                        for j in 0..=i {
                            dp[i] += c3[k] * p[j];
                            dp[j] += c3[k] * p[i];
                            k += 1;
                        }
                    }
                }
                (dp, 0.0)
            }
            EstimatorKind::Rational => (rational::gradient_p(th, m, p), 0.0),
        })
    }
}

pub fn predict(est: &FittedEstimator, p: &[f64], w: f64, n: usize) -> Result<f64, EstimationError> {
    est.predict(p, w, n)
}

pub fn r_squared(est: &FittedEstimator, records: &[TrialRecord]) -> Result<RSquared, EstimationError> {
    if records.is_empty() {
        return Err(EstimationError::EmptyRecords);
    }
    let mean = records.iter().map(|r| r.v).sum::<f64>() / records.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for r in records {
        let pred = est.predict(&r.p, r.w, r.n)?;
        ss_res += (r.v - pred).powi(2);
        ss_tot += (r.v - mean).powi(2);
    }
    if records.iter().all(|r| r.v == records[0].v) {
        log::warn!("r-squared undefined for zero-variance targets; reporting 0");
        return Ok(RSquared {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(RSquared {
        value: 1.0 - ss_res / ss_tot,
        degenerate: false,
    })
}
