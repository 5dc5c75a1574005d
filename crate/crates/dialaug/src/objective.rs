//! Training objectives: two-view in-batch ranking cross-entropy, the
//! multi-positive temperature-scaled contrastive loss, and their weighted
//! combination. All losses are mean-reduced over batch terms and return
//! analytic gradients with respect to the input embedding matrices.

use ndarray::Array2;

use crate::error::{Error, Result};

/// CLS and projected vectors for a whole batch. `ctx`/`aug`/`resp` are
/// B x d_model; the `z_*` matrices are B x proj_dim.
#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    pub ctx: Array2<f64>,
    pub aug: Array2<f64>,
    pub resp: Array2<f64>,
    pub z_ctx: Array2<f64>,
    pub z_aug: Array2<f64>,
    pub z_resp: Array2<f64>,
}

impl BatchEmbeddings {
    pub fn batch_size(&self) -> usize {
        self.ctx.nrows()
    }

    fn validate(&self) -> Result<()> {
        let b = self.ctx.nrows();
        if [
            self.aug.nrows(),
            self.resp.nrows(),
            self.z_ctx.nrows(),
            self.z_aug.nrows(),
            self.z_resp.nrows(),
        ]
        .iter()
        .any(|&n| n != b)
        {
            return Err(Error::ShapeMismatch(
                "inconsistent batch size across embeddings".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the auxiliary contrastive loss.
    pub lambda_cl: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.5,
            lambda_cl: 0.5,
        }
    }
}

/// Dot-product score matrix: out[i][k] = a_i . b_k. The diagonal holds the
/// gold context/response scores.
pub fn score_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "score_matrix dims {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(a.dot(&b.t()))
}

#[derive(Debug, Clone)]
pub struct RankingGrads {
    pub d_ctx: Array2<f64>,
    pub d_aug: Array2<f64>,
    pub d_resp: Array2<f64>,
}

/// Row-wise softmax cross-entropy against the diagonal; returns the mean
/// loss and d(loss)/d(scores).
fn softmax_ce_rows(scores: &Array2<f64>) -> (f64, Array2<f64>) {
    let b = scores.nrows();
    let mut dscores = Array2::zeros(scores.raw_dim());
    let mut loss = 0.0;
    for i in 0..b {
        let row = scores.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() + max - row[i];
        for k in 0..b {
            let p = exps[k] / sum;
            dscores[[i, k]] = (p - if k == i { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    (loss / b as f64, dscores)
}

/// Two-view in-batch ranking loss: softmax cross-entropy over the batch's
/// responses, computed once from the original context and once from the
/// augmented view, equally weighted.
pub fn ranking_ce_loss(embeds: &BatchEmbeddings) -> Result<(f64, RankingGrads)> {
    embeds.validate()?;
    let s_ctx = score_matrix(&embeds.ctx, &embeds.resp)?;
    let s_aug = score_matrix(&embeds.aug, &embeds.resp)?;
    let (loss_ctx, mut ds_ctx) = softmax_ce_rows(&s_ctx);
    let (loss_aug, mut ds_aug) = softmax_ce_rows(&s_aug);
    ds_ctx.mapv_inplace(|v| v * 0.5);
    ds_aug.mapv_inplace(|v| v * 0.5);

    let d_ctx = ds_ctx.dot(&embeds.resp);
    let d_aug = ds_aug.dot(&embeds.resp);
    let d_resp = ds_ctx.t().dot(&embeds.ctx) + ds_aug.t().dot(&embeds.aug);
    Ok((
        0.5 * (loss_ctx + loss_aug),
        RankingGrads {
            d_ctx,
            d_aug,
            d_resp,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub d_z_ctx: Array2<f64>,
    pub d_z_aug: Array2<f64>,
    pub d_z_resp: Array2<f64>,
}

/// Multi-positive contrastive loss. For instance i the positive pairs are
/// (z_C, z_C'), (z_C, z_R), (z_C', z_R), each taken in both orders (six
/// terms per i). A term with anchor a is
///
///   -log( exp(a . pos / tau) / sum over k != i, q in {C, C', R} of
///         exp(a . z_q_k / tau) )
///
/// The denominator excludes every index-i entry, including the positive
/// itself. The loss is the mean over all 6B terms.
pub fn contrastive_loss(embeds: &BatchEmbeddings, tau: f64) -> Result<(f64, ContrastiveGrads)> {
    embeds.validate()?;
    if tau <= 0.0 {
        return Err(Error::InvalidConfig("tau must be > 0".into()));
    }
    let b = embeds.batch_size();
    if b < 2 {
        return Err(Error::InvalidInput(
            "contrastive loss needs batch size >= 2".into(),
        ));
    }
    let p = embeds.z_ctx.ncols();

    // Stack the three views: rows [0, B) = C, [B, 2B) = C', [2B, 3B) = R.
    let mut z = Array2::zeros((3 * b, p));
    z.slice_mut(ndarray::s![0..b, ..]).assign(&embeds.z_ctx);
    z.slice_mut(ndarray::s![b..2 * b, ..]).assign(&embeds.z_aug);
    z.slice_mut(ndarray::s![2 * b..3 * b, ..])
        .assign(&embeds.z_resp);

    let sims = z.dot(&z.t()) / tau;
    let n_terms = (6 * b) as f64;
    let mut loss = 0.0;
    let mut dz: Array2<f64> = Array2::zeros((3 * b, p));

    for anchor in 0..3 * b {
        let i = anchor % b;
        let positives = [(anchor + b) % (3 * b), (anchor + 2 * b) % (3 * b)];

        // Log-sum-exp over all entries with index k != i.
        let allowed: Vec<usize> = (0..3 * b).filter(|&col| col % b != i).collect();
        let max = allowed
            .iter()
            .map(|&col| sims[[anchor, col]])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = allowed
            .iter()
            .map(|&col| (sims[[anchor, col]] - max).exp())
            .sum();
        let log_denom = denom.ln() + max;

        for &pos in &positives {
            loss += log_denom - sims[[anchor, pos]];
            // d/d anchor of -sim(anchor, pos), d/d pos symmetric.
            let da = &z.row(pos) / (-tau * n_terms);
            dz.row_mut(anchor).zip_mut_with(&da, |g, &v| *g += v);
            let dp = &z.row(anchor) / (-tau * n_terms);
            dz.row_mut(pos).zip_mut_with(&dp, |g, &v| *g += v);
        }
        // The denominator appears once per positive; weight 2.
        for &col in &allowed {
            let w = (sims[[anchor, col]] - max).exp() / denom;
            let coeff = 2.0 * w / (tau * n_terms);
            let zc = z.row(col).to_owned();
            let za = z.row(anchor).to_owned();
            dz.row_mut(anchor)
                .zip_mut_with(&zc, |g, &v| *g += coeff * v);
            dz.row_mut(col).zip_mut_with(&za, |g, &v| *g += coeff * v);
        }
    }

    let grads = ContrastiveGrads {
        d_z_ctx: dz.slice(ndarray::s![0..b, ..]).to_owned(),
        d_z_aug: dz.slice(ndarray::s![b..2 * b, ..]).to_owned(),
        d_z_resp: dz.slice(ndarray::s![2 * b..3 * b, ..]).to_owned(),
    };
    Ok((loss / n_terms, grads))
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub loss: f64,
    pub ce: f64,
    pub cl: f64,
    /// Gradients w.r.t. the CLS matrices (ranking term only; the
    /// contrastive part reaches the CLS vectors through the projection
    /// head, see `encoder::project_backward`).
    pub ranking: RankingGrads,
    /// Contrastive gradients w.r.t. the z matrices, already scaled by
    /// lambda_cl.
    pub contrastive: ContrastiveGrads,
}

/// Combined objective L = L_CE + lambda * L_CL. The returned contrastive
/// gradients are pre-scaled by lambda and flow back through the projection
/// head at the call site.
pub fn total_loss(embeds: &BatchEmbeddings, config: &LossConfig) -> Result<TotalLoss> {
    let (ce, ranking) = ranking_ce_loss(embeds)?;
    let (cl, mut contrastive) = contrastive_loss(embeds, config.tau)?;
    for m in [
        &mut contrastive.d_z_ctx,
        &mut contrastive.d_z_aug,
        &mut contrastive.d_z_resp,
    ] {
        m.mapv_inplace(|v| v * config.lambda_cl);
    }
    Ok(TotalLoss {
        loss: ce + config.lambda_cl * cl,
        ce,
        cl,
        ranking,
        contrastive,
    })
}
