use super::forward::{ForwardTrace, NormTrace};
use super::{bce_with_logits, ModelError, ModelParams, NormPosition};
use ndarray::{s, Array1, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardOptions {
    /// Adds `l2_weight / 2 * ||w||^2` over weight matrices (not biases or norm affine).
    pub l2_weight: f64,
    /// Multiplies the whole objective.
    pub loss_scale: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            l2_weight: 0.0,
            loss_scale: 1.0,
        }
    }
}

/// Exact gradients of `loss_scale * (mean BCE + l2 term)` for the batch in
/// `trace`. Returns the objective value and gradients shaped like `params`.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    labels: &[u8],
    opts: BackwardOptions,
) -> Result<(f64, ModelParams), ModelError> {
    let hyper = &params.hyper;
    if trace.layers.len() != hyper.num_layers || trace.input_features.len() != hyper.node_types.len() {
        return Err(ModelError::TraceMismatch(format!(
            "trace has {} layers and {} node types",
            trace.layers.len(),
            trace.input_features.len()
        )));
    }
    if trace.embeddings.ncols() != hyper.embed_dim {
        return Err(ModelError::TraceMismatch("embedding width differs from embed_dim".into()));
    }
    let n = trace.logits.len();
    let bce = bce_with_logits(trace.logits.as_slice().unwrap(), labels)?;
    let scale = opts.loss_scale;
    let loss = scale * (bce + 0.5 * opts.l2_weight * params.decayed_sq_norm());

    let mut grads = params.zeros_like();
    let d = hyper.embed_dim;

    let dlogit: Array1<f64> = trace
        .probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| scale * (p - y as f64) / n as f64)
        .collect();
    grads.head_weight = trace.embeddings.t().dot(&dlogit);
    grads.head_bias[0] = dlogit.sum();

    let seed_type = trace.seed_type;
    let mut dout: Vec<Array2<f64>> = trace.layers[hyper.num_layers - 1]
        .types
        .iter()
        .map(|t| Array2::zeros(t.out.raw_dim()))
        .collect();
    dout[seed_type] = dlogit
        .view()
        .insert_axis(Axis(1))
        .dot(&params.head_weight.view().insert_axis(Axis(0)));

    for l in (0..hyper.num_layers).rev() {
        let lt = &trace.layers[l];
        if lt.layer != l {
            return Err(ModelError::TraceMismatch(format!("layer {l} trace is out of order")));
        }
        let lp = &params.layers[l];
        let gl = &mut grads.layers[l];
        let use_norm = hyper.uses_norm(l);

        let mut dz_by_type = Vec::with_capacity(lt.types.len());
        for (tt, dy) in lt.types.iter().zip(&dout) {
            let dz = match (use_norm, hyper.norm_position, &tt.norm) {
                (true, NormPosition::PostActivation, Some(nt)) => {
                    let mut da = norm_backward(dy, nt, &lp.norm_gain, &mut gl.norm_gain, &mut gl.norm_bias);
                    Zip::from(&mut da).and(&tt.z).for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    da
                }
                (true, NormPosition::PreActivation, Some(nt)) => {
                    let mut dn = dy.clone();
                    Zip::from(&mut dn).and(&tt.out).for_each(|g, &o| {
                        if o <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    norm_backward(&dn, nt, &lp.norm_gain, &mut gl.norm_gain, &mut gl.norm_bias)
                }
                (true, _, None) => return Err(ModelError::TraceMismatch(format!("layer {l} lacks norm statistics"))),
                _ => {
                    let mut dz = dy.clone();
                    Zip::from(&mut dz).and(&tt.z).for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    dz
                }
            };
            dz_by_type.push(dz);
        }

        let mut dh_in: Vec<Array2<f64>> = lt.input.iter().map(|h| Array2::zeros(h.raw_dim())).collect();
        for (t, dz) in dz_by_type.iter().enumerate() {
            let n_dst = dz.nrows();
            if n_dst == 0 {
                continue;
            }
            let h_self = lt.input[t].slice(s![..n_dst, ..]);
            gl.self_weight += &dz.t().dot(&h_self);
            let back = dz.dot(&lp.self_weight);
            let mut head = dh_in[t].slice_mut(s![..n_dst, ..]);
            head += &back;
        }

        for (r, rel) in hyper.relations.iter().enumerate() {
            let rt = &lt.relations[r];
            if rt.src.is_empty() {
                continue;
            }
            let dz = &dz_by_type[rel.dst_type];
            gl.relation_weights[r] += &dz.t().dot(&rt.mean);
            let dmean = dz.dot(&lp.relation_weights[r]);
            let dmean = dmean.as_slice().unwrap();
            let h_src = lt.input[rel.src_type].as_slice().unwrap();

            let mut dweight = Array1::<f64>::zeros(rt.src.len());
            {
                let dh_src = dh_in[rel.src_type].as_slice_mut().unwrap();
                for e in 0..rt.src.len() {
                    let (u, v) = (rt.src[e], rt.dst[e]);
                    let coef = rt.inv_degree[v];
                    let gv = &dmean[v * d..(v + 1) * d];
                    let hu = &h_src[u * d..(u + 1) * d];
                    let scaled = coef * rt.weights[e];
                    let mut dot = 0.0;
                    for ((dh, g), h) in dh_src[u * d..(u + 1) * d].iter_mut().zip(gv).zip(hu) {
                        *dh += scaled * g;
                        dot += g * h;
                    }
                    dweight[e] = coef * dot;
                }
            }

            // through sigmoid(a2 . relu(A1 x + b1) + b2)
            let mlp = &lp.edge_mlps[r];
            let gm = &mut gl.edge_mlps[r];
            let dscore = &dweight * &rt.weights.mapv(|w| w * (1.0 - w));
            let hidden = rt.hidden_pre.mapv(|p| p.max(0.0));
            gm.out_weight += &hidden.t().dot(&dscore);
            gm.out_bias[0] += dscore.sum();
            let mut dhidden = dscore
                .view()
                .insert_axis(Axis(1))
                .dot(&mlp.out_weight.view().insert_axis(Axis(0)));
            Zip::from(&mut dhidden).and(&rt.hidden_pre).for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            gm.hidden_weight += &dhidden.t().dot(&rt.features);
            gm.hidden_bias += &dhidden.sum_axis(Axis(0));
        }
        dout = dh_in;
    }

    for (t, (dh0, x)) in dout.iter().zip(&trace.input_features).enumerate() {
        grads.input_weights[t] += &dh0.t().dot(x);
    }

    if opts.l2_weight != 0.0 {
        let infos = params.tensor_infos();
        for ((info, g), w) in infos.iter().zip(grads.tensors_mut()).zip(params.tensors()) {
            if info.decay {
                for (gi, wi) in g.iter_mut().zip(w) {
                    *gi += scale * opts.l2_weight * wi;
                }
            }
        }
    }
    Ok((loss, grads))
}

fn norm_backward(
    dy: &Array2<f64>,
    nt: &NormTrace,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &nt.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xhat), &rstd) in dx.axis_iter_mut(Axis(0)).zip(nt.xhat.axis_iter(Axis(0))).zip(&nt.rstd) {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xhat.iter()).map(|(g, x)| g * x).sum::<f64>() / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &x| {
            *g = rstd * (*g - mean_g - x * mean_gx);
        });
    }
    dx
}
