#include "sctdet/transformer.hpp"

#include <cmath>

namespace sctdet {

SctParams make_sct_params(int d_f, int c_s, int c_t, double lambda, double tau,
                          std::mt19937_64& rng) {
    if (lambda < 0.0) throw ShapeError("make_sct_params: lambda must be nonnegative");
    if (tau < 0.0) throw ShapeError("make_sct_params: tau must be nonnegative");
    SctParams p;
    p.psi_alpha = make_linear(d_f, d_f, /*residual=*/true, rng);
    // zero-init: the context branch starts as a no-op and is learned, exactly
    // like the final projection psi_xi
    p.psi_beta = make_zero_linear(d_f, c_s, /*residual=*/false);
    p.psi_gamma = make_linear(c_s, c_s, /*residual=*/true, rng);
    p.psi_rho = make_linear(c_s, c_s, /*residual=*/true, rng);
    p.psi_eta = make_linear(c_s, c_s, /*residual=*/true, rng);
    p.psi_xi = make_zero_linear(c_s, c_s, /*residual=*/false);
    p.theta = Matrix(c_s, c_t);
    const double bound = 1.0 / std::sqrt(static_cast<double>(c_s));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.theta.data) v = dist(rng);
    p.lambda = lambda;
    p.tau = tau;
    return p;
}

std::vector<Matrix*> sct_param_refs(SctParams& p) {
    return {&p.psi_alpha.weight, &p.psi_alpha.bias, &p.psi_beta.weight, &p.psi_beta.bias,
            &p.psi_gamma.weight, &p.psi_gamma.bias, &p.psi_rho.weight,  &p.psi_rho.bias,
            &p.psi_eta.weight,   &p.psi_eta.bias,   &p.psi_xi.weight,   &p.psi_xi.bias,
            &p.theta};
}

std::vector<const Matrix*> sct_param_refs(const SctParams& p) {
    std::vector<const Matrix*> refs;
    for (Matrix* m : sct_param_refs(const_cast<SctParams&>(p))) refs.push_back(m);
    return refs;
}

std::vector<std::string> sct_param_names() {
    return {"psi_alpha.weight", "psi_alpha.bias", "psi_beta.weight", "psi_beta.bias",
            "psi_gamma.weight", "psi_gamma.bias", "psi_rho.weight",  "psi_rho.bias",
            "psi_eta.weight",   "psi_eta.bias",   "psi_xi.weight",   "psi_xi.bias",
            "theta"};
}

std::vector<const Matrix*> sct_grad_refs(const SctGrads& g) {
    return {&g.alpha.weight, &g.alpha.bias, &g.beta.weight, &g.beta.bias, &g.gamma.weight,
            &g.gamma.bias,   &g.rho.weight, &g.rho.bias,    &g.eta.weight, &g.eta.bias,
            &g.xi.weight,    &g.xi.bias,    &g.theta};
}

static std::vector<Matrix*> sct_grad_refs_mut(SctGrads& g) {
    std::vector<Matrix*> refs;
    for (const Matrix* m : sct_grad_refs(g)) refs.push_back(const_cast<Matrix*>(m));
    return refs;
}

void accumulate_sct_grads(SctGrads& into, const SctGrads& from) {
    const auto dst = sct_grad_refs_mut(into);
    const auto src = sct_grad_refs(from);
    for (size_t i = 0; i < dst.size(); ++i) *dst[i] = add(*dst[i], *src[i]);
    into.p = add(into.p, from.p);
}

ContextualFields build_contextual_fields(const Matrix& p, const std::vector<Grid>& features,
                                         const PriorLayout& layout, const SctConfig& cfg) {
    if (features.empty()) throw ShapeError("build_contextual_fields: empty feature list");
    if (static_cast<int>(features.size()) != layout.num_scales())
        throw ShapeError("build_contextual_fields: one feature grid per scale expected");
    if (cfg.pool_kernels.size() != layout.scales.size())
        throw ShapeError("build_contextual_fields: one pool kernel per scale expected");
    if (cfg.feature_scales.empty())
        throw ShapeError("build_contextual_fields: no feature scales selected");
    if (p.rows != layout.total_rows)
        throw ShapeError("build_contextual_fields: P row count does not match the layout");
    const int c_s = p.cols;

    ContextualFields cf;
    std::vector<Matrix> q_blocks, m_blocks;
    for (int k = 0; k < layout.num_scales(); ++k) {
        const ScaleSpec& spec = layout.scales[k];
        const int g = spec.grid;

        // Per-scale score grid: max over aspect ratios at each cell.
        Grid scores(g, g, c_s);
        std::vector<int> cell_src(static_cast<size_t>(g) * g * c_s, -1);
        for (int h = 0; h < g; ++h) {
            for (int w = 0; w < g; ++w) {
                for (int ch = 0; ch < c_s; ++ch) {
                    double best = 0.0;
                    int best_row = -1;
                    for (int m = 0; m < spec.n_ratios; ++m) {
                        const int r = layout.row(k, m, h, w);
                        if (best_row < 0 || p(r, ch) > best) {
                            best = p(r, ch);
                            best_row = r;
                        }
                    }
                    scores.at(h, w, ch) = best;
                    cell_src[(static_cast<size_t>(h) * g + w) * c_s + ch] = best_row;
                }
            }
        }

        const int kernel = cfg.pool_kernels[k];
        Grid pooled;
        std::vector<int> pooled_src;  // P row per pooled element
        if (g < kernel) {
            // too small to pool: pass through unchanged
            pooled = scores;
            pooled_src = cell_src;
        } else {
            GridMaxPool mp = grid_max_pool(scores, kernel);
            pooled = mp.pooled;
            pooled_src.resize(mp.argmax.size());
            for (size_t i = 0; i < mp.argmax.size(); ++i) {
                const int cell = mp.argmax[i];
                const int ch = static_cast<int>(i % c_s);
                pooled_src[i] = cell_src[static_cast<size_t>(cell) * c_s + ch];
            }
        }

        Matrix q_block(pooled.h * pooled.w, c_s);
        std::copy(pooled.v.begin(), pooled.v.end(), q_block.data.begin());
        q_blocks.push_back(std::move(q_block));
        cf.q_src_row.insert(cf.q_src_row.end(), pooled_src.begin(), pooled_src.end());

        // Feature rows for this scale's pooled layout: every selected feature
        // scale resampled onto it, channel-concatenated.
        std::vector<Matrix> channel_parts;
        for (int j : cfg.feature_scales) {
            if (j < 0 || j >= static_cast<int>(features.size()))
                throw ShapeError("build_contextual_fields: feature scale index out of range");
            Grid rs = resample_average(features[j], pooled.h, pooled.w);
            Matrix part(pooled.h * pooled.w, rs.c);
            std::copy(rs.v.begin(), rs.v.end(), part.data.begin());
            channel_parts.push_back(std::move(part));
        }
        m_blocks.push_back(concat_columns(channel_parts));
    }

    cf.q = concat_rows(q_blocks);
    cf.m = concat_rows(m_blocks);
    cf.d_q = cf.q.rows;
    cf.d_f = cf.m.cols;
    if (cf.d_q >= p.rows)
        throw ShapeError("build_contextual_fields: pooling produced D_q >= D_p");
    ensure_finite(cf.q, "build_contextual_fields(q)");
    ensure_finite(cf.m, "build_contextual_fields(m)");
    return cf;
}

AttentionFocus attention_focus(const Matrix& m, const SctParams& params, bool use_gap) {
    if (m.cols != params.psi_alpha.in_dim)
        throw ShapeError("attention_focus: feature width does not match psi_alpha");
    AttentionFocus af;
    af.gap = use_gap;
    // The attention weights are normalized so that M* = M A_M lands on the
    // scale of the pooled scores it is fused with: a mean over the contextual
    // fields and a 1/sqrt(D_f) for the feature-channel contraction, matching
    // the scaled dot-product convention of the relation matrix.
    const double contraction = std::sqrt(static_cast<double>(m.cols));
    if (use_gap) {
        // outer product of the field means
        af.m_bar = global_average_pool(m);
        af.alpha_out = linear_forward(params.psi_alpha, af.m_bar);
        af.beta_out = linear_forward(params.psi_beta, af.m_bar);
        af.a_m = scale(matmul(transpose(af.alpha_out), af.beta_out), 1.0 / contraction);
    } else {
        // mean over fields of per-field outer products
        af.alpha_out = linear_forward(params.psi_alpha, m);
        af.beta_out = linear_forward(params.psi_beta, m);
        af.a_m = scale(matmul(transpose(af.alpha_out), af.beta_out),
                       1.0 / (m.rows * contraction));
    }
    af.m_star = matmul(m, af.a_m);
    return af;
}

AttentionFocusGrads attention_focus_backward(const Matrix& m, const AttentionFocus& af,
                                             const SctParams& params, const Matrix& d_m_star) {
    AttentionFocusGrads g;
    Matrix d_a_m = matmul(transpose(m), d_m_star);
    g.m = matmul(d_m_star, transpose(af.a_m));
    const double contraction = std::sqrt(static_cast<double>(m.cols));
    d_a_m = scale(d_a_m, af.gap ? 1.0 / contraction : 1.0 / (m.rows * contraction));
    Matrix d_alpha_out = matmul(af.beta_out, transpose(d_a_m));
    Matrix d_beta_out = matmul(af.alpha_out, d_a_m);
    if (af.gap) {
        LinearGrads la = linear_backward(params.psi_alpha, af.m_bar, d_alpha_out);
        LinearGrads lb = linear_backward(params.psi_beta, af.m_bar, d_beta_out);
        const double inv_rows = 1.0 / m.rows;
        for (int i = 0; i < m.rows; ++i)
            for (int j = 0; j < m.cols; ++j)
                g.m(i, j) += (la.x(0, j) + lb.x(0, j)) * inv_rows;
        g.alpha = std::move(la);
        g.beta = std::move(lb);
    } else {
        LinearGrads la = linear_backward(params.psi_alpha, m, d_alpha_out);
        LinearGrads lb = linear_backward(params.psi_beta, m, d_beta_out);
        g.m = add(g.m, la.x);
        g.m = add(g.m, lb.x);
        g.alpha = std::move(la);
        g.beta = std::move(lb);
    }
    return g;
}

Matrix fuse_context(const ContextualFields& cf, const Matrix& m_star, double lambda) {
    return scalar_scale_add(lambda, m_star, cf.q);
}

RelationMatrix relation_matrix(const Matrix& p, const Matrix& c, const SctParams& params) {
    if (p.cols != c.cols) throw ShapeError("relation_matrix: P and C column counts differ");
    RelationMatrix rm;
    rm.gamma_out = linear_forward(params.psi_gamma, p);
    rm.rho_out = linear_forward(params.psi_rho, c);
    Matrix logits = matmul(rm.gamma_out, transpose(rm.rho_out));
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(p.cols));
    for (double& v : logits.data) v *= inv_scale;
    rm.a = row_softmax(logits);
    return rm;
}

Matrix sparsify(const Matrix& a, double tau) { return soft_threshold(a, tau); }

Aggregate aggregate(const Matrix& r, const Matrix& c, const SctParams& params) {
    Aggregate agg;
    Matrix mask(r.rows, r.cols);
    for (size_t i = 0; i < r.data.size(); ++i) mask.data[i] = r.data[i] > 0.0 ? 1.0 : 0.0;
    for (int i = 0; i < r.rows; ++i) {
        bool any = false;
        for (int j = 0; j < r.cols; ++j) any = any || mask(i, j) != 0.0;
        agg.n_fallback_rows += !any;
    }
    agg.gate = masked_row_softmax(r, mask);
    agg.eta_out = linear_forward(params.psi_eta, c);
    agg.w = matmul(agg.gate, agg.eta_out);
    return agg;
}

Matrix enhance(const Matrix& p, const Matrix& w, const SctParams& params) {
    if (!p.same_shape(w)) throw ShapeError("enhance: P and W shapes differ");
    return add(p, linear_forward(params.psi_xi, w));
}

Matrix classify(const Matrix& p_hat, const Matrix& theta) {
    return row_softmax(matmul(p_hat, theta));
}

static void check_param_shapes(const SctParams& params, int d_f, int c_s) {
    if (params.psi_alpha.in_dim != d_f || params.psi_beta.in_dim != d_f)
        throw ShapeError("sct_forward: psi_alpha/psi_beta expect D_f = " +
                         std::to_string(params.psi_alpha.in_dim) + ", fields have " +
                         std::to_string(d_f));
    if (params.psi_beta.out_dim != c_s || params.psi_gamma.in_dim != c_s ||
        params.theta.rows != c_s)
        throw ShapeError("sct_forward: parameter shapes do not match C_s");
}

SctTrace sct_forward(const Matrix& p, const std::vector<Grid>& features,
                     const PriorLayout& layout, const SctParams& params, const SctConfig& cfg) {
    SctTrace t;
    t.p = p;
    t.lambda = params.lambda;
    t.use_gap = cfg.use_gap;
    t.cf = build_contextual_fields(p, features, layout, cfg);
    check_param_shapes(params, t.cf.d_f, p.cols);

    if (params.lambda > 0.0) {
        t.af = attention_focus(t.cf.m, params, cfg.use_gap);
        t.cf.c = fuse_context(t.cf, t.af.m_star, params.lambda);
    } else {
        // context path inert: C reduces to the pooled scores verbatim
        t.cf.c = t.cf.q;
    }

    RelationMatrix rm = relation_matrix(p, t.cf.c, params);
    t.gamma_out = std::move(rm.gamma_out);
    t.rho_out = std::move(rm.rho_out);
    t.a = std::move(rm.a);
    t.r = sparsify(t.a, params.tau);

    Aggregate agg = aggregate(t.r, t.cf.c, params);
    t.gate = std::move(agg.gate);
    t.eta_out = std::move(agg.eta_out);
    t.w = std::move(agg.w);
    t.n_gate_fallback_rows = agg.n_fallback_rows;

    t.p_hat = enhance(p, t.w, params);
    t.y_hat = classify(t.p_hat, params.theta);

    t.dims = SctDims{p.rows, t.cf.d_q, t.cf.d_f, p.cols, params.theta.cols};
    return t;
}

SctGrads sct_backward(const SctTrace& t, const SctParams& params, const Matrix& d_y_hat) {
    if (!d_y_hat.same_shape(t.y_hat))
        throw ShapeError("sct_backward: upstream gradient shape does not match Y_hat");
    // classify: Y_hat = softmax(P_hat theta)
    return sct_backward_from_logit_grad(t, params, row_softmax_backward(t.y_hat, d_y_hat));
}

SctGrads sct_backward_from_logit_grad(const SctTrace& t, const SctParams& params,
                                      const Matrix& d_logits) {
    if (!d_logits.same_shape(t.y_hat))
        throw ShapeError("sct_backward: upstream gradient shape does not match the logits");
    SctGrads g;
    g.p = Matrix(t.p.rows, t.p.cols);

    g.theta = matmul(transpose(t.p_hat), d_logits);
    Matrix d_p_hat = matmul(d_logits, transpose(params.theta));

    // enhance: P_hat = P + psi_xi(W)
    g.p = add(g.p, d_p_hat);
    g.xi = linear_backward(params.psi_xi, t.w, d_p_hat);
    const Matrix& d_w = g.xi.x;

    // aggregate: W = gate * psi_eta(C), gate = masked softmax of R
    Matrix d_gate = matmul(d_w, transpose(t.eta_out));
    Matrix d_eta_out = matmul(transpose(t.gate), d_w);
    g.eta = linear_backward(params.psi_eta, t.cf.c, d_eta_out);
    Matrix d_c = g.eta.x;
    Matrix mask(t.r.rows, t.r.cols);
    for (size_t i = 0; i < t.r.data.size(); ++i) mask.data[i] = t.r.data[i] > 0.0 ? 1.0 : 0.0;
    Matrix d_r = masked_row_softmax_backward(t.gate, mask, d_gate);

    // sparsify: gradient flows on the surviving support only
    Matrix d_a = soft_threshold_backward(t.r, d_r);

    // relation: A = softmax(gamma rho^T / sqrt(C_s))
    Matrix d_s = row_softmax_backward(t.a, d_a);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(t.p.cols));
    Matrix d_gamma_out = scale(matmul(d_s, t.rho_out), inv_scale);
    Matrix d_rho_out = scale(matmul(transpose(d_s), t.gamma_out), inv_scale);
    g.gamma = linear_backward(params.psi_gamma, t.p, d_gamma_out);
    g.p = add(g.p, g.gamma.x);
    g.rho = linear_backward(params.psi_rho, t.cf.c, d_rho_out);
    d_c = add(d_c, g.rho.x);

    // fuse: C = lambda * M_star + Q
    Matrix d_q = d_c;
    if (t.lambda > 0.0) {
        Matrix d_m_star = scale(d_c, t.lambda);
        AttentionFocusGrads afg = attention_focus_backward(t.cf.m, t.af, params, d_m_star);
        g.alpha = std::move(afg.alpha);
        g.beta = std::move(afg.beta);
        // afg.m is dropped: features are frozen while the transformer trains
    } else {
        g.alpha.weight = Matrix(params.psi_alpha.in_dim, params.psi_alpha.out_dim);
        g.alpha.bias = Matrix(1, params.psi_alpha.out_dim);
        g.beta.weight = Matrix(params.psi_beta.in_dim, params.psi_beta.out_dim);
        g.beta.bias = Matrix(1, params.psi_beta.out_dim);
    }

    // contextual fields: route pooled-score gradients to their source P rows
    for (int qr = 0; qr < t.cf.q.rows; ++qr) {
        for (int ch = 0; ch < t.cf.q.cols; ++ch) {
            const int src = t.cf.q_src_row[static_cast<size_t>(qr) * t.cf.q.cols + ch];
            g.p(src, ch) += d_q(qr, ch);
        }
    }
    return g;
}

}  // namespace sctdet
