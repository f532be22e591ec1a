// Sparse context transformer: contextual fields pooled from prior-box scores
// and multi-scale features, an attention focus layer, sparse relationship
// discovery, gated aggregation, and a shared target classifier. Forward and
// backward passes are hand-written; the backward is checked against finite
// differences in the test suite.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "sctdet/linear.hpp"
#include "sctdet/matrix.hpp"
#include "sctdet/prior_grid.hpp"

namespace sctdet {

// Structural choices that are fixed per model, not trained.
struct SctConfig {
    std::vector<int> pool_kernels;    // per scale, values in {2, 3}
    std::vector<int> feature_scales;  // scale indices whose features build M
    bool use_gap = false;             // global-average-pooled attention instead of attention focus
};

struct SctDims {
    int d_p = 0;  // prior boxes
    int d_q = 0;  // contextual fields
    int d_f = 0;  // concatenated feature channels
    int c_s = 0;  // source score columns
    int c_t = 0;  // target classifier columns
};

struct SctParams {
    LinearMap psi_alpha;  // D_f -> D_f, residual
    LinearMap psi_beta;   // D_f -> C_s
    LinearMap psi_gamma;  // C_s -> C_s, residual
    LinearMap psi_rho;    // C_s -> C_s, residual
    LinearMap psi_eta;    // C_s -> C_s, residual
    LinearMap psi_xi;     // C_s -> C_s, zero-initialized so the module starts as a no-op
    Matrix theta;         // C_s x C_t, no bias
    double lambda = 0.6;  // context weight, >= 0; 0 disables the feature path
    double tau = 0.0;     // soft threshold; 0 keeps relations dense
};

// lambda/tau are taken from the caller; psi maps follow the uniform
// +-1/sqrt(in_dim) init except psi_xi, which starts all-zero.
SctParams make_sct_params(int d_f, int c_s, int c_t, double lambda, double tau,
                          std::mt19937_64& rng);

// Trainable parameter blocks in a fixed order (lambda and tau are
// hyperparameters and excluded).
std::vector<Matrix*> sct_param_refs(SctParams& params);
std::vector<const Matrix*> sct_param_refs(const SctParams& params);
std::vector<std::string> sct_param_names();

struct ContextualFields {
    Matrix q;  // D_q x C_s pooled prior-box scores
    Matrix m;  // D_q x D_f concatenated multi-scale features
    Matrix c;  // D_q x C_s fused representation, filled by fuse_context
    int d_q = 0;
    int d_f = 0;
    // P row feeding each entry of q (argmax over the pooled window and the
    // aspect ratios), indexed like q.data. Used to route gradients back to P.
    std::vector<int> q_src_row;
};

// Max-pools per-scale score grids into Q and resamples the selected feature
// scales onto each pooled layout to build M. Scales smaller than their pool
// kernel pass through unpooled.
ContextualFields build_contextual_fields(const Matrix& p, const std::vector<Grid>& features,
                                         const PriorLayout& layout, const SctConfig& cfg);

struct AttentionFocus {
    Matrix alpha_out;  // D_q x D_f (1 x D_f in GAP mode)
    Matrix beta_out;   // D_q x C_s (1 x C_s in GAP mode)
    Matrix a_m;        // D_f x C_s attention weights
    Matrix m_star;     // D_q x C_s enhanced representation
    Matrix m_bar;      // 1 x D_f feature mean, GAP mode only
    bool gap = false;
};

AttentionFocus attention_focus(const Matrix& m, const SctParams& params, bool use_gap = false);

struct AttentionFocusGrads {
    Matrix m;
    LinearGrads alpha;
    LinearGrads beta;
};

AttentionFocusGrads attention_focus_backward(const Matrix& m, const AttentionFocus& af,
                                             const SctParams& params, const Matrix& d_m_star);

// C = lambda * m_star + Q.
Matrix fuse_context(const ContextualFields& cf, const Matrix& m_star, double lambda);

struct RelationMatrix {
    Matrix gamma_out;  // psi_gamma(P)
    Matrix rho_out;    // psi_rho(C)
    Matrix a;          // D_p x D_q, row-stochastic
};

// A = row_softmax(psi_gamma(P) psi_rho(C)^T / sqrt(C_s)).
RelationMatrix relation_matrix(const Matrix& p, const Matrix& c, const SctParams& params);

// R = soft_threshold(A, tau). A is row-stochastic, so surviving entries are
// max(a - tau, 0).
Matrix sparsify(const Matrix& a, double tau);

struct Aggregate {
    Matrix gate;     // D_p x D_q, rows sum to 1
    Matrix eta_out;  // psi_eta(C)
    Matrix w;        // D_p x C_s
    int n_fallback_rows = 0;  // rows whose relations were all pruned
};

// Gate = softmax of R restricted to its surviving support; a fully pruned row
// falls back to uniform gating. W = gate * psi_eta(C).
Aggregate aggregate(const Matrix& r, const Matrix& c, const SctParams& params);

// P_hat = P + psi_xi(W).
Matrix enhance(const Matrix& p, const Matrix& w, const SctParams& params);

// Y_hat = row_softmax(P_hat * theta); theta is shared across scales and ratios.
Matrix classify(const Matrix& p_hat, const Matrix& theta);

// Every intermediate of one forward pass, retained for the backward pass.
struct SctTrace {
    Matrix p;
    ContextualFields cf;
    AttentionFocus af;  // unused when lambda == 0
    Matrix gamma_out, rho_out, a, r, gate, eta_out, w, p_hat, y_hat;
    SctDims dims;
    bool use_gap = false;
    double lambda = 0.0;
    int n_gate_fallback_rows = 0;
};

SctTrace sct_forward(const Matrix& p, const std::vector<Grid>& features, const PriorLayout& layout,
                     const SctParams& params, const SctConfig& cfg);

struct SctGrads {
    LinearGrads alpha, beta, gamma, rho, eta, xi;
    Matrix theta;
    Matrix p;  // gradient w.r.t. the prior score matrix
};

std::vector<const Matrix*> sct_grad_refs(const SctGrads& grads);
void accumulate_sct_grads(SctGrads& into, const SctGrads& from);

// Analytic gradients of a scalar loss given dL/dY_hat. lambda and tau receive
// no gradient; features receive none either (the backbone is frozen whenever
// the transformer trains).
SctGrads sct_backward(const SctTrace& trace, const SctParams& params, const Matrix& d_y_hat);

// Same, but starting from the gradient w.r.t. the classifier logits
// P_hat * theta. Cross-entropy training uses this entry so its gradients stay
// bounded even when the softmax saturates.
SctGrads sct_backward_from_logit_grad(const SctTrace& trace, const SctParams& params,
                                      const Matrix& d_logits);

}  // namespace sctdet
