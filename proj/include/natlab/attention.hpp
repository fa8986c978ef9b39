#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "natlab/autograd.hpp"
#include "natlab/errors.hpp"
#include "natlab/param.hpp"
#include "natlab/tensor.hpp"

namespace natlab {

// Total width of the local attention window. Odd so the span sits
// symmetrically around the aligned source position.
struct WindowSpec {
    int win = 9;

    explicit WindowSpec(int w = 9) : win(w) {
        if (w < 1 || w % 2 == 0)
            throw ConfigError("window size must be an odd positive integer, got " +
                              std::to_string(w));
    }

    std::size_t half() const { return static_cast<std::size_t>((win - 1) / 2); }

    // A window this wide always covers the whole source row.
    static WindowSpec covering(std::size_t t_src) {
        return WindowSpec(static_cast<int>(2 * (t_src > 0 ? t_src : 1) - 1));
    }
};

enum class AttnMode { vanilla, ccan };

// Source index a target position aligns to: the argmax of its score row,
// ties broken by the lowest index. -inf (masked) entries never win.
template <typename T>
std::size_t aligned_index(const std::vector<T>& score_row) {
    return argmax_finite(score_row.data(), score_row.size());
}

// Scaled dot-product scores for one head: Q K^T / sqrt(d_k) with padded
// source columns forced to -inf.
template <typename T>
Var<T> attn_scores_head(Var<T> q, Var<T> k, const std::vector<char>& src_pad) {
    if (q.cols() != k.cols())
        throw ShapeError("attn_scores: query dim " + q.value().shape_str() + " vs key dim " +
                         k.value().shape_str());
    if (src_pad.size() != k.rows())
        throw ShapeError("attn_scores: pad mask length " + std::to_string(src_pad.size()) +
                         " vs source length " + std::to_string(k.rows()));
    bool any_real = false;
    for (char c : src_pad) any_real = any_real || !c;
    if (!any_real) throw NumericError("attn_scores: all source positions padded");
    const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(q.cols()));
    return mask_cols(scale(matmul_nt(q, k), inv_sqrt_dk), src_pad);
}

template <typename T>
std::vector<Var<T>> attn_scores(const std::vector<Var<T>>& q_heads,
                                const std::vector<Var<T>>& k_heads,
                                const std::vector<char>& src_pad) {
    if (q_heads.size() != k_heads.size())
        throw ShapeError("attn_scores: head count mismatch");
    std::vector<Var<T>> out;
    out.reserve(q_heads.size());
    for (std::size_t h = 0; h < q_heads.size(); ++h)
        out.push_back(attn_scores_head(q_heads[h], k_heads[h], src_pad));
    return out;
}

// Hard local mask: per row, keep scores within half() of the row's
// aligned index, everything else becomes -inf. The window location is a
// constant in backward; kept entries pass gradient through unchanged.
template <typename T>
Var<T> local_window_mask(Var<T> scores, const WindowSpec& w) {
    Tape<T>& tp = *scores.tape;
    const Tensor<T>& sv = scores.value();
    const std::size_t m = sv.rows(), n = sv.cols();
    const std::size_t half = w.half();
    Tensor<T> out = sv;
    std::vector<char> kept(m * n, 0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t centre = argmax_finite(sv.data.data() + i * n, n);
        const std::size_t lo = centre >= half ? centre - half : 0;
        const std::size_t hi = std::min(n - 1, centre + half);
        for (std::size_t j = 0; j < n; ++j) {
            if (j < lo || j > hi) {
                out.at(i, j) = neg_inf<T>();
            } else if (sv.at(i, j) != neg_inf<T>()) {
                kept[i * n + j] = 1;  // padded columns inside the window stay -inf
            }
        }
    }
    Var<T> r = tp.push(std::move(out), tp.node(scores.id).needs_grad, nullptr);
    tp.node(r.id).backprop = [scores, r, kept = std::move(kept), n](Tape<T>& t) {
        if (!t.node(scores.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gs = t.node(scores.id).grad;
        for (std::size_t i = 0; i < g.data.size(); ++i)
            if (kept[i]) gs.data[i] += g.data[i];
    };
    return r;
}

template <typename T>
std::vector<Var<T>> local_mask(const std::vector<Var<T>>& score_heads, const WindowSpec& w) {
    std::vector<Var<T>> out;
    out.reserve(score_heads.size());
    for (const Var<T>& s : score_heads) out.push_back(local_window_mask(s, w));
    return out;
}

// Interpolation gate: one sigmoid scalar per target position, computed
// from the pre-head-split query and shared by all heads of the layer.
template <typename T>
Var<T> gate(Var<T> query, Var<T> gate_w) {
    if (gate_w.cols() != 1 || gate_w.rows() != query.cols())
        throw ShapeError("gate: weight must be [" + std::to_string(query.cols()) + "x1], got " +
                         gate_w.value().shape_str());
    return sigmoid(matmul(query, gate_w));
}

// Per-layer capture for analysis: head-averaged weight matrices plus the
// gate values. `effective` is the distribution actually applied to V
// (for vanilla layers that is just the global softmax).
template <typename T>
struct AttnCapture {
    Tensor<T> global;
    Tensor<T> local;
    Tensor<T> effective;
    Tensor<T> gates;
    std::vector<Tensor<T>> heads;  // per-head effective weights, optional
    bool has_gate = false;
};

template <typename T>
struct CcanHeadOut {
    Var<T> context;
    Var<T> global_weights;
    Var<T> local_weights;
};

// One head of Eq.-style combination: g * Att(scores, V) +
// (1-g) * Att(LocalMask(scores), V).
template <typename T>
CcanHeadOut<T> ccan_head(Var<T> q, Var<T> k, Var<T> v, const std::vector<char>& src_pad,
                         Var<T> g, const WindowSpec& w) {
    Var<T> scores = attn_scores_head(q, k, src_pad);
    Var<T> global_w = softmax_rows(scores);
    Var<T> local_w = softmax_rows(local_window_mask(scores, w));
    Var<T> ctx = add(scale_rows(matmul(global_w, v), g),
                     scale_rows(matmul(local_w, v), one_minus(g)));
    return {ctx, global_w, local_w};
}

template <typename T>
struct CcanOut {
    Var<T> context;
    Var<T> g;
    AttnCapture<T> capture;
};

// Single-head context-aware cross-attention with the gate computed
// internally from the query (g_i = sigmoid(W . q_i)).
template <typename T>
CcanOut<T> ccan(Var<T> q, Var<T> k, Var<T> v, const std::vector<char>& src_pad, Var<T> gate_w,
                const WindowSpec& w) {
    Var<T> g = gate(q, gate_w);
    CcanHeadOut<T> head = ccan_head(q, k, v, src_pad, g, w);
    AttnCapture<T> cap;
    cap.global = head.global_weights.value();
    cap.local = head.local_weights.value();
    cap.gates = g.value();
    cap.has_gate = true;
    cap.effective = cap.global;
    for (std::size_t i = 0; i < cap.effective.rows(); ++i)
        for (std::size_t j = 0; j < cap.effective.cols(); ++j)
            cap.effective.at(i, j) = cap.gates.at(i, 0) * cap.global.at(i, j) +
                                     (T(1) - cap.gates.at(i, 0)) * cap.local.at(i, j);
    return {head.context, g, std::move(cap)};
}

// Projection weights of one multi-head attention sublayer. gate_w is
// non-null only on decoder layers running CCAN.
template <typename T>
struct AttnLayerParams {
    Parameter<T>* wq = nullptr;
    Parameter<T>* bq = nullptr;
    Parameter<T>* wk = nullptr;
    Parameter<T>* bk = nullptr;
    Parameter<T>* wv = nullptr;
    Parameter<T>* bv = nullptr;
    Parameter<T>* wo = nullptr;
    Parameter<T>* bo = nullptr;
    Parameter<T>* gate_w = nullptr;
};

template <typename T>
struct MhaOptions {
    std::size_t n_heads = 1;
    AttnMode mode = AttnMode::vanilla;
    WindowSpec window = WindowSpec(9);
    bool causal = false;  // self-attention only
    bool capture = false;
    bool capture_heads = false;  // keep per-head effective weights too
};

namespace detail {

template <typename T>
void average_head_values(std::vector<Tensor<T>>& heads, Tensor<T>& out) {
    out = heads[0];
    for (std::size_t h = 1; h < heads.size(); ++h)
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += heads[h].data[i];
    const T inv = T(1) / static_cast<T>(heads.size());
    for (T& v : out.data) v *= inv;
}

}  // namespace detail

// Standard multi-head wrapper around the vanilla / CCAN attention paths.
// query_state is [T_q x d_model], kv_state is [T_kv x d_model]. In ccan
// mode a single gate scalar per position (from the pre-split projected
// query) scales all heads.
template <typename T>
Var<T> multi_head_attention(Var<T> query_state, Var<T> kv_state,
                            const std::vector<char>& key_pad, const AttnLayerParams<T>& p,
                            const MhaOptions<T>& opt, AttnCapture<T>* capture_out = nullptr) {
    Tape<T>& tp = *query_state.tape;
    const std::size_t d_model = query_state.cols();
    if (opt.n_heads == 0 || d_model % opt.n_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " +
                          std::to_string(opt.n_heads));
    const std::size_t d_k = d_model / opt.n_heads;

    Var<T> q_full = add_rowvec(matmul(query_state, tp.leaf(*p.wq)), tp.leaf(*p.bq));
    Var<T> k_full = add_rowvec(matmul(kv_state, tp.leaf(*p.wk)), tp.leaf(*p.bk));
    Var<T> v_full = add_rowvec(matmul(kv_state, tp.leaf(*p.wv)), tp.leaf(*p.bv));

    Var<T> g{};
    const bool use_ccan = opt.mode == AttnMode::ccan;
    if (use_ccan) {
        if (!p.gate_w) throw ConfigError("ccan mode requested but layer has no gate parameter");
        g = gate(q_full, tp.leaf(*p.gate_w));
    }

    std::vector<Var<T>> ctx_heads;
    ctx_heads.reserve(opt.n_heads);
    std::vector<Tensor<T>> cap_global, cap_local, cap_effective;
    for (std::size_t h = 0; h < opt.n_heads; ++h) {
        Var<T> qh = slice_cols(q_full, h * d_k, d_k);
        Var<T> kh = slice_cols(k_full, h * d_k, d_k);
        Var<T> vh = slice_cols(v_full, h * d_k, d_k);
        if (use_ccan) {
            CcanHeadOut<T> out = ccan_head(qh, kh, vh, key_pad, g, opt.window);
            ctx_heads.push_back(out.context);
            if (capture_out && opt.capture) {
                cap_global.push_back(out.global_weights.value());
                cap_local.push_back(out.local_weights.value());
                Tensor<T> eff = out.global_weights.value();
                const Tensor<T>& loc = out.local_weights.value();
                const Tensor<T>& gv = g.value();
                for (std::size_t i = 0; i < eff.rows(); ++i)
                    for (std::size_t j = 0; j < eff.cols(); ++j)
                        eff.at(i, j) = gv.at(i, 0) * eff.at(i, j) +
                                       (T(1) - gv.at(i, 0)) * loc.at(i, j);
                cap_effective.push_back(std::move(eff));
            }
        } else {
            Var<T> scores = attn_scores_head(qh, kh, key_pad);
            if (opt.causal) scores = mask_causal(scores);
            Var<T> weights = softmax_rows(scores);
            ctx_heads.push_back(matmul(weights, vh));
            if (capture_out && opt.capture) {
                cap_global.push_back(weights.value());
                cap_effective.push_back(weights.value());
            }
        }
    }

    if (capture_out && opt.capture) {
        detail::average_head_values(cap_global, capture_out->global);
        detail::average_head_values(cap_effective, capture_out->effective);
        if (opt.capture_heads) capture_out->heads = cap_effective;
        if (use_ccan) {
            detail::average_head_values(cap_local, capture_out->local);
            capture_out->gates = g.value();
            capture_out->has_gate = true;
        } else {
            capture_out->has_gate = false;
        }
    }

    Var<T> merged = concat_cols(ctx_heads);
    return add_rowvec(matmul(merged, tp.leaf(*p.wo)), tp.leaf(*p.bo));
}

}  // namespace natlab
