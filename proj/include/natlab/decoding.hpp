#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <type_traits>
#include <vector>

#include "natlab/errors.hpp"
#include "natlab/model.hpp"
#include "natlab/tensor.hpp"

namespace natlab {

// Tokens placed so far with the model probability each one had when it
// was (re)predicted.
struct DecodeState {
    std::vector<std::int32_t> tokens;
    std::vector<double> confidences;
    std::size_t iteration = 0;
};

struct MaskPredictTrace {
    // Positions re-masked at each iteration (iteration 1 masks all), and
    // the state after each refinement.
    std::vector<std::vector<std::size_t>> masked_positions;
    std::vector<DecodeState> states;
};

// Number of positions re-masked at iteration k (1-based) of N:
// n_k = ceil(T * (N - k + 1) / N).
inline std::vector<std::size_t> mask_predict_schedule(std::size_t t, std::size_t n) {
    if (n < 1) throw ConfigError("mask-predict needs at least one iteration");
    std::vector<std::size_t> out(n);
    for (std::size_t k = 1; k <= n; ++k)
        out[k - 1] = (t * (n - k + 1) + n - 1) / n;  // ceil
    return out;
}

namespace detail {

// Specials never surface in generated text; MASK in particular must not
// survive decoding. EOS stays predictable only for the AT path.
inline bool banned_in_output(std::int32_t id, bool allow_eos) {
    if (id == PAD || id == BOS || id == MASK) return true;
    if (id == EOS) return !allow_eos;
    return false;
}

template <typename T>
void predict_row(const Tensor<T>& logits, std::size_t row, bool allow_eos, std::int32_t& token,
                 double& confidence) {
    const std::size_t v = logits.cols();
    // softmax over the full vocabulary, argmax over allowed ids
    T mx = logits.at(row, 0);
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, logits.at(row, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j)
        sum += std::exp(static_cast<double>(logits.at(row, j) - mx));
    std::size_t best = v;
    for (std::size_t j = 0; j < v; ++j) {
        if (banned_in_output(static_cast<std::int32_t>(j), allow_eos)) continue;
        if (best == v || logits.at(row, j) > logits.at(row, best)) best = j;
    }
    token = static_cast<std::int32_t>(best);
    confidence = std::exp(static_cast<double>(logits.at(row, best) - mx)) / sum;
}

template <typename T>
void trim_dump_rows(AttnDump<T>& dump, std::size_t rows) {
    for (AttnCapture<T>& cap : dump.layers) {
        for (Tensor<T>* t : {&cap.global, &cap.local, &cap.effective, &cap.gates}) {
            if (t->rows() <= rows || t->numel() == 0) continue;
            Tensor<T> cut = Tensor<T>::zeros(rows, t->cols());
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < t->cols(); ++j) cut.at(i, j) = t->at(i, j);
            *t = std::move(cut);
        }
    }
}

}  // namespace detail

// Mask-predict iterative refinement. Iteration 1 predicts every position
// in parallel; iteration k re-masks the n_k lowest-confidence tokens
// (ties broken by position index) and re-predicts them conditioned on the
// rest. The attention dump, when requested, captures the fully-masked
// first pass — the pure one-shot non-autoregressive distribution.
template <typename T>
std::vector<std::int32_t> mask_predict(TransformerModel<T>& model,
                                       const std::vector<std::int32_t>& src,
                                       std::size_t iterations,
                                       std::optional<std::size_t> length_override = std::nullopt,
                                       std::type_identity_t<AttnDump<T>>* dump = nullptr,
                                       MaskPredictTrace* trace = nullptr) {
    if (iterations < 1) throw ConfigError("mask-predict needs at least one iteration");
    const std::size_t t_len =
        length_override ? *length_override : model.predict_target_length(src);
    if (t_len < 1) throw DataError("mask-predict: target length must be at least 1");

    const Tensor<T> enc = model.encode_states(src);
    const std::vector<char> src_pad = TokenBatch::pad_mask(src);
    const std::vector<std::size_t> schedule = mask_predict_schedule(t_len, iterations);

    DecodeState state;
    state.tokens.assign(t_len, MASK);
    state.confidences.assign(t_len, 0.0);

    for (std::size_t k = 1; k <= iterations; ++k) {
        std::vector<std::size_t> to_predict;
        if (k == 1) {
            to_predict.resize(t_len);
            for (std::size_t i = 0; i < t_len; ++i) to_predict[i] = i;
        } else {
            std::vector<std::size_t> order(t_len);
            for (std::size_t i = 0; i < t_len; ++i) order[i] = i;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                if (state.confidences[a] != state.confidences[b])
                    return state.confidences[a] < state.confidences[b];
                return a < b;
            });
            to_predict.assign(order.begin(), order.begin() + schedule[k - 1]);
        }

        std::vector<std::int32_t> tgt_in = state.tokens;
        for (std::size_t p : to_predict) tgt_in[p] = MASK;

        AttnDump<T>* want_dump = (k == 1) ? dump : nullptr;
        const Tensor<T> logits = model.decode_cmlm_logits(enc, src_pad, tgt_in, want_dump);
        for (std::size_t p : to_predict) {
            detail::predict_row(logits, p, /*allow_eos=*/false, state.tokens[p],
                                state.confidences[p]);
        }
        state.iteration = k;
        if (trace) {
            trace->masked_positions.push_back(to_predict);
            trace->states.push_back(state);
        }
    }
    return state.tokens;
}

// BOS-seeded left-to-right argmax decoding until EOS or max_len. The
// optional dump is a teacher-forced pass over the produced hypothesis,
// one attention row per generated token.
template <typename T>
std::vector<std::int32_t> greedy_at(TransformerModel<T>& model,
                                    const std::vector<std::int32_t>& src, std::size_t max_len,
                                    std::type_identity_t<AttnDump<T>>* dump = nullptr) {
    const Tensor<T> enc = model.encode_states(src);
    const std::vector<char> src_pad = TokenBatch::pad_mask(src);
    std::vector<std::int32_t> prefix = {BOS};
    std::vector<std::int32_t> out;
    while (out.size() < max_len && prefix.size() < static_cast<std::size_t>(model.config().max_len)) {
        const Tensor<T> logits = model.decode_at_logits(enc, src_pad, prefix);
        std::int32_t token = EOS;
        double conf = 0.0;
        detail::predict_row(logits, prefix.size() - 1, /*allow_eos=*/true, token, conf);
        if (token == EOS) break;
        out.push_back(token);
        prefix.push_back(token);
    }
    if (dump && !out.empty()) {
        AttnDump<T> full;
        std::vector<std::int32_t> forced = {BOS};
        forced.insert(forced.end(), out.begin(), out.end());
        model.decode_at_logits(enc, src_pad, forced, &full);
        detail::trim_dump_rows(full, out.size());
        *dump = std::move(full);
    }
    return out;
}

}  // namespace natlab
