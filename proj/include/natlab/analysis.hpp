#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "natlab/errors.hpp"
#include "natlab/rng.hpp"
#include "natlab/tensor.hpp"

namespace natlab {

using TokenSeq = std::vector<std::string>;

// Head-averaged cross-attention distributions of one sentence, one
// [target x source] matrix per decoder layer, restricted to non-padded
// source tokens.
struct SentenceAttn {
    std::vector<Tensor<double>> layers;
};

// Optional per-head distributions for the entropy-then-average variant.
struct SentenceAttnHeads {
    std::vector<std::vector<Tensor<double>>> layers;  // [layer][head] -> [m x n]
};

// Gate values by (1-based) decoder layer; only CCAN layers appear.
struct SentenceGates {
    std::map<int, std::vector<double>> by_layer;
};

enum class LeHeadMode {
    mean_then_entropy,  // entropy of the head-averaged distribution
    entropy_then_mean,  // per-head entropies averaged afterwards
};

namespace detail {

inline double row_entropy_bits(const double* row, std::size_t n) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += row[j];
    if (sum <= 0.0) throw DataError("attention row does not form a distribution");
    double h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double p = row[j] / sum;  // renormalised over non-pad sources
        if (p > 0.0) h -= p * std::log2(p);
    }
    return h;
}

}  // namespace detail

// Mean base-2 entropy of the cross-attention distributions, averaged over
// decoder layers and target positions. 0 * log2(0) counts as 0.
inline double locality_entropy(const SentenceAttn& sent) {
    if (sent.layers.empty()) throw DataError("locality_entropy: sentence has no layers");
    const std::size_t m = sent.layers[0].rows();
    if (m == 0) throw DataError("locality_entropy: empty sentence");
    double total = 0.0;
    for (const Tensor<double>& layer : sent.layers) {
        if (layer.rows() != m)
            throw DataError("locality_entropy: inconsistent target length across layers");
        for (std::size_t i = 0; i < m; ++i)
            total += detail::row_entropy_bits(layer.data.data() + i * layer.cols(), layer.cols());
    }
    return total / (static_cast<double>(sent.layers.size()) * static_cast<double>(m));
}

// Variant computed from per-head distributions: entropy per head first,
// then averaged over heads, layers and positions.
inline double locality_entropy_per_head(const SentenceAttnHeads& sent) {
    if (sent.layers.empty()) throw DataError("locality_entropy: sentence has no layers");
    double total = 0.0;
    std::size_t terms = 0;
    std::size_t m = 0;
    for (const auto& heads : sent.layers) {
        if (heads.empty()) throw DataError("locality_entropy: layer without head data");
        if (m == 0) m = heads[0].rows();
        double layer_sum = 0.0;
        for (const Tensor<double>& h : heads) {
            if (h.rows() != m)
                throw DataError("locality_entropy: inconsistent target length across heads");
            for (std::size_t i = 0; i < m; ++i)
                layer_sum += detail::row_entropy_bits(h.data.data() + i * h.cols(), h.cols());
        }
        total += layer_sum / static_cast<double>(heads.size());
        terms += 1;
    }
    if (m == 0) throw DataError("locality_entropy: empty sentence");
    return total / (static_cast<double>(terms) * static_cast<double>(m));
}

// Unweighted mean of sentence-level LE values.
inline double corpus_le(const std::vector<SentenceAttn>& sents) {
    if (sents.empty()) throw DataError("corpus_le: empty corpus");
    double sum = 0.0;
    for (const SentenceAttn& s : sents) sum += locality_entropy(s);
    return sum / static_cast<double>(sents.size());
}

// Mean local-branch weight (1 - g) per decoder layer, over all sentences
// and target positions. Layers that never ran CCAN are simply absent.
inline std::map<int, double> gate_importance(const std::vector<SentenceGates>& sents) {
    std::map<int, double> sums;
    std::map<int, std::size_t> counts;
    for (const SentenceGates& s : sents) {
        for (const auto& [layer, gs] : s.by_layer) {
            for (double g : gs) {
                sums[layer] += 1.0 - g;
                counts[layer] += 1;
            }
        }
    }
    std::map<int, double> out;
    for (const auto& [layer, sum] : sums) out[layer] = sum / static_cast<double>(counts[layer]);
    return out;
}

namespace detail {

inline std::unordered_map<std::string, std::size_t> ngram_counts(const TokenSeq& toks,
                                                                 std::size_t n) {
    std::unordered_map<std::string, std::size_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key;
        for (std::size_t j = 0; j < n; ++j) {
            key += toks[i + j];
            key += '\x1f';
        }
        counts[key] += 1;
    }
    return counts;
}

struct NgramTally {
    std::size_t matched = 0;
    std::size_t total = 0;
};

inline NgramTally ngram_tally(const TokenSeq& hyp, const TokenSeq& ref, std::size_t n) {
    NgramTally t;
    if (hyp.size() < n) return t;
    const auto hc = ngram_counts(hyp, n);
    const auto rc = ngram_counts(ref, n);
    for (const auto& [key, count] : hc) {
        t.total += count;
        auto it = rc.find(key);
        if (it != rc.end()) t.matched += std::min(count, it->second);
    }
    return t;
}

}  // namespace detail

// Clipped (modified) n-gram precision for one sentence pair. A
// hypothesis shorter than n contributes no n-grams and scores 0.
inline double ngram_precision(const TokenSeq& hyp, const TokenSeq& ref, std::size_t n) {
    if (n < 1) throw ConfigError("ngram_precision: n must be >= 1");
    const detail::NgramTally t = detail::ngram_tally(hyp, ref, n);
    if (t.total == 0) return 0.0;
    return static_cast<double>(t.matched) / static_cast<double>(t.total);
}

// Corpus variant: counts are aggregated over sentences before dividing;
// sentences shorter than n contribute nothing.
inline double corpus_ngram_precision(const std::vector<TokenSeq>& hyps,
                                     const std::vector<TokenSeq>& refs, std::size_t n) {
    if (hyps.size() != refs.size())
        throw DataError("corpus_ngram_precision: corpus sizes differ (" +
                        std::to_string(hyps.size()) + " vs " + std::to_string(refs.size()) + ")");
    detail::NgramTally sum;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const detail::NgramTally t = detail::ngram_tally(hyps[i], refs[i], n);
        sum.matched += t.matched;
        sum.total += t.total;
    }
    if (sum.total == 0) return 0.0;
    return static_cast<double>(sum.matched) / static_cast<double>(sum.total);
}

// Standard corpus BLEU-4: geometric mean of clipped n-gram precisions for
// n = 1..4 times the brevity penalty, all counts corpus-aggregated.
// Range [0, 100]; identical corpora score exactly 100.
inline double corpus_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
    if (hyps.empty()) throw DataError("corpus_bleu: empty corpus");
    if (hyps.size() != refs.size())
        throw DataError("corpus_bleu: corpus sizes differ (" + std::to_string(hyps.size()) +
                        " vs " + std::to_string(refs.size()) + ")");
    detail::NgramTally tally[4];
    std::size_t hyp_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        hyp_len += hyps[i].size();
        ref_len += refs[i].size();
        for (std::size_t n = 1; n <= 4; ++n) {
            const detail::NgramTally t = detail::ngram_tally(hyps[i], refs[i], n);
            tally[n - 1].matched += t.matched;
            tally[n - 1].total += t.total;
        }
    }
    if (hyp_len == 0) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        if (tally[n].matched == 0 || tally[n].total == 0) return 0.0;
        log_sum += std::log(static_cast<double>(tally[n].matched) /
                            static_cast<double>(tally[n].total));
    }
    const double bp =
        hyp_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_sum / 4.0);
}

// Paired bootstrap resampling. Returns the one-sided p-value: the
// fraction of resamples in which BLEU(a) <= BLEU(b), i.e. the estimated
// probability that system a is not better than system b. A two-sided
// value is 2 * min(p, 1 - p).
inline double paired_bootstrap(const std::vector<TokenSeq>& hyps_a,
                               const std::vector<TokenSeq>& hyps_b,
                               const std::vector<TokenSeq>& refs, std::size_t resamples,
                               std::uint64_t seed) {
    if (resamples < 100) throw ConfigError("paired_bootstrap: need at least 100 resamples");
    if (hyps_a.size() != refs.size() || hyps_b.size() != refs.size())
        throw DataError("paired_bootstrap: corpus sizes differ");
    if (refs.empty()) throw DataError("paired_bootstrap: empty corpus");
    const std::size_t s = refs.size();

    // Per-sentence sufficient statistics so each resample is a cheap sum.
    struct Stats {
        std::size_t matched[4] = {0, 0, 0, 0};
        std::size_t total[4] = {0, 0, 0, 0};
        std::size_t hyp_len = 0, ref_len = 0;
    };
    auto collect = [&](const std::vector<TokenSeq>& hyps) {
        std::vector<Stats> st(s);
        for (std::size_t i = 0; i < s; ++i) {
            st[i].hyp_len = hyps[i].size();
            st[i].ref_len = refs[i].size();
            for (std::size_t n = 1; n <= 4; ++n) {
                const detail::NgramTally t = detail::ngram_tally(hyps[i], refs[i], n);
                st[i].matched[n - 1] = t.matched;
                st[i].total[n - 1] = t.total;
            }
        }
        return st;
    };
    const std::vector<Stats> stats_a = collect(hyps_a);
    const std::vector<Stats> stats_b = collect(hyps_b);

    auto bleu_of = [](const std::vector<Stats>& st, const std::vector<std::size_t>& idx) {
        std::size_t matched[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
        std::size_t hyp_len = 0, ref_len = 0;
        for (std::size_t i : idx) {
            hyp_len += st[i].hyp_len;
            ref_len += st[i].ref_len;
            for (std::size_t n = 0; n < 4; ++n) {
                matched[n] += st[i].matched[n];
                total[n] += st[i].total[n];
            }
        }
        if (hyp_len == 0) return 0.0;
        double log_sum = 0.0;
        for (std::size_t n = 0; n < 4; ++n) {
            if (matched[n] == 0 || total[n] == 0) return 0.0;
            log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
        }
        const double bp = hyp_len >= ref_len
                              ? 1.0
                              : std::exp(1.0 - static_cast<double>(ref_len) /
                                                   static_cast<double>(hyp_len));
        return 100.0 * bp * std::exp(log_sum / 4.0);
    };

    Rng rng(seed);
    std::size_t not_better = 0;
    std::vector<std::size_t> idx(s);
    for (std::size_t r = 0; r < resamples; ++r) {
        for (std::size_t i = 0; i < s; ++i) idx[i] = static_cast<std::size_t>(rng.uniform_int(s));
        if (bleu_of(stats_a, idx) <= bleu_of(stats_b, idx)) not_better += 1;
    }
    return static_cast<double>(not_better) / static_cast<double>(resamples);
}

}  // namespace natlab
