#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "natlab/attention.hpp"
#include "natlab/autograd.hpp"
#include "natlab/errors.hpp"
#include "natlab/optim.hpp"
#include "natlab/param.hpp"
#include "natlab/rng.hpp"
#include "natlab/tensor.hpp"

namespace natlab {

// Reserved token ids. Vocabulary files must map these first.
enum SpecialToken : std::int32_t { PAD = 0, BOS = 1, EOS = 2, MASK = 3 };

enum class Arch { cmlm, at };

inline const char* arch_name(Arch a) { return a == Arch::cmlm ? "cmlm" : "at"; }

inline Arch arch_from_name(const std::string& s) {
    if (s == "cmlm") return Arch::cmlm;
    if (s == "at") return Arch::at;
    throw ConfigError("unknown arch '" + s + "' (expected cmlm or at)");
}

struct ModelConfig {
    std::int32_t vocab_size = 0;
    int d_model = 64;
    int n_heads = 4;
    int enc_layers = 4;
    int dec_layers = 4;
    int d_ff = 128;
    int win = 9;
    std::vector<int> ccan_layers = {1, 2, 3, 4};  // 1-based decoder layer indices
    int max_len = 128;
    int length_offset_range = 8;  // predicts target length offsets in [-R, +R]
    double dropout = 0.0;
    std::uint64_t seed = 1;
    Arch arch = Arch::cmlm;

    void set_all_ccan_layers() {
        ccan_layers.clear();
        for (int i = 1; i <= dec_layers; ++i) ccan_layers.push_back(i);
    }

    bool layer_uses_ccan(int layer_1based) const {
        return std::find(ccan_layers.begin(), ccan_layers.end(), layer_1based) !=
               ccan_layers.end();
    }

    void validate() const {
        if (vocab_size < 5)
            throw ConfigError("vocab_size must cover the 4 reserved ids plus content tokens");
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw ConfigError("d_model " + std::to_string(d_model) +
                              " must be divisible by n_heads " + std::to_string(n_heads));
        if (enc_layers < 1 || dec_layers < 1) throw ConfigError("need at least one layer per stack");
        if (win < 1 || win % 2 == 0)
            throw ConfigError("win must be an odd positive integer, got " + std::to_string(win));
        for (int l : ccan_layers)
            if (l < 1 || l > dec_layers)
                throw ConfigError("ccan layer index " + std::to_string(l) + " outside [1," +
                                  std::to_string(dec_layers) + "]");
        if (max_len < 2) throw ConfigError("max_len too small");
        if (length_offset_range < 0) throw ConfigError("length_offset_range must be >= 0");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    }
};

// One padded batch of id sequences. PAD marks unused tail positions.
struct TokenBatch {
    std::vector<std::vector<std::int32_t>> src;
    std::vector<std::vector<std::int32_t>> tgt;

    std::size_t size() const { return src.size(); }

    static std::vector<std::int32_t> strip_pad(const std::vector<std::int32_t>& row) {
        std::vector<std::int32_t> out;
        for (std::int32_t t : row)
            if (t != PAD) out.push_back(t);
        return out;
    }

    static std::vector<char> pad_mask(const std::vector<std::int32_t>& row) {
        std::vector<char> m(row.size());
        for (std::size_t i = 0; i < row.size(); ++i) m[i] = row[i] == PAD ? 1 : 0;
        return m;
    }

    static void pad_to(std::vector<std::vector<std::int32_t>>& rows) {
        std::size_t w = 0;
        for (const auto& r : rows) w = std::max(w, r.size());
        for (auto& r : rows) r.resize(w, PAD);
    }
};

// Head-averaged cross-attention distributions (one per decoder layer) and
// the per-position gate values of CCAN layers.
template <typename T>
struct AttnDump {
    std::vector<AttnCapture<T>> layers;
    bool want_heads = false;  // set before the forward pass to keep per-head rows
};

template <typename T>
struct CmlmLossResult {
    double loss = 0.0;        // token term + lambda * length term
    double token_nll = 0.0;   // mean NLL over masked positions
    double length_nll = 0.0;  // mean NLL of the length offset
    std::size_t masked_tokens = 0;
};

// CMLM-style non-autoregressive encoder-decoder with a length-offset
// head; the same stack runs autoregressively (causal self-attention,
// vanilla cross-attention) for the AT baseline.
template <typename T>
class TransformerModel {
public:
    explicit TransformerModel(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(cfg_.seed, 0xA11));
        build_params(rng);
        build_position_table();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }

    // ---- encoder ----

    Var<T> encode_graph(Tape<T>& tape, const std::vector<std::int32_t>& src, Rng* drop) {
        check_length(src);
        Var<T> x = embed(tape, src, drop);
        const std::vector<char> pad = TokenBatch::pad_mask(src);
        for (int l = 0; l < cfg_.enc_layers; ++l) {
            EncLayer& lp = enc_[l];
            MhaOptions<T> opt;
            opt.n_heads = static_cast<std::size_t>(cfg_.n_heads);
            Var<T> h = layer_norm(x, tape.leaf(*lp.ln1_g), tape.leaf(*lp.ln1_b), ln_eps());
            x = add(x, maybe_dropout(multi_head_attention(h, h, pad, lp.self, opt), drop));
            x = add(x, maybe_dropout(ffn(tape, x, lp.ln2_g, lp.ln2_b, lp.ff), drop));
        }
        return layer_norm(x, tape.leaf(*enc_final_g_), tape.leaf(*enc_final_b_), ln_eps());
    }

    // Forward-only encoder states, one [T x d_model] tensor per sentence.
    std::vector<Tensor<T>> encode(const TokenBatch& batch) {
        std::vector<Tensor<T>> out;
        out.reserve(batch.size());
        for (const auto& row : batch.src) {
            Tape<T> tape;
            out.push_back(encode_graph(tape, row, nullptr).value());
        }
        return out;
    }

    Tensor<T> encode_states(const std::vector<std::int32_t>& src) {
        Tape<T> tape;
        return encode_graph(tape, src, nullptr).value();
    }

    // ---- length prediction ----

    Var<T> length_logits_graph(Tape<T>& tape, Var<T> enc, const std::vector<char>& src_pad) {
        std::vector<char> use(src_pad.size());
        for (std::size_t i = 0; i < use.size(); ++i) use[i] = src_pad[i] ? 0 : 1;
        Var<T> pooled = mean_rows_masked(enc, std::move(use));
        return add_rowvec(matmul(pooled, tape.leaf(*len_w_)), tape.leaf(*len_b_));
    }

    // Distribution over length offsets [-R, +R] from mean-pooled encoder
    // states of the non-padded source positions.
    Tensor<T> length_distribution(const std::vector<std::int32_t>& src) {
        Tape<T> tape;
        Var<T> enc = encode_graph(tape, src, nullptr);
        Var<T> logits = length_logits_graph(tape, enc, TokenBatch::pad_mask(src));
        Tensor<T> dist = logits.value();
        softmax_rows_inplace(dist);
        return dist;
    }

    std::size_t predict_target_length(const std::vector<std::int32_t>& src) {
        const Tensor<T> dist = length_distribution(src);
        const std::size_t best = argmax_finite(dist.data.data(), dist.data.size());
        const long offset = static_cast<long>(best) - cfg_.length_offset_range;
        long n_src = 0;
        for (std::int32_t t : src) n_src += t != PAD ? 1 : 0;
        const long t = std::clamp(n_src + offset, 1L, static_cast<long>(cfg_.max_len));
        return static_cast<std::size_t>(t);
    }

    // ---- decoder ----

    Var<T> decode_graph(Tape<T>& tape, const std::vector<std::int32_t>& tgt_in, Var<T> enc,
                        const std::vector<char>& src_pad, bool causal, Rng* drop,
                        AttnDump<T>* dump) {
        check_length(tgt_in);
        if (tgt_in.empty()) throw DataError("decode: empty target sequence");
        Var<T> x = embed(tape, tgt_in, drop);
        const std::vector<char> tgt_pad = TokenBatch::pad_mask(tgt_in);
        if (dump) dump->layers.assign(static_cast<std::size_t>(cfg_.dec_layers),
                                      AttnCapture<T>{});
        for (int l = 0; l < cfg_.dec_layers; ++l) {
            DecLayer& lp = dec_[l];
            MhaOptions<T> self_opt;
            self_opt.n_heads = static_cast<std::size_t>(cfg_.n_heads);
            self_opt.causal = causal;
            Var<T> h = layer_norm(x, tape.leaf(*lp.ln1_g), tape.leaf(*lp.ln1_b), ln_eps());
            x = add(x, maybe_dropout(multi_head_attention(h, h, tgt_pad, lp.self, self_opt), drop));

            MhaOptions<T> cross_opt;
            cross_opt.n_heads = static_cast<std::size_t>(cfg_.n_heads);
            cross_opt.window = WindowSpec(cfg_.win);
            cross_opt.mode = (!causal && cfg_.layer_uses_ccan(l + 1)) ? AttnMode::ccan
                                                                      : AttnMode::vanilla;
            cross_opt.capture = dump != nullptr;
            cross_opt.capture_heads = dump != nullptr && dump->want_heads;
            AttnCapture<T>* cap = dump ? &dump->layers[l] : nullptr;
            Var<T> hc = layer_norm(x, tape.leaf(*lp.ln2_g), tape.leaf(*lp.ln2_b), ln_eps());
            x = add(x, maybe_dropout(
                           multi_head_attention(hc, enc, src_pad, lp.cross, cross_opt, cap),
                           drop));

            x = add(x, maybe_dropout(ffn(tape, x, lp.ln3_g, lp.ln3_b, lp.ff), drop));
        }
        Var<T> out = layer_norm(x, tape.leaf(*dec_final_g_), tape.leaf(*dec_final_b_), ln_eps());
        return add_rowvec(matmul(out, tape.leaf(*out_w_)), tape.leaf(*out_b_));
    }

    // One-shot CMLM logits for a (source, masked-target) pair. The decoder
    // self-attention is fully bidirectional.
    Tensor<T> forward_cmlm(const std::vector<std::int32_t>& src,
                           const std::vector<std::int32_t>& tgt_in, AttnDump<T>* dump = nullptr) {
        Tape<T> tape;
        Var<T> enc = encode_graph(tape, src, nullptr);
        Var<T> logits =
            decode_graph(tape, tgt_in, enc, TokenBatch::pad_mask(src), false, nullptr, dump);
        return logits.value();
    }

    // CMLM logits against precomputed encoder states (mask-predict reuses
    // the encoder across refinement iterations).
    Tensor<T> decode_cmlm_logits(const Tensor<T>& enc_states,
                                 const std::vector<char>& src_pad,
                                 const std::vector<std::int32_t>& tgt_in,
                                 AttnDump<T>* dump = nullptr) {
        Tape<T> tape;
        Var<T> enc = tape.constant(enc_states);
        Var<T> logits = decode_graph(tape, tgt_in, enc, src_pad, false, nullptr, dump);
        return logits.value();
    }

    // Causal decoder pass over a BOS-led prefix; row t holds next-token
    // logits after prefix position t. Cross-attention is always vanilla.
    Tensor<T> decode_at_logits(const Tensor<T>& enc_states, const std::vector<char>& src_pad,
                               const std::vector<std::int32_t>& prefix,
                               AttnDump<T>* dump = nullptr) {
        if (prefix.empty() || prefix[0] != BOS)
            throw DataError("decode_at: prefix must begin with BOS");
        Tape<T> tape;
        Var<T> enc = tape.constant(enc_states);
        Var<T> logits = decode_graph(tape, prefix, enc, src_pad, true, nullptr, dump);
        return logits.value();
    }

    Tensor<T> forward_at(const std::vector<std::int32_t>& src,
                         const std::vector<std::int32_t>& prefix, AttnDump<T>* dump = nullptr) {
        return decode_at_logits(encode_states(src), TokenBatch::pad_mask(src), prefix, dump);
    }

    // ---- training losses ----

    // Uniform-count CMLM masking: k ~ U{1..T} positions are replaced by
    // MASK and predicted; the length head is trained with weight lambda.
    // With backprop=true, gradients are accumulated into the parameters.
    CmlmLossResult<T> cmlm_loss(const TokenBatch& batch, Rng& rng, double lambda,
                                bool backprop = true) {
        if (batch.size() == 0) throw DataError("cmlm_loss: empty batch");
        struct SentenceGraph {
            std::unique_ptr<Tape<T>> tape;
            Var<T> token_nll;
            Var<T> length_nll;
            std::size_t masked = 0;
        };
        std::vector<SentenceGraph> graphs;
        graphs.reserve(batch.size());
        std::size_t total_masked = 0;
        double token_sum = 0.0, length_sum = 0.0;

        for (std::size_t b = 0; b < batch.size(); ++b) {
            const std::vector<std::int32_t> src = TokenBatch::strip_pad(batch.src[b]);
            const std::vector<std::int32_t> tgt = TokenBatch::strip_pad(batch.tgt[b]);
            if (tgt.empty()) throw DataError("cmlm_loss: empty target in batch row " +
                                             std::to_string(b));
            const std::size_t t_len = tgt.size();
            const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform_int(t_len));
            std::vector<std::size_t> masked_pos = rng.sample_without_replacement(t_len, k);
            std::vector<std::int32_t> tgt_in = tgt;
            std::vector<char> predict(t_len, 0);
            for (std::size_t p : masked_pos) {
                tgt_in[p] = MASK;
                predict[p] = 1;
            }

            SentenceGraph sg;
            sg.tape = std::make_unique<Tape<T>>();
            Rng drop_rng(derive_seed(rng.next_u64(), 0xD20));
            Rng* drop = cfg_.dropout > 0.0 ? &drop_rng : nullptr;
            Var<T> enc = encode_graph(*sg.tape, src, drop);
            Var<T> logits =
                decode_graph(*sg.tape, tgt_in, enc, TokenBatch::pad_mask(src), false, drop,
                             nullptr);
            sg.token_nll = nll_masked_sum(logits, tgt, predict);
            sg.masked = k;

            const int r = cfg_.length_offset_range;
            const long offset =
                std::clamp(static_cast<long>(t_len) - static_cast<long>(src.size()),
                           static_cast<long>(-r), static_cast<long>(r));
            Var<T> len_logits = length_logits_graph(*sg.tape, enc, TokenBatch::pad_mask(src));
            sg.length_nll = nll_masked_sum(
                len_logits, {static_cast<std::int32_t>(offset + r)}, {1});

            total_masked += k;
            token_sum += static_cast<double>(sg.token_nll.value().data[0]);
            length_sum += static_cast<double>(sg.length_nll.value().data[0]);
            graphs.push_back(std::move(sg));
        }

        if (backprop) {
            for (SentenceGraph& sg : graphs) {
                Var<T> contribution =
                    add(scale(sg.token_nll, T(1) / static_cast<T>(total_masked)),
                        scale(sg.length_nll, static_cast<T>(lambda / batch.size())));
                sg.tape->backward(contribution);
            }
        }

        CmlmLossResult<T> out;
        out.token_nll = token_sum / static_cast<double>(total_masked);
        out.length_nll = length_sum / static_cast<double>(batch.size());
        out.loss = out.token_nll + lambda * out.length_nll;
        out.masked_tokens = total_masked;
        return out;
    }

    // Teacher-forced autoregressive loss over [BOS y..] -> [y.. EOS].
    CmlmLossResult<T> at_loss(const TokenBatch& batch, Rng& rng, bool backprop = true) {
        if (batch.size() == 0) throw DataError("at_loss: empty batch");
        struct SentenceGraph {
            std::unique_ptr<Tape<T>> tape;
            Var<T> token_nll;
        };
        std::vector<SentenceGraph> graphs;
        std::size_t total = 0;
        double token_sum = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const std::vector<std::int32_t> src = TokenBatch::strip_pad(batch.src[b]);
            const std::vector<std::int32_t> tgt = TokenBatch::strip_pad(batch.tgt[b]);
            if (tgt.empty()) throw DataError("at_loss: empty target in batch row " +
                                             std::to_string(b));
            std::vector<std::int32_t> prefix = {BOS};
            prefix.insert(prefix.end(), tgt.begin(), tgt.end());
            std::vector<std::int32_t> labels = tgt;
            labels.push_back(EOS);

            SentenceGraph sg;
            sg.tape = std::make_unique<Tape<T>>();
            Rng drop_rng(derive_seed(rng.next_u64(), 0xD20));
            Rng* drop = cfg_.dropout > 0.0 ? &drop_rng : nullptr;
            Var<T> enc = encode_graph(*sg.tape, src, drop);
            Var<T> logits =
                decode_graph(*sg.tape, prefix, enc, TokenBatch::pad_mask(src), true, drop,
                             nullptr);
            sg.token_nll = nll_masked_sum(logits, labels, std::vector<char>(labels.size(), 1));
            total += labels.size();
            token_sum += static_cast<double>(sg.token_nll.value().data[0]);
            graphs.push_back(std::move(sg));
        }
        if (backprop) {
            for (SentenceGraph& sg : graphs) {
                sg.tape->backward(scale(sg.token_nll, T(1) / static_cast<T>(total)));
            }
        }
        CmlmLossResult<T> out;
        out.token_nll = token_sum / static_cast<double>(total);
        out.loss = out.token_nll;
        out.masked_tokens = total;
        return out;
    }

private:
    struct FfnParams {
        Parameter<T>*w1, *b1, *w2, *b2;
    };
    struct EncLayer {
        AttnLayerParams<T> self;
        Parameter<T>*ln1_g, *ln1_b, *ln2_g, *ln2_b;
        FfnParams ff;
    };
    struct DecLayer {
        AttnLayerParams<T> self;
        AttnLayerParams<T> cross;
        Parameter<T>*ln1_g, *ln1_b, *ln2_g, *ln2_b, *ln3_g, *ln3_b;
        FfnParams ff;
    };

    static constexpr T ln_eps() { return static_cast<T>(1e-5); }

    void check_length(const std::vector<std::int32_t>& seq) const {
        if (seq.size() > static_cast<std::size_t>(cfg_.max_len))
            throw DataError("sequence length " + std::to_string(seq.size()) + " exceeds max_len " +
                            std::to_string(cfg_.max_len));
        if (seq.empty()) throw DataError("empty sequence");
    }

    // fan-in scaled init for hidden projections; the output head stays
    // small so initial logits are near-uniform
    static double fan_in_std(std::size_t fan_in) {
        return 1.0 / std::sqrt(static_cast<double>(fan_in));
    }

    AttnLayerParams<T> make_attn(const std::string& prefix, Rng& rng, bool with_gate) {
        const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
        AttnLayerParams<T> p;
        p.wq = &store_.add_normal(prefix + ".wq", d, d, rng, fan_in_std(d));
        p.bq = &store_.add_zeros(prefix + ".bq", 1, d);
        p.wk = &store_.add_normal(prefix + ".wk", d, d, rng, fan_in_std(d));
        p.bk = &store_.add_zeros(prefix + ".bk", 1, d);
        p.wv = &store_.add_normal(prefix + ".wv", d, d, rng, fan_in_std(d));
        p.bv = &store_.add_zeros(prefix + ".bv", 1, d);
        p.wo = &store_.add_normal(prefix + ".wo", d, d, rng, fan_in_std(d));
        p.bo = &store_.add_zeros(prefix + ".bo", 1, d);
        // Gate starts at zero: g = 0.5 everywhere, an even split between
        // branches, and both model variants share identical random draws.
        if (with_gate) p.gate_w = &store_.add_zeros(prefix + ".gate", d, 1);
        return p;
    }

    FfnParams make_ffn(const std::string& prefix, Rng& rng) {
        const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
        const std::size_t f = static_cast<std::size_t>(cfg_.d_ff);
        FfnParams p;
        p.w1 = &store_.add_normal(prefix + ".w1", d, f, rng, fan_in_std(d));
        p.b1 = &store_.add_zeros(prefix + ".b1", 1, f);
        p.w2 = &store_.add_normal(prefix + ".w2", f, d, rng, fan_in_std(f));
        p.b2 = &store_.add_zeros(prefix + ".b2", 1, d);
        return p;
    }

    void add_ln(const std::string& prefix, Parameter<T>*& g, Parameter<T>*& b) {
        const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
        g = &store_.add_full(prefix + ".g", 1, d, T(1));
        b = &store_.add_zeros(prefix + ".b", 1, d);
    }

    void build_params(Rng& rng) {
        const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
        const std::size_t v = static_cast<std::size_t>(cfg_.vocab_size);
        tok_embed_ = &store_.add_normal("embed.tok", v, d, rng, fan_in_std(d));
        for (int l = 0; l < cfg_.enc_layers; ++l) {
            const std::string p = "enc." + std::to_string(l);
            EncLayer layer;
            layer.self = make_attn(p + ".self", rng, false);
            add_ln(p + ".ln1", layer.ln1_g, layer.ln1_b);
            layer.ff = make_ffn(p + ".ff", rng);
            add_ln(p + ".ln2", layer.ln2_g, layer.ln2_b);
            enc_.push_back(layer);
        }
        add_ln("enc.final_ln", enc_final_g_, enc_final_b_);
        for (int l = 0; l < cfg_.dec_layers; ++l) {
            const std::string p = "dec." + std::to_string(l);
            DecLayer layer;
            layer.self = make_attn(p + ".self", rng, false);
            add_ln(p + ".ln1", layer.ln1_g, layer.ln1_b);
            layer.cross = make_attn(p + ".cross", rng, cfg_.layer_uses_ccan(l + 1));
            add_ln(p + ".ln2", layer.ln2_g, layer.ln2_b);
            layer.ff = make_ffn(p + ".ff", rng);
            add_ln(p + ".ln3", layer.ln3_g, layer.ln3_b);
            dec_.push_back(layer);
        }
        add_ln("dec.final_ln", dec_final_g_, dec_final_b_);
        out_w_ = &store_.add_normal("out.w", d, v, rng, 0.02);
        out_b_ = &store_.add_zeros("out.b", 1, v);
        const std::size_t offsets = static_cast<std::size_t>(2 * cfg_.length_offset_range + 1);
        len_w_ = &store_.add_zeros("len.w", d, offsets);
        len_b_ = &store_.add_zeros("len.b", 1, offsets);
    }

    void build_position_table() {
        const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
        pe_ = Tensor<T>::zeros(static_cast<std::size_t>(cfg_.max_len), d);
        for (std::size_t pos = 0; pos < pe_.rows(); ++pos) {
            for (std::size_t i = 0; i < d; i += 2) {
                const double angle =
                    static_cast<double>(pos) /
                    std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
                pe_.at(pos, i) = static_cast<T>(std::sin(angle));
                if (i + 1 < d) pe_.at(pos, i + 1) = static_cast<T>(std::cos(angle));
            }
        }
    }

    Var<T> embed(Tape<T>& tape, const std::vector<std::int32_t>& ids, Rng* drop) {
        Var<T> e = embedding(tape.leaf(*tok_embed_), ids);
        Tensor<T> pos = Tensor<T>::zeros(ids.size(), static_cast<std::size_t>(cfg_.d_model));
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < pos.cols(); ++j) pos.at(i, j) = pe_.at(i, j);
        Var<T> x = add_const(scale(e, std::sqrt(static_cast<T>(cfg_.d_model))), std::move(pos));
        return maybe_dropout(x, drop);
    }

    Var<T> ffn(Tape<T>& tape, Var<T> x, Parameter<T>* ln_g, Parameter<T>* ln_b,
               const FfnParams& p) {
        Var<T> h = layer_norm(x, tape.leaf(*ln_g), tape.leaf(*ln_b), ln_eps());
        Var<T> a = relu(add_rowvec(matmul(h, tape.leaf(*p.w1)), tape.leaf(*p.b1)));
        return add_rowvec(matmul(a, tape.leaf(*p.w2)), tape.leaf(*p.b2));
    }

    Var<T> maybe_dropout(Var<T> x, Rng* drop) {
        if (!drop || cfg_.dropout <= 0.0) return x;
        return dropout(x, cfg_.dropout, *drop);
    }

    ModelConfig cfg_;
    ParamStore<T> store_;
    Tensor<T> pe_;
    Parameter<T>* tok_embed_ = nullptr;
    std::vector<EncLayer> enc_;
    std::vector<DecLayer> dec_;
    Parameter<T>*enc_final_g_ = nullptr, *enc_final_b_ = nullptr;
    Parameter<T>*dec_final_g_ = nullptr, *dec_final_b_ = nullptr;
    Parameter<T>*out_w_ = nullptr, *out_b_ = nullptr;
    Parameter<T>*len_w_ = nullptr, *len_b_ = nullptr;
};

}  // namespace natlab
