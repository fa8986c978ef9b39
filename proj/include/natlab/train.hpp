#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "natlab/checkpoint.hpp"
#include "natlab/dataset.hpp"
#include "natlab/decoding.hpp"
#include "natlab/errors.hpp"
#include "natlab/format.hpp"
#include "natlab/model.hpp"
#include "natlab/optim.hpp"
#include "natlab/rng.hpp"
#include "natlab/vocab.hpp"

namespace natlab {

struct TrainConfig {
    AdamHyper adam;
    std::size_t batch_size = 16;
    std::size_t steps = 500;
    std::size_t val_every = 50;
    double length_loss_weight = 0.1;
    bool average_top3 = false;
    std::uint64_t seed = 1;
};

// Everything one run needs: model + optimizer settings, data locations
// and the master seed. Validated before any training step.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string task;
    std::string train_path;
    std::string val_path;
    std::string vocab_path;
    std::string out_dir;

    void validate() const {
        model.validate();
        if (train.batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (train.steps < 1) throw ConfigError("steps must be >= 1");
        if (train.val_every < 1) throw ConfigError("val_every must be >= 1");
        if (train.adam.lr <= 0.0) throw ConfigError("learning rate must be positive");
        if (train.length_loss_weight < 0.0) throw ConfigError("length loss weight must be >= 0");
    }
};

inline TokenBatch make_batch(const Dataset& data, const std::vector<std::size_t>& idx,
                             const Vocab& vocab) {
    TokenBatch batch;
    for (std::size_t i : idx) {
        batch.src.push_back(vocab.encode(data[i].src));
        batch.tgt.push_back(vocab.encode(data[i].tgt));
    }
    TokenBatch::pad_to(batch.src);
    TokenBatch::pad_to(batch.tgt);
    return batch;
}

// Fraction of target tokens recovered by a single fully-masked parallel
// pass at gold length. Deterministic; this is the validation metric.
template <typename T>
double masked_token_accuracy(TransformerModel<T>& model, const Dataset& data,
                             const Vocab& vocab) {
    if (data.empty()) throw DataError("accuracy: empty dataset");
    std::size_t correct = 0, total = 0;
    for (const DatasetRecord& r : data) {
        const std::vector<std::int32_t> src = vocab.encode(r.src);
        const std::vector<std::int32_t> tgt = vocab.encode(r.tgt);
        const std::vector<std::int32_t> all_mask(tgt.size(), MASK);
        const Tensor<T> logits = model.forward_cmlm(src, all_mask);
        for (std::size_t i = 0; i < tgt.size(); ++i) {
            std::int32_t tok;
            double conf;
            detail::predict_row(logits, i, /*allow_eos=*/false, tok, conf);
            correct += tok == tgt[i] ? 1 : 0;
            total += 1;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

// Teacher-forced next-token accuracy for the autoregressive mode.
template <typename T>
double at_token_accuracy(TransformerModel<T>& model, const Dataset& data, const Vocab& vocab) {
    if (data.empty()) throw DataError("accuracy: empty dataset");
    std::size_t correct = 0, total = 0;
    for (const DatasetRecord& r : data) {
        const std::vector<std::int32_t> src = vocab.encode(r.src);
        const std::vector<std::int32_t> tgt = vocab.encode(r.tgt);
        std::vector<std::int32_t> prefix = {BOS};
        prefix.insert(prefix.end(), tgt.begin(), tgt.end());
        std::vector<std::int32_t> labels = tgt;
        labels.push_back(EOS);
        const Tensor<T> logits = model.forward_at(src, prefix);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            std::int32_t tok;
            double conf;
            detail::predict_row(logits, i, /*allow_eos=*/true, tok, conf);
            correct += tok == labels[i] ? 1 : 0;
            total += 1;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

template <typename T>
double validation_score(TransformerModel<T>& model, const Dataset& data, const Vocab& vocab) {
    return model.config().arch == Arch::cmlm ? masked_token_accuracy(model, data, vocab)
                                             : at_token_accuracy(model, data, vocab);
}

struct TrainResult {
    std::vector<std::string> log_rows;  // "step,loss,val" CSV rows, no header
    std::vector<Checkpoint> top;        // best validation first, at most 3
    std::optional<Checkpoint> averaged;
    double best_val = -1.0;
    bool aborted = false;  // non-finite loss encountered
};

// Single-threaded training loop: deterministic batch order, periodic
// validation, keeps the top three checkpoints by validation score.
template <typename T>
TrainResult train_model(TransformerModel<T>& model, const Dataset& train_data,
                        const Dataset& val_data, const Vocab& vocab, const TrainConfig& tc) {
    if (train_data.empty()) throw DataError("train: empty training set");
    if (val_data.empty()) throw DataError("train: empty validation set");

    AdamState<T> adam(model.params());
    Rng order_rng(derive_seed(tc.seed, 0xDA7A));
    Rng mask_rng(derive_seed(tc.seed, 0x3A5C));

    std::vector<std::size_t> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    std::size_t cursor = 0;

    TrainResult result;
    result.log_rows.reserve(tc.steps);

    auto record_checkpoint = [&](std::int64_t step, double val) {
        result.top.push_back(snapshot(model, step, val));
        std::sort(result.top.begin(), result.top.end(), [](const Checkpoint& a,
                                                           const Checkpoint& b) {
            if (a.val_score != b.val_score) return a.val_score > b.val_score;
            return a.step > b.step;  // prefer the later snapshot on ties
        });
        if (result.top.size() > 3) result.top.resize(3);
        result.best_val = result.top.front().val_score;
    };

    for (std::size_t step = 1; step <= tc.steps; ++step) {
        std::vector<std::size_t> idx;
        idx.reserve(tc.batch_size);
        for (std::size_t b = 0; b < tc.batch_size; ++b) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        const TokenBatch batch = make_batch(train_data, idx, vocab);

        double loss;
        try {
            if (model.config().arch == Arch::cmlm) {
                loss = model.cmlm_loss(batch, mask_rng, tc.length_loss_weight).loss;
            } else {
                loss = model.at_loss(batch, mask_rng).loss;
            }
            if (!std::isfinite(loss)) throw NumericError("non-finite loss");
            adam_step(model.params(), adam, tc.adam);
        } catch (const NumericError&) {
            result.aborted = true;
            break;
        }

        std::string row = std::to_string(step) + "," + fmt_double(loss) + ",";
        if (step % tc.val_every == 0 || step == tc.steps) {
            const double val = validation_score(model, val_data, vocab);
            row += fmt_double(val);
            record_checkpoint(static_cast<std::int64_t>(step), val);
        }
        result.log_rows.push_back(std::move(row));
    }

    if (result.top.empty() && !result.aborted) {
        // steps < val_every with no final validation cannot happen (the
        // last step always validates), but keep a safe fallback.
        record_checkpoint(static_cast<std::int64_t>(tc.steps),
                          validation_score(model, val_data, vocab));
    }
    if (tc.average_top3 && !result.top.empty())
        result.averaged = average_checkpoints(result.top);
    return result;
}

// ---- decoding over a corpus ----

template <typename T>
struct TranslateOptions {
    Arch mode = Arch::cmlm;
    std::size_t iterations = 10;
    // Called once per sentence when attention capture is requested.
    std::function<void(const AttnDump<T>&, std::size_t id, std::size_t src_len,
                       std::size_t tgt_len)>
        on_dump;
};

template <typename T>
std::vector<std::vector<std::string>> translate_corpus(TransformerModel<T>& model,
                                                       const Dataset& data, const Vocab& vocab,
                                                       const TranslateOptions<T>& opt) {
    std::vector<std::vector<std::string>> hyps;
    hyps.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::vector<std::int32_t> src = vocab.encode(data[i].src);
        std::vector<std::int32_t> out_ids;
        AttnDump<T> dump;
        AttnDump<T>* want = opt.on_dump ? &dump : nullptr;
        if (opt.mode == Arch::cmlm) {
            out_ids = mask_predict(model, src, opt.iterations, std::nullopt, want);
        } else {
            out_ids = greedy_at(model, src, static_cast<std::size_t>(model.config().max_len) - 1,
                                want);
        }
        if (opt.on_dump && !dump.layers.empty())
            opt.on_dump(dump, i, src.size(), out_ids.size());
        hyps.push_back(vocab.decode(out_ids));
    }
    return hyps;
}

}  // namespace natlab
