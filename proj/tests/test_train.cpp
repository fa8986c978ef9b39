#include <cmath>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "natlab/dataset.hpp"
#include "natlab/decoding.hpp"
#include "natlab/train.hpp"

using namespace natlab;

namespace {

ModelConfig toy_model(std::int32_t vocab, Arch arch = Arch::cmlm) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = 32;
    cfg.n_heads = 2;
    cfg.enc_layers = 2;
    cfg.dec_layers = 2;
    cfg.d_ff = 64;
    cfg.win = 3;
    cfg.ccan_layers = {1, 2};
    cfg.max_len = 24;
    cfg.length_offset_range = 4;
    cfg.seed = 7;
    cfg.arch = arch;
    return cfg;
}

TrainConfig quick_train(std::size_t steps, double lr = 3e-3) {
    TrainConfig tc;
    tc.adam.lr = lr;
    tc.batch_size = 16;
    tc.steps = steps;
    tc.val_every = steps;  // validate once at the end
    tc.seed = 7;
    return tc;
}

}  // namespace

TEST_CASE("two runs with the same seed produce identical logs") {
    const Vocab vocab = make_task_vocab(8);
    const Dataset train = gen_synthetic("copy", 64, 3, 6, 8, 21);
    const Dataset val = gen_synthetic("copy", 8, 3, 6, 8, 22);

    std::vector<std::string> logs[2];
    for (int run = 0; run < 2; ++run) {
        TransformerModel<float> model(toy_model(vocab.size()));
        const TrainResult r = train_model(model, train, val, vocab, quick_train(12));
        logs[run] = r.log_rows;
    }
    REQUIRE(logs[0] == logs[1]);
}

TEST_CASE("first-step loss sits near ln V plus the weighted length term") {
    const Vocab vocab = make_task_vocab(32);  // total vocab 36
    const Dataset train = gen_synthetic("copy", 64, 6, 10, 32, 31);
    const Dataset val = gen_synthetic("copy", 8, 6, 10, 32, 32);
    TransformerModel<float> model(toy_model(vocab.size()));
    TrainConfig tc = quick_train(3);
    const TrainResult r = train_model(model, train, val, vocab, tc);
    REQUIRE_FALSE(r.log_rows.empty());
    const std::string first = r.log_rows[0];
    const double loss = std::stod(first.substr(first.find(',') + 1));
    const double expected = std::log(36.0) + tc.length_loss_weight * std::log(9.0);
    REQUIRE(loss == Catch::Approx(expected).epsilon(0.10));
}

TEST_CASE("non-finite loss aborts and keeps earlier checkpoints") {
    const Vocab vocab = make_task_vocab(8);
    const Dataset train = gen_synthetic("copy", 32, 3, 6, 8, 41);
    const Dataset val = gen_synthetic("copy", 4, 3, 6, 8, 42);
    TransformerModel<float> model(toy_model(vocab.size()));

    TrainConfig tc = quick_train(40);
    tc.val_every = 4;
    // poison the model after a few clean steps by training in two stages
    TrainConfig first_leg = tc;
    first_leg.steps = 8;
    const TrainResult healthy = train_model(model, train, val, vocab, first_leg);
    REQUIRE_FALSE(healthy.aborted);
    REQUIRE_FALSE(healthy.top.empty());

    Parameter<float>& embed = model.params().get("embed.tok");
    embed.value.at(5, 0) = std::numeric_limits<float>::infinity();
    const TrainResult wrecked = train_model(model, train, val, vocab, first_leg);
    REQUIRE(wrecked.aborted);
}

TEST_CASE("top-3 averaging equals the parameter-wise mean") {
    const Vocab vocab = make_task_vocab(8);
    const Dataset train = gen_synthetic("copy", 64, 3, 6, 8, 51);
    const Dataset val = gen_synthetic("copy", 8, 3, 6, 8, 52);
    TransformerModel<float> model(toy_model(vocab.size()));
    TrainConfig tc = quick_train(12);
    tc.val_every = 3;  // four validations -> keeps best three
    tc.average_top3 = true;
    const TrainResult r = train_model(model, train, val, vocab, tc);
    REQUIRE(r.top.size() == 3);
    REQUIRE(r.averaged.has_value());
    const std::size_t pick = 2;  // spot-check one tensor
    for (std::size_t i = 0; i < r.averaged->params[pick].second.data.size(); ++i) {
        const float mean = (r.top[0].params[pick].second.data[i] +
                            r.top[1].params[pick].second.data[i] +
                            r.top[2].params[pick].second.data[i]) /
                           3.0f;
        REQUIRE(r.averaged->params[pick].second.data[i] == Catch::Approx(mean).margin(1e-7));
    }
}

TEST_CASE("cmlm training on copy learns the task and the length offset") {
    const Vocab vocab = make_task_vocab(8);
    const Dataset train = gen_synthetic("copy", 256, 3, 6, 8, 61);
    const Dataset val = gen_synthetic("copy", 32, 3, 6, 8, 62);
    const Dataset held_out = gen_synthetic("copy", 100, 3, 6, 8, 63);

    TransformerModel<float> model(toy_model(vocab.size()));
    const double before = masked_token_accuracy(model, held_out, vocab);
    train_model(model, train, val, vocab, quick_train(400));
    const double after = masked_token_accuracy(model, held_out, vocab);
    REQUIRE(after > before + 0.3);
    REQUIRE(after >= 0.9);

    // length-preserving task: the predictor should pick offset 0
    std::size_t zero_offset = 0;
    for (const DatasetRecord& r : held_out) {
        const std::vector<std::int32_t> src = vocab.encode(r.src);
        if (model.predict_target_length(src) == src.size()) zero_offset += 1;
    }
    REQUIRE(zero_offset >= 95);
}

TEST_CASE("at training on copy reaches faithful greedy decoding") {
    const Vocab vocab = make_task_vocab(8);
    const Dataset train = gen_synthetic("copy", 256, 3, 6, 8, 71);
    const Dataset val = gen_synthetic("copy", 32, 3, 6, 8, 72);
    const Dataset held_out = gen_synthetic("copy", 100, 3, 6, 8, 73);

    TransformerModel<float> model(toy_model(vocab.size(), Arch::at));
    train_model(model, train, val, vocab, quick_train(700));

    std::size_t exact = 0;
    for (const DatasetRecord& r : held_out) {
        const std::vector<std::int32_t> src = vocab.encode(r.src);
        const std::vector<std::int32_t> out = greedy_at(model, src, 10);
        if (vocab.decode(out) == r.tgt) exact += 1;
    }
    REQUIRE(exact >= 95);
}

TEST_CASE("translate_corpus decodes every sentence once") {
    const Vocab vocab = make_task_vocab(8);
    const Dataset data = gen_synthetic("copy", 5, 3, 5, 8, 81);
    TransformerModel<float> model(toy_model(vocab.size()));
    TranslateOptions<float> opt;
    opt.iterations = 2;
    std::size_t dumped = 0;
    opt.on_dump = [&](const AttnDump<float>&, std::size_t, std::size_t, std::size_t) {
        dumped += 1;
    };
    const auto hyps = translate_corpus(model, data, vocab, opt);
    REQUIRE(hyps.size() == 5);
    REQUIRE(dumped == 5);
}
