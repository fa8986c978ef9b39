#include <algorithm>
#include <cmath>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "natlab/analysis.hpp"
#include "natlab/rng.hpp"
#include "natlab/tensor.hpp"

using namespace natlab;

namespace {

Tensor<double> random_distribution_rows(Rng& rng, std::size_t m, std::size_t n) {
    Tensor<double> t = Tensor<double>::zeros(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            t.at(i, j) = rng.uniform() + 1e-4;
            sum += t.at(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) t.at(i, j) /= sum;
    }
    return t;
}

}  // namespace

TEST_CASE("locality entropy of uniform rows is exactly log2 n") {
    SentenceAttn sent;
    sent.layers.push_back(Tensor<double>::full(4, 8, 1.0 / 8.0));
    sent.layers.push_back(Tensor<double>::full(4, 8, 1.0 / 8.0));
    REQUIRE(locality_entropy(sent) == 3.0);
}

TEST_CASE("locality entropy of one-hot rows is zero") {
    SentenceAttn sent;
    Tensor<double> layer = Tensor<double>::zeros(3, 5);
    for (std::size_t i = 0; i < 3; ++i) layer.at(i, i + 1) = 1.0;
    sent.layers.push_back(layer);
    REQUIRE(locality_entropy(sent) == 0.0);
}

TEST_CASE("locality entropy matches the direct-summation oracle") {
    Rng rng(41);
    SentenceAttn sent;
    sent.layers.push_back(random_distribution_rows(rng, 3, 4));
    sent.layers.push_back(random_distribution_rows(rng, 3, 4));

    double total = 0.0;
    for (const Tensor<double>& layer : sent.layers)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                const double p = layer.at(i, j);
                if (p > 0.0) total -= p * std::log2(p);
            }
    const double want = total / (2.0 * 3.0);
    REQUIRE(std::abs(locality_entropy(sent) - want) < 1e-9);
}

TEST_CASE("locality entropy is bounded by log2 of the source length") {
    Rng rng(43);
    for (int trial = 0; trial < 20; ++trial) {
        SentenceAttn sent;
        const std::size_t n = 2 + rng.uniform_int(7);
        sent.layers.push_back(random_distribution_rows(rng, 4, n));
        const double le = locality_entropy(sent);
        REQUIRE(le >= 0.0);
        REQUIRE(le <= std::log2(static_cast<double>(n)) + 1e-12);
    }
}

TEST_CASE("locality entropy is invariant under layer and row permutations") {
    Rng rng(47);
    SentenceAttn sent;
    sent.layers.push_back(random_distribution_rows(rng, 4, 5));
    sent.layers.push_back(random_distribution_rows(rng, 4, 5));
    const double base = locality_entropy(sent);

    SentenceAttn swapped_layers;
    swapped_layers.layers = {sent.layers[1], sent.layers[0]};
    REQUIRE(locality_entropy(swapped_layers) == Catch::Approx(base).margin(1e-12));

    SentenceAttn swapped_rows = sent;
    for (std::size_t j = 0; j < 5; ++j)
        std::swap(swapped_rows.layers[0].at(0, j), swapped_rows.layers[0].at(3, j));
    REQUIRE(locality_entropy(swapped_rows) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("locality entropy rejects empty sentences") {
    SentenceAttn sent;
    REQUIRE_THROWS_AS(locality_entropy(sent), DataError);
    sent.layers.push_back(Tensor<double>::zeros(0, 4));
    REQUIRE_THROWS_AS(locality_entropy(sent), DataError);
}

TEST_CASE("per-head entropy variant averages head entropies") {
    Rng rng(48);
    const Tensor<double> h0 = random_distribution_rows(rng, 2, 4);
    const Tensor<double> h1 = random_distribution_rows(rng, 2, 4);
    SentenceAttnHeads sent;
    sent.layers.push_back({h0, h1});

    double want = 0.0;
    for (const Tensor<double>* h : {&h0, &h1})
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                const double p = h->at(i, j);
                want -= p * std::log2(p);
            }
    want /= 2.0 * 2.0;  // heads * positions (one layer)
    REQUIRE(std::abs(locality_entropy_per_head(sent) - want) < 1e-9);
}

TEST_CASE("corpus LE is the unweighted sentence mean") {
    SentenceAttn a, b;
    a.layers.push_back(Tensor<double>::full(2, 4, 0.25));  // LE 2
    b.layers.push_back(Tensor<double>::zeros(2, 4));
    b.layers[0].at(0, 0) = 1.0;
    b.layers[0].at(1, 2) = 1.0;  // LE 0
    REQUIRE(corpus_le({a}) == 2.0);
    REQUIRE(corpus_le({a, b}) == 1.0);
    REQUIRE(corpus_le({b, a}) == 1.0);  // order invariant
    REQUIRE_THROWS_AS(corpus_le({}), DataError);
}

TEST_CASE("gate importance averages one minus g per layer") {
    SentenceGates s1, s2;
    s1.by_layer[1] = {0.5, 0.5};
    s1.by_layer[2] = {0.9};
    s2.by_layer[1] = {0.5};
    const std::map<int, double> imp = gate_importance({s1, s2});
    REQUIRE(imp.size() == 2);
    REQUIRE(imp.at(1) == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(imp.at(2) == Catch::Approx(0.1).margin(1e-12));
    REQUIRE(imp.count(3) == 0);  // layer without CCAN is absent, not zero
}

TEST_CASE("gate importance ranges over (0,1) and matches a direct mean") {
    Rng rng(53);
    SentenceGates s;
    double sum = 0.0;
    for (int i = 0; i < 50; ++i) {
        const double g = rng.uniform();
        s.by_layer[1].push_back(g);
        sum += 1.0 - g;
    }
    const std::map<int, double> imp = gate_importance({s});
    REQUIRE(std::abs(imp.at(1) - sum / 50.0) < 1e-12);
    REQUIRE(imp.at(1) > 0.0);
    REQUIRE(imp.at(1) < 1.0);
}

TEST_CASE("ngram precision on identical sentences is one for all n") {
    const TokenSeq s = {"a", "b", "c", "d"};
    for (std::size_t n = 1; n <= 4; ++n) REQUIRE(ngram_precision(s, s, n) == 1.0);
}

TEST_CASE("ngram precision hand-counted example") {
    const TokenSeq hyp = {"a", "b", "c", "d"};
    const TokenSeq ref = {"a", "b", "x", "d"};
    // bigrams {ab, bc, cd}; only ab matches
    REQUIRE(ngram_precision(hyp, ref, 2) == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("ngram precision with disjoint vocabulary is zero") {
    REQUIRE(ngram_precision({"a", "b"}, {"x", "y"}, 1) == 0.0);
}

TEST_CASE("short hypotheses are skipped in corpus aggregation") {
    REQUIRE(ngram_precision({"a"}, {"a", "b"}, 2) == 0.0);
    // the one-token sentence contributes 0/0 and drops out
    const double p = corpus_ngram_precision({{"a"}, {"a", "b"}}, {{"a", "b"}, {"a", "b"}}, 2);
    REQUIRE(p == 1.0);
}

TEST_CASE("ngram precision stays within [0,1]") {
    Rng rng(59);
    for (int trial = 0; trial < 30; ++trial) {
        TokenSeq hyp, ref;
        for (int i = 0; i < 6; ++i) {
            hyp.push_back("t" + std::to_string(rng.uniform_int(4)));
            ref.push_back("t" + std::to_string(rng.uniform_int(4)));
        }
        const double p = ngram_precision(hyp, ref, 1 + trial % 3);
        REQUIRE(p >= 0.0);
        REQUIRE(p <= 1.0);
    }
}

TEST_CASE("identical corpora score exactly 100 BLEU") {
    const std::vector<TokenSeq> corpus = {{"a", "b", "c", "d", "e"}, {"x", "y", "z", "w"}};
    REQUIRE(corpus_bleu(corpus, corpus) == 100.0);
}

TEST_CASE("worked single-pair BLEU example matches the hand formula") {
    const std::vector<TokenSeq> hyp = {{"a", "b", "c", "d", "e", "f"}};
    const std::vector<TokenSeq> ref = {{"a", "b", "c", "d", "e", "g"}};
    // p1 = 5/6, p2 = 4/5, p3 = 3/4, p4 = 2/3, BP = 1
    const double want = 100.0 * std::pow((5.0 / 6.0) * (4.0 / 5.0) * (3.0 / 4.0) * (2.0 / 3.0),
                                         0.25);
    const double got = corpus_bleu(hyp, ref);
    REQUIRE(got == Catch::Approx(want).margin(0.1));
    REQUIRE(got == Catch::Approx(75.9836).margin(0.01));
}

TEST_CASE("brevity penalty strictly lowers short hypotheses") {
    const std::vector<TokenSeq> ref = {{"a", "b", "c", "d", "e", "f", "g", "h"}};
    const std::vector<TokenSeq> full = {{"a", "b", "c", "d", "e", "f", "g", "h"}};
    const std::vector<TokenSeq> cut = {{"a", "b", "c", "d"}};
    const double full_score = corpus_bleu(full, ref);
    const double cut_score = corpus_bleu(cut, ref);
    REQUIRE(cut_score < full_score);
    // the n-gram precisions of the prefix are perfect; only BP bites
    REQUIRE(cut_score == Catch::Approx(100.0 * std::exp(1.0 - 8.0 / 4.0)).margin(1e-9));
}

TEST_CASE("corpus BLEU validates its inputs") {
    REQUIRE_THROWS_AS(corpus_bleu({}, {}), DataError);
    REQUIRE_THROWS_AS(corpus_bleu({{"a"}}, {{"a"}, {"b"}}), DataError);
}

TEST_CASE("paired bootstrap of a system against itself gives p = 1") {
    const std::vector<TokenSeq> hyp = {{"a", "b", "c"}, {"d", "e"}, {"f", "g", "h"}};
    const std::vector<TokenSeq> ref = {{"a", "b", "x"}, {"d", "e"}, {"f", "y", "h"}};
    REQUIRE(paired_bootstrap(hyp, hyp, ref, 200, 7) == 1.0);
}

TEST_CASE("paired bootstrap is deterministic given the seed") {
    Rng rng(61);
    std::vector<TokenSeq> a, b, ref;
    for (int i = 0; i < 10; ++i) {
        TokenSeq r, ha, hb;
        for (int j = 0; j < 6; ++j) {
            const std::string tok = "t" + std::to_string(rng.uniform_int(5));
            r.push_back(tok);
            ha.push_back(rng.uniform() < 0.8 ? tok : "zzz");
            hb.push_back(rng.uniform() < 0.5 ? tok : "zzz");
        }
        ref.push_back(r);
        a.push_back(ha);
        b.push_back(hb);
    }
    const double p1 = paired_bootstrap(a, b, ref, 300, 99);
    const double p2 = paired_bootstrap(a, b, ref, 300, 99);
    REQUIRE(p1 == p2);
}

TEST_CASE("a strictly better system is significant at 1000 resamples") {
    Rng rng(67);
    std::vector<TokenSeq> a, b, ref;
    for (int i = 0; i < 20; ++i) {
        TokenSeq r;
        for (int j = 0; j < 8; ++j) r.push_back("t" + std::to_string(rng.uniform_int(6)));
        ref.push_back(r);
        a.push_back(r);  // perfect on every sentence
        TokenSeq worse = r;
        worse[2] = "zzz";
        worse[5] = "zzz";
        b.push_back(worse);
    }
    REQUIRE(paired_bootstrap(a, b, ref, 1000, 11) < 0.01);
}

TEST_CASE("paired bootstrap validates inputs") {
    const std::vector<TokenSeq> one = {{"a"}};
    const std::vector<TokenSeq> two = {{"a"}, {"b"}};
    REQUIRE_THROWS_AS(paired_bootstrap(one, two, two, 200, 1), DataError);
    REQUIRE_THROWS_AS(paired_bootstrap(one, one, one, 50, 1), ConfigError);
}
