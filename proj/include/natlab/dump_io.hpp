#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "natlab/analysis.hpp"
#include "natlab/errors.hpp"
#include "natlab/model.hpp"

namespace natlab {

// Attention dumps are JSON-lines, one object per decoded sentence:
//   {"id": 0, "src_len": n, "tgt_len": m,
//    "layers": [{"layer": 1, "attn": [[...m x n...]],
//                "gate": [...m...]           (CCAN layers only)
//                "attn_heads": [[[...]]]     (only with per-head capture)
//               }, ...]}
// Rows are validated to sum to 1 +- 1e-6 on write.

template <typename T>
nlohmann::json dump_to_json(const AttnDump<T>& dump, std::size_t id, std::size_t src_len,
                            std::size_t tgt_len) {
    nlohmann::json j;
    j["id"] = id;
    j["src_len"] = src_len;
    j["tgt_len"] = tgt_len;
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < dump.layers.size(); ++l) {
        const AttnCapture<T>& cap = dump.layers[l];
        nlohmann::json lj;
        lj["layer"] = l + 1;
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t i = 0; i < cap.effective.rows(); ++i) {
            double sum = 0.0;
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < cap.effective.cols(); ++c) {
                const double v = static_cast<double>(cap.effective.at(i, c));
                sum += v;
                row.push_back(v);
            }
            if (std::abs(sum - 1.0) > 1e-6)
                throw NumericError("attention dump row does not sum to 1 (got " +
                                   std::to_string(sum) + ")");
            rows.push_back(std::move(row));
        }
        lj["attn"] = std::move(rows);
        if (!cap.heads.empty()) {
            nlohmann::json heads = nlohmann::json::array();
            for (const Tensor<T>& h : cap.heads) {
                nlohmann::json hrows = nlohmann::json::array();
                for (std::size_t i = 0; i < h.rows(); ++i) {
                    nlohmann::json row = nlohmann::json::array();
                    for (std::size_t c = 0; c < h.cols(); ++c)
                        row.push_back(static_cast<double>(h.at(i, c)));
                    hrows.push_back(std::move(row));
                }
                heads.push_back(std::move(hrows));
            }
            lj["attn_heads"] = std::move(heads);
        }
        if (cap.has_gate) {
            nlohmann::json gates = nlohmann::json::array();
            for (std::size_t i = 0; i < cap.gates.rows(); ++i)
                gates.push_back(static_cast<double>(cap.gates.at(i, 0)));
            lj["gate"] = std::move(gates);
        }
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    return j;
}

class DumpWriter {
public:
    explicit DumpWriter(const std::string& path) : f_(path, std::ios::binary) {
        if (!f_) throw DataError("cannot write attention dump file: " + path);
    }

    template <typename T>
    void write(const AttnDump<T>& dump, std::size_t id, std::size_t src_len,
               std::size_t tgt_len) {
        f_ << dump_to_json(dump, id, src_len, tgt_len).dump() << "\n";
    }

private:
    std::ofstream f_;
};

struct DumpRecord {
    std::size_t id = 0;
    std::size_t src_len = 0;
    std::size_t tgt_len = 0;
    SentenceAttn attn;
    SentenceGates gates;
    SentenceAttnHeads heads;  // empty unless the dump carried per-head rows
    bool has_heads = false;
};

inline std::vector<DumpRecord> read_dump(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read attention dump file: " + path);
    std::vector<DumpRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ": malformed JSON at line " + std::to_string(lineno) + ": " +
                            e.what());
        }
        DumpRecord rec;
        rec.id = j.value("id", lineno - 1);
        rec.src_len = j.at("src_len").get<std::size_t>();
        rec.tgt_len = j.at("tgt_len").get<std::size_t>();
        for (const auto& lj : j.at("layers")) {
            const auto& rows = lj.at("attn");
            const std::size_t m = rows.size();
            const std::size_t n = m > 0 ? rows[0].size() : 0;
            Tensor<double> t = Tensor<double>::zeros(m, n);
            for (std::size_t i = 0; i < m; ++i) {
                if (rows[i].size() != n)
                    throw DataError(path + ": ragged attention matrix at line " +
                                    std::to_string(lineno));
                for (std::size_t c = 0; c < n; ++c) t.at(i, c) = rows[i][c].get<double>();
            }
            rec.attn.layers.push_back(std::move(t));
            if (lj.contains("attn_heads")) {
                std::vector<Tensor<double>> heads;
                for (const auto& hj : lj.at("attn_heads")) {
                    const std::size_t hm = hj.size();
                    const std::size_t hn = hm > 0 ? hj[0].size() : 0;
                    Tensor<double> h = Tensor<double>::zeros(hm, hn);
                    for (std::size_t i = 0; i < hm; ++i)
                        for (std::size_t c = 0; c < hn; ++c) h.at(i, c) = hj[i][c].get<double>();
                    heads.push_back(std::move(h));
                }
                rec.heads.layers.push_back(std::move(heads));
                rec.has_heads = true;
            }
            if (lj.contains("gate")) {
                const int layer = lj.at("layer").get<int>();
                rec.gates.by_layer[layer] = lj.at("gate").get<std::vector<double>>();
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace natlab
