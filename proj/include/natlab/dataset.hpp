#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "natlab/errors.hpp"
#include "natlab/rng.hpp"
#include "natlab/vocab.hpp"

namespace natlab {

// One parallel sentence pair, token strings on both sides.
struct DatasetRecord {
    std::vector<std::string> src;
    std::vector<std::string> tgt;
};

using Dataset = std::vector<DatasetRecord>;

// JSON-lines: one {"src": [...], "tgt": [...]} object per line, UTF-8.
inline void write_dataset(const Dataset& data, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write dataset file: " + path);
    for (const DatasetRecord& r : data) {
        nlohmann::json j;
        j["src"] = r.src;
        j["tgt"] = r.tgt;
        f << j.dump() << "\n";
    }
}

inline Dataset read_dataset(const std::string& path, bool warn_empty = true) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read dataset file: " + path);
    Dataset data;
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
        DatasetRecord r;
        for (const char* field : {"src", "tgt"}) {
            if (!j.contains(field) || !j[field].is_array())
                throw DataError(path + ": line " + std::to_string(lineno) +
                                " misses array field \"" + field + "\"");
            auto& dst = std::string(field) == "src" ? r.src : r.tgt;
            for (const auto& t : j[field]) {
                if (!t.is_string())
                    throw DataError(path + ": line " + std::to_string(lineno) +
                                    " has a non-string token in \"" + field + "\"");
                dst.push_back(t.get<std::string>());
            }
        }
        if (r.src.empty() || r.tgt.empty())
            throw DataError(path + ": line " + std::to_string(lineno) + " has an empty sequence");
        data.push_back(std::move(r));
    }
    if (data.empty() && warn_empty)
        std::cerr << "warning: dataset " << path << " is empty\n";
    return data;
}

// Content token spelling is stable: index i -> "w<i>".
inline std::string content_token(std::size_t i) { return "w" + std::to_string(i); }

inline Vocab make_task_vocab(std::size_t content_tokens) {
    Vocab v;
    for (std::size_t i = 0; i < content_tokens; ++i) v.add(content_token(i));
    return v;
}

// Synthetic tasks standing in for parallel corpora:
//   copy         - tgt = src; sanity check.
//   local-fusion - tgt_i = w[(a_i + a_{i+1}) mod C] with the last position
//                  wrapping to the first; solving it requires the
//                  right-neighbour source token.
//   global-sort  - tgt = src sorted by content index; a global-dependency
//                  control where localness should not help.
inline Dataset gen_synthetic(const std::string& task, std::size_t count, std::size_t min_len,
                             std::size_t max_len, std::size_t content_tokens,
                             std::uint64_t seed) {
    if (task != "copy" && task != "local-fusion" && task != "global-sort")
        throw UsageError("unknown task '" + task +
                         "' (valid: copy, local-fusion, global-sort)");
    if (min_len < 1 || max_len < min_len) throw UsageError("invalid length range");
    if (content_tokens < 2) throw UsageError("need at least 2 content tokens");

    Rng rng(seed);
    Dataset data;
    data.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        const std::size_t len = min_len + static_cast<std::size_t>(
                                              rng.uniform_int(max_len - min_len + 1));
        std::vector<std::size_t> ids(len);
        for (std::size_t i = 0; i < len; ++i)
            ids[i] = static_cast<std::size_t>(rng.uniform_int(content_tokens));

        DatasetRecord r;
        for (std::size_t i = 0; i < len; ++i) r.src.push_back(content_token(ids[i]));
        if (task == "copy") {
            r.tgt = r.src;
        } else if (task == "local-fusion") {
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t right = ids[(i + 1) % len];
                r.tgt.push_back(content_token((ids[i] + right) % content_tokens));
            }
        } else {  // global-sort
            std::vector<std::size_t> sorted = ids;
            std::sort(sorted.begin(), sorted.end());
            for (std::size_t i = 0; i < len; ++i) r.tgt.push_back(content_token(sorted[i]));
        }
        data.push_back(std::move(r));
    }
    return data;
}

// Plain hypothesis/reference text: one sentence per line, tokens
// space-separated. An empty line is an empty sentence.
inline void write_token_lines(const std::vector<std::vector<std::string>>& sents,
                              const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write file: " + path);
    for (const auto& s : sents) {
        for (std::size_t i = 0; i < s.size(); ++i) f << (i ? " " : "") << s[i];
        f << "\n";
    }
}

inline std::vector<std::vector<std::string>> read_token_lines(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read file: " + path);
    std::vector<std::vector<std::string>> out;
    std::string line;
    while (std::getline(f, line)) {
        std::vector<std::string> toks;
        std::string cur;
        for (char c : line) {
            if (c == ' ') {
                if (!cur.empty()) toks.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (!cur.empty()) toks.push_back(cur);
        out.push_back(std::move(toks));
    }
    return out;
}

// Reference sides can come either from a dataset (.jsonl, tgt field) or
// from a plain token-line file.
inline std::vector<std::vector<std::string>> read_reference_side(const std::string& path) {
    if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") {
        std::vector<std::vector<std::string>> refs;
        for (const DatasetRecord& r : read_dataset(path)) refs.push_back(r.tgt);
        return refs;
    }
    return read_token_lines(path);
}

}  // namespace natlab
