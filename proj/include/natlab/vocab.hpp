#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "natlab/errors.hpp"
#include "natlab/model.hpp"

namespace natlab {

// Bijective token <-> id map. Ids 0..3 are reserved for the special
// tokens and are pinned at construction.
class Vocab {
public:
    Vocab() {
        for (const char* t : {"<pad>", "<bos>", "<eos>", "<mask>"}) add(t);
    }

    std::int32_t add(const std::string& token) {
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        tokens_.push_back(token);
        const std::int32_t id = static_cast<std::int32_t>(tokens_.size() - 1);
        ids_[token] = id;
        return id;
    }

    std::int32_t id_of(const std::string& token) const {
        auto it = ids_.find(token);
        if (it == ids_.end()) throw DataError("token not in vocabulary: '" + token + "'");
        return it->second;
    }

    const std::string& token_of(std::int32_t id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw DataError("token id out of range: " + std::to_string(id));
        return tokens_[static_cast<std::size_t>(id)];
    }

    bool contains(const std::string& token) const { return ids_.count(token) > 0; }
    std::int32_t size() const { return static_cast<std::int32_t>(tokens_.size()); }

    std::vector<std::int32_t> encode(const std::vector<std::string>& toks) const {
        std::vector<std::int32_t> out;
        out.reserve(toks.size());
        for (const std::string& t : toks) out.push_back(id_of(t));
        return out;
    }

    std::vector<std::string> decode(const std::vector<std::int32_t>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (std::int32_t id : ids) out.push_back(token_of(id));
        return out;
    }

    // Plain text format: one token per line, line number == id. The four
    // reserved tokens must come first.
    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot write vocabulary file: " + path);
        for (const std::string& t : tokens_) f << t << "\n";
    }

    static Vocab load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot read vocabulary file: " + path);
        Vocab v;
        std::string line;
        std::size_t lineno = 0;
        static const char* reserved[4] = {"<pad>", "<bos>", "<eos>", "<mask>"};
        while (std::getline(f, line)) {
            if (lineno < 4) {
                if (line != reserved[lineno])
                    throw DataError(path + ": line " + std::to_string(lineno + 1) +
                                    " must be reserved token " + reserved[lineno] + ", got '" +
                                    line + "'");
            } else {
                if (line.empty())
                    throw DataError(path + ": empty token at line " + std::to_string(lineno + 1));
                if (v.contains(line))
                    throw DataError(path + ": duplicate token '" + line + "' at line " +
                                    std::to_string(lineno + 1));
                v.add(line);
            }
            ++lineno;
        }
        if (lineno < 4) throw DataError(path + ": vocabulary misses reserved tokens");
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

}  // namespace natlab
