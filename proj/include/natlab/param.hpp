#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "natlab/errors.hpp"
#include "natlab/rng.hpp"
#include "natlab/tensor.hpp"

namespace natlab {

// Trainable tensor with its gradient accumulator and a stable name path
// (e.g. "dec.layer2.cross.wq") used by checkpoints.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor<T>(value.shape);
    }

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

// Owns parameters in creation order; creation order is also the
// checkpoint manifest order, so it must stay deterministic.
template <typename T>
class ParamStore {
public:
    Parameter<T>& add(const std::string& name, Tensor<T> init) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        params_.push_back(std::make_unique<Parameter<T>>(name, std::move(init)));
        index_[name] = params_.size() - 1;
        return *params_.back();
    }

    Parameter<T>& add_normal(const std::string& name, std::size_t r, std::size_t c, Rng& rng,
                             double stddev) {
        Tensor<T> t = Tensor<T>::zeros(r, c);
        for (T& v : t.data) v = static_cast<T>(rng.normal() * stddev);
        return add(name, std::move(t));
    }

    Parameter<T>& add_zeros(const std::string& name, std::size_t r, std::size_t c) {
        return add(name, Tensor<T>::zeros(r, c));
    }

    Parameter<T>& add_full(const std::string& name, std::size_t r, std::size_t c, T v) {
        return add(name, Tensor<T>::full(r, c, v));
    }

    Parameter<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return *params_[it->second];
    }

    std::size_t size() const { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace natlab
