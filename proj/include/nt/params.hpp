#pragma once

#include <deque>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nt/tensor.hpp"

namespace nt {

// Named parameter buffer living outside any graph. Bound into each step's
// fresh graph as a leaf; gradients are read back through the Binder.
struct ParamTensor {
    std::string name;
    Shape shape;
    std::vector<double> value;

    std::size_t size() const { return value.size(); }
};

// Declaration order is preserved; checkpoint payloads rely on it.
class ParamSet {
  public:
    ParamTensor& add(std::string name, Shape shape) {
        if (numel(shape) <= 0)
            throw std::invalid_argument("ParamSet::add: empty shape for " + name);
        if (index_.count(name))
            throw std::invalid_argument("ParamSet::add: duplicate name " + name);
        items_.push_back(ParamTensor{
            name, shape, std::vector<double>(static_cast<std::size_t>(numel(shape)), 0.0)});
        index_.emplace(std::move(name), items_.size() - 1);
        return items_.back();
    }

    ParamTensor& at(std::string_view name) {
        auto it = index_.find(std::string(name));
        if (it == index_.end())
            throw std::out_of_range("ParamSet: no parameter named " + std::string(name));
        return items_[it->second];
    }
    const ParamTensor& at(std::string_view name) const {
        return const_cast<ParamSet*>(this)->at(name);
    }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    std::size_t count() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    std::size_t coord_count() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.size();
        return n;
    }

  private:
    std::deque<ParamTensor> items_;  // stable references across add()
    std::unordered_map<std::string, std::size_t> index_;
};

// Per-graph binding of ParamTensors to leaf (or constant) nodes. Binding the
// same parameter twice returns the cached node, so shared parameters appear
// once per graph and gradients accumulate naturally.
class Binder {
  public:
    explicit Binder(Graph& g) : graph_(g) {}

    struct Slot {
        ParamTensor* param;
        Tensor tensor;
        bool trainable;
    };

    Tensor bind(ParamTensor& p, bool trainable = true) {
        auto it = lookup_.find(&p);
        if (it != lookup_.end()) return slots_[it->second].tensor;
        Tensor t = trainable ? graph_.leaf(p.shape, p.value)
                             : graph_.constant(p.shape, p.value);
        lookup_.emplace(&p, slots_.size());
        slots_.push_back(Slot{&p, t, trainable});
        return t;
    }

    void bind_all(ParamSet& set, bool trainable = true) {
        for (auto& p : set) bind(p, trainable);
    }

    const std::vector<Slot>& slots() const { return slots_; }
    Graph& graph() const { return graph_; }

    // After backward: gradient of a bound parameter (zeros if untrainable).
    std::vector<double> grad_of(const ParamTensor& p) const {
        auto it = lookup_.find(&p);
        if (it == lookup_.end())
            return std::vector<double>(p.size(), 0.0);
        const Slot& s = slots_[it->second];
        if (!s.trainable) return std::vector<double>(p.size(), 0.0);
        return s.tensor.grad();
    }

  private:
    Graph& graph_;
    std::vector<Slot> slots_;
    std::unordered_map<const ParamTensor*, std::size_t> lookup_;
};

}  // namespace nt
