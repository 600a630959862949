#pragma once

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "odvqa/tensor.hpp"

namespace odvqa {

/// A named learnable (or buffered, when !trainable) tensor owned by a ParameterStore.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    void zero_grad() { grad.fill(T(0)); }
};

/// Owns every Parameter of a model. Addresses are stable for the store's lifetime.
template <typename T>
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;

    Parameter<T>& add(const std::string& name, Shape shape, bool trainable = true, T fill = T(0)) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        index_.emplace(name, params_.size());
        Tensor<T> v(shape, fill);
        params_.push_back(Parameter<T>{name, v, Tensor<T>(shape), trainable});
        return params_.back();
    }

    Parameter<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }
    const Parameter<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }

    std::deque<Parameter<T>>& all() { return params_; }
    const std::deque<Parameter<T>>& all() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::size_t trainable_elements() const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.trainable) n += p.value.size();
        return n;
    }

private:
    std::deque<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(id); }
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t axis) const { return value().dim(axis); }
    std::size_t rank() const { return value().rank(); }
};

/// Records differentiable operations in execution order and replays their
/// adjoints in reverse. A tape may be run backward once.
template <typename T>
class Tape {
public:
    /// Receives the output gradient and output value; adds into input gradients through the tape.
    using Backward = std::function<void(Tape&, const Tensor<T>& grad_out, const Tensor<T>& out)>;

    explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }

    Var<T> constant(Tensor<T> value) { return push(std::move(value), false); }

    /// A leaf whose gradient is retained and can be read with grad().
    Var<T> leaf(Tensor<T> value) { return push(std::move(value), recording_); }

    Var<T> param(Parameter<T>& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return Var<T>{this, it->second};
        Var<T> v = push(p.value, recording_ && p.trainable);
        nodes_[v.id].param = &p;
        bound_.emplace(&p, v.id);
        return v;
    }

    /// Append an operation result. backward runs only if some input needs a gradient.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
        return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
    }

    Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward) {
        bool needs = false;
        for (const auto& in : inputs) {
            if (in.tape != this) throw std::logic_error("tape: operand recorded on a different tape");
            needs = needs || nodes_[in.id].requires_grad;
        }
        needs = needs && recording_;
        Var<T> v = push(std::move(value), needs);
        if (needs) nodes_[v.id].backward = std::move(backward);
        return v;
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool requires_grad(const Var<T>& v) const { return requires_grad(v.id); }

    /// Gradient accumulator for id, allocated on first use; nullptr if id needs no gradient.
    Tensor<T>* grad_sink(std::size_t id) {
        Node& n = nodes_.at(id);
        if (!n.requires_grad) return nullptr;
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return &n.grad;
    }
    Tensor<T>* grad_sink(const Var<T>& v) { return grad_sink(v.id); }

    /// Gradient of a leaf after backward(); nullptr if it never received one.
    const Tensor<T>* grad(const Var<T>& v) const {
        const Node& n = nodes_.at(v.id);
        return n.grad.empty() ? nullptr : &n.grad;
    }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Seeds the most recently recorded value.
    void backward(const Tensor<T>& seed) {
        if (nodes_.empty()) throw std::logic_error("backward: empty tape");
        backward(Var<T>{this, nodes_.size() - 1}, seed);
    }

    void backward(const Var<T>& output, const Tensor<T>& seed) {
        if (consumed_) throw std::logic_error("backward: tape already consumed");
        if (!recording_) throw std::logic_error("backward: tape was created without gradient recording");
        const Node& out = nodes_.at(output.id);
        if (seed.shape() != out.value.shape())
            throw ShapeError("backward: seed shape " + to_string(seed.shape()) + " does not match output " +
                             to_string(out.value.shape()));
        consumed_ = true;
        if (!out.requires_grad) return;
        *grad_sink(output.id) += seed;
        for (std::size_t i = output.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty()) continue;
            if (n.backward) {
                n.backward(*this, n.grad, n.value);
            } else if (n.param) {
                n.param->grad += n.grad;
            }
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        Backward backward;
        Parameter<T>* param = nullptr;
        bool requires_grad = false;
    };

    Var<T> push(Tensor<T> value, bool requires_grad) {
        nodes_.push_back(Node{std::move(value), {}, {}, nullptr, requires_grad});
        return Var<T>{this, nodes_.size() - 1};
    }

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter<T>*, std::size_t> bound_;
    bool recording_;
    bool consumed_ = false;
};

}  // namespace odvqa
