#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "translk/params.hpp"
#include "translk/tensor.hpp"

namespace translk {

template <class T>
class Tape;

/// Handle to a tensor value, optionally tracked by a Tape. Values are shared
/// and immutable once produced.
template <class T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value) {
    Var v;
    v.value_ = std::make_shared<const Tensor<T>>(std::move(value));
    return v;
  }

  const Tensor<T>& value() const { return *value_; }
  const std::shared_ptr<const Tensor<T>>& value_ptr() const { return value_; }
  const Shape& shape() const { return value_->shape(); }
  bool requires_grad() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape<T>* tape() const { return tape_; }

 private:
  friend class Tape<T>;
  std::shared_ptr<const Tensor<T>> value_;
  int node_ = -1;
  Tape<T>* tape_ = nullptr;
};

/// Reverse-mode recorder. Nodes are appended in execution order, so the node
/// list is topologically sorted by construction; backward() walks it once in
/// reverse. A Tape created with record = false only counts FLOPs.
template <class T>
class Tape {
 public:
  using GradRefs = std::span<Tensor<T>* const>;
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, GradRefs grad_in)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t flops() const { return flops_; }
  void add_flops(std::uint64_t f) { flops_ += f; }

  /// Differentiable input whose gradient is readable via grad() after backward.
  Var<T> leaf(Tensor<T> value) {
    Var<T> v = Var<T>::constant(std::move(value));
    if (!record_) return v;
    v.node_ = push_node("leaf", v.shape(), {}, nullptr);
    v.tape_ = this;
    return v;
  }

  /// Binds a trainable parameter. Repeated calls for the same id return the
  /// same node, so a parameter used twice accumulates both contributions.
  Var<T> param(ParamStore<T>& store, ParamId id) {
    if (store_ != nullptr && store_ != &store) {
      throw std::logic_error("a tape binds parameters from a single ParamStore");
    }
    store_ = &store;
    auto it = bound_.find(id);
    if (it != bound_.end()) return it->second;
    Var<T> v;
    v.value_ = std::shared_ptr<const Tensor<T>>(std::shared_ptr<void>(), &store.value(id));
    if (record_) {
      v.node_ = push_node("param", v.shape(), {}, nullptr);
      v.tape_ = this;
      nodes_.back().param = static_cast<std::int64_t>(id);
    }
    bound_.emplace(id, v);
    return v;
  }

  /// Appends an op result. grad_in entries are null for inputs that do not
  /// require gradients; backward functions accumulate (+=) into the rest.
  Var<T> record(const char* op, Tensor<T> out, const std::vector<Var<T>>& inputs, BackwardFn fn,
                std::uint64_t flops) {
    flops_ += flops;
    Var<T> v = Var<T>::constant(std::move(out));
    if (!record_) return v;
    std::vector<int> ids;
    ids.reserve(inputs.size());
    bool any = false;
    for (const auto& in : inputs) {
      if (in.requires_grad() && in.tape_ != this) {
        throw std::logic_error(std::string(op) + ": input recorded on a different tape");
      }
      ids.push_back(in.node_);
      any = any || in.requires_grad();
    }
    if (!any) return v;
    v.node_ = push_node(op, v.shape(), std::move(ids), std::move(fn));
    v.tape_ = this;
    return v;
  }

  /// Runs reverse accumulation from a scalar. Parameter gradients are added
  /// into the bound ParamStore's gradient buffers.
  void backward(const Var<T>& loss) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    if (done_) throw std::logic_error("backward already ran on this tape");
    if (loss.shape().numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + loss.shape().str());
    }
    if (!loss.requires_grad() || loss.tape_ != this) {
      throw std::logic_error("backward: loss is not reachable from this tape");
    }
    done_ = true;
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[static_cast<std::size_t>(loss.node_)] = Tensor<T>(loss.shape(), T(1));
    std::vector<Tensor<T>*> refs;
    for (int i = loss.node_; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      auto& g = grads_[static_cast<std::size_t>(i)];
      if (!g) continue;
      if (node.param >= 0) {
        auto& dst = store_->grad(static_cast<ParamId>(node.param));
        for (Index k = 0; k < dst.numel(); ++k) dst[k] += (*g)[k];
        continue;
      }
      if (!node.fn) continue;
      refs.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        int j = node.inputs[k];
        if (j < 0) continue;
        auto& gj = grads_[static_cast<std::size_t>(j)];
        if (!gj) gj.emplace(nodes_[static_cast<std::size_t>(j)].shape);
        refs[k] = &*gj;
      }
      node.fn(*g, GradRefs(refs));
      node.fn = nullptr;
      if (node.op != std::string_view("leaf")) g.reset();
    }
  }

  /// Gradient of a leaf after backward(); zeros if the loss did not depend on it.
  Tensor<T> grad(const Var<T>& v) const {
    if (!v.requires_grad() || v.tape_ != this) throw std::logic_error("grad: variable not tracked");
    const auto& g = grads_.at(static_cast<std::size_t>(v.node_));
    if (!g) return Tensor<T>(v.shape());
    return *g;
  }

 private:
  struct Node {
    const char* op;
    Shape shape;
    std::vector<int> inputs;
    BackwardFn fn;
    std::int64_t param = -1;
  };

  int push_node(const char* op, const Shape& shape, std::vector<int> inputs, BackwardFn fn) {
    nodes_.push_back(Node{op, shape, std::move(inputs), std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  bool record_;
  bool done_ = false;
  std::uint64_t flops_ = 0;
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> grads_;
  ParamStore<T>* store_ = nullptr;
  std::unordered_map<ParamId, Var<T>> bound_;
};

}  // namespace translk
