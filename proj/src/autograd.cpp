#include "batmil/autograd.hpp"

namespace batmil::ad {

Tensor& GradMap::at(const Tensor& param) {
  auto [it, inserted] = grads_.try_emplace(&param);
  if (inserted) it->second = Tensor(param.rows, param.cols);
  return it->second;
}

const Tensor* GradMap::find(const Tensor& param) const {
  auto it = grads_.find(&param);
  return it == grads_.end() ? nullptr : &it->second;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.name = "constant";
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::param(const Tensor& storage, bool trainable) {
  Node n;
  n.external = &storage;
  n.requires_grad = trainable;
  n.name = "param";
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* name) {
  Node n;
  n.owned = std::move(value);
  for (Var in : inputs) n.requires_grad = n.requires_grad || nodes_.at(in.id).requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  n.name = name;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record_forward_only(Tensor value, std::vector<Var> inputs, const char* name) {
  return record(std::move(value), std::move(inputs), nullptr, name);
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.external != nullptr ? *n.external : n.owned;
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    const Tensor& val = n.external != nullptr ? *n.external : n.owned;
    n.grad = Tensor(val.rows, val.cols);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss, GradMap& out) {
  const Tensor& lv = value(loss);
  if (lv.rows != 1 || lv.cols != 1) throw ShapeError("backward: loss must be a 1x1 tensor");
  if (!requires_grad(loss)) return;
  grad(loss).data[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.external != nullptr) {
      Tensor& dst = out.at(*n.external);
      for (std::size_t j = 0; j < dst.size(); ++j) dst.data[j] += n.grad.data[j];
      continue;
    }
    if (n.inputs.empty()) continue;
    if (!n.backward) throw UnsupportedOpError(std::string("backward: no rule recorded for primitive '") + n.name + "'");
    n.backward(*this, i);
  }
}

}  // namespace batmil::ad
