#include "mms/tape.hpp"

#include <string>

#include "mms/error.hpp"

MMS_BEGIN_NAMESPACE

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, false});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back({std::move(value), {}, true});
  return Var{nodes_.size() - 1};
}

std::vector<Scalar>& Tape::grad_buffer(Var v) {
  Node& node = nodes_[v.id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), Scalar(0));
  return node.grad;
}

Var Tape::record(std::string_view op_name, Tensor out, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  if (!out.all_finite()) {
    throw NumericError(std::string(op_name) + " produced a non-finite value");
  }
  bool needs_grad = false;
  for (Var in : inputs) needs_grad = needs_grad || nodes_[in.id].requires_grad;
  nodes_.push_back({std::move(out), {}, needs_grad});
  const std::size_t out_id = nodes_.size() - 1;
  if (needs_grad) {
    Op op{{}, out_id, std::move(fn)};
    for (Var in : inputs) op.inputs.push_back(in.id);
    ops_.push_back(std::move(op));
  }
  return Var{out_id};
}

void Tape::backward(Var loss) {
  if (nodes_[loss.id].value.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " +
                         shape_str(nodes_[loss.id].value.shape()));
  }
  for (Node& node : nodes_) node.grad.clear();
  grad_buffer(loss)[0] = Scalar(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (it->output > loss.id) continue;
    if (nodes_[it->output].grad.empty()) continue;
    it->backward(*this, Var{it->output});
  }
}

MMS_END_NAMESPACE
