#pragma once

#include "mms/abi.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string_view>
#include <vector>

#include "mms/tensor.hpp"

MMS_BEGIN_NAMESPACE

// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Records forward operations in execution order and replays their backward
// rules in reverse. A tape is single-owner and single-threaded.
class Tape {
 public:
  // Called with the tape and the op's own output node.
  using BackwardFn = std::function<void(Tape&, Var)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Shape& shape(Var v) const { return nodes_[v.id].value.shape(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient accumulated by the last backward(); empty if none reached v.
  const std::vector<Scalar>& grad(Var v) const { return nodes_[v.id].grad; }

  // Zero-initialised on first access. Intended for backward rules.
  std::vector<Scalar>& grad_buffer(Var v);

  // Appends an op. `fn` is dropped when no input requires a gradient.
  // Throws NumericError if `out` holds NaN or Inf.
  Var record(std::string_view op_name, Tensor out, std::initializer_list<Var> inputs,
             BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once,
  // in reverse order. `loss` must hold a single element.
  void backward(Var loss);

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_ops() const noexcept { return ops_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<Scalar> grad;
    bool requires_grad = false;
  };
  struct Op {
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<Op> ops_;
};

MMS_END_NAMESPACE
