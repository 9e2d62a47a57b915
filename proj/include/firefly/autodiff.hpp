#pragma once

// Reverse-mode differentiation over a recorded tape.
//
// Every tape node holds either a scalar or a batch-length vector. Binary
// operations broadcast a scalar operand against a vector operand, which lets
// a network be recorded once per batch instead of once per sample. Parameter
// leaves are always scalars and read their value from a ParameterStore.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "firefly/errors.hpp"

namespace firefly::ad {

struct GroupId {
  std::uint32_t index = 0;
  bool operator==(const GroupId&) const = default;
};

struct Slice {
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Flat trainable scalars partitioned into named, contiguous groups.
class ParameterStore {
 public:
  GroupId add_group(std::string name, std::span<const double> init, bool frozen = false);

  std::size_t size() const { return values_.size(); }
  std::size_t group_count() const { return groups_.size(); }
  std::uint64_t layout_id() const { return layout_id_; }

  Slice slice(GroupId g) const;
  const std::string& group_name(GroupId g) const;
  std::span<double> group(GroupId g);
  std::span<const double> group(GroupId g) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool frozen(std::size_t i) const { return frozen_[i] != 0; }
  void set_frozen(GroupId g, bool frozen);
  void set_all_frozen(bool frozen);

 private:
  struct Group {
    std::string name;
    Slice slice;
  };
  void check(GroupId g) const;

  std::vector<double> values_;
  std::vector<std::uint8_t> frozen_;
  std::vector<Group> groups_;
  std::uint64_t layout_id_ = 0;
};

struct Gradient {
  std::vector<double> values;

  std::span<const double> group(const ParameterStore& store, GroupId g) const {
    const Slice s = store.slice(g);
    return std::span<const double>(values).subspan(s.offset, s.size);
  }
};

enum class Op : std::uint8_t {
  Param,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Relu,
  Dot,
  Affine,
  SquaredError,
  SoftmaxCrossEntropy,
  Mean,
};

std::string_view op_name(Op op);

class Tape;

// Handle to a tape node. Cheap to copy; valid until the tape is reset.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  std::span<const double> value() const;
  double scalar() const;
  std::size_t size() const;
};

class Tape {
 public:
  Tape() = default;
  explicit Tape(const ParameterStore& params) { reset(params); }

  // Drops all nodes but keeps buffers, so a training loop can re-record
  // without reallocating.
  void reset(const ParameterStore& params);

  Var param(std::size_t index);
  std::vector<Var> group(GroupId g);
  Var constant(double value);
  Var constant(std::span<const double> values);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var exp(Var a);
  Var relu(Var a);
  // Sum of elementwise products; scalar result.
  Var dot(Var a, Var b);
  // sum_j weights[j] * inputs[j] + bias, weights scalar.
  Var affine(std::span<const Var> inputs, std::span<const Var> weights, Var bias);
  // Elementwise (prediction - target)^2.
  Var squared_error(Var prediction, Var target);
  // Per-sample -log softmax(logits)[label]; logits[k] holds class k.
  Var softmax_cross_entropy(std::span<const Var> logits, std::span<const int> labels);
  Var mean(Var a);

  std::size_t size() const { return nodes_.size(); }
  Op op(std::size_t node) const { return nodes_.at(node).op; }
  std::span<const double> value(std::size_t node) const;
  std::uint64_t layout_id() const { return layout_id_; }
  std::size_t store_size() const { return store_size_; }

  // Recomputes every node from the current parameter values.
  void reevaluate(const ParameterStore& params);

  // Gradient of the last node (a scalar) with respect to every unfrozen
  // parameter scalar.
  void backward(const ParameterStore& params, Gradient& out);

 private:
  struct Node {
    Op op = Op::Constant;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::uint32_t c = 0;
    std::uint32_t list_begin = 0;
    std::uint32_t list_count = 0;
    std::uint64_t offset = 0;
    std::uint32_t size = 0;
    std::uint64_t aux = 0;  // parameter index or label offset
    std::uint8_t grad = 0;  // some parameter is upstream
  };

  Var push(Node node);
  std::uint8_t needs_grad(const Node& n) const;
  std::uint64_t allocate(std::size_t n);
  std::size_t broadcast_size(Var a, Var b, Op op) const;
  void check_var(Var v) const;
  void compute(std::size_t index);
  void check_finite(std::size_t index) const;
  double* val(const Node& n) { return values_.data() + n.offset; }
  const double* val(const Node& n) const { return values_.data() + n.offset; }

  const ParameterStore* store_ = nullptr;
  std::uint64_t layout_id_ = 0;
  std::size_t store_size_ = 0;
  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::size_t used_ = 0;
  std::vector<std::uint32_t> lists_;
  std::vector<int> labels_;
  std::vector<double> adjoints_;
};

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator-(Var a) { return a.tape->neg(a); }
inline Var operator*(double s, Var a) { return a.tape->mul(a.tape->constant(s), a); }
inline Var exp(Var a) { return a.tape->exp(a); }
inline Var relu(Var a) { return a.tape->relu(a); }
inline Var mean(Var a) { return a.tape->mean(a); }
inline Var dot(Var a, Var b) { return a.tape->dot(a, b); }

struct Recording {
  Tape tape;
  double loss = 0.0;
};

// Records `program(tape)` against `params`. The program must return the loss
// node (a scalar).
template <class Program>
Recording record_forward(Program&& program, const ParameterStore& params) {
  Recording rec{Tape(params), 0.0};
  Var loss = program(rec.tape);
  if (loss.size() != 1) throw StructuralError("record_forward: program did not return a scalar loss");
  if (loss.id + 1 != rec.tape.size())
    throw StructuralError("record_forward: loss must be the last recorded node");
  rec.loss = loss.scalar();
  return rec;
}

Gradient backward(Tape& tape, const ParameterStore& params);

// values[i] -= learning_rate * grad[i] for every unfrozen i.
void sgd_step(ParameterStore& params, const Gradient& grad, double learning_rate);

}  // namespace firefly::ad
