#include "firefly/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace firefly::ad {

namespace {

std::uint64_t next_layout_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

// dst[k or 0] += src[k], reducing when dst is a broadcast scalar.
inline void accumulate(double* dst, std::size_t dst_size, const double* src, std::size_t n) {
  if (dst_size == n) {
    for (std::size_t k = 0; k < n; ++k) dst[k] += src[k];
  } else {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += src[k];
    dst[0] += s;
  }
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Param: return "param";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Relu: return "relu";
    case Op::Dot: return "dot";
    case Op::Affine: return "affine";
    case Op::SquaredError: return "squared_error";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::Mean: return "mean";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ParameterStore

GroupId ParameterStore::add_group(std::string name, std::span<const double> init, bool frozen) {
  Group g{std::move(name), Slice{values_.size(), init.size()}};
  values_.insert(values_.end(), init.begin(), init.end());
  frozen_.insert(frozen_.end(), init.size(), frozen ? 1 : 0);
  groups_.push_back(std::move(g));
  layout_id_ = next_layout_id();
  return GroupId{static_cast<std::uint32_t>(groups_.size() - 1)};
}

void ParameterStore::check(GroupId g) const {
  if (g.index >= groups_.size())
    throw StructuralError("unknown parameter group " + std::to_string(g.index));
}

Slice ParameterStore::slice(GroupId g) const {
  check(g);
  return groups_[g.index].slice;
}

const std::string& ParameterStore::group_name(GroupId g) const {
  check(g);
  return groups_[g.index].name;
}

std::span<double> ParameterStore::group(GroupId g) {
  const Slice s = slice(g);
  return std::span<double>(values_).subspan(s.offset, s.size);
}

std::span<const double> ParameterStore::group(GroupId g) const {
  const Slice s = slice(g);
  return std::span<const double>(values_).subspan(s.offset, s.size);
}

void ParameterStore::set_frozen(GroupId g, bool frozen) {
  const Slice s = slice(g);
  std::fill_n(frozen_.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size, frozen ? 1 : 0);
}

void ParameterStore::set_all_frozen(bool frozen) {
  std::fill(frozen_.begin(), frozen_.end(), frozen ? 1 : 0);
}

// ---------------------------------------------------------------------------
// Var

std::span<const double> Var::value() const { return tape->value(id); }
double Var::scalar() const {
  auto v = value();
  if (v.size() != 1) throw StructuralError("Var::scalar on a vector node");
  return v[0];
}
std::size_t Var::size() const { return tape->value(id).size(); }

// ---------------------------------------------------------------------------
// Tape: recording

void Tape::reset(const ParameterStore& params) {
  store_ = &params;
  layout_id_ = params.layout_id();
  store_size_ = params.size();
  nodes_.clear();
  lists_.clear();
  labels_.clear();
  used_ = 0;
}

std::uint64_t Tape::allocate(std::size_t n) {
  if (used_ + n > values_.size()) values_.resize(std::max(values_.size() * 2, used_ + n));
  const std::uint64_t off = used_;
  used_ += n;
  return off;
}

std::span<const double> Tape::value(std::size_t node) const {
  const Node& n = nodes_.at(node);
  return {val(n), n.size};
}

void Tape::check_var(Var v) const {
  if (v.tape != this || v.id >= nodes_.size())
    throw StructuralError("Var does not belong to this tape");
}

std::uint8_t Tape::needs_grad(const Node& n) const {
  switch (n.op) {
    case Op::Param: return 1;
    case Op::Constant: return 0;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Dot:
    case Op::SquaredError: return nodes_[n.a].grad | nodes_[n.b].grad;
    case Op::Neg:
    case Op::Exp:
    case Op::Relu:
    case Op::Mean: return nodes_[n.a].grad;
    case Op::Affine: {
      std::uint8_t g = nodes_[n.a].grad;
      for (std::size_t j = 0; j < 2 * n.list_count; ++j) g |= nodes_[lists_[n.list_begin + j]].grad;
      return g;
    }
    case Op::SoftmaxCrossEntropy: {
      std::uint8_t g = 0;
      for (std::size_t j = 0; j < n.list_count; ++j) g |= nodes_[lists_[n.list_begin + j]].grad;
      return g;
    }
  }
  return 1;
}

std::size_t Tape::broadcast_size(Var a, Var b, Op op) const {
  check_var(a);
  check_var(b);
  const std::size_t na = nodes_[a.id].size;
  const std::size_t nb = nodes_[b.id].size;
  if (na == nb || nb == 1) return na;
  if (na == 1) return nb;
  throw StructuralError(std::string(op_name(op)) + ": operand sizes " + std::to_string(na) + " and " +
                        std::to_string(nb) + " do not broadcast");
}

Var Tape::push(Node node) {
  node.grad = needs_grad(node);
  node.offset = allocate(node.size);
  nodes_.push_back(node);
  const std::size_t index = nodes_.size() - 1;
  compute(index);
  check_finite(index);
  return Var{this, static_cast<std::uint32_t>(index)};
}

void Tape::check_finite(std::size_t index) const {
  const Node& n = nodes_[index];
  const double* v = val(n);
  int bad = 0;
  for (std::size_t k = 0; k < n.size; ++k) bad |= !(std::abs(v[k]) <= std::numeric_limits<double>::max());
  if (!bad) return;
  for (std::size_t k = 0; k < n.size; ++k) {
    if (!std::isfinite(v[k]))
      throw NumericError("non-finite value at tape node " + std::to_string(index) + " (" +
                         std::string(op_name(n.op)) + ")");
  }
}

Var Tape::param(std::size_t index) {
  if (store_ == nullptr) throw StructuralError("tape is not bound to a parameter store");
  if (index >= store_->size()) throw StructuralError("parameter index out of range");
  Node n;
  n.op = Op::Param;
  n.size = 1;
  n.aux = index;
  return push(n);
}

std::vector<Var> Tape::group(GroupId g) {
  if (store_ == nullptr) throw StructuralError("tape is not bound to a parameter store");
  const Slice s = store_->slice(g);
  std::vector<Var> out;
  out.reserve(s.size);
  for (std::size_t k = 0; k < s.size; ++k) out.push_back(param(s.offset + k));
  return out;
}

Var Tape::constant(double value) { return constant(std::span<const double>(&value, 1)); }

Var Tape::constant(std::span<const double> values) {
  if (values.empty()) throw StructuralError("constant: empty value");
  Node n;
  n.op = Op::Constant;
  n.size = static_cast<std::uint32_t>(values.size());
  n.offset = allocate(n.size);
  std::copy(values.begin(), values.end(), values_.begin() + static_cast<std::ptrdiff_t>(n.offset));
  nodes_.push_back(n);
  const std::size_t index = nodes_.size() - 1;
  check_finite(index);
  return Var{this, static_cast<std::uint32_t>(index)};
}

#define FIREFLY_BINARY(NAME, OP)                      \
  Var Tape::NAME(Var a, Var b) {                      \
    Node n;                                           \
    n.op = OP;                                        \
    n.size = static_cast<std::uint32_t>(broadcast_size(a, b, OP)); \
    n.a = a.id;                                       \
    n.b = b.id;                                       \
    return push(n);                                   \
  }

FIREFLY_BINARY(add, Op::Add)
FIREFLY_BINARY(sub, Op::Sub)
FIREFLY_BINARY(mul, Op::Mul)
FIREFLY_BINARY(div, Op::Div)
#undef FIREFLY_BINARY

Var Tape::neg(Var a) {
  check_var(a);
  Node n;
  n.op = Op::Neg;
  n.size = nodes_[a.id].size;
  n.a = a.id;
  return push(n);
}

Var Tape::exp(Var a) {
  check_var(a);
  Node n;
  n.op = Op::Exp;
  n.size = nodes_[a.id].size;
  n.a = a.id;
  return push(n);
}

Var Tape::relu(Var a) {
  check_var(a);
  Node n;
  n.op = Op::Relu;
  n.size = nodes_[a.id].size;
  n.a = a.id;
  return push(n);
}

Var Tape::dot(Var a, Var b) {
  check_var(a);
  check_var(b);
  if (nodes_[a.id].size != nodes_[b.id].size) throw StructuralError("dot: operand sizes differ");
  Node n;
  n.op = Op::Dot;
  n.size = 1;
  n.a = a.id;
  n.b = b.id;
  return push(n);
}

Var Tape::affine(std::span<const Var> inputs, std::span<const Var> weights, Var bias) {
  if (inputs.size() != weights.size()) throw StructuralError("affine: inputs and weights differ in length");
  check_var(bias);
  std::size_t size = nodes_[bias.id].size;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    check_var(inputs[j]);
    check_var(weights[j]);
    if (nodes_[weights[j].id].size != 1) throw StructuralError("affine: weights must be scalars");
    const std::size_t nj = nodes_[inputs[j].id].size;
    if (nj != size && nj != 1 && size != 1) throw StructuralError("affine: input sizes do not broadcast");
    size = std::max<std::size_t>(size, nj);
  }
  Node n;
  n.op = Op::Affine;
  n.size = static_cast<std::uint32_t>(size);
  n.a = bias.id;
  n.list_begin = static_cast<std::uint32_t>(lists_.size());
  n.list_count = static_cast<std::uint32_t>(inputs.size());
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    lists_.push_back(inputs[j].id);
    lists_.push_back(weights[j].id);
  }
  return push(n);
}

Var Tape::squared_error(Var prediction, Var target) {
  Node n;
  n.op = Op::SquaredError;
  n.size = static_cast<std::uint32_t>(broadcast_size(prediction, target, Op::SquaredError));
  n.a = prediction.id;
  n.b = target.id;
  return push(n);
}

Var Tape::softmax_cross_entropy(std::span<const Var> logits, std::span<const int> labels) {
  if (logits.empty()) throw StructuralError("softmax_cross_entropy: no logits");
  for (Var v : logits) {
    check_var(v);
    if (nodes_[v.id].size != labels.size())
      throw StructuralError("softmax_cross_entropy: logit length differs from label count");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.size())
      throw StructuralError("softmax_cross_entropy: label out of range");
  }
  Node n;
  n.op = Op::SoftmaxCrossEntropy;
  n.size = static_cast<std::uint32_t>(labels.size());
  n.list_begin = static_cast<std::uint32_t>(lists_.size());
  n.list_count = static_cast<std::uint32_t>(logits.size());
  for (Var v : logits) lists_.push_back(v.id);
  n.aux = labels_.size();
  labels_.insert(labels_.end(), labels.begin(), labels.end());
  return push(n);
}

Var Tape::mean(Var a) {
  check_var(a);
  Node n;
  n.op = Op::Mean;
  n.size = 1;
  n.a = a.id;
  return push(n);
}

// ---------------------------------------------------------------------------
// Tape: evaluation

void Tape::compute(std::size_t index) {
  const Node& n = nodes_[index];
  double* out = val(n);
  const std::size_t size = n.size;

  auto binary = [&](auto&& f) {
    const Node& na = nodes_[n.a];
    const Node& nb = nodes_[n.b];
    const double* x = val(na);
    const double* y = val(nb);
    if (na.size == size && nb.size == size) {
      for (std::size_t k = 0; k < size; ++k) out[k] = f(x[k], y[k]);
    } else if (na.size == size) {
      const double yv = y[0];
      for (std::size_t k = 0; k < size; ++k) out[k] = f(x[k], yv);
    } else if (nb.size == size) {
      const double xv = x[0];
      for (std::size_t k = 0; k < size; ++k) out[k] = f(xv, y[k]);
    } else {
      out[0] = f(x[0], y[0]);
    }
  };

  switch (n.op) {
    case Op::Param:
      out[0] = store_->values()[n.aux];
      break;
    case Op::Constant:
      break;
    case Op::Add: binary([](double x, double y) { return x + y; }); break;
    case Op::Sub: binary([](double x, double y) { return x - y; }); break;
    case Op::Mul: binary([](double x, double y) { return x * y; }); break;
    case Op::Div: binary([](double x, double y) { return x / y; }); break;
    case Op::SquaredError:
      binary([](double x, double y) {
        const double d = x - y;
        return d * d;
      });
      break;
    case Op::Neg: {
      const double* x = val(nodes_[n.a]);
      for (std::size_t k = 0; k < size; ++k) out[k] = -x[k];
      break;
    }
    case Op::Exp: {
      const double* x = val(nodes_[n.a]);
      for (std::size_t k = 0; k < size; ++k) out[k] = std::exp(x[k]);
      break;
    }
    case Op::Relu: {
      const double* x = val(nodes_[n.a]);
      for (std::size_t k = 0; k < size; ++k) out[k] = x[k] > 0.0 ? x[k] : 0.0;
      break;
    }
    case Op::Dot: {
      const Node& na = nodes_[n.a];
      const double* x = val(na);
      const double* y = val(nodes_[n.b]);
      double s = 0.0;
      for (std::size_t k = 0; k < na.size; ++k) s += x[k] * y[k];
      out[0] = s;
      break;
    }
    case Op::Affine: {
      const Node& nb = nodes_[n.a];
      const double* bias = val(nb);
      if (nb.size == size) {
        std::copy_n(bias, size, out);
      } else {
        std::fill_n(out, size, bias[0]);
      }
      for (std::size_t j = 0; j < n.list_count; ++j) {
        const Node& in = nodes_[lists_[n.list_begin + 2 * j]];
        const double w = val(nodes_[lists_[n.list_begin + 2 * j + 1]])[0];
        const double* x = val(in);
        if (in.size == size) {
          for (std::size_t k = 0; k < size; ++k) out[k] += w * x[k];
        } else {
          const double c = w * x[0];
          for (std::size_t k = 0; k < size; ++k) out[k] += c;
        }
      }
      break;
    }
    case Op::SoftmaxCrossEntropy: {
      const int* labels = labels_.data() + n.aux;
      for (std::size_t k = 0; k < size; ++k) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n.list_count; ++c) mx = std::max(mx, val(nodes_[lists_[n.list_begin + c]])[k]);
        double se = 0.0;
        for (std::size_t c = 0; c < n.list_count; ++c) se += std::exp(val(nodes_[lists_[n.list_begin + c]])[k] - mx);
        const double zy = val(nodes_[lists_[n.list_begin + static_cast<std::size_t>(labels[k])]])[k];
        out[k] = mx + std::log(se) - zy;
      }
      break;
    }
    case Op::Mean: {
      const Node& na = nodes_[n.a];
      const double* x = val(na);
      double s = 0.0;
      for (std::size_t k = 0; k < na.size; ++k) s += x[k];
      out[0] = s / static_cast<double>(na.size);
      break;
    }
  }
}

void Tape::reevaluate(const ParameterStore& params) {
  if (params.layout_id() != layout_id_ || params.size() != store_size_)
    throw StructuralError("reevaluate: tape was recorded against a different parameter layout");
  store_ = &params;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    compute(i);
    check_finite(i);
  }
}

// ---------------------------------------------------------------------------
// Tape: reverse pass

void Tape::backward(const ParameterStore& params, Gradient& out) {
  if (params.layout_id() != layout_id_ || params.size() != store_size_)
    throw StructuralError("backward: tape was recorded against a different parameter layout");
  if (nodes_.empty()) throw StructuralError("backward: empty tape");
  if (nodes_.back().size != 1) throw StructuralError("backward: final node is not a scalar");

  out.values.assign(params.size(), 0.0);
  adjoints_.assign(used_, 0.0);
  adjoints_[nodes_.back().offset] = 1.0;
  double* adj = adjoints_.data();

  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.grad) continue;
    const double* g = adj + n.offset;
    const std::size_t size = n.size;

    switch (n.op) {
      case Op::Param:
        if (!params.frozen(n.aux)) out.values[n.aux] += g[0];
        break;
      case Op::Constant:
        break;
      case Op::Add:
      case Op::Sub: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        if (na.grad) accumulate(adj + na.offset, na.size, g, size);
        if (!nb.grad) break;
        double* db = adj + nb.offset;
        if (nb.size == size) {
          if (n.op == Op::Add) {
            for (std::size_t k = 0; k < size; ++k) db[k] += g[k];
          } else {
            for (std::size_t k = 0; k < size; ++k) db[k] -= g[k];
          }
        } else {
          double s = 0.0;
          for (std::size_t k = 0; k < size; ++k) s += g[k];
          db[0] += n.op == Op::Add ? s : -s;
        }
        break;
      }
      case Op::Mul:
      case Op::Div:
      case Op::SquaredError: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        const double* x = val(na);
        const double* y = val(nb);
        const double* z = val(n);
        const bool sa = na.size == size;
        const bool sb = nb.size == size;
        // Local partials: d/dx and d/dy of the op at element k.
        auto partials = [&](std::size_t k, double& px, double& py) {
          const double xv = sa ? x[k] : x[0];
          const double yv = sb ? y[k] : y[0];
          if (n.op == Op::Mul) {
            px = yv;
            py = xv;
          } else if (n.op == Op::Div) {
            px = 1.0 / yv;
            py = -z[k] / yv;
          } else {
            px = 2.0 * (xv - yv);
            py = -px;
          }
        };
        if (n.op == Op::Mul && sa && !sb && na.grad && !nb.grad) {
          double* da = adj + na.offset;
          const double yv = y[0];
          for (std::size_t k = 0; k < size; ++k) da[k] += g[k] * yv;
          break;
        }
        if (n.op == Op::Mul && sa && sb) {
          if (na.grad) {
            double* da = adj + na.offset;
            for (std::size_t k = 0; k < size; ++k) da[k] += g[k] * y[k];
          }
          if (nb.grad) {
            double* db = adj + nb.offset;
            for (std::size_t k = 0; k < size; ++k) db[k] += g[k] * x[k];
          }
          break;
        }
        double* da = adj + na.offset;
        double* db = adj + nb.offset;
        double ra = 0.0;
        double rb = 0.0;
        for (std::size_t k = 0; k < size; ++k) {
          double px = 0.0;
          double py = 0.0;
          partials(k, px, py);
          if (na.grad) {
            if (sa) da[k] += g[k] * px; else ra += g[k] * px;
          }
          if (nb.grad) {
            if (sb) db[k] += g[k] * py; else rb += g[k] * py;
          }
        }
        if (!sa && na.grad) da[0] += ra;
        if (!sb && nb.grad) db[0] += rb;
        break;
      }
      case Op::Neg: {
        double* da = adj + nodes_[n.a].offset;
        for (std::size_t k = 0; k < size; ++k) da[k] -= g[k];
        break;
      }
      case Op::Exp: {
        double* da = adj + nodes_[n.a].offset;
        const double* z = val(n);
        for (std::size_t k = 0; k < size; ++k) da[k] += g[k] * z[k];
        break;
      }
      case Op::Relu: {
        double* da = adj + nodes_[n.a].offset;
        const double* x = val(nodes_[n.a]);
        for (std::size_t k = 0; k < size; ++k) {
          if (x[k] > 0.0) da[k] += g[k];
        }
        break;
      }
      case Op::Dot: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        const double* x = val(na);
        const double* y = val(nb);
        double* da = adj + na.offset;
        double* db = adj + nb.offset;
        for (std::size_t k = 0; k < na.size; ++k) {
          da[k] += g[0] * y[k];
          db[k] += g[0] * x[k];
        }
        break;
      }
      case Op::Affine: {
        const Node& nbias = nodes_[n.a];
        if (nbias.grad) accumulate(adj + nbias.offset, nbias.size, g, size);
        for (std::size_t j = 0; j < n.list_count; ++j) {
          const Node& in = nodes_[lists_[n.list_begin + 2 * j]];
          const Node& wn = nodes_[lists_[n.list_begin + 2 * j + 1]];
          const double w = val(wn)[0];
          const double* x = val(in);
          double* dx = adj + in.offset;
          double gw = 0.0;
          if (in.size == size) {
            if (wn.grad)
              for (std::size_t k = 0; k < size; ++k) gw += g[k] * x[k];
            if (in.grad)
              for (std::size_t k = 0; k < size; ++k) dx[k] += w * g[k];
          } else {
            double s = 0.0;
            for (std::size_t k = 0; k < size; ++k) s += g[k];
            gw = s * x[0];
            if (in.grad) dx[0] += w * s;
          }
          if (wn.grad) adj[wn.offset] += gw;
        }
        break;
      }
      case Op::SoftmaxCrossEntropy: {
        const int* labels = labels_.data() + n.aux;
        for (std::size_t k = 0; k < size; ++k) {
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t c = 0; c < n.list_count; ++c) mx = std::max(mx, val(nodes_[lists_[n.list_begin + c]])[k]);
          double se = 0.0;
          for (std::size_t c = 0; c < n.list_count; ++c) se += std::exp(val(nodes_[lists_[n.list_begin + c]])[k] - mx);
          for (std::size_t c = 0; c < n.list_count; ++c) {
            const Node& lc = nodes_[lists_[n.list_begin + c]];
            const double p = std::exp(val(lc)[k] - mx) / se;
            const double target = static_cast<std::size_t>(labels[k]) == c ? 1.0 : 0.0;
            adj[lc.offset + k] += g[k] * (p - target);
          }
        }
        break;
      }
      case Op::Mean: {
        const Node& na = nodes_[n.a];
        double* da = adj + na.offset;
        const double scale = g[0] / static_cast<double>(na.size);
        for (std::size_t k = 0; k < na.size; ++k) da[k] += scale;
        break;
      }
    }
  }
}

Gradient backward(Tape& tape, const ParameterStore& params) {
  Gradient g;
  tape.backward(params, g);
  return g;
}

void sgd_step(ParameterStore& params, const Gradient& grad, double learning_rate) {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ContractError("sgd_step: learning rate must be positive and finite");
  if (grad.values.size() != params.size()) throw StructuralError("sgd_step: gradient length mismatch");
  for (std::size_t i = 0; i < grad.values.size(); ++i) {
    if (!std::isfinite(grad.values[i]))
      throw NumericError("sgd_step: non-finite gradient entry at index " + std::to_string(i));
  }
  auto values = params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!params.frozen(i)) values[i] -= learning_rate * grad.values[i];
  }
}

}  // namespace firefly::ad
