#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace vclab {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

/// Raised when a value leaves the finite range or a numeric contract breaks.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool& grad_recording_flag() {
  thread_local bool on = true;
  return on;
}

/// RAII switch for graph recording (define-by-run tape).
struct GradMode {
  bool prev;
  explicit GradMode(bool on) : prev(grad_recording_flag()) { grad_recording_flag() = on; }
  ~GradMode() { grad_recording_flag() = prev; }
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;
};

template <typename Real>
struct TensorNode;

/// Differentiable multi-dimensional array. Value semantics over a shared node;
/// copies alias the same storage and graph position.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using Vjp = std::function<std::vector<Tensor<Real>>(const Tensor<Real>& grad_out,
                                                      const std::vector<char>& needed)>;

  Tensor() = default;

  static Tensor from_values(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real v, bool requires_grad = false);
  static Tensor scalar(Real v, bool requires_grad = false);

  /// Result of a recorded primitive. Drops the graph edges when recording is
  /// off or no parent is tracked. Values are finiteness-checked here.
  static Tensor op_result(const char* op, Shape shape, std::vector<Real> values,
                          std::vector<Tensor> parents, Vjp vjp);
  /// Same, but shares an existing buffer (reshape-style views).
  static Tensor op_view(const char* op, Shape shape, std::shared_ptr<std::vector<Real>> buf,
                        std::vector<Tensor> parents, Vjp vjp);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const;
  long size() const;
  long dim(int i) const;
  int rank() const;

  const std::vector<Real>& values() const;
  std::vector<Real>& values();  // leaves only: Adam updates parameters in place
  Real item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  Tensor grad() const;  // undefined Tensor when no gradient has been accumulated
  void zero_grad();
  void accumulate_grad(const Tensor& g);

  /// Same buffer, detached from the graph.
  Tensor detach() const;

  std::uint64_t node_id() const;
  const char* op_name() const;

  /// True when no other Tensor or view shares this node or its buffer.
  bool exclusively_owned() const { return n_.use_count() == 1 && n_->values.use_count() == 1; }

  TensorNode<Real>* node() const { return n_.get(); }

 private:
  std::shared_ptr<TensorNode<Real>> n_;
};

template <typename Real>
struct TensorNode {
  Shape shape;
  std::shared_ptr<std::vector<Real>> values;
  bool requires_grad = false;
  Tensor<Real> grad;
  std::vector<Tensor<Real>> parents;
  typename Tensor<Real>::Vjp vjp;
  const char* op = "leaf";
  std::uint64_t id = next_id();

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> c{0};
    return ++c;
  }
};

template <typename Real>
inline void check_finite(const std::vector<Real>& v, const char* op) {
  // exponent-mask scan, branchless so it vectorizes; slow path only on error
  std::uint64_t bad = 0;
  if constexpr (sizeof(Real) == 8) {
    for (const Real x : v) {
      std::uint64_t b;
      std::memcpy(&b, &x, 8);
      bad |= ((b & 0x7FF0000000000000ull) == 0x7FF0000000000000ull) ? 1u : 0u;
    }
  } else {
    for (const Real x : v) {
      std::uint32_t b;
      std::memcpy(&b, &x, 4);
      bad |= ((b & 0x7F800000u) == 0x7F800000u) ? 1u : 0u;
    }
  }
  if (bad)
    throw numerical_error(std::string("non-finite value produced by op '") + op + "'");
}

template <typename Real>
Tensor<Real> Tensor<Real>::from_values(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<long>(values.size()))
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  check_finite(values, "leaf");
  Tensor t;
  t.n_ = std::make_shared<TensorNode<Real>>();
  t.n_->shape = std::move(shape);
  t.n_->values = std::make_shared<std::vector<Real>>(std::move(values));
  t.n_->requires_grad = requires_grad;
  return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
  long n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), Real(0)),
                     requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real v, bool requires_grad) {
  long n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), v),
                     requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real v, bool requires_grad) {
  return from_values(Shape{1}, std::vector<Real>{v}, requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::op_result(const char* op, Shape shape, std::vector<Real> values,
                                     std::vector<Tensor> parents, Vjp vjp) {
  if (shape_numel(shape) != static_cast<long>(values.size()))
    throw std::invalid_argument(std::string("op '") + op + "': shape/value size mismatch");
  check_finite(values, op);
  Tensor t;
  t.n_ = std::make_shared<TensorNode<Real>>();
  t.n_->shape = std::move(shape);
  t.n_->values = std::make_shared<std::vector<Real>>(std::move(values));
  t.n_->op = op;
  bool track = false;
  if (grad_recording_flag()) {
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) track = true;
  }
  if (track) {
    t.n_->requires_grad = true;
    t.n_->parents = std::move(parents);
    t.n_->vjp = std::move(vjp);
  }
  return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::op_view(const char* op, Shape shape,
                                   std::shared_ptr<std::vector<Real>> buf,
                                   std::vector<Tensor> parents, Vjp vjp) {
  if (shape_numel(shape) != static_cast<long>(buf->size()))
    throw std::invalid_argument(std::string("op '") + op + "': shape/buffer size mismatch");
  Tensor t;
  t.n_ = std::make_shared<TensorNode<Real>>();
  t.n_->shape = std::move(shape);
  t.n_->values = std::move(buf);
  t.n_->op = op;
  bool track = false;
  if (grad_recording_flag()) {
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) track = true;
  }
  if (track) {
    t.n_->requires_grad = true;
    t.n_->parents = std::move(parents);
    t.n_->vjp = std::move(vjp);
  }
  return t;
}

template <typename Real>
const Shape& Tensor<Real>::shape() const {
  return n_->shape;
}
template <typename Real>
long Tensor<Real>::size() const {
  return static_cast<long>(n_->values->size());
}
template <typename Real>
long Tensor<Real>::dim(int i) const {
  return n_->shape.at(static_cast<std::size_t>(i));
}
template <typename Real>
int Tensor<Real>::rank() const {
  return static_cast<int>(n_->shape.size());
}
template <typename Real>
const std::vector<Real>& Tensor<Real>::values() const {
  return *n_->values;
}
template <typename Real>
std::vector<Real>& Tensor<Real>::values() {
  return *n_->values;
}
template <typename Real>
Real Tensor<Real>::item() const {
  if (size() != 1) throw std::invalid_argument("item(): tensor is not scalar");
  return (*n_->values)[0];
}
template <typename Real>
bool Tensor<Real>::requires_grad() const {
  return n_ && n_->requires_grad;
}
template <typename Real>
Tensor<Real>& Tensor<Real>::set_requires_grad(bool on) {
  n_->requires_grad = on;
  return *this;
}
template <typename Real>
Tensor<Real> Tensor<Real>::grad() const {
  return n_->grad;
}
template <typename Real>
void Tensor<Real>::zero_grad() {
  n_->grad = Tensor<Real>();
}
template <typename Real>
std::uint64_t Tensor<Real>::node_id() const {
  return n_->id;
}
template <typename Real>
const char* Tensor<Real>::op_name() const {
  return n_->op;
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  Tensor t;
  t.n_ = std::make_shared<TensorNode<Real>>();
  t.n_->shape = n_->shape;
  t.n_->values = n_->values;
  t.n_->op = "detach";
  return t;
}

// ---------------------------------------------------------------------------
// Reverse-mode engine

namespace detail {

template <typename Real>
Tensor<Real> add_plain(const Tensor<Real>& a, const Tensor<Real>& b);  // defined in ops.hpp

/// Topological order (root last). Visits only grad-requiring nodes. The graph
/// is a DAG by construction; a back edge trips the cycle assert anyway.
template <typename Real>
std::vector<TensorNode<Real>*> topo_order(TensorNode<Real>* root) {
  std::vector<TensorNode<Real>*> order;
  std::unordered_map<TensorNode<Real>*, int> state;  // 0 new, 1 on stack, 2 done
  struct Frame {
    TensorNode<Real>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  state[root] = 1;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      const auto& p = f.node->parents[f.next_parent++];
      if (!p.defined() || !p.requires_grad()) continue;
      TensorNode<Real>* pn = p.node();
      int& st = state[pn];
      if (st == 1) throw std::logic_error("autodiff: cycle detected in computation graph");
      if (st == 0) {
        st = 1;
        stack.push_back({pn, 0});
      }
    } else {
      state[f.node] = 2;
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename Real>
std::unordered_map<TensorNode<Real>*, Tensor<Real>> run_backward(const Tensor<Real>& root,
                                                                 bool create_graph) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined tensor");
  if (root.size() != 1)
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                shape_str(root.shape()));
  if (!root.requires_grad())
    throw std::invalid_argument("backward: root was not produced by tracked ops");

  auto order = topo_order<Real>(root.node());
  std::unordered_map<TensorNode<Real>*, Tensor<Real>> grads;
  grads[root.node()] = Tensor<Real>::full(root.shape(), Real(1));

  GradMode mode(create_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<Real>* node = *it;
    auto git = grads.find(node);
    if (git == grads.end()) continue;  // unreachable from root
    if (!node->vjp) continue;          // leaf
    std::vector<char> needed(node->parents.size(), 0);
    bool any = false;
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      if (node->parents[i].defined() && node->parents[i].requires_grad()) {
        needed[i] = 1;
        any = true;
      }
    }
    if (!any) continue;
    std::vector<Tensor<Real>> pg = node->vjp(git->second, needed);
    if (pg.size() != node->parents.size())
      throw std::logic_error(std::string("vjp of '") + node->op + "' returned wrong arity");
    for (std::size_t i = 0; i < pg.size(); ++i) {
      if (!needed[i] || !pg[i].defined()) continue;
      if (pg[i].shape() != node->parents[i].shape())
        throw std::logic_error(std::string("vjp of '") + node->op + "' produced shape " +
                               shape_str(pg[i].shape()) + " for parent of shape " +
                               shape_str(node->parents[i].shape()));
      TensorNode<Real>* pn = node->parents[i].node();
      auto found = grads.find(pn);
      if (found == grads.end()) {
        grads.emplace(pn, pg[i]);
      } else if (!create_graph && found->second.exclusively_owned() &&
                 !found->second.requires_grad()) {
        // engine-private buffer: accumulate in place
        auto& dst = found->second.values();
        const auto& src = pg[i].values();
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
      } else {
        found->second = add_plain(found->second, pg[i]);
      }
    }
  }
  return grads;
}

}  // namespace detail

template <typename Real>
void Tensor<Real>::accumulate_grad(const Tensor<Real>& g) {
  if (!n_->grad.defined())
    n_->grad = g;
  else
    n_->grad = detail::add_plain(n_->grad, g);
}

/// Accumulates d(root)/dt into .grad of every tracked tensor reachable from
/// root. Repeated calls without zero_grad() accumulate.
template <typename Real>
void backward(const Tensor<Real>& root, bool create_graph = false) {
  auto grads = detail::run_backward(root, create_graph);
  for (auto& [node, g] : grads) {
    if (!node->requires_grad) continue;
    if (!node->grad.defined())
      node->grad = g;
    else {
      GradMode mode(create_graph);
      node->grad = detail::add_plain(node->grad, g);
    }
  }
}

/// Gradients of root w.r.t. the listed tensors only; .grad fields untouched.
/// With create_graph the results are differentiable again.
template <typename Real>
std::vector<Tensor<Real>> gradients(const Tensor<Real>& root, const std::vector<Tensor<Real>>& wrt,
                                    bool create_graph = false) {
  auto grads = detail::run_backward(root, create_graph);
  std::vector<Tensor<Real>> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto it = grads.find(t.node());
    if (it == grads.end())
      out.push_back(Tensor<Real>::zeros(t.shape()));
    else
      out.push_back(it->second);
  }
  return out;
}

}  // namespace vclab
