#include "sscf/tensor.hpp"

#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace sscf {

namespace {

#if defined(__GLIBC__)
// Tape buffers of a few MB are allocated and released every step. Keep them
// on the heap instead of round-tripping through mmap and page faults.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
  mallopt(M_TOP_PAD, 64 * 1024 * 1024);
  return true;
}();
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->storage = std::make_shared<TensorStorage>();
  impl_->storage->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::view(Shape shape) const {
  if (!impl_) throw StateError("use of undefined tensor");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != impl_->storage->data.size()) {
    throw ShapeError("cannot view " + shape_string(impl_->shape) + " as " + shape_string(shape));
  }
  Tensor out;
  out.impl_ = std::make_shared<TensorImpl>();
  out.impl_->shape = std::move(shape);
  out.impl_->storage = impl_->storage;
  return out;
}

bool Tensor::shares_storage(const Tensor& other) const {
  return impl_ && other.impl_ && impl_->storage == other.impl_->storage;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

const Shape& Tensor::shape() const {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->storage->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->storage->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_string(shape()));
  return impl_->storage->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw StateError("use of undefined tensor");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->storage->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return impl_->storage->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (!impl_) throw StateError("use of undefined tensor");
  auto& st = *impl_->storage;
  if (st.grad.empty()) st.grad.assign(st.data.size(), 0.0);
  return st.grad;
}

void Tensor::zero_grad() const {
  if (impl_) impl_->storage->grad.clear();
}

Tensor Tensor::detach() const {
  return Tensor(shape(), std::vector<double>(data().begin(), data().end()));
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::string op, std::vector<Tensor> inputs, Tensor output,
                  BackwardFn backward) {
  entries_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss, const std::function<void(const Entry&)>& visit) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw StateError("backward() on a loss that is not connected to the tape");
  }
  // Every participant that requires grad ends up with a populated gradient.
  for (auto& e : entries_) {
    for (auto& in : e.inputs) {
      if (in.requires_grad()) in.mutable_grad();
    }
    e.output.mutable_grad();
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (visit) visit(*it);
    it->backward(it->output);
  }
  reset();
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

namespace detail {

Tensor finish(const char* op, Shape shape, std::vector<double> data,
              std::vector<Tensor> inputs, Tape::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  out.set_requires_grad(true);
  Tape::current().record(op, std::move(inputs), out, std::move(backward));
  return out;
}

Tensor finish_view(const char* op, const Tensor& input, Shape shape) {
  Tensor out = input.view(std::move(shape));
  if (!grad_enabled() || !input.requires_grad()) return out;
  out.set_requires_grad(true);
  Tape::current().record(op, {input}, out, [](const Tensor&) {});
  return out;
}

void require(bool condition, const std::string& message) {
  if (!condition) throw ShapeError(message);
}

}  // namespace detail

}  // namespace sscf
