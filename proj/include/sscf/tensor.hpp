#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sscf {

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension or rank disagreement between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in a state that does not allow it.
class StateError : public Error {
 public:
  using Error::Error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Values and accumulated gradient; shared between a tensor and its views.
struct TensorStorage {
  std::vector<double> data;
  std::vector<double> grad;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<TensorStorage> storage;
  bool requires_grad = false;
};

/// Dense row-major array of doubles. Copies share storage; ops never mutate
/// their inputs, so a Tensor behaves as an immutable value except for
/// parameters updated explicitly through mutable_data().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  // Same values and gradient buffer under another shape of equal size.
  Tensor view(Shape shape) const;
  bool shares_storage(const Tensor& other) const;

  // New tensor with a copy of the values and no tape history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const TensorImpl* id() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Define-by-run record of differentiable operations executed on the
/// current thread.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& output)>;

  struct Entry {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  static Tape& current();

  void record(std::string op, std::vector<Tensor> inputs, Tensor output,
              BackwardFn backward);
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void reset() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1, replays entries in reverse order and clears
  // the tape. `visit` observes each replayed entry.
  void backward(const Tensor& loss,
                const std::function<void(const Entry&)>& visit = {});

 private:
  std::vector<Entry> entries_;
};

void backward(const Tensor& loss);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Wraps freshly computed values as an op result. When grad mode is on and an
// input requires grad, the result joins the tape with `backward`, which must
// add the output gradient's contribution into each input's mutable_grad().
Tensor finish(const char* op, Shape shape, std::vector<double> data,
              std::vector<Tensor> inputs, Tape::BackwardFn backward);

// Records a view of `input` that shares its gradient buffer, so its
// backward step has nothing to do.
Tensor finish_view(const char* op, const Tensor& input, Shape shape);

void require(bool condition, const std::string& message);

}  // namespace detail

}  // namespace sscf
