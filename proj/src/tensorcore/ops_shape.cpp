#include <algorithm>
#include <numeric>

#include "sscf/ops.hpp"

namespace sscf {

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// For each flat index of `out_shape`, the flat source index obtained by
// walking the source with `src_strides` (one stride per output axis).
std::vector<std::size_t> gather_map(const Shape& out_shape, const std::vector<std::size_t>& src_strides) {
  const auto n = shape_numel(out_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(out_shape.size(), 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = src;
    for (std::size_t ax = out_shape.size(); ax-- > 0;) {
      ++counter[ax];
      src += src_strides[ax];
      if (counter[ax] < out_shape[ax]) break;
      src -= src_strides[ax] * out_shape[ax];
      counter[ax] = 0;
    }
  }
  return map;
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  return detail::finish_view("reshape", x, std::move(shape));
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& in_shape = x.shape();
  std::vector<std::size_t> check(order);
  std::sort(check.begin(), check.end());
  std::vector<std::size_t> expected(in_shape.size());
  std::iota(expected.begin(), expected.end(), 0);
  if (check != expected) {
    throw ShapeError("permute: order is not a permutation of the " + std::to_string(in_shape.size()) + " axes");
  }
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(order.size());
  std::vector<std::size_t> src_strides(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out_shape[i] = in_shape[order[i]];
    src_strides[i] = in_strides[order[i]];
  }
  auto map = gather_map(out_shape, src_strides);
  auto in = x.data();
  std::vector<double> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = in[map[i]];
  return detail::finish("permute", std::move(out_shape), std::move(out), {x},
                        [x, map = std::move(map)](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto gx = x.mutable_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) gx[map[i]] += g[i];
                        });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat: no inputs");
  Shape out_shape = parts[0].shape();
  detail::require(axis < out_shape.size(), "concat: axis out of range");
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    detail::require(s.size() == out_shape.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != parts[0].dim(i)) {
        throw ShapeError("concat: shape " + shape_string(s) + " incompatible with " +
                         shape_string(parts[0].shape()) + " along axis " + std::to_string(axis));
      }
    }
    out_shape[axis] += s[axis];
  }
  const auto split = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const auto len = p.dim(axis);
    auto in = p.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(in.data() + o * len * split.inner, len * split.inner,
                  out.data() + (o * split.extent + offset) * split.inner);
    }
    offset += len;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return detail::finish("concat", out_shape, std::move(out), inputs,
                        [inputs, offsets, axis, split](const Tensor& o) mutable {
                          auto g = o.grad();
                          for (std::size_t k = 0; k < inputs.size(); ++k) {
                            if (!inputs[k].requires_grad()) continue;
                            const auto len = inputs[k].dim(axis);
                            auto gp = inputs[k].mutable_grad();
                            for (std::size_t q = 0; q < split.outer; ++q) {
                              const double* src = g.data() + (q * split.extent + offsets[k]) * split.inner;
                              double* dst = gp.data() + q * len * split.inner;
                              for (std::size_t i = 0; i < len * split.inner; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  detail::require(axis < x.rank(), "slice: axis out of range");
  if (length == 0 || start + length > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside axis of size " + std::to_string(x.dim(axis)));
  }
  const auto split = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  auto in = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(in.data() + (o * split.extent + start) * split.inner, length * split.inner,
                out.data() + o * length * split.inner);
  }
  return detail::finish("slice", std::move(out_shape), std::move(out), {x},
                        [x, split, start, length](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto gx = x.mutable_grad();
                          for (std::size_t q = 0; q < split.outer; ++q) {
                            const double* src = g.data() + q * length * split.inner;
                            double* dst = gx.data() + (q * split.extent + start) * split.inner;
                            for (std::size_t i = 0; i < length * split.inner; ++i) dst[i] += src[i];
                          }
                        });
}

Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices) {
  detail::require(axis < x.rank(), "index_select: axis out of range");
  detail::require(!indices.empty(), "index_select: empty index list");
  const auto split = split_at(x.shape(), axis);
  for (auto idx : indices) {
    if (idx >= split.extent) {
      throw ShapeError("index_select: index " + std::to_string(idx) + " out of range for axis of size " +
                       std::to_string(split.extent));
    }
  }
  Shape out_shape = x.shape();
  out_shape[axis] = indices.size();
  std::vector<double> out(shape_numel(out_shape));
  auto in = x.data();
  const auto count = indices.size();
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t k = 0; k < count; ++k) {
      std::copy_n(in.data() + (o * split.extent + indices[k]) * split.inner, split.inner,
                  out.data() + (o * count + k) * split.inner);
    }
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return detail::finish("index_select", std::move(out_shape), std::move(out), {x},
                        [x, split, idx = std::move(idx)](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto gx = x.mutable_grad();
                          const auto count = idx.size();
                          for (std::size_t q = 0; q < split.outer; ++q) {
                            for (std::size_t k = 0; k < count; ++k) {
                              const double* src = g.data() + (q * count + k) * split.inner;
                              double* dst = gx.data() + (q * split.extent + idx[k]) * split.inner;
                              for (std::size_t i = 0; i < split.inner; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

Tensor expand_trailing(const Tensor& x, const Shape& extra) {
  const auto reps = shape_numel(extra);
  detail::require(reps > 0, "expand_trailing: empty extent");
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.end(), extra.begin(), extra.end());
  auto in = x.data();
  std::vector<double> out(in.size() * reps);
  for (std::size_t i = 0; i < in.size(); ++i) std::fill_n(out.data() + i * reps, reps, in[i]);
  return detail::finish("expand_trailing", std::move(out_shape), std::move(out), {x},
                        [x, reps](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto gx = x.mutable_grad();
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            double s = 0.0;
                            for (std::size_t r = 0; r < reps; ++r) s += g[i * reps + r];
                            gx[i] += s;
                          }
                        });
}

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& shape = x.shape();
  std::vector<bool> reduced(shape.size(), false);
  for (auto ax : axes) {
    detail::require(ax < shape.size(), "sum: axis " + std::to_string(ax) + " out of range for " + shape_string(shape));
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (!reduced[i]) out_shape.push_back(shape[i]);
  }
  if (out_shape.empty()) out_shape = {1};
  // Stride of every input axis within the output layout (0 if reduced).
  std::vector<std::size_t> out_strides(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    if (!reduced[i]) {
      out_strides[i] = stride;
      stride *= shape[i];
    }
  }
  auto map = gather_map(shape, out_strides);
  auto in = x.data();
  std::vector<double> out(shape_numel(out_shape), 0.0);
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += in[i];
  return detail::finish("sum", std::move(out_shape), std::move(out), {x},
                        [x, map = std::move(map)](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto gx = x.mutable_grad();
                          for (std::size_t i = 0; i < map.size(); ++i) gx[i] += g[map[i]];
                        });
}

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes) {
  std::size_t count = 1;
  for (auto ax : axes) count *= x.dim(ax);
  return mul_scalar(sum(x, axes), 1.0 / static_cast<double>(count));
}

Tensor sum_all(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return sum(x, axes);
}

Tensor mean_all(const Tensor& x) { return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace sscf
