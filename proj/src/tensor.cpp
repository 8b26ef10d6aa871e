#include "see/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "see/errors.hpp"

namespace see {

Tensor2::Tensor2(int channels, int length, double fill)
    : channels_(channels), length_(length) {
  if (channels <= 0 || length <= 0) {
    throw ShapeError("Tensor2 needs positive dimensions, got " + std::to_string(channels) +
                     "x" + std::to_string(length));
  }
  values_.assign(static_cast<std::size_t>(channels) * static_cast<std::size_t>(length), fill);
}

Tensor2::Tensor2(int channels, int length, std::vector<double> values)
    : channels_(channels), length_(length), values_(std::move(values)) {
  if (channels <= 0 || length <= 0) {
    throw ShapeError("Tensor2 needs positive dimensions, got " + std::to_string(channels) +
                     "x" + std::to_string(length));
  }
  if (values_.size() != static_cast<std::size_t>(channels) * static_cast<std::size_t>(length)) {
    throw ShapeError("Tensor2 " + shape_string() + " given " + std::to_string(values_.size()) +
                     " values");
  }
}

Tensor2 Tensor2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ShapeError("Tensor2::from_rows: no rows");
  const auto length = static_cast<int>(rows.begin()->size());
  std::vector<double> values;
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != length) throw ShapeError("Tensor2::from_rows: ragged rows");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor2(static_cast<int>(rows.size()), length, std::move(values));
}

std::span<const double> Tensor2::row(int channel) const {
  return std::span<const double>(values_).subspan(index(channel, 0),
                                                  static_cast<std::size_t>(length_));
}

Tensor2 Tensor2::slice_time(int begin, int end) const {
  if (begin < 0 || end > length_ || begin >= end) {
    throw ShapeError("slice_time [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_string());
  }
  Tensor2 out(channels_, end - begin);
  for (int c = 0; c < channels_; ++c) {
    std::copy(values_.begin() + static_cast<std::ptrdiff_t>(index(c, begin)),
              values_.begin() + static_cast<std::ptrdiff_t>(index(c, 0) + end),
              out.values_.begin() + static_cast<std::ptrdiff_t>(out.index(c, 0)));
  }
  return out;
}

Tensor2 Tensor2::concat_time(const Tensor2& head, const Tensor2& tail) {
  if (head.channels_ != tail.channels_) {
    throw ShapeError("concat_time channel mismatch: " + head.shape_string() + " vs " +
                     tail.shape_string());
  }
  Tensor2 out(head.channels_, head.length_ + tail.length_);
  for (int c = 0; c < head.channels_; ++c) {
    auto h = head.row(c);
    auto t = tail.row(c);
    auto dst = out.values_.begin() + static_cast<std::ptrdiff_t>(out.index(c, 0));
    dst = std::copy(h.begin(), h.end(), dst);
    std::copy(t.begin(), t.end(), dst);
  }
  return out;
}

std::string Tensor2::shape_string() const {
  return "[" + std::to_string(channels_) + "x" + std::to_string(length_) + "]";
}

bool Tensor2::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace see
