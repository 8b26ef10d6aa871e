#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace see {

// Channel-major 2-D buffer: values[c * length + t].
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(int channels, int length, double fill = 0.0);
  Tensor2(int channels, int length, std::vector<double> values);

  // Rows are channels; every row must have the same length.
  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);

  int channels() const { return channels_; }
  int length() const { return length_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(int channel, int t) { return values_[index(channel, t)]; }
  double operator()(int channel, int t) const { return values_[index(channel, t)]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> row(int channel) const;

  // Samples [begin, end) of every channel.
  Tensor2 slice_time(int begin, int end) const;

  // Appends `tail` after this tensor along the time axis.
  static Tensor2 concat_time(const Tensor2& head, const Tensor2& tail);

  std::string shape_string() const;

  bool all_finite() const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t index(int channel, int t) const {
    return static_cast<std::size_t>(channel) * static_cast<std::size_t>(length_) +
           static_cast<std::size_t>(t);
  }

  int channels_ = 0;
  int length_ = 0;
  std::vector<double> values_;
};

}  // namespace see
