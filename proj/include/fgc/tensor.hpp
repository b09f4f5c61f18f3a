#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fgc/matrix.hpp"

namespace fgc {

struct Shape3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t elements() const { return channels * height * width; }
  std::string to_string() const;
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

// Channel-major C x H x W activation of one sample.
class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(Shape3 shape, double fill = 0.0);
  FeatureMap(Shape3 shape, std::vector<double> data);

  const Shape3& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  Shape3 shape_;
  std::vector<double> data_;
};

// Rows are spatial positions (row-major over H x W), columns are channels.
Matrix to_response_rows(const FeatureMap& fm);

}  // namespace fgc
