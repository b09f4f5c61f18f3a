#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fgc/model.hpp"

namespace fgc {

// Architectures are built shape-only; call initialize_weights() to materialize.

// ResNet-34 for 3x224x224 inputs with inference-time batch norm as channel_affine.
NetworkSpec make_resnet34();

// VGG16 (configuration D) for 3x224x224 inputs.
NetworkSpec make_vgg16();

struct ToyCnnOptions {
  Shape3 input{3, 8, 8};
  std::vector<std::size_t> channels{8, 8, 16, 16};
  std::vector<std::size_t> strides{1, 1, 2, 1};
  std::size_t kernel = 3;
  bool relu = true;
};

// Chain of k x k convolutions (padding k/2), optionally with ReLU between them.
NetworkSpec make_toy_cnn(const ToyCnnOptions& options = {});

}  // namespace fgc
