#pragma once

#include <map>
#include <set>
#include <string>

#include "fgc/model.hpp"
#include "fgc/tensor.hpp"

namespace fgc {

// Layers whose input and/or output activations should be captured.
struct TapRequest {
  std::set<std::string> inputs;
  std::set<std::string> outputs;
  // Stop once this layer has run; its output becomes the trace output.
  std::string stop_after;
};

struct ForwardTrace {
  FeatureMap output;
  std::map<std::string, FeatureMap> inputs;
  std::map<std::string, FeatureMap> outputs;
};

FeatureMap forward(const NetworkSpec& net, const FeatureMap& input);
ForwardTrace forward(const NetworkSpec& net, const FeatureMap& input, const TapRequest& taps);

// Single-layer primitives, exposed for tests and the decomposer.
FeatureMap conv_forward(const ConvWeights& conv, const FeatureMap& input);
FeatureMap pool_forward(const PoolParams& pool, bool is_max, const FeatureMap& input);

}  // namespace fgc
