#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fgc/model.hpp"

namespace fgc {

inline constexpr int kManifestFormatVersion = 1;

// Model on disk: a JSON manifest plus a raw little-endian float32 blob.
//
//   {
//     "format_version": 1,
//     "name": "toy",
//     "input_shape": [C, H, W],
//     "weights_file": "toy.bin",            // relative to the manifest
//     "layers": [
//       {"id": "conv1", "kind": "conv", "stage": "s8x8", "input": "input",
//        "c_in": 3, "c_out": 8, "kernel": 3, "stride": 1, "pad": 1, "groups": 1,
//        "weights": {"offset": 0, "length": 216}, "bias": {"offset": 216, "length": 8},
//        "provenance": {"source": "conv1", "n": 1, "role": "group"}},
//       {"id": "bn1", "kind": "channel_affine", "channels": 8, "scale": {...}, "shift": {...}},
//       {"id": "relu1", "kind": "relu"},
//       {"id": "pool", "kind": "maxpool", "kernel": 2, "stride": 2, "pad": 0},
//       {"id": "gap", "kind": "avgpool", "global": true},
//       {"id": "sum", "kind": "add", "source": "relu1"},
//       {"id": "fc", "kind": "fc", "in_features": 512, "out_features": 10, "weights": {...}}
//     ]
//   }
//
// Offsets and lengths count float32 elements. Instead of "weights_file" a
// manifest may carry "weight_init": {"distribution": "he_normal", "seed": S},
// in which case weights are synthesized at load time.
struct LoadOptions {
  bool load_weights = true;
};

NetworkSpec load_model(const std::filesystem::path& manifest, const LoadOptions& options = {});

// Writes `<manifest>` and its blob (same stem, ".bin"). Every parameterized
// layer must be materialized.
void save_model(const NetworkSpec& net, const std::filesystem::path& manifest);

// Writes a manifest whose weights come from the seeded generator.
void save_model_architecture(const NetworkSpec& net, const std::filesystem::path& manifest,
                             std::uint64_t weight_seed);

// He-normal conv/fc weights, small random biases, near-identity channel affines.
// Layers are seeded independently from (seed, layer index).
void initialize_weights(NetworkSpec& net, std::uint64_t seed);

// Little-endian float32 blob helpers.
std::vector<float> read_f32_blob(const std::filesystem::path& path);
void write_f32_blob(const std::filesystem::path& path, std::span<const float> values);

}  // namespace fgc
