#pragma once

// Small shared corpus for unit tests: 120 samples, K=32, a 16-wide model.

#include <vector>

#include "onevl/dataset.hpp"
#include "onevl/layout.hpp"
#include "onevl/model.hpp"
#include "onevl/vq.hpp"

namespace onevl::support {

struct SmallWorld {
  Dataset ds;
  Codebook cb;
  Vocab vocab{32, 4, 2};
  std::vector<TokenizedSample> train, val, test;
  ModelConfig model;
};

const SmallWorld& small_world();

/// Random-init bundle of the small world's model with larger weights, so
/// that activations differ visibly between positions.
ModelBundle small_bundle(std::uint64_t seed);

}  // namespace onevl::support
