#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "oreo/datagen.hpp"
#include "oreo/rng.hpp"

namespace oreo {

struct ImagePair {
  size_t nonoccluded = 0;
  size_t occluded = 0;
  int identity = 0;
};

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Occlusion-balanced pair sampler. Each batch draws P distinct identities
/// from the current epoch's shuffled order and, for each, one uniformly chosen
/// non-occluded and one uniformly chosen occluded image. An epoch is one pass
/// over the eligible identities; a remainder smaller than P is dropped and
/// the order is reshuffled.
class OcclusionBalancedSampler {
 public:
  struct IdentityIndex {
    int identity = 0;
    std::vector<size_t> nonoccluded;
    std::vector<size_t> occluded;
  };

  /// Throws SamplerError when no identity has both classes.
  OcclusionBalancedSampler(const Dataset& dataset, std::uint64_t seed);

  const std::vector<IdentityIndex>& eligible() const { return eligible_; }
  const std::vector<int>& ineligible() const { return ineligible_; }

  /// Throws SamplerError when P exceeds the eligible identity count or P < 1.
  std::vector<ImagePair> next_batch(int pairs);

  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t batch_index() const { return batch_in_epoch_; }

 private:
  void start_epoch();

  std::vector<IdentityIndex> eligible_;
  std::vector<int> ineligible_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::uint64_t batch_in_epoch_ = 0;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  bool started_ = false;
};

}  // namespace oreo
