#include "oreo/sampler.hpp"

#include <map>
#include <string>

namespace oreo {

OcclusionBalancedSampler::OcclusionBalancedSampler(const Dataset& dataset, std::uint64_t seed) : seed_(seed) {
  std::map<int, IdentityIndex> by_identity;
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    auto& entry = by_identity[s.identity];
    entry.identity = s.identity;
    (s.occluded ? entry.occluded : entry.nonoccluded).push_back(i);
  }
  for (auto& [identity, entry] : by_identity) {
    if (entry.occluded.empty() || entry.nonoccluded.empty()) {
      ineligible_.push_back(identity);
    } else {
      eligible_.push_back(std::move(entry));
    }
  }
  if (eligible_.empty()) {
    throw SamplerError("no identity has both occluded and non-occluded images (" +
                       std::to_string(ineligible_.size()) + " identities ineligible)");
  }
}

void OcclusionBalancedSampler::start_epoch() {
  if (started_) ++epoch_;
  started_ = true;
  batch_in_epoch_ = 0;
  order_.resize(eligible_.size());
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng = derive_rng(seed_, {0x5a, epoch_});
  shuffle(order_.begin(), order_.end(), rng);
  cursor_ = 0;
}

std::vector<ImagePair> OcclusionBalancedSampler::next_batch(int pairs) {
  if (pairs < 1) throw SamplerError("batch must contain at least one pair");
  if (static_cast<size_t>(pairs) > eligible_.size()) {
    throw SamplerError("requested " + std::to_string(pairs) + " pairs but only " + std::to_string(eligible_.size()) +
                       " identities are eligible");
  }
  if (!started_ || cursor_ + pairs > order_.size()) start_epoch();

  Rng rng = derive_rng(seed_, {0x5b, epoch_, batch_in_epoch_});
  std::vector<ImagePair> batch;
  batch.reserve(pairs);
  for (int i = 0; i < pairs; ++i) {
    const IdentityIndex& id = eligible_[order_[cursor_ + i]];
    ImagePair pair;
    pair.identity = id.identity;
    pair.nonoccluded = id.nonoccluded[uniform_index(rng, id.nonoccluded.size())];
    pair.occluded = id.occluded[uniform_index(rng, id.occluded.size())];
    batch.push_back(pair);
  }
  cursor_ += pairs;
  ++batch_in_epoch_;
  return batch;
}

}  // namespace oreo
