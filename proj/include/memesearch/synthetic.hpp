#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "memesearch/corpus.hpp"
#include "memesearch/text.hpp"

namespace memesearch::synthetic {

/// Gaussian blobs, one per class, centered at `separation` times the class's
/// axis in the first three coordinates, isotropic noise `spread`. Ids are
/// "s000000", "s000001", ... in generation order (class by class).
LabeledDataset make_blobs(const std::array<std::size_t, kNumClasses>& counts,
                          std::size_t dim, double separation, double spread,
                          std::uint64_t seed);

struct LatentPairsConfig {
  std::size_t pairs = 500;
  std::size_t latent_dim = 32;
  std::size_t text_dim = 48;
  std::size_t visual_dim = 64;
  double noise = 0.1;
  // Standard deviation of the mixing-matrix entries times sqrt(latent_dim).
  double mixing_scale = 1.0;
  std::uint64_t seed = 0;
};

/// Captioned pairs whose text and visual features are independent noisy
/// linear images of one shared latent: x = A z + noise, z ~ N(0, I), with
/// A entries ~ N(0, mixing_scale^2 / latent_dim). Each caption is a single unique token
/// ("tok00042") whose word vector is the text feature.
struct LatentPairs {
  std::vector<ManifestEntry> entries;  // split = unsplit, caption set
  FeatureTable visual;
  WordVectorTable words;
};

LatentPairs make_latent_pairs(const LatentPairsConfig& cfg);

}  // namespace memesearch::synthetic
