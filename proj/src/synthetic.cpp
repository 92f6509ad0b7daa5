#include "memesearch/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "memesearch/random.hpp"

namespace memesearch::synthetic {

namespace {

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

std::vector<std::vector<double>> random_matrix(Rng& rng, std::size_t rows,
                                               std::size_t cols, double stddev) {
  std::vector<std::vector<double>> m(rows, std::vector<double>(cols));
  for (auto& row : m) {
    for (double& v : row) v = stddev * rng.normal();
  }
  return m;
}

std::vector<double> multiply(const std::vector<std::vector<double>>& m,
                             const std::vector<double>& z) {
  std::vector<double> out(m.size(), 0.0);
  for (std::size_t r = 0; r < m.size(); ++r) {
    for (std::size_t c = 0; c < z.size(); ++c) out[r] += m[r][c] * z[c];
  }
  return out;
}

}  // namespace

LabeledDataset make_blobs(const std::array<std::size_t, kNumClasses>& counts,
                          std::size_t dim, double separation, double spread,
                          std::uint64_t seed) {
  Rng rng = make_rng(seed, "blobs");
  std::vector<LabeledDataset::Sample> samples;
  std::size_t next = 0;
  for (ClassLabel label : kAllLabels) {
    const std::size_t c = label_index(label);
    for (std::size_t i = 0; i < counts[c]; ++i) {
      FeatureVector fv{numbered("s", next++), std::vector<double>(dim)};
      for (std::size_t j = 0; j < dim; ++j) {
        fv.values[j] = spread * rng.normal() + (j == c ? separation : 0.0);
      }
      samples.push_back({std::move(fv), label});
    }
  }
  return LabeledDataset(std::move(samples));
}

LatentPairs make_latent_pairs(const LatentPairsConfig& cfg) {
  Rng rng = make_rng(cfg.seed, "latent_pairs");
  const double scale = cfg.mixing_scale / std::sqrt(static_cast<double>(cfg.latent_dim));
  const auto text_map = random_matrix(rng, cfg.text_dim, cfg.latent_dim, scale);
  const auto visual_map = random_matrix(rng, cfg.visual_dim, cfg.latent_dim, scale);

  std::vector<FeatureVector> visual, words;
  LatentPairs out;
  for (std::size_t i = 0; i < cfg.pairs; ++i) {
    std::vector<double> z(cfg.latent_dim);
    for (double& v : z) v = rng.normal();
    auto t = multiply(text_map, z);
    auto x = multiply(visual_map, z);
    for (double& v : t) v += cfg.noise * rng.normal();
    for (double& v : x) v += cfg.noise * rng.normal();

    const std::string id = numbered("m", i);
    const std::string token = numbered("tok", i);
    ManifestEntry e;
    e.id = id;
    e.caption = token;
    out.entries.push_back(e);
    visual.push_back({id, std::move(x)});
    words.push_back({token, std::move(t)});
  }
  out.visual = FeatureTable(std::move(visual));
  out.words = WordVectorTable(FeatureTable(std::move(words)));
  return out;
}

}  // namespace memesearch::synthetic
