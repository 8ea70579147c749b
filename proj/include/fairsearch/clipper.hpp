#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fairsearch/core.hpp"

namespace fairsearch {

/// Plug-in mutual information between a real-valued column and gender, in
/// nats.
///
/// The column is discretized into `bins` equal-frequency bins by rank
/// (equal values are split by original position), cross-tabulated against
/// the three gender classes, and the KL divergence of the joint histogram
/// from the product of its marginals is returned. A constant column yields
/// 0. Requires column.size() == genders.size() >= bins.
double estimate_mi(std::span<const double> column, std::span<const Gender> genders,
                   std::size_t bins = 20);

using MiEstimator = std::function<double(std::span<const double>, std::span<const Gender>)>;

MiEstimator histogram_mi(std::size_t bins = 20);

/// Dimensions chosen for removal, in selection order (highest MI first).
struct ClipPlan {
  std::size_t dim = 0;
  std::size_t m = 0;
  std::vector<double> mi;
  std::vector<std::size_t> clipped;

  // Surviving dimensions in ascending order.
  std::vector<std::size_t> kept() const;
  // The plan that clips only the first m' selected dimensions.
  ClipPlan truncated(std::size_t m_prime) const;
  void validate() const;

  friend bool operator==(const ClipPlan&, const ClipPlan&) = default;
};

// Greedy top-m selection over the given scores, ties to the lower index.
std::vector<std::size_t> select_top(std::span<const double> mi, std::size_t m);

ClipPlan fit_clip_plan(const EmbeddingTable& images, const LabelMap& labels, std::size_t m,
                       std::size_t bins = 20, std::size_t threads = 1);
ClipPlan fit_clip_plan(const EmbeddingTable& images, const LabelMap& labels, std::size_t m,
                       const MiEstimator& estimator, std::size_t threads = 1);

// Drops the clipped dimensions. Throws if a vector becomes all zero.
EmbeddingTable apply_clip(const EmbeddingTable& table, const ClipPlan& plan);

// Cosine similarity between the two vectors restricted to kept dimensions.
double clipped_similarity(std::span<const double> v, std::span<const double> c, const ClipPlan& plan);

void save_clip_plan(const ClipPlan& plan, const std::string& path);
ClipPlan load_clip_plan(const std::string& path);

}  // namespace fairsearch
