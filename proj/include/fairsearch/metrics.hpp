#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairsearch/core.hpp"
#include "fairsearch/retrieval.hpp"

namespace fairsearch {

struct BiasReport {
  std::size_t k = 0;
  double bias_at_k = 0.0;
  // Per-query delta values in input order.
  std::vector<std::pair<std::string, double>> per_query;
  std::size_t n_queries = 0;

  // Share of male images among gender-specific retrieved images implied by
  // the bias, (1 + bias) / 2.
  double male_share() const { return (1.0 + bias_at_k) / 2.0; }
};

struct RecallReport {
  std::size_t k = 0;
  double recall_at_k = 0.0;
  std::size_t hits = 0;
  std::size_t n_queries = 0;
};

struct OccupationBiasReport {
  std::vector<std::pair<std::string, double>> per_occupation;
  // Occupations lacking male or female images; not part of the mean.
  std::vector<std::string> excluded;
  double mean_abs_bias = 0.0;
};

// (N_male - N_female) / (N_male + N_female) over the given ranked ids, or 0
// when none of them is gender-specific.
double delta_k(std::span<const ScoredImage> ranked, const LabelMap& labels);
inline double delta_k(const RetrievalResult& r, const LabelMap& labels) {
  return delta_k(r.ranked, labels);
}

// Mean delta over queries with each ranked list truncated to k. Throws if
// results are empty or any list is shorter than k.
BiasReport bias_at_k(std::span<const RetrievalResult> results, const LabelMap& labels, std::size_t k);

RecallReport recall_at_k(std::span<const RetrievalResult> results, const TruthMap& truth, std::size_t k);

// Mean cosine to the term over Male images minus the mean over Female
// images. nullopt when either group is empty.
std::optional<double> occupation_bias(std::span<const double> term, const EmbeddingTable& images,
                                      const LabelMap& labels);

// image id -> occupation name. When supplied, each term only sees the
// images of its own occupation.
using MembershipMap = std::map<std::string, std::string, std::less<>>;
MembershipMap load_memberships(const std::string& path);

OccupationBiasReport occupation_report(const EmbeddingTable& terms, const EmbeddingTable& images,
                                       const LabelMap& labels,
                                       const MembershipMap* memberships = nullptr);

}  // namespace fairsearch
