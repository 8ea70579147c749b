#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fairsearch/core.hpp"

namespace fairsearch {

struct ScoredImage {
  std::string image_id;
  double score = 0.0;

  friend bool operator==(const ScoredImage&, const ScoredImage&) = default;
};

/// Top-K images for one text query, best first.
struct RetrievalResult {
  std::string text_id;
  std::vector<ScoredImage> ranked;

  friend bool operator==(const RetrievalResult&, const RetrievalResult&) = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

// v.c / (|v| |c|), clamped to [-1, 1]. Throws ValidationError on a length
// mismatch or a zero vector.
double cosine(std::span<const double> v, std::span<const double> c);

// Exhaustive scan. Ties in score keep image file order.
RetrievalResult retrieve_topk(std::span<const double> query, const EmbeddingTable& images,
                              std::size_t k, std::string text_id = {});

// One result per text, in text file order. Queries are scored on up to
// `threads` workers; output does not depend on the thread count.
std::vector<RetrievalResult> retrieve_all(const EmbeddingTable& texts, const EmbeddingTable& images,
                                          std::size_t k, std::size_t threads = 1);

void save_results(std::span<const RetrievalResult> results, const std::string& path);
std::vector<RetrievalResult> load_results(const std::string& path);

}  // namespace fairsearch
