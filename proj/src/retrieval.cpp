#include "fairsearch/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairsearch/parallel.hpp"
#include "jsonl.hpp"

namespace fairsearch {

using detail::json;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine(std::span<const double> v, std::span<const double> c) {
  if (v.size() != c.size()) {
    throw ValidationError("cosine: length mismatch " + std::to_string(v.size()) + " vs " +
                          std::to_string(c.size()));
  }
  const double nv = norm(v);
  const double nc = norm(c);
  if (nv == 0.0 || nc == 0.0) throw ValidationError("cosine: zero vector");
  return std::clamp(dot(v, c) / (nv * nc), -1.0, 1.0);
}

namespace {

// Scores every image against the query with precomputed image norms and
// keeps the best k by (score desc, row asc).
RetrievalResult topk_with_norms(std::span<const double> query, const EmbeddingTable& images,
                                std::span<const double> image_norms, std::size_t k,
                                std::string text_id) {
  if (query.size() != images.dim()) {
    throw ValidationError("query " + text_id + ": dim " + std::to_string(query.size()) +
                          " != image dim " + std::to_string(images.dim()));
  }
  if (k == 0) throw ValidationError("k must be >= 1");
  const double qn = norm(query);
  if (qn == 0.0) throw ValidationError("query " + text_id + " is a zero vector");

  const std::size_t n = images.size();
  std::vector<double> scores(n);
  for (std::size_t r = 0; r < n; ++r) {
    scores[r] = std::clamp(dot(query, images.row(r)) / (qn * image_norms[r]), -1.0, 1.0);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t keep = std::min(k, n);
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);

  RetrievalResult res;
  res.text_id = std::move(text_id);
  res.ranked.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) res.ranked.push_back({images.id(order[i]), scores[order[i]]});
  return res;
}

std::vector<double> row_norms(const EmbeddingTable& t) {
  std::vector<double> out(t.size());
  for (std::size_t r = 0; r < t.size(); ++r) out[r] = norm(t.row(r));
  return out;
}

}  // namespace

RetrievalResult retrieve_topk(std::span<const double> query, const EmbeddingTable& images,
                              std::size_t k, std::string text_id) {
  const auto norms = row_norms(images);
  return topk_with_norms(query, images, norms, k, std::move(text_id));
}

std::vector<RetrievalResult> retrieve_all(const EmbeddingTable& texts, const EmbeddingTable& images,
                                          std::size_t k, std::size_t threads) {
  if (texts.empty()) return {};
  if (texts.dim() != images.dim()) {
    throw ValidationError("text dim " + std::to_string(texts.dim()) + " != image dim " +
                          std::to_string(images.dim()));
  }
  const auto norms = row_norms(images);
  std::vector<RetrievalResult> out(texts.size());
  parallel_for(texts.size(), threads, [&](std::size_t i) {
    out[i] = topk_with_norms(texts.row(i), images, norms, k, texts.id(i));
  });
  return out;
}

void save_results(std::span<const RetrievalResult> results, const std::string& path) {
  auto out = detail::open_for_write(path);
  for (const auto& r : results) {
    json ranked = json::array();
    for (const auto& s : r.ranked) ranked.push_back({{"image_id", s.image_id}, {"score", s.score}});
    out << json{{"text_id", r.text_id}, {"ranked", std::move(ranked)}}.dump() << '\n';
  }
  out.flush();
  if (!out) throw RuntimeFailure("write failed: " + path);
}

std::vector<RetrievalResult> load_results(const std::string& path) {
  std::vector<RetrievalResult> out;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    RetrievalResult r;
    r.text_id = detail::string_field(obj, "text_id", line);
    auto it = obj.find("ranked");
    if (it == obj.end() || !it->is_array()) {
      throw ValidationError(path + ": line " + std::to_string(line) + ": missing ranked array");
    }
    for (const auto& e : *it) {
      if (!e.is_object() || !e.contains("score") || !e["score"].is_number()) {
        throw ValidationError(path + ": line " + std::to_string(line) + ": bad ranked entry");
      }
      r.ranked.push_back({detail::string_field(e, "image_id", line), e["score"].get<double>()});
    }
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace fairsearch
