#include "fairsearch/metrics.hpp"

#include <cmath>

#include "jsonl.hpp"

namespace fairsearch {

double delta_k(std::span<const ScoredImage> ranked, const LabelMap& labels) {
  long male = 0;
  long female = 0;
  for (const auto& s : ranked) {
    auto it = labels.find(s.image_id);
    if (it == labels.end()) throw ValidationError("no gender label for retrieved image " + s.image_id);
    male += it->second == Gender::Male;
    female += it->second == Gender::Female;
  }
  if (male + female == 0) return 0.0;
  return static_cast<double>(male - female) / static_cast<double>(male + female);
}

BiasReport bias_at_k(std::span<const RetrievalResult> results, const LabelMap& labels, std::size_t k) {
  if (results.empty()) throw ValidationError("bias_at_k: no queries");
  if (k == 0) throw ValidationError("bias_at_k: k must be >= 1");
  BiasReport rep;
  rep.k = k;
  rep.n_queries = results.size();
  rep.per_query.reserve(results.size());
  double sum = 0.0;
  for (const auto& r : results) {
    if (r.ranked.size() < k) {
      throw ValidationError("query " + r.text_id + " has " + std::to_string(r.ranked.size()) +
                            " results, fewer than k=" + std::to_string(k));
    }
    const double d = delta_k(std::span(r.ranked).first(k), labels);
    rep.per_query.emplace_back(r.text_id, d);
    sum += d;
  }
  rep.bias_at_k = sum / static_cast<double>(results.size());
  return rep;
}

RecallReport recall_at_k(std::span<const RetrievalResult> results, const TruthMap& truth, std::size_t k) {
  if (results.empty()) throw ValidationError("recall_at_k: no queries");
  if (k == 0) throw ValidationError("recall_at_k: k must be >= 1");
  RecallReport rep;
  rep.k = k;
  rep.n_queries = results.size();
  for (const auto& r : results) {
    auto it = truth.find(r.text_id);
    if (it == truth.end()) throw ValidationError("no ground-truth image for text " + r.text_id);
    const std::size_t n = std::min(k, r.ranked.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (r.ranked[i].image_id == it->second) {
        ++rep.hits;
        break;
      }
    }
  }
  rep.recall_at_k = static_cast<double>(rep.hits) / static_cast<double>(rep.n_queries);
  return rep;
}

namespace {

std::optional<double> group_bias(std::span<const double> term, const EmbeddingTable& images,
                                 const LabelMap& labels, const std::string* occupation,
                                 const MembershipMap* memberships) {
  double male_sum = 0.0;
  double female_sum = 0.0;
  std::size_t male_n = 0;
  std::size_t female_n = 0;
  for (std::size_t r = 0; r < images.size(); ++r) {
    const auto& id = images.id(r);
    if (memberships) {
      auto m = memberships->find(id);
      if (m == memberships->end() || m->second != *occupation) continue;
    }
    auto it = labels.find(id);
    if (it == labels.end()) throw ValidationError("no gender label for image " + id);
    if (it->second == Gender::Neutral) continue;
    const double s = cosine(images.row(r), term);
    if (it->second == Gender::Male) {
      male_sum += s;
      ++male_n;
    } else {
      female_sum += s;
      ++female_n;
    }
  }
  if (male_n == 0 || female_n == 0) return std::nullopt;
  return male_sum / static_cast<double>(male_n) - female_sum / static_cast<double>(female_n);
}

}  // namespace

std::optional<double> occupation_bias(std::span<const double> term, const EmbeddingTable& images,
                                      const LabelMap& labels) {
  if (term.size() != images.dim()) throw ValidationError("occupation term dim != image dim");
  return group_bias(term, images, labels, nullptr, nullptr);
}

MembershipMap load_memberships(const std::string& path) {
  MembershipMap out;
  detail::for_each_jsonl(path, [&](const detail::json& obj, std::size_t line) {
    auto image_id = detail::string_field(obj, "image_id", line);
    auto occupation = detail::string_field(obj, "occupation", line);
    if (!out.emplace(image_id, occupation).second) {
      throw ValidationError(path + ": line " + std::to_string(line) + ": duplicate image " + image_id);
    }
  });
  return out;
}

OccupationBiasReport occupation_report(const EmbeddingTable& terms, const EmbeddingTable& images,
                                       const LabelMap& labels, const MembershipMap* memberships) {
  if (terms.dim() != images.dim()) throw ValidationError("occupation term dim != image dim");
  OccupationBiasReport rep;
  double abs_sum = 0.0;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const auto& name = terms.id(t);
    auto b = group_bias(terms.row(t), images, labels, &name, memberships);
    if (!b) {
      rep.excluded.push_back(name);
      continue;
    }
    rep.per_occupation.emplace_back(name, *b);
    abs_sum += std::abs(*b);
  }
  if (!rep.per_occupation.empty()) {
    rep.mean_abs_bias = abs_sum / static_cast<double>(rep.per_occupation.size());
  }
  return rep;
}

}  // namespace fairsearch
