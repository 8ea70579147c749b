#include "fairsearch/clipper.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "fairsearch/parallel.hpp"
#include "fairsearch/retrieval.hpp"
#include "jsonl.hpp"

namespace fairsearch {

using detail::json;

double estimate_mi(std::span<const double> column, std::span<const Gender> genders, std::size_t bins) {
  const std::size_t n = column.size();
  if (genders.size() != n) throw ValidationError("estimate_mi: column and labels differ in length");
  if (bins == 0) throw ValidationError("estimate_mi: bins must be >= 1");
  if (n < bins) {
    throw ValidationError("estimate_mi: " + std::to_string(n) + " samples is fewer than " +
                          std::to_string(bins) + " bins");
  }
  if (std::all_of(column.begin(), column.end(), [&](double x) { return x == column.front(); })) {
    return 0.0;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return column[a] < column[b]; });

  std::vector<std::array<std::size_t, 3>> joint(bins, {0, 0, 0});
  std::vector<std::size_t> bin_count(bins, 0);
  std::array<std::size_t, 3> class_count{0, 0, 0};
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t b = rank * bins / n;
    const auto g = static_cast<std::size_t>(genders[order[rank]]);
    ++joint[b][g];
    ++bin_count[b];
    ++class_count[g];
  }

  const double nd = static_cast<double>(n);
  double mi = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    for (std::size_t g = 0; g < 3; ++g) {
      const auto c = joint[b][g];
      if (c == 0) continue;
      const double p = static_cast<double>(c) / nd;
      mi += p * std::log(static_cast<double>(c) * nd /
                         (static_cast<double>(bin_count[b]) * static_cast<double>(class_count[g])));
    }
  }
  return std::max(mi, 0.0);
}

MiEstimator histogram_mi(std::size_t bins) {
  return [bins](std::span<const double> col, std::span<const Gender> g) { return estimate_mi(col, g, bins); };
}

std::vector<std::size_t> ClipPlan::kept() const {
  std::vector<bool> drop(dim, false);
  for (auto z : clipped) drop[z] = true;
  std::vector<std::size_t> out;
  out.reserve(dim - clipped.size());
  for (std::size_t d = 0; d < dim; ++d) {
    if (!drop[d]) out.push_back(d);
  }
  return out;
}

ClipPlan ClipPlan::truncated(std::size_t m_prime) const {
  if (m_prime > m) {
    throw ValidationError("cannot extend a clip plan from m=" + std::to_string(m) + " to " +
                          std::to_string(m_prime));
  }
  ClipPlan p = *this;
  p.m = m_prime;
  p.clipped.resize(m_prime);
  return p;
}

void ClipPlan::validate() const {
  if (dim == 0) throw ValidationError("clip plan dim must be positive");
  if (m >= dim) {
    throw ValidationError("clip plan m=" + std::to_string(m) + " must be < dim=" + std::to_string(dim));
  }
  if (clipped.size() != m) throw ValidationError("clip plan lists " + std::to_string(clipped.size()) +
                                                 " dims but m=" + std::to_string(m));
  if (!mi.empty() && mi.size() != dim) throw ValidationError("clip plan mi has wrong length");
  std::vector<bool> seen(dim, false);
  for (auto z : clipped) {
    if (z >= dim) throw ValidationError("clipped dim " + std::to_string(z) + " out of range");
    if (seen[z]) throw ValidationError("clipped dim " + std::to_string(z) + " listed twice");
    seen[z] = true;
  }
}

std::vector<std::size_t> select_top(std::span<const double> mi, std::size_t m) {
  if (m > mi.size()) throw ValidationError("select_top: m exceeds dimension count");
  std::vector<std::size_t> idx(mi.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mi[a] > mi[b]; });
  idx.resize(m);
  return idx;
}

ClipPlan fit_clip_plan(const EmbeddingTable& images, const LabelMap& labels, std::size_t m,
                       std::size_t bins, std::size_t threads) {
  return fit_clip_plan(images, labels, m, histogram_mi(bins), threads);
}

ClipPlan fit_clip_plan(const EmbeddingTable& images, const LabelMap& labels, std::size_t m,
                       const MiEstimator& estimator, std::size_t threads) {
  const std::size_t dim = images.dim();
  if (m >= dim) throw ValidationError("m=" + std::to_string(m) + " must be < dim=" + std::to_string(dim));
  const std::size_t n = images.size();
  std::vector<Gender> genders(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto it = labels.find(images.id(r));
    if (it == labels.end()) throw ValidationError("no gender label for image " + images.id(r));
    genders[r] = it->second;
  }

  ClipPlan plan;
  plan.dim = dim;
  plan.m = m;
  plan.mi.assign(dim, 0.0);
  parallel_for(dim, threads, [&](std::size_t d) {
    std::vector<double> col(n);
    for (std::size_t r = 0; r < n; ++r) col[r] = images.row(r)[d];
    plan.mi[d] = estimator(col, genders);
  });
  plan.clipped = select_top(plan.mi, m);
  return plan;
}

EmbeddingTable apply_clip(const EmbeddingTable& table, const ClipPlan& plan) {
  plan.validate();
  if (table.dim() != plan.dim) {
    throw ValidationError("table dim " + std::to_string(table.dim()) + " != clip plan dim " +
                          std::to_string(plan.dim));
  }
  const auto kept = plan.kept();
  EmbeddingTable out(kept.size());
  std::vector<double> buf(kept.size());
  for (std::size_t r = 0; r < table.size(); ++r) {
    auto row = table.row(r);
    for (std::size_t i = 0; i < kept.size(); ++i) buf[i] = row[kept[i]];
    if (std::all_of(buf.begin(), buf.end(), [](double x) { return x == 0.0; })) {
      throw ValidationError("zero vector after clipping at id " + table.id(r));
    }
    out.add(table.id(r), buf);
  }
  return out;
}

double clipped_similarity(std::span<const double> v, std::span<const double> c, const ClipPlan& plan) {
  if (v.size() != plan.dim || c.size() != plan.dim) {
    throw ValidationError("clipped_similarity: vector dim does not match plan dim");
  }
  const auto kept = plan.kept();
  std::vector<double> a(kept.size());
  std::vector<double> b(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    a[i] = v[kept[i]];
    b[i] = c[kept[i]];
  }
  return cosine(a, b);
}

void save_clip_plan(const ClipPlan& plan, const std::string& path) {
  plan.validate();
  json obj{{"dim", plan.dim}, {"m", plan.m}, {"mi", plan.mi}, {"clipped", plan.clipped}};
  detail::write_file(path, obj.dump() + "\n");
}

ClipPlan load_clip_plan(const std::string& path) {
  json obj;
  try {
    obj = json::parse(detail::read_file(path));
    ClipPlan plan;
    plan.dim = obj.at("dim").get<std::size_t>();
    plan.m = obj.at("m").get<std::size_t>();
    plan.mi = obj.at("mi").get<std::vector<double>>();
    plan.clipped = obj.at("clipped").get<std::vector<std::size_t>>();
    plan.validate();
    return plan;
  } catch (const json::exception& e) {
    throw ValidationError(path + ": malformed clip plan: " + e.what());
  }
}

}  // namespace fairsearch
