#include "fairsearch/core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "jsonl.hpp"

namespace fairsearch {

namespace detail {

void for_each_jsonl(const std::string& path,
                    const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(path + ": malformed line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!obj.is_object()) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + " is not a JSON object");
    }
    fn(obj, lineno);
  }
  if (in.bad()) throw RuntimeFailure("read error on " + path);
}

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path);
  return out;
}

std::string string_field(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ValidationError("line " + std::to_string(line) + ": missing string field \"" + key + "\"");
  }
  return it->get<std::string>();
}

std::string format_double(double x) { return json(x).dump(); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  auto out = open_for_write(path);
  out << contents;
  if (!out) throw RuntimeFailure("write failed: " + path);
}

}  // namespace detail

using detail::json;

std::string_view to_string(Gender g) {
  switch (g) {
    case Gender::Male: return "male";
    case Gender::Female: return "female";
    case Gender::Neutral: return "neutral";
  }
  return "neutral";
}

Gender parse_gender(std::string_view s) {
  if (s == "male") return Gender::Male;
  if (s == "female") return Gender::Female;
  if (s == "neutral") return Gender::Neutral;
  throw ValidationError("unknown gender \"" + std::string(s) + "\"");
}

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ValidationError("embedding dim must be positive");
}

void EmbeddingTable::add(std::string id, std::span<const double> vec) {
  if (vec.size() != dim_) {
    throw ValidationError("dimension mismatch at id " + id + ": expected " + std::to_string(dim_) +
                          ", got " + std::to_string(vec.size()));
  }
  if (index_.count(id)) throw ValidationError("duplicate id " + id);
  bool nonzero = false;
  for (double x : vec) {
    if (!std::isfinite(x)) throw ValidationError("non-finite component at id " + id);
    nonzero = nonzero || x != 0.0;
  }
  if (!nonzero) throw ValidationError("zero vector at id " + id);
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  data_.insert(data_.end(), vec.begin(), vec.end());
}

std::optional<std::size_t> EmbeddingTable::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Dataset::validate() const {
  if (images.dim() != texts.dim()) {
    throw ValidationError("image dim " + std::to_string(images.dim()) + " != text dim " +
                          std::to_string(texts.dim()));
  }
  for (const auto& id : images.ids()) {
    if (!labels.count(id)) throw ValidationError("image " + id + " has no gender label");
  }
  for (const auto& [text_id, image_id] : truth) {
    if (!texts.find(text_id)) throw ValidationError("truth references unknown text " + text_id);
    if (!images.find(image_id)) throw ValidationError("truth references unknown image " + image_id);
  }
}

EmbeddingTable load_embeddings(const std::string& path, std::optional<std::size_t> expected_dim) {
  std::optional<EmbeddingTable> table;
  if (expected_dim) table.emplace(*expected_dim);
  std::vector<double> buf;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    const std::string where = path + ": line " + std::to_string(line);
    if (obj.contains("dim") && !obj.contains("vector")) {
      const auto& d = obj["dim"];
      if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) {
        throw ValidationError(where + ": header dim must be a positive integer");
      }
      const auto dim = d.get<std::size_t>();
      if (table && table->dim() != dim) {
        throw ValidationError(where + ": dimension mismatch: header says " + std::to_string(dim) +
                              ", expected " + std::to_string(table->dim()));
      }
      if (table && !table->empty()) throw ValidationError(where + ": header after records");
      table.emplace(dim);
      return;
    }
    std::string id;
    try {
      id = detail::string_field(obj, "id", line);
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": " + e.what());
    }
    auto it = obj.find("vector");
    if (it == obj.end() || !it->is_array()) {
      throw ValidationError(where + ": id " + id + " has no vector array");
    }
    buf.clear();
    for (const auto& x : *it) {
      if (!x.is_number()) throw ValidationError(where + ": non-numeric component at id " + id);
      buf.push_back(x.get<double>());
    }
    if (!table) {
      if (buf.empty()) throw ValidationError(where + ": empty vector at id " + id);
      table.emplace(buf.size());
    }
    try {
      table->add(id, buf);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  });
  if (!table) throw ValidationError(path + ": no header and no records; cannot infer dim");
  return std::move(*table);
}

void save_embeddings(const EmbeddingTable& table, const std::string& path) {
  auto out = detail::open_for_write(path);
  out << json{{"dim", table.dim()}}.dump() << '\n';
  for (std::size_t r = 0; r < table.size(); ++r) {
    auto row = table.row(r);
    json obj;
    obj["id"] = table.id(r);
    obj["vector"] = std::vector<double>(row.begin(), row.end());
    out << obj.dump() << '\n';
  }
  out.flush();
  if (!out) throw RuntimeFailure("write failed: " + path);
}

LabelMap load_labels(const std::string& path) {
  LabelMap labels;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    try {
      auto id = detail::string_field(obj, "id", line);
      auto g = parse_gender(detail::string_field(obj, "gender", line));
      if (!labels.emplace(id, g).second) throw ValidationError("duplicate label for " + id);
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": line " + std::to_string(line) + ": " + e.what());
    }
  });
  return labels;
}

void save_labels(const LabelMap& labels, const std::string& path) {
  auto out = detail::open_for_write(path);
  for (const auto& [id, g] : labels) {
    out << json{{"id", id}, {"gender", to_string(g)}}.dump() << '\n';
  }
  out.flush();
  if (!out) throw RuntimeFailure("write failed: " + path);
}

TruthMap load_truth(const std::string& path) {
  TruthMap truth;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    try {
      auto text_id = detail::string_field(obj, "text_id", line);
      auto image_id = detail::string_field(obj, "image_id", line);
      if (!truth.emplace(text_id, image_id).second) {
        throw ValidationError("duplicate truth entry for " + text_id);
      }
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": line " + std::to_string(line) + ": " + e.what());
    }
  });
  return truth;
}

void save_truth(const TruthMap& truth, const std::string& path) {
  auto out = detail::open_for_write(path);
  for (const auto& [text_id, image_id] : truth) {
    out << json{{"text_id", text_id}, {"image_id", image_id}}.dump() << '\n';
  }
  out.flush();
  if (!out) throw RuntimeFailure("write failed: " + path);
}

namespace {

std::string padded_id(const char* prefix, std::size_t i, std::size_t n) {
  const auto width = std::to_string(n > 0 ? n - 1 : 0).size();
  auto digits = std::to_string(i);
  return prefix + std::string(width - digits.size(), '0') + digits;
}

}  // namespace

Dataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.n_images < 2) throw ValidationError("synth needs n_images >= 2");
  if (cfg.dim == 0) throw ValidationError("synth needs dim >= 1");
  if (!(cfg.skew >= 0.0 && cfg.skew <= 1.0)) throw ValidationError("skew must lie in [0, 1]");
  if (!(cfg.p_neutral >= 0.0 && cfg.p_neutral <= 1.0)) {
    throw ValidationError("p_neutral must lie in [0, 1]");
  }
  if (!(cfg.text_noise >= 0.0) || !std::isfinite(cfg.mu) || !std::isfinite(cfg.query_lean)) {
    throw ValidationError("text_noise must be >= 0 and mu, query_lean finite");
  }
  std::vector<bool> is_bias(cfg.dim, false);
  for (auto d : cfg.bias_dims) {
    if (d >= cfg.dim) throw ValidationError("bias dim " + std::to_string(d) + " out of range");
    is_bias[d] = true;
  }
  const std::size_t n_texts = cfg.n_texts == 0 ? cfg.n_images : cfg.n_texts;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset ds;
  ds.images = EmbeddingTable(cfg.dim);
  ds.texts = EmbeddingTable(cfg.dim);
  std::vector<double> image_data(cfg.n_images * cfg.dim);
  std::vector<double> shifts(cfg.n_images);
  const double p_male = cfg.skew * (1.0 - cfg.p_neutral);
  const double p_gendered = 1.0 - cfg.p_neutral;

  for (std::size_t i = 0; i < cfg.n_images; ++i) {
    const double u = unif(rng);
    const Gender g = u < p_male ? Gender::Male : (u < p_gendered ? Gender::Female : Gender::Neutral);
    shifts[i] = g == Gender::Male ? cfg.mu : (g == Gender::Female ? -cfg.mu : 0.0);
    std::span<double> v(image_data.data() + i * cfg.dim, cfg.dim);
    for (std::size_t d = 0; d < cfg.dim; ++d) {
      v[d] = normal(rng) + (is_bias[d] ? shifts[i] : 0.0);
    }
    auto id = padded_id("img", i, cfg.n_images);
    ds.images.add(id, v);
    ds.labels.emplace(std::move(id), g);
  }

  const double lean = cfg.query_lean * cfg.mu * (2.0 * cfg.skew - 1.0);
  std::vector<double> t(cfg.dim);
  for (std::size_t j = 0; j < n_texts; ++j) {
    const std::size_t i = j % cfg.n_images;
    auto v = ds.images.row(i);
    for (std::size_t d = 0; d < cfg.dim; ++d) {
      t[d] = v[d] + cfg.text_noise * normal(rng);
      if (is_bias[d]) t[d] += lean - shifts[i];
    }
    auto id = padded_id("txt", j, n_texts);
    ds.texts.add(id, t);
    ds.truth.emplace(std::move(id), ds.images.id(i));
  }
  return ds;
}

}  // namespace fairsearch
