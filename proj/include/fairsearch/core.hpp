#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fairsearch {

// Bad input data or arguments. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// I/O failures and numerical breakdowns (exit code 3).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Gender { Male, Female, Neutral };

std::string_view to_string(Gender g);
// Accepts exactly "male", "female" or "neutral".
Gender parse_gender(std::string_view s);

/// Id-indexed matrix of equal-length, finite, nonzero vectors.
///
/// Rows keep insertion order, which is the file order when loaded. The
/// table is append-only; once built it can be shared read-only across
/// threads.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim);

  // Validates and appends. Throws ValidationError on a dimension
  // mismatch, duplicate id, non-finite component or all-zero vector.
  void add(std::string id, std::span<const double> vec);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  const std::string& id(std::size_t row) const { return ids_[row]; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * dim_, dim_};
  }
  std::optional<std::size_t> find(std::string_view id) const;

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.data_ == b.data_;
  }

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<double> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

using LabelMap = std::map<std::string, Gender, std::less<>>;
// text id -> image id
using TruthMap = std::map<std::string, std::string, std::less<>>;

struct Dataset {
  EmbeddingTable images{1};
  EmbeddingTable texts{1};
  LabelMap labels;
  TruthMap truth;
  // Optional per-text query gender (from caption word lists). A text
  // absent from this map is treated as a gender-neutral query.
  LabelMap text_genders;

  // Checks the cross-table invariants: equal dims, every image labeled,
  // every truth entry pointing at existing text and image ids.
  void validate() const;
};

// Embedding JSONL. The first line is a header {"dim": d}; each further line
// is {"id": "...", "vector": [...]}. A file without a header infers dim from
// the first record. Errors name the offending line number and id.
EmbeddingTable load_embeddings(const std::string& path,
                               std::optional<std::size_t> expected_dim = {});
void save_embeddings(const EmbeddingTable& table, const std::string& path);

LabelMap load_labels(const std::string& path);
void save_labels(const LabelMap& labels, const std::string& path);

TruthMap load_truth(const std::string& path);
void save_truth(const TruthMap& truth, const std::string& path);

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_images = 1000;
  std::size_t n_texts = 0;  // 0 means one text per image
  std::size_t dim = 64;
  std::vector<std::size_t> bias_dims;
  double skew = 0.5;
  double p_neutral = 0.2;
  double mu = 1.0;
  double text_noise = 0.1;
  // Neutral queries sit at query_lean * mu * (2 * skew - 1) on every bias
  // dimension, i.e. an encoder that absorbed the label imbalance. At
  // skew = 0.5 queries carry no gender signal at all.
  double query_lean = 5.0;
};

/// Seeded synthetic benchmark with gender signal planted in `bias_dims`.
///
/// Image components are standard normal; on every bias dimension Male
/// images are shifted by +mu and Female by -mu. Text j is a noisy copy of
/// image j mod n_images (noise sd `text_noise`) whose bias dimensions have
/// the gender shift replaced by the query lean.
Dataset synth_dataset(const SynthConfig& cfg);

}  // namespace fairsearch
