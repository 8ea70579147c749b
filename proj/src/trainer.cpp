#include "fairsearch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "fairsearch/metrics.hpp"
#include "fairsearch/retrieval.hpp"
#include "jsonl.hpp"

namespace fairsearch {

using detail::json;

void TrainerConfig::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ValidationError("gamma must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be >= 0");
  if (batch_size < 4) throw ValidationError("batch_size must be >= 4");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must lie in (0, 1)");
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

enum Stream : std::uint64_t { kInit = 1, kShuffle = 2, kNegatives = 3, kSplit = 4 };

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Matrix m(rows, cols);
  for (auto& x : m.data) x = normal(rng);
  return m;
}

// Projects each row of `in` through w and returns the projections.
Matrix project(const Matrix& in, const Matrix& w) {
  Matrix out(in.rows, w.rows);
  for (std::size_t r = 0; r < in.rows; ++r) {
    auto x = in.row(r);
    for (std::size_t e = 0; e < w.rows; ++e) out(r, e) = dot(w.row(e), x);
  }
  return out;
}

// Unit-normalizes rows in place and returns their original norms.
std::vector<double> normalize_rows(Matrix& m) {
  std::vector<double> norms(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    norms[r] = norm(m.row(r));
    if (!(norms[r] > 0.0) || !std::isfinite(norms[r])) {
      throw RuntimeFailure("encoder produced a zero or non-finite embedding");
    }
    for (auto& x : m.row(r)) x /= norms[r];
  }
  return norms;
}

struct Embedded {
  Matrix img_hat;
  Matrix txt_hat;
  std::vector<double> img_norm;
  std::vector<double> txt_norm;
  Matrix sim;
};

Embedded embed(const TripletBatch& batch, const LinearEncoders& enc) {
  if (enc.w_img.cols != batch.d_in || enc.w_txt.cols != batch.d_in || enc.w_img.rows != enc.w_txt.rows) {
    throw ValidationError("encoder shape does not match batch input dim");
  }
  Embedded e;
  e.img_hat = project(batch.images, enc.w_img);
  e.txt_hat = project(batch.texts, enc.w_txt);
  e.img_norm = normalize_rows(e.img_hat);
  e.txt_norm = normalize_rows(e.txt_hat);
  const std::size_t n = batch.size();
  e.sim = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) e.sim(i, j) = dot(e.img_hat.row(i), e.txt_hat.row(j));
  }
  return e;
}

// Chain rule from dL/dsim back to both weight matrices.
void backprop(const TripletBatch& batch, const Embedded& e, const Matrix& dsim, EncoderGrad& grad) {
  const std::size_t n = batch.size();
  const std::size_t emb = e.img_hat.cols;
  grad.d_img = Matrix(emb, batch.d_in);
  grad.d_txt = Matrix(emb, batch.d_in);
  std::vector<double> g(emb);

  auto accumulate = [&](const Matrix& self_hat, const std::vector<double>& self_norm, const Matrix& other_hat,
                        bool rows_are_images, const Matrix& inputs, Matrix& dw) {
    for (std::size_t a = 0; a < n; ++a) {
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        const double coef = rows_are_images ? dsim(a, b) : dsim(b, a);
        if (coef == 0.0) continue;
        auto o = other_hat.row(b);
        for (std::size_t k = 0; k < emb; ++k) g[k] += coef * o[k];
      }
      // d/dx of x/|x| applied to g: (g - xhat (xhat . g)) / |x|
      auto xh = self_hat.row(a);
      const double proj = dot(xh, g);
      auto in = inputs.row(a);
      for (std::size_t k = 0; k < emb; ++k) {
        const double gk = (g[k] - xh[k] * proj) / self_norm[a];
        if (gk == 0.0) continue;
        auto wrow = dw.row(k);
        for (std::size_t d = 0; d < batch.d_in; ++d) wrow[d] += gk * in[d];
      }
    }
  };
  accumulate(e.img_hat, e.img_norm, e.txt_hat, true, batch.images, grad.d_img);
  accumulate(e.txt_hat, e.txt_norm, e.img_hat, false, batch.texts, grad.d_txt);
}

void require_pairs(const BatchLayout& layout, const Matrix& sim) {
  if (layout.size() < 2) throw ValidationError("triplet loss needs a batch of at least 2 pairs");
  if (sim.rows != layout.size() || sim.cols != layout.size()) {
    throw ValidationError("similarity matrix does not match batch size");
  }
}

// Hardest image negative for text n: argmax_i sim(i, n) over other images.
std::optional<std::size_t> hardest_image(const Matrix& sim, const BatchLayout& layout, std::size_t n) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout.image_group[i] == layout.image_group[n]) continue;
    if (!best || sim(i, n) > sim(*best, n)) best = i;
  }
  return best;
}

// Standard hardest-negative term for text n.
double standard_ti_term(const Matrix& sim, const BatchLayout& layout, std::size_t n, double gamma,
                        double weight, Matrix* dsim) {
  auto neg = hardest_image(sim, layout, n);
  if (!neg) return 0.0;
  const double h = gamma - sim(n, n) + sim(*neg, n);
  if (h <= 0.0) return 0.0;
  if (dsim) {
    (*dsim)(n, n) -= weight;
    (*dsim)(*neg, n) += weight;
  }
  return h;
}

}  // namespace

LinearEncoders LinearEncoders::random(std::size_t d_in, std::size_t emb_dim, std::uint64_t seed) {
  if (d_in == 0 || emb_dim == 0) throw ValidationError("encoder dims must be positive");
  auto rng = stream(seed, kInit);
  LinearEncoders enc;
  enc.w_img = random_matrix(emb_dim, d_in, rng);
  enc.w_txt = random_matrix(emb_dim, d_in, rng);
  return enc;
}

TripletBatch make_batch(const EmbeddingTable& images, const EmbeddingTable& texts,
                        std::span<const PairRef> pairs) {
  if (images.dim() != texts.dim()) throw ValidationError("make_batch: image and text dims differ");
  const std::size_t n = pairs.size();
  TripletBatch b;
  b.d_in = images.dim();
  b.images = Matrix(n, b.d_in);
  b.texts = Matrix(n, b.d_in);
  for (std::size_t p = 0; p < n; ++p) {
    std::ranges::copy(images.row(pairs[p].image_row), b.images.row(p).begin());
    std::ranges::copy(texts.row(pairs[p].text_row), b.texts.row(p).begin());
    b.layout.image_group.push_back(pairs[p].image_row);
    b.layout.image_gender.push_back(pairs[p].image_gender);
    b.layout.neutral_query.push_back(pairs[p].neutral_query);
  }
  return b;
}

Matrix similarity_matrix(const TripletBatch& batch, const LinearEncoders& enc) {
  return embed(batch, enc).sim;
}

double hinge_it(const Matrix& sim, const BatchLayout& layout, double gamma, double weight, Matrix* dsim) {
  require_pairs(layout, sim);
  double loss = 0.0;
  for (std::size_t n = 0; n < layout.size(); ++n) {
    std::optional<std::size_t> neg;
    for (std::size_t j = 0; j < layout.size(); ++j) {
      if (layout.image_group[j] == layout.image_group[n]) continue;
      if (!neg || sim(n, j) > sim(n, *neg)) neg = j;
    }
    if (!neg) continue;
    const double h = gamma - sim(n, n) + sim(n, *neg);
    if (h <= 0.0) continue;
    loss += h;
    if (dsim) {
      (*dsim)(n, n) -= weight;
      (*dsim)(n, *neg) += weight;
    }
  }
  return loss;
}

double hinge_ti(const Matrix& sim, const BatchLayout& layout, double gamma, double weight, Matrix* dsim) {
  require_pairs(layout, sim);
  double loss = 0.0;
  for (std::size_t n = 0; n < layout.size(); ++n) loss += standard_ti_term(sim, layout, n, gamma, weight, dsim);
  return loss;
}

double hinge_fair_ti(const Matrix& sim, const BatchLayout& layout, double gamma, std::mt19937_64* mc_rng,
                     double weight, Matrix* dsim) {
  require_pairs(layout, sim);
  double loss = 0.0;
  std::vector<std::size_t> male;
  std::vector<std::size_t> female;
  for (std::size_t n = 0; n < layout.size(); ++n) {
    male.clear();
    female.clear();
    if (layout.neutral_query[n]) {
      for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout.image_group[i] == layout.image_group[n]) continue;
        if (layout.image_gender[i] == Gender::Male) male.push_back(i);
        if (layout.image_gender[i] == Gender::Female) female.push_back(i);
      }
    }
    if (male.empty() || female.empty()) {
      loss += standard_ti_term(sim, layout, n, gamma, weight, dsim);
      continue;
    }
    const double pos = sim(n, n);
    if (mc_rng) {
      const auto& part = std::bernoulli_distribution(0.5)(*mc_rng) ? male : female;
      const auto i = part[std::uniform_int_distribution<std::size_t>(0, part.size() - 1)(*mc_rng)];
      const double h = gamma - pos + sim(i, n);
      if (h > 0.0) {
        loss += h;
        if (dsim) {
          (*dsim)(n, n) -= weight;
          (*dsim)(i, n) += weight;
        }
      }
      continue;
    }
    double term = 0.0;
    for (const auto* part : {&male, &female}) {
      const double share = 0.5 / static_cast<double>(part->size());
      double sum = 0.0;
      for (auto i : *part) {
        const double h = gamma - pos + sim(i, n);
        if (h <= 0.0) continue;
        sum += h;
        if (dsim) {
          (*dsim)(n, n) -= weight * share;
          (*dsim)(i, n) += weight * share;
        }
      }
      term += 0.5 * (sum / static_cast<double>(part->size()));
    }
    loss += term;
  }
  return loss;
}

double triplet_loss_it(const TripletBatch& batch, const LinearEncoders& enc, double gamma) {
  return hinge_it(similarity_matrix(batch, enc), batch.layout, gamma);
}

double triplet_loss_ti(const TripletBatch& batch, const LinearEncoders& enc, double gamma) {
  return hinge_ti(similarity_matrix(batch, enc), batch.layout, gamma);
}

double fair_loss_ti(const TripletBatch& batch, const LinearEncoders& enc, double gamma, std::mt19937_64* mc_rng) {
  return hinge_fair_ti(similarity_matrix(batch, enc), batch.layout, gamma, mc_rng);
}

double standard_loss(const TripletBatch& batch, const LinearEncoders& enc, double gamma) {
  const auto sim = similarity_matrix(batch, enc);
  return hinge_it(sim, batch.layout, gamma) + hinge_ti(sim, batch.layout, gamma);
}

double total_loss(const TripletBatch& batch, const LinearEncoders& enc, const TrainerConfig& cfg,
                  std::mt19937_64* mc_rng, EncoderGrad* grad) {
  const auto e = embed(batch, enc);
  Matrix dsim;
  Matrix* ds = nullptr;
  if (grad) {
    dsim = Matrix(batch.size(), batch.size());
    ds = &dsim;
  }
  const double it = hinge_it(e.sim, batch.layout, cfg.gamma, 1.0, ds);
  const double ti = hinge_ti(e.sim, batch.layout, cfg.gamma, 1.0 - cfg.alpha, ds);
  double fair = 0.0;
  if (cfg.alpha != 0.0) {
    fair = hinge_fair_ti(e.sim, batch.layout, cfg.gamma, cfg.mc_negatives ? mc_rng : nullptr, cfg.alpha, ds);
  }
  const double loss = it + (cfg.alpha * fair + (1.0 - cfg.alpha) * ti);
  if (grad) backprop(batch, e, dsim, *grad);
  return loss;
}

EmbeddingTable encode(const EmbeddingTable& table, const Matrix& w) {
  if (w.cols != table.dim()) throw ValidationError("encoder input dim does not match table dim");
  EmbeddingTable out(w.rows);
  std::vector<double> buf(w.rows);
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t e = 0; e < w.rows; ++e) buf[e] = dot(w.row(e), table.row(r));
    out.add(table.id(r), buf);
  }
  return out;
}

PairSplit split_pairs(const Dataset& ds, double val_fraction, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(ds.truth.size());
  for (const auto& [text_id, image_id] : ds.truth) ids.push_back(text_id);
  auto rng = stream(seed, kSplit);
  std::shuffle(ids.begin(), ids.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(ids.size())));
  n_val = std::clamp<std::size_t>(n_val, ids.size() > 1 ? 1 : 0, ids.size() > 1 ? ids.size() - 1 : 0);
  PairSplit split;
  split.val_texts.assign(ids.end() - static_cast<std::ptrdiff_t>(n_val), ids.end());
  split.train_texts.assign(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n_val));
  return split;
}

HeldOutScores evaluate_pairs(const Dataset& ds, const LinearEncoders& enc, std::span<const std::string> text_ids) {
  const std::size_t emb = enc.w_img.rows;
  EmbeddingTable texts(emb);
  EmbeddingTable images(emb);
  std::vector<double> buf(emb);
  for (const auto& tid : text_ids) {
    const auto& iid = ds.truth.at(tid);
    auto trow = ds.texts.find(tid);
    if (!trow) throw ValidationError("unknown text " + tid);
    for (std::size_t e = 0; e < emb; ++e) buf[e] = dot(enc.w_txt.row(e), ds.texts.row(*trow));
    texts.add(tid, buf);
    if (!images.find(iid)) {
      auto irow = ds.images.find(iid);
      for (std::size_t e = 0; e < emb; ++e) buf[e] = dot(enc.w_img.row(e), ds.images.row(*irow));
      images.add(iid, buf);
    }
  }
  if (texts.empty()) return {};
  const std::size_t k = std::min<std::size_t>(10, images.size());
  const auto results = retrieve_all(texts, images, k);
  return {recall_at_k(results, ds.truth, k).recall_at_k, bias_at_k(results, ds.labels, k).bias_at_k};
}

TrainResult train(const Dataset& ds, const TrainerConfig& cfg) {
  cfg.validate();
  ds.validate();
  const std::size_t d_in = ds.images.dim();
  const std::size_t emb = cfg.emb_dim == 0 ? d_in : cfg.emb_dim;

  TrainResult result;
  result.encoders = LinearEncoders::random(d_in, emb, cfg.seed);
  result.split = split_pairs(ds, cfg.val_fraction, cfg.seed);
  if (result.split.train_texts.size() < 2) throw ValidationError("need at least 2 training pairs");

  std::vector<PairRef> pairs;
  for (const auto& tid : result.split.train_texts) {
    const auto& iid = ds.truth.at(tid);
    auto tg = ds.text_genders.find(tid);
    pairs.push_back({*ds.images.find(iid), *ds.texts.find(tid), ds.labels.at(iid),
                     tg == ds.text_genders.end() || tg->second == Gender::Neutral});
  }

  auto shuffle_rng = stream(cfg.seed, kShuffle);
  auto negative_rng = stream(cfg.seed, kNegatives);
  auto& enc = result.encoders;
  EncoderGrad grad;
  const auto val = std::span<const std::string>(result.split.val_texts);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), shuffle_rng);
    double epoch_loss = 0.0;
    // A trailing batch of one pair has no negatives and is skipped.
    for (std::size_t start = 0; start + 1 < pairs.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(pairs.size(), start + cfg.batch_size);
      const auto batch = make_batch(ds.images, ds.texts, std::span(pairs).subspan(start, end - start));
      const double loss = total_loss(batch, enc, cfg, &negative_rng, &grad);
      if (!std::isfinite(loss)) {
        throw RuntimeFailure("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite");
      }
      epoch_loss += loss;
      if (cfg.lr == 0.0) continue;
      for (std::size_t i = 0; i < enc.w_img.data.size(); ++i) {
        enc.w_img.data[i] -= cfg.lr * grad.d_img.data[i];
        enc.w_txt.data[i] -= cfg.lr * grad.d_txt.data[i];
      }
    }
    const auto scores = evaluate_pairs(ds, enc, val);
    result.log.push_back({epoch, epoch_loss, scores.recall_at_10, scores.bias_at_10});
  }
  return result;
}

TrainerConfig load_trainer_config(const std::string& path, TrainerConfig cfg) {
  try {
    const auto obj = json::parse(detail::read_file(path));
    if (!obj.is_object()) throw ValidationError(path + ": trainer config must be a JSON object");
    for (const auto& [key, v] : obj.items()) {
      if (key == "gamma") cfg.gamma = v.get<double>();
      else if (key == "alpha") cfg.alpha = v.get<double>();
      else if (key == "lr") cfg.lr = v.get<double>();
      else if (key == "epochs") cfg.epochs = v.get<std::size_t>();
      else if (key == "batch_size") cfg.batch_size = v.get<std::size_t>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "emb_dim") cfg.emb_dim = v.get<std::size_t>();
      else if (key == "mc_negatives") cfg.mc_negatives = v.get<bool>();
      else if (key == "val_fraction") cfg.val_fraction = v.get<double>();
      else throw ValidationError(path + ": unknown trainer config field \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

json config_json(const TrainerConfig& cfg) {
  return {{"gamma", cfg.gamma},         {"alpha", cfg.alpha},
          {"lr", cfg.lr},               {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size}, {"seed", cfg.seed},
          {"emb_dim", cfg.emb_dim},     {"mc_negatives", cfg.mc_negatives},
          {"val_fraction", cfg.val_fraction}};
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  if (!rows.is_array() || rows.empty()) throw ValidationError("checkpoint matrix must be a non-empty array");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto vals = rows[r].get<std::vector<double>>();
    if (vals.size() != m.cols) throw ValidationError("checkpoint matrix rows differ in length");
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (!std::isfinite(vals[c])) throw ValidationError("checkpoint holds a non-finite weight");
      m(r, c) = vals[c];
    }
  }
  return m;
}

}  // namespace

void save_checkpoint(const LinearEncoders& enc, const TrainerConfig& cfg, const std::string& path) {
  json obj{{"w_img", matrix_json(enc.w_img)}, {"w_txt", matrix_json(enc.w_txt)}, {"cfg", config_json(cfg)}};
  detail::write_file(path, obj.dump() + "\n");
}

LinearEncoders load_checkpoint(const std::string& path) {
  try {
    const auto obj = json::parse(detail::read_file(path));
    LinearEncoders enc{matrix_from_json(obj.at("w_img")), matrix_from_json(obj.at("w_txt"))};
    if (enc.w_img.rows != enc.w_txt.rows || enc.w_img.cols != enc.w_txt.cols) {
      throw ValidationError(path + ": w_img and w_txt shapes differ");
    }
    return enc;
  } catch (const json::exception& e) {
    throw ValidationError(path + ": malformed checkpoint: " + e.what());
  }
}

void save_train_log(std::span<const EpochLog> log, const std::string& path) {
  std::string out = "epoch,total_loss,val_recall@10,val_bias@10\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + "," + detail::format_double(e.total_loss) + "," +
           detail::format_double(e.val_recall_at_10) + "," + detail::format_double(e.val_bias_at_10) + "\n";
  }
  detail::write_file(path, out);
}

}  // namespace fairsearch
