#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fairsearch/core.hpp"

namespace fairsearch {

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct TrainerConfig {
  double gamma = 0.2;
  double alpha = 0.4;
  double lr = 0.05;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t emb_dim = 0;  // 0: same as the input dim
  // Draw one negative per neutral query instead of averaging over the
  // male and female partitions.
  bool mc_negatives = false;
  double val_fraction = 0.1;

  void validate() const;
};

/// S(v, c) = cosine(w_img v, w_txt c).
struct LinearEncoders {
  Matrix w_img;  // emb_dim x d_in
  Matrix w_txt;

  static LinearEncoders random(std::size_t d_in, std::size_t emb_dim, std::uint64_t seed);
};

struct EncoderGrad {
  Matrix d_img;
  Matrix d_txt;
};

// Per-pair metadata the losses need. Pair n is (image n, text n).
struct BatchLayout {
  // Pairs with equal group share an image and are never each other's
  // negatives.
  std::vector<std::size_t> image_group;
  std::vector<Gender> image_gender;
  std::vector<bool> neutral_query;

  std::size_t size() const { return image_group.size(); }
};

struct TripletBatch {
  BatchLayout layout;
  std::size_t d_in = 0;
  Matrix images;  // one row per pair
  Matrix texts;

  std::size_t size() const { return layout.size(); }
};

struct PairRef {
  std::size_t image_row = 0;
  std::size_t text_row = 0;
  Gender image_gender = Gender::Neutral;
  bool neutral_query = true;
};

TripletBatch make_batch(const EmbeddingTable& images, const EmbeddingTable& texts,
                        std::span<const PairRef> pairs);

// sim(i, j) = S(image i, text j) for a batch.
Matrix similarity_matrix(const TripletBatch& batch, const LinearEncoders& enc);

// Hinge losses over a precomputed similarity matrix. When dsim is given,
// weight * dLoss/dsim is added to it (subgradient 0 at the hinge kink).
double hinge_it(const Matrix& sim, const BatchLayout& layout, double gamma, double weight = 1.0,
                Matrix* dsim = nullptr);
double hinge_ti(const Matrix& sim, const BatchLayout& layout, double gamma, double weight = 1.0,
                Matrix* dsim = nullptr);
// Neutral queries average the hinge over the male and female partitions
// with weight 1/2 each (or draw one negative when mc_rng is set); other
// queries, or queries missing either partition, use the hardest negative.
double hinge_fair_ti(const Matrix& sim, const BatchLayout& layout, double gamma,
                     std::mt19937_64* mc_rng = nullptr, double weight = 1.0, Matrix* dsim = nullptr);

double triplet_loss_it(const TripletBatch& batch, const LinearEncoders& enc, double gamma);
double triplet_loss_ti(const TripletBatch& batch, const LinearEncoders& enc, double gamma);
double fair_loss_ti(const TripletBatch& batch, const LinearEncoders& enc, double gamma,
                    std::mt19937_64* mc_rng = nullptr);

// L_it + alpha * L_fair_ti + (1 - alpha) * L_ti. The fair term is skipped
// entirely at alpha == 0. mc_rng is only consumed when cfg.mc_negatives.
double total_loss(const TripletBatch& batch, const LinearEncoders& enc, const TrainerConfig& cfg,
                  std::mt19937_64* mc_rng = nullptr, EncoderGrad* grad = nullptr);

// L_it + L_ti, the objective without fair sampling.
double standard_loss(const TripletBatch& batch, const LinearEncoders& enc, double gamma);

// Projects every row through w; rows mapping to the zero vector throw.
EmbeddingTable encode(const EmbeddingTable& table, const Matrix& w);

struct EpochLog {
  std::size_t epoch = 0;
  double total_loss = 0.0;
  double val_recall_at_10 = 0.0;
  double val_bias_at_10 = 0.0;
};

struct PairSplit {
  std::vector<std::string> train_texts;
  std::vector<std::string> val_texts;
};

// Seeded shuffle of the truth pairs into train and validation sets.
PairSplit split_pairs(const Dataset& ds, double val_fraction, std::uint64_t seed);

struct TrainResult {
  LinearEncoders encoders;
  std::vector<EpochLog> log;
  PairSplit split;
};

struct HeldOutScores {
  double recall_at_10 = 0.0;
  double bias_at_10 = 0.0;
};

// Retrieves each listed text against the images paired with those texts.
HeldOutScores evaluate_pairs(const Dataset& ds, const LinearEncoders& enc,
                             std::span<const std::string> text_ids);

/// Mini-batch SGD on total_loss with analytic gradients.
///
/// Deterministic for a fixed cfg.seed: initialization, the train/val split,
/// per-epoch shuffling and Monte-Carlo negatives draw from separate seeded
/// streams. Throws RuntimeFailure if the loss or an embedding stops being
/// finite.
TrainResult train(const Dataset& ds, const TrainerConfig& cfg);

TrainerConfig load_trainer_config(const std::string& path, TrainerConfig base = {});
void save_checkpoint(const LinearEncoders& enc, const TrainerConfig& cfg, const std::string& path);
LinearEncoders load_checkpoint(const std::string& path);
void save_train_log(std::span<const EpochLog> log, const std::string& path);

}  // namespace fairsearch
