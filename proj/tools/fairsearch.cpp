#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fairsearch/clipper.hpp"
#include "fairsearch/core.hpp"
#include "fairsearch/gender_text.hpp"
#include "fairsearch/metrics.hpp"
#include "fairsearch/retrieval.hpp"
#include "fairsearch/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fairsearch;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out_dir = ".";
};

std::string num(double x) { return json(x).dump(); }

std::string fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

std::vector<std::size_t> parse_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ValidationError(std::string("bad ") + what + " entry \"" + item + "\"");
    }
  }
  if (out.empty()) throw ValidationError(std::string("empty ") + what + " list");
  return out;
}

std::vector<double> parse_reals(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(item, &pos);
      if (pos != item.size() || !std::isfinite(v)) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ValidationError(std::string("bad ") + what + " entry \"" + item + "\"");
    }
  }
  if (out.empty()) throw ValidationError(std::string("empty ") + what + " list");
  return out;
}

// A subcommand plus the options whose values are files to digest.
struct Command {
  CLI::App* app = nullptr;
  std::vector<CLI::Option*> inputs;
  std::function<void()> run;
};

void write_manifest(const CLI::App& root, const Command& cmd, const Globals& g) {
  json args = json::object();
  auto collect = [&](const CLI::App& app) {
    for (const auto* opt : app.get_options()) {
      if (opt->count() == 0 || opt->get_name() == "--help") continue;
      const auto& res = opt->results();
      args[opt->get_name()] = res.size() == 1 ? json(res.front()) : json(res);
    }
  };
  collect(root);
  collect(*cmd.app);
  json digests = json::object();
  for (const auto* opt : cmd.inputs) {
    if (opt->count() == 0) continue;
    const auto path = opt->as<std::string>();
    digests[path] = "fnv1a64:" + fnv1a_file(path);
  }
  json manifest{{"command", cmd.app->get_name()},
                {"args", args},
                {"seed", g.seed},
                {"inputs", digests},
                {"version", kVersion}};
  write_text(fs::path(g.out_dir) / (cmd.app->get_name() + ".manifest.json"), manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::string& images, const std::string& texts, const std::string& labels,
                     const std::string& truth) {
  Dataset ds;
  ds.images = load_embeddings(images);
  ds.texts = load_embeddings(texts, ds.images.dim());
  ds.labels = load_labels(labels);
  ds.truth = load_truth(truth);
  ds.validate();
  return ds;
}

GenderLexicon lexicon_from(const std::string& path) {
  auto lex = path.empty() ? default_lexicon() : load_lexicon(path);
  lex.validate();
  return lex;
}

// Optional checkpoint projection followed by an optional clip plan.
struct Transform {
  std::string checkpoint;
  std::string clip_plan;

  void add_options(Command& cmd) {
    cmd.inputs.push_back(cmd.app->add_option("--checkpoint", checkpoint, "Encoder checkpoint to project through"));
    cmd.inputs.push_back(cmd.app->add_option("--clip-plan", clip_plan, "Clip plan to apply before ranking"));
  }

  void apply(EmbeddingTable& images, EmbeddingTable& texts) const {
    if (!checkpoint.empty()) {
      const auto enc = load_checkpoint(checkpoint);
      if (enc.w_img.cols != images.dim()) {
        throw ValidationError("checkpoint expects dim " + std::to_string(enc.w_img.cols) + ", data has " +
                              std::to_string(images.dim()));
      }
      images = encode(images, enc.w_img);
      texts = encode(texts, enc.w_txt);
    }
    if (!clip_plan.empty()) {
      const auto plan = load_clip_plan(clip_plan);
      images = apply_clip(images, plan);
      texts = apply_clip(texts, plan);
    }
  }
};

void setup_label(Command& cmd, const Globals& g) {
  struct Opts {
    std::string captions, lexicon;
  };
  auto o = std::make_shared<Opts>();
  cmd.inputs.push_back(cmd.app->add_option("--captions", o->captions, "Captions JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--lexicon", o->lexicon, "Lexicon JSON (default built-in)"));
  cmd.run = [o, &g] {
    const auto lex = lexicon_from(o->lexicon);
    const auto captions = load_captions(o->captions);
    if (captions.empty()) std::cerr << "warning: " << o->captions << " holds no captions\n";
    save_labels(label_images(captions, lex), (fs::path(g.out_dir) / "labels.jsonl").string());
  };
}

void setup_neutralize(Command& cmd, const Globals& g) {
  struct Opts {
    std::string captions, lexicon;
  };
  auto o = std::make_shared<Opts>();
  cmd.inputs.push_back(cmd.app->add_option("--captions", o->captions, "Captions JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--lexicon", o->lexicon, "Lexicon JSON (default built-in)"));
  cmd.run = [o, &g] {
    const auto lex = lexicon_from(o->lexicon);
    auto captions = load_captions(o->captions);
    for (auto& c : captions) c = neutralize(c, lex);
    save_captions(captions, (fs::path(g.out_dir) / "neutralized.jsonl").string());
  };
}

void setup_retrieve(Command& cmd, const Globals& g) {
  struct Opts {
    std::string images, texts;
    std::size_t k = 10;
    Transform tf;
  };
  auto o = std::make_shared<Opts>();
  cmd.inputs.push_back(cmd.app->add_option("--images", o->images, "Image embeddings JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--texts", o->texts, "Text embeddings JSONL")->required());
  cmd.app->add_option("--k", o->k, "Results per query")->capture_default_str()->check(CLI::PositiveNumber);
  o->tf.add_options(cmd);
  cmd.run = [o, &g] {
    auto images = load_embeddings(o->images);
    auto texts = load_embeddings(o->texts, images.dim());
    o->tf.apply(images, texts);
    const auto results = retrieve_all(texts, images, o->k, g.threads);
    save_results(results, (fs::path(g.out_dir) / "results.jsonl").string());
  };
}

void setup_evaluate(Command& cmd, const Globals& g) {
  struct Opts {
    std::string images, texts, labels, truth, ks = "1,5,10";
    Transform tf;
  };
  auto o = std::make_shared<Opts>();
  cmd.inputs.push_back(cmd.app->add_option("--images", o->images, "Image embeddings JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--texts", o->texts, "Text embeddings JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--labels", o->labels, "Image gender labels JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--truth", o->truth, "Ground-truth pairs JSONL")->required());
  cmd.app->add_option("--k", o->ks, "Comma-separated cutoffs")->capture_default_str();
  o->tf.add_options(cmd);
  cmd.run = [o, &g] {
    auto ks = parse_list(o->ks, "k");
    if (std::count(ks.begin(), ks.end(), 0)) throw ValidationError("k must be positive");
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    auto ds = load_dataset(o->images, o->texts, o->labels, o->truth);
    o->tf.apply(ds.images, ds.texts);
    const std::size_t kmax = ks.back();
    if (kmax > ds.images.size()) {
      throw ValidationError("k = " + std::to_string(kmax) + " exceeds the " + std::to_string(ds.images.size()) +
                            " images");
    }
    const auto results = retrieve_all(ds.texts, ds.images, kmax, g.threads);

    json per_k_json = json::array();
    std::vector<BiasReport> per_k;
    for (auto k : ks) {
      const auto b = bias_at_k(results, ds.labels, k);
      const auto r = recall_at_k(results, ds.truth, k);
      per_k_json.push_back({{"k", k},
                            {"bias_at_k", b.bias_at_k},
                            {"male_share", b.male_share()},
                            {"recall_at_k", r.recall_at_k},
                            {"n_queries", b.n_queries}});
      per_k.push_back(b);
    }
    json report{{"n_queries", results.size()}, {"reports", per_k_json}};
    write_text(fs::path(g.out_dir) / "report.json", report.dump(2) + "\n");

    std::string curve = "k,bias_at_k,recall_at_k\n";
    for (std::size_t k = 1; k <= kmax; ++k) {
      curve += std::to_string(k) + "," + num(bias_at_k(results, ds.labels, k).bias_at_k) + "," +
               num(recall_at_k(results, ds.truth, k).recall_at_k) + "\n";
    }
    write_text(fs::path(g.out_dir) / "curve.csv", curve);

    std::string rows = "text_id";
    for (auto k : ks) rows += ",delta@" + std::to_string(k);
    rows += "\n";
    for (std::size_t q = 0; q < results.size(); ++q) {
      rows += results[q].text_id;
      for (const auto& b : per_k) rows += "," + num(b.per_query[q].second);
      rows += "\n";
    }
    write_text(fs::path(g.out_dir) / "per_query.csv", rows);
  };
}

void setup_clip_fit(Command& cmd, const Globals& g) {
  struct Opts {
    std::string images, labels;
    std::size_t m = 100, bins = 20;
  };
  auto o = std::make_shared<Opts>();
  cmd.inputs.push_back(cmd.app->add_option("--images", o->images, "Image embeddings JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--labels", o->labels, "Image gender labels JSONL")->required());
  cmd.app->add_option("--m", o->m, "Number of dimensions to clip")->capture_default_str();
  cmd.app->add_option("--bins", o->bins, "Histogram bins for the MI estimate")->capture_default_str();
  cmd.run = [o, &g] {
    const auto images = load_embeddings(o->images);
    const auto labels = load_labels(o->labels);
    const auto plan = fit_clip_plan(images, labels, o->m, o->bins, g.threads);
    save_clip_plan(plan, (fs::path(g.out_dir) / "clip_plan.json").string());
  };
}

void setup_clip_apply(Command& cmd, const Globals& g) {
  struct Opts {
    std::string plan, images, texts;
  };
  auto o = std::make_shared<Opts>();
  cmd.inputs.push_back(cmd.app->add_option("--plan", o->plan, "Clip plan JSON")->required());
  cmd.inputs.push_back(cmd.app->add_option("--images", o->images, "Image embeddings JSONL"));
  cmd.inputs.push_back(cmd.app->add_option("--texts", o->texts, "Text embeddings JSONL"));
  cmd.run = [o, &g] {
    if (o->images.empty() && o->texts.empty()) throw ValidationError("give --images and/or --texts");
    const auto plan = load_clip_plan(o->plan);
    if (!o->images.empty()) {
      save_embeddings(apply_clip(load_embeddings(o->images, plan.dim), plan),
                      (fs::path(g.out_dir) / "images.jsonl").string());
    }
    if (!o->texts.empty()) {
      save_embeddings(apply_clip(load_embeddings(o->texts, plan.dim), plan),
                      (fs::path(g.out_dir) / "texts.jsonl").string());
    }
  };
}

// Trainer flags layered over an optional JSON config.
struct TrainOpts {
  std::string images, texts, labels, truth, text_labels, config;
  std::optional<double> gamma, alpha, lr, val_fraction;
  std::optional<std::size_t> epochs, batch_size, emb_dim;
  bool mc_negatives = false;

  void add(Command& cmd) {
    auto* app = cmd.app;
    cmd.inputs.push_back(app->add_option("--images", images, "Image embeddings JSONL")->required());
    cmd.inputs.push_back(app->add_option("--texts", texts, "Text embeddings JSONL")->required());
    cmd.inputs.push_back(app->add_option("--labels", labels, "Image gender labels JSONL")->required());
    cmd.inputs.push_back(app->add_option("--truth", truth, "Ground-truth pairs JSONL")->required());
    cmd.inputs.push_back(app->add_option("--text-labels", text_labels,
                                         "Query genders JSONL; unlisted queries count as neutral"));
    cmd.inputs.push_back(app->add_option("--config", config, "Trainer config JSON"));
    app->add_option("--gamma", gamma, "Hinge margin");
    app->add_option("--alpha", alpha, "Fair sampling weight");
    app->add_option("--lr", lr, "Learning rate");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--batch-size", batch_size, "Mini-batch size");
    app->add_option("--emb-dim", emb_dim, "Projection dim (0 keeps the input dim)");
    app->add_option("--val-fraction", val_fraction, "Held-out share of pairs");
    app->add_flag("--mc-negatives", mc_negatives, "Sample one fair negative instead of averaging");
  }

  Dataset dataset() const {
    auto ds = load_dataset(images, texts, labels, truth);
    if (!text_labels.empty()) ds.text_genders = load_labels(text_labels);
    return ds;
  }

  TrainerConfig config_for(std::uint64_t seed) const {
    TrainerConfig cfg = config.empty() ? TrainerConfig{} : load_trainer_config(config);
    if (gamma) cfg.gamma = *gamma;
    if (alpha) cfg.alpha = *alpha;
    if (lr) cfg.lr = *lr;
    if (val_fraction) cfg.val_fraction = *val_fraction;
    if (epochs) cfg.epochs = *epochs;
    if (batch_size) cfg.batch_size = *batch_size;
    if (emb_dim) cfg.emb_dim = *emb_dim;
    if (mc_negatives) cfg.mc_negatives = true;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

void setup_train(Command& cmd, const Globals& g) {
  auto o = std::make_shared<TrainOpts>();
  o->add(cmd);
  cmd.run = [o, &g] {
    const auto ds = o->dataset();
    const auto cfg = o->config_for(g.seed);
    const auto result = train(ds, cfg);
    save_checkpoint(result.encoders, cfg, (fs::path(g.out_dir) / "checkpoint.json").string());
    save_train_log(result.log, (fs::path(g.out_dir) / "train_log.csv").string());
  };
}

void setup_sweep_alpha(Command& cmd, const Globals& g) {
  struct Opts {
    TrainOpts train;
    std::string alphas = "0,0.2,0.4,0.6,0.8,1";
    std::size_t n_seeds = 3;
  };
  auto o = std::make_shared<Opts>();
  o->train.add(cmd);
  cmd.app->add_option("--alphas", o->alphas, "Comma-separated alpha values")->capture_default_str();
  cmd.app->add_option("--n-seeds", o->n_seeds, "Seeds seed..seed+n-1 averaged per alpha")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd.run = [o, &g] {
    auto alphas = parse_reals(o->alphas, "alpha");
    std::sort(alphas.begin(), alphas.end());
    alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
    const auto ds = o->train.dataset();
    std::string csv = "alpha,recall_at_10,bias_at_10,abs_bias_at_10\n";
    for (double alpha : alphas) {
      double recall = 0.0, bias = 0.0, abs_bias = 0.0;
      for (std::size_t s = 0; s < o->n_seeds; ++s) {
        auto cfg = o->train.config_for(g.seed + s);
        cfg.alpha = alpha;
        cfg.validate();
        const auto result = train(ds, cfg);
        const auto scores = evaluate_pairs(ds, result.encoders, result.split.val_texts);
        recall += scores.recall_at_10;
        bias += scores.bias_at_10;
        abs_bias += std::fabs(scores.bias_at_10);
      }
      const double n = static_cast<double>(o->n_seeds);
      csv += num(alpha) + "," + num(recall / n) + "," + num(bias / n) + "," + num(abs_bias / n) + "\n";
    }
    write_text(fs::path(g.out_dir) / "sweep_alpha.csv", csv);
  };
}

void setup_sweep_m(Command& cmd, const Globals& g) {
  struct Opts {
    std::string images, texts, labels, truth, ms = "0,100,200,300,400";
    std::size_t bins = 20, resamples = 200;
  };
  auto o = std::make_shared<Opts>();
  cmd.inputs.push_back(cmd.app->add_option("--images", o->images, "Image embeddings JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--texts", o->texts, "Text embeddings JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--labels", o->labels, "Image gender labels JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--truth", o->truth, "Ground-truth pairs JSONL")->required());
  cmd.app->add_option("--m", o->ms, "Comma-separated clip counts")->capture_default_str();
  cmd.app->add_option("--bins", o->bins, "Histogram bins for the MI estimate")->capture_default_str();
  cmd.app->add_option("--resamples", o->resamples, "Bootstrap resamples over queries")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd.run = [o, &g] {
    auto ms = parse_list(o->ms, "m");
    std::sort(ms.begin(), ms.end());
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
    const auto ds = load_dataset(o->images, o->texts, o->labels, o->truth);
    if (ms.back() >= ds.images.dim()) {
      throw ValidationError("m = " + std::to_string(ms.back()) + " must be below dim " +
                            std::to_string(ds.images.dim()));
    }
    const auto full = fit_clip_plan(ds.images, ds.labels, ms.back(), o->bins, g.threads);
    std::string csv = "m,recall_at_1,recall_at_5,recall_at_10,bias_at_10,bias_at_10_boot_mean,bias_at_10_boot_sd\n";
    for (auto m : ms) {
      const auto plan = full.truncated(m);
      const auto results =
          retrieve_all(apply_clip(ds.texts, plan), apply_clip(ds.images, plan), 10, g.threads);
      const auto bias = bias_at_k(results, ds.labels, 10);

      std::seed_seq seq{static_cast<std::uint32_t>(g.seed), static_cast<std::uint32_t>(g.seed >> 32),
                        static_cast<std::uint32_t>(m)};
      std::mt19937_64 rng(seq);
      std::uniform_int_distribution<std::size_t> pick(0, bias.per_query.size() - 1);
      std::vector<double> means(o->resamples);
      for (auto& mean : means) {
        double s = 0.0;
        for (std::size_t i = 0; i < bias.per_query.size(); ++i) s += bias.per_query[pick(rng)].second;
        mean = s / static_cast<double>(bias.per_query.size());
      }
      double mu = 0.0;
      for (double x : means) mu += x;
      mu /= static_cast<double>(means.size());
      double var = 0.0;
      for (double x : means) var += (x - mu) * (x - mu);
      const double sd = means.size() > 1 ? std::sqrt(var / static_cast<double>(means.size() - 1)) : 0.0;

      csv += std::to_string(m);
      for (std::size_t k : {1, 5, 10}) csv += "," + num(recall_at_k(results, ds.truth, k).recall_at_k);
      csv += "," + num(bias.bias_at_k) + "," + num(mu) + "," + num(sd) + "\n";
    }
    write_text(fs::path(g.out_dir) / "sweep_m.csv", csv);
  };
}

void setup_occupation(Command& cmd, const Globals& g) {
  struct Opts {
    std::string terms, images, labels, memberships;
    Transform tf;
  };
  auto o = std::make_shared<Opts>();
  cmd.inputs.push_back(cmd.app->add_option("--terms", o->terms, "Occupation term embeddings JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--images", o->images, "Image embeddings JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--labels", o->labels, "Image gender labels JSONL")->required());
  cmd.inputs.push_back(cmd.app->add_option("--memberships", o->memberships,
                                           "Image-to-occupation JSONL restricting each term's images"));
  o->tf.add_options(cmd);
  cmd.run = [o, &g] {
    auto images = load_embeddings(o->images);
    auto terms = load_embeddings(o->terms, images.dim());
    const auto labels = load_labels(o->labels);
    o->tf.apply(images, terms);
    std::optional<MembershipMap> members;
    if (!o->memberships.empty()) members = load_memberships(o->memberships);
    const auto report = occupation_report(terms, images, labels, members ? &*members : nullptr);
    for (const auto& name : report.excluded) {
      std::cerr << "warning: occupation " << name << " lacks male or female images; excluded\n";
    }
    json per = json::object();
    for (const auto& [name, b] : report.per_occupation) per[name] = b;
    json out{{"per_occupation", per}, {"excluded", report.excluded}, {"mean_abs_bias", report.mean_abs_bias}};
    write_text(fs::path(g.out_dir) / "occupation_report.json", out.dump(2) + "\n");
  };
}

void setup_synth(Command& cmd, const Globals& g) {
  struct Opts {
    SynthConfig cfg;
    std::string bias_dims = "0,1,2";
  };
  auto o = std::make_shared<Opts>();
  auto* app = cmd.app;
  app->add_option("--n-images", o->cfg.n_images, "Number of images")->capture_default_str();
  app->add_option("--n-texts", o->cfg.n_texts, "Number of texts (0: one per image)")->capture_default_str();
  app->add_option("--dim", o->cfg.dim, "Embedding dim")->capture_default_str();
  app->add_option("--bias-dims", o->bias_dims, "Comma-separated planted dims")->capture_default_str();
  app->add_option("--skew", o->cfg.skew, "Male share among gendered images")->capture_default_str();
  app->add_option("--p-neutral", o->cfg.p_neutral, "Share of neutral images")->capture_default_str();
  app->add_option("--mu", o->cfg.mu, "Gender shift on bias dims")->capture_default_str();
  app->add_option("--text-noise", o->cfg.text_noise, "Text noise sd")->capture_default_str();
  app->add_option("--query-lean", o->cfg.query_lean, "Query lean factor on bias dims")->capture_default_str();
  cmd.run = [o, &g] {
    auto cfg = o->cfg;
    cfg.seed = g.seed;
    cfg.bias_dims = o->bias_dims.empty() ? std::vector<std::size_t>{} : parse_list(o->bias_dims, "bias dim");
    const auto ds = synth_dataset(cfg);
    const fs::path dir(g.out_dir);
    save_embeddings(ds.images, (dir / "images.jsonl").string());
    save_embeddings(ds.texts, (dir / "texts.jsonl").string());
    save_labels(ds.labels, (dir / "labels.jsonl").string());
    save_truth(ds.truth, (dir / "truth.jsonl").string());
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gender-bias evaluation and mitigation for text-to-image search"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();

  const std::vector<std::tuple<const char*, const char*, void (*)(Command&, const Globals&)>> specs = {
      {"label", "Derive image gender labels from captions", setup_label},
      {"neutralize", "Rewrite captions into gender-neutral queries", setup_neutralize},
      {"retrieve", "Top-K image retrieval for every text", setup_retrieve},
      {"evaluate", "Bias@K and Recall@K report", setup_evaluate},
      {"clip-fit", "Select the m dimensions most informative of gender", setup_clip_fit},
      {"clip-apply", "Drop clipped dimensions from embeddings", setup_clip_apply},
      {"train", "Train linear encoders with fair sampling", setup_train},
      {"sweep-alpha", "Recall and bias across fair sampling weights", setup_sweep_alpha},
      {"sweep-m", "Recall and bias across clip counts", setup_sweep_m},
      {"occupation-bias", "Occupation similarity bias report", setup_occupation},
      {"synth", "Write a synthetic benchmark", setup_synth},
  };
  std::vector<Command> commands(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& [name, help, setup] = specs[i];
    commands[i].app = app.add_subcommand(name, help);
    setup(commands[i], g);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    fs::create_directories(g.out_dir);
    for (auto& cmd : commands) {
      if (!cmd.app->parsed()) continue;
      cmd.run();
      write_manifest(app, cmd, g);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
