#pragma once

// Run configuration and the artifact-producing stages behind the command line:
// prepare, tokenize, train, evaluate, recommend and ablate.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddsr/approximator.hpp"
#include "ddsr/corpus.hpp"
#include "ddsr/diffusion.hpp"
#include "ddsr/embedding.hpp"
#include "ddsr/evaluator.hpp"
#include "ddsr/inferencer.hpp"
#include "ddsr/log.hpp"
#include "ddsr/rqvae.hpp"
#include "ddsr/tokenizer.hpp"
#include "ddsr/trainer.hpp"

namespace ddsr {

namespace fs = std::filesystem;
using nlohmann::json;

/// Every recognised key with its default. Unknown keys in user documents are rejected.
inline json default_config() {
  return json::parse(R"({
    "seed": 42,
    "data": {
      "interactions": "",
      "texts": "",
      "embeddings": "",
      "output_dir": "ddsr-run",
      "min_count": 5,
      "bucket_threshold": 5,
      "synthetic": {
        "enabled": false,
        "num_items": 1000,
        "num_users": 2000,
        "clusters": 20,
        "markov_sharpness": 0.9,
        "embedding_dim": 32,
        "cluster_spread": 1.0,
        "jitter": 0.15,
        "popularity_skew": 1.5,
        "min_length": 6,
        "max_length": 12
      }
    },
    "tokenizer": {
      "method": "pq",
      "m": 4,
      "K": 64,
      "kmeans_iters": 25,
      "rqvae_beta": 0.25,
      "rqvae_hidden": [512, 256, 128],
      "rqvae_latent": 32,
      "rqvae_epochs": 50,
      "rqvae_lr": 0.001,
      "rqvae_batch": 64
    },
    "diffusion": {
      "T": 100,
      "transition": "uniform",
      "cosine_offset": 0.008,
      "sigma_start": 0.0001,
      "sigma_end": 0.02,
      "shared_matrix": true
    },
    "model": {
      "d": 64,
      "layers": 2,
      "heads": 4,
      "ff": 128,
      "dropout": 0.2,
      "max_items": 20
    },
    "train": {
      "batch_size": 32,
      "lr": 0.001,
      "max_epochs": 30,
      "patience": 10,
      "refresh_period": 1,
      "valid_users": 500,
      "clip_norm": 5.0,
      "distances": "learned"
    },
    "infer": {
      "skip_divisor": 20,
      "ranking": "logprob",
      "alignment": "anchored",
      "start_step": 0,
      "batch_size": 256
    }
  })");
}

inline void merge_config(json& base, const json& patch, const std::string& prefix = "") {
  if (!patch.is_object()) throw ConfigError("configuration " + (prefix.empty() ? "document" : prefix) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown configuration key '" + path + "'");
    if (base[key].is_object()) {
      merge_config(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

/// Applies `a.b.c=value`. The value is read as JSON when it parses, else as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &cfg;
  std::string walked;
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    walked += (walked.empty() ? "" : ".") + key;
    if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown configuration key '" + walked + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (node->is_object()) throw ConfigError("'" + path + "' is a section; override one of its keys");
  *node = value;
}

inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunConfig {
  json raw;
  std::uint64_t seed = 42;
  std::string interactions, texts, embeddings, output_dir;
  int min_count = 5;
  std::int64_t bucket_threshold = 5;
  bool synthetic = false;
  SyntheticConfig synthetic_cfg;
  TokenizerConfig tokenizer;
  DiffusionConfig diffusion;
  ApproximatorConfig model;
  TrainConfig train;
  InferenceConfig infer;

  /// Hash of the configuration without the output directory.
  std::string fingerprint() const {
    json j = raw;
    j["data"].erase("output_dir");
    return hex64(fnv1a(j.dump()));
  }
};

namespace detail {

template <class T>
T config_value(const json& root, const std::string& section, const std::string& key) {
  const json* node = &root;
  std::string path;
  std::size_t pos = 0;
  const std::string full = section.empty() ? key : section + "." + key;
  while (true) {
    const auto dot = full.find('.', pos);
    node = &node->at(full.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos));
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("configuration key '" + full + "' has the wrong type (" + node->dump() + ")");
  }
}

}  // namespace detail

/// Builds the typed configuration and validates it before any work starts.
inline RunConfig parse_run_config(const json& user, const char* seed_env = std::getenv("DDSR_SEED")) {
  json merged = default_config();
  merge_config(merged, user);
  if (seed_env && *seed_env) {
    try {
      std::size_t used = 0;
      const unsigned long long s = std::stoull(seed_env, &used);
      if (used != std::string(seed_env).size()) throw std::invalid_argument("trailing characters");
      merged["seed"] = s;
    } catch (const std::exception&) {
      throw ConfigError(std::string("DDSR_SEED must be a non-negative integer, got '") + seed_env + "'");
    }
  }
  using detail::config_value;
  RunConfig c;
  c.raw = merged;
  c.seed = config_value<std::uint64_t>(merged, "", "seed");
  c.interactions = config_value<std::string>(merged, "data", "interactions");
  c.texts = config_value<std::string>(merged, "data", "texts");
  c.embeddings = config_value<std::string>(merged, "data", "embeddings");
  c.output_dir = config_value<std::string>(merged, "data", "output_dir");
  c.min_count = config_value<int>(merged, "data", "min_count");
  c.bucket_threshold = config_value<std::int64_t>(merged, "data", "bucket_threshold");

  const std::string syn = "data.synthetic";
  c.synthetic = config_value<bool>(merged, syn, "enabled");
  c.synthetic_cfg.num_items = config_value<int>(merged, syn, "num_items");
  c.synthetic_cfg.num_users = config_value<int>(merged, syn, "num_users");
  c.synthetic_cfg.clusters = config_value<int>(merged, syn, "clusters");
  c.synthetic_cfg.markov_sharpness = config_value<double>(merged, syn, "markov_sharpness");
  c.synthetic_cfg.embedding_dim = config_value<int>(merged, syn, "embedding_dim");
  c.synthetic_cfg.cluster_spread = config_value<double>(merged, syn, "cluster_spread");
  c.synthetic_cfg.jitter = config_value<double>(merged, syn, "jitter");
  c.synthetic_cfg.popularity_skew = config_value<double>(merged, syn, "popularity_skew");
  c.synthetic_cfg.min_length = config_value<int>(merged, syn, "min_length");
  c.synthetic_cfg.max_length = config_value<int>(merged, syn, "max_length");
  c.synthetic_cfg.seed = c.seed;

  c.tokenizer.method = parse_tokenizer_method(config_value<std::string>(merged, "tokenizer", "method"));
  c.tokenizer.m = config_value<int>(merged, "tokenizer", "m");
  c.tokenizer.K = config_value<int>(merged, "tokenizer", "K");
  c.tokenizer.kmeans_iters = config_value<int>(merged, "tokenizer", "kmeans_iters");
  c.tokenizer.rqvae_beta = config_value<double>(merged, "tokenizer", "rqvae_beta");
  c.tokenizer.rqvae_hidden = config_value<std::vector<int>>(merged, "tokenizer", "rqvae_hidden");
  c.tokenizer.rqvae_latent = config_value<int>(merged, "tokenizer", "rqvae_latent");
  c.tokenizer.rqvae_epochs = config_value<int>(merged, "tokenizer", "rqvae_epochs");
  c.tokenizer.rqvae_lr = config_value<double>(merged, "tokenizer", "rqvae_lr");
  c.tokenizer.rqvae_batch = config_value<int>(merged, "tokenizer", "rqvae_batch");
  c.tokenizer.seed = derive_seed(c.seed, 1);

  c.diffusion.T = config_value<int>(merged, "diffusion", "T");
  const std::string transition = config_value<std::string>(merged, "diffusion", "transition");
  if (transition == "uniform") {
    c.diffusion.transition = TransitionKind::uniform;
  } else if (transition == "importance") {
    c.diffusion.transition = TransitionKind::importance;
  } else {
    throw ConfigError("diffusion.transition must be uniform or importance, got '" + transition + "'");
  }
  c.diffusion.cosine_offset = config_value<double>(merged, "diffusion", "cosine_offset");
  c.diffusion.sigma_start = config_value<double>(merged, "diffusion", "sigma_start");
  c.diffusion.sigma_end = config_value<double>(merged, "diffusion", "sigma_end");
  c.diffusion.shared_matrix = config_value<bool>(merged, "diffusion", "shared_matrix");
  c.diffusion.K = c.tokenizer.K;

  c.model.d = config_value<int>(merged, "model", "d");
  c.model.layers = config_value<int>(merged, "model", "layers");
  c.model.heads = config_value<int>(merged, "model", "heads");
  c.model.ff = config_value<int>(merged, "model", "ff");
  c.model.dropout = config_value<double>(merged, "model", "dropout");
  c.model.max_items = config_value<int>(merged, "model", "max_items");
  c.model.m = c.tokenizer.m;
  c.model.K = c.tokenizer.K;
  c.model.seed = derive_seed(c.seed, 2);

  c.train.batch_size = config_value<int>(merged, "train", "batch_size");
  c.train.lr = config_value<double>(merged, "train", "lr");
  c.train.max_epochs = config_value<int>(merged, "train", "max_epochs");
  c.train.patience = config_value<int>(merged, "train", "patience");
  c.train.refresh_period = config_value<int>(merged, "train", "refresh_period");
  c.train.valid_users = config_value<int>(merged, "train", "valid_users");
  c.train.clip_norm = config_value<double>(merged, "train", "clip_norm");
  c.train.distances = parse_distance_source(config_value<std::string>(merged, "train", "distances"));
  c.train.seed = derive_seed(c.seed, 3);

  c.infer.skip_divisor = config_value<int>(merged, "infer", "skip_divisor");
  c.infer.ranking = parse_ranking_mode(config_value<std::string>(merged, "infer", "ranking"));
  c.infer.alignment = parse_alignment(config_value<std::string>(merged, "infer", "alignment"));
  c.infer.start_step = config_value<int>(merged, "infer", "start_step");
  c.infer.batch_size = config_value<int>(merged, "infer", "batch_size");
  c.infer.seed = derive_seed(c.seed, 4);

  // Validation: every check that needs no data happens here.
  DDSR_REQUIRE(!c.output_dir.empty(), ConfigError, "data.output_dir must be set");
  DDSR_REQUIRE(c.min_count >= 1, ConfigError, "data.min_count must be >= 1");
  DDSR_REQUIRE(c.bucket_threshold >= 1, ConfigError, "data.bucket_threshold must be >= 1");
  c.tokenizer.validate();
  DDSR_REQUIRE(c.tokenizer.method != TokenizerMethod::pq || c.tokenizer.kmeans_iters >= 1, ConfigError,
               "tokenizer.kmeans_iters must be >= 1 for pq");
  DDSR_REQUIRE(c.diffusion.T >= 0, ConfigError, "diffusion.T must be >= 0 (0 disables diffusion)");
  if (c.diffusion.T > 0) {
    DDSR_REQUIRE(c.tokenizer.K >= 2, ConfigError, "diffusion needs tokenizer.K >= 2");
    build_schedule(c.diffusion);
    if (c.diffusion.transition == TransitionKind::importance && c.train.distances == DistanceSource::centroid)
      DDSR_REQUIRE(c.tokenizer.method != TokenizerMethod::random, ConfigError,
                   "train.distances=centroid needs a tokenizer with centroids (pq or rqvae)");
  }
  c.model.validate();
  c.train.validate();
  c.infer.validate(c.diffusion.T);
  return c;
}

/// Reads a JSON config file (or starts from defaults when `path` is empty), then applies overrides.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                                 const char* seed_env = std::getenv("DDSR_SEED")) {
  json user = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DependencyError("config file not found: " + path);
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
  }
  json merged = default_config();
  merge_config(merged, user);
  for (const auto& o : overrides) apply_override(merged, o);
  return parse_run_config(merged, seed_env);
}

inline TransitionModel make_transition(const DiffusionConfig& cfg) {
  if (cfg.T == 0) return no_diffusion(cfg.K);
  if (cfg.transition == TransitionKind::uniform) return make_uniform_transition(cfg);
  // Importance caches are filled from code embeddings before first use.
  const std::vector<Eigen::MatrixXd> flat{Eigen::MatrixXd::Zero(cfg.K, cfg.K)};
  return TransitionModel::importance(build_sigma_schedule(cfg), flat);
}

struct TokenizeSummary {
  std::size_t items = 0;
  std::size_t distinct_ids = 0;
  std::size_t collision_groups = 0;
  std::size_t colliding_items = 0;
};

struct AblationVariant {
  std::string name;
  TokenizerMethod tokenizer = TokenizerMethod::pq;
  std::string diffusion;  // uniform, importance or none
};

inline std::vector<AblationVariant> ablation_grid() {
  std::vector<AblationVariant> out;
  for (auto method : {TokenizerMethod::pq, TokenizerMethod::rqvae, TokenizerMethod::random})
    for (const char* diff : {"uniform", "importance", "none"})
      out.push_back({to_string(method) + "/" + diff, method, diff});
  return out;
}

struct AblationRow {
  AblationVariant variant;
  MetricsReport report;
  double seconds = 0.0;
};

/// The stages of one run, all reading and writing under `output_dir`.
class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg) : cfg_(std::move(cfg)) {}

  const RunConfig& config() const { return cfg_; }
  std::string path(const std::string& name) const { return (fs::path(cfg_.output_dir) / name).string(); }

  void prepare() {
    fs::create_directories(cfg_.output_dir);
    Corpus corpus;
    if (cfg_.synthetic) {
      auto syn = generate_synthetic(cfg_.synthetic_cfg);
      write_embeddings(path("embeddings.jsonl"), syn.embeddings, syn.corpus.catalog.ids());
      write_text(path("interactions.csv"), interactions_csv(syn.interactions));
      corpus = std::move(syn.corpus);
    } else {
      DDSR_REQUIRE(!cfg_.interactions.empty(), ConfigError, "set data.interactions or enable data.synthetic");
      require_file(cfg_.interactions, "interactions file (data.interactions)");
      corpus = load_interactions(cfg_.interactions, cfg_.min_count);
      if (!cfg_.texts.empty()) {
        require_file(cfg_.texts, "item text file (data.texts)");
        load_item_texts(cfg_.texts, corpus.catalog);
      }
    }
    make_split(corpus.sequences);
    write_text(path("dataset.json"), corpus_to_json(corpus).dump() + "\n");
    const auto buckets = popularity_buckets(corpus.catalog, cfg_.bucket_threshold);
    logger().info("prepared {} users, {} items ({} long-tail, {} popular)", corpus.sequences.size(),
                  corpus.catalog.size(), buckets.long_tail.size(), buckets.popular.size());
  }

  TokenizeSummary tokenize() {
    const Corpus corpus = load_corpus();
    TokenizerResult tok;
    if (cfg_.tokenizer.method == TokenizerMethod::random) {
      tok = random_codes(corpus.catalog.size(), cfg_.tokenizer);
    } else {
      const std::string emb_path = cfg_.embeddings.empty() ? path("embeddings.jsonl") : cfg_.embeddings;
      require_file(emb_path, "item embeddings (data.embeddings)");
      const auto table = read_embeddings(emb_path, corpus.catalog.size(),
                                         [&](const std::string& id) { return corpus.catalog.index(id); });
      if (cfg_.tokenizer.method == TokenizerMethod::pq) {
        tok = fit_pq(table, cfg_.tokenizer);
      } else {
        auto rq = fit_rqvae(table, cfg_.tokenizer, cfg_.tokenizer.rqvae_epochs, cfg_.tokenizer.rqvae_lr);
        tok.codebook = std::move(rq.codebook);
        tok.code_map = std::move(rq.code_map);
      }
    }
    write_text(path("codebook.json"), codebook_to_json(tok.codebook, tok.code_map, corpus.catalog.ids()).dump() + "\n");
    TokenizeSummary s;
    s.items = tok.code_map.size();
    s.distinct_ids = tok.code_map.distinct_ids();
    for (const auto& g : tok.code_map.collisions()) {
      ++s.collision_groups;
      s.colliding_items += g.size();
    }
    logger().info("tokenized {} items into {} distinct IDs ({} collision groups)", s.items, s.distinct_ids,
                  s.collision_groups);
    return s;
  }

  TrainResult train() {
    Context ctx = load_context();
    Approximator<float> model(cfg_.model);
    TransitionModel tm = make_transition(cfg_.diffusion);
    std::ofstream log(path("train_log.jsonl"));
    if (!log) throw Error("cannot write " + path("train_log.jsonl"));
    const auto result = fit<float>({&ctx.split, &ctx.tok.code_map, &ctx.tok.codebook, &ctx.popularity, &ctx.buckets}, tm,
                                   model, cfg_.train, cfg_.infer, cfg_.diffusion.shared_matrix, &log);
    const fs::path ckpt = path("checkpoint");
    fs::create_directories(ckpt);
    model.save((ckpt / "params.bin").string());
    json manifest;
    manifest["config"] = cfg_.raw;
    manifest["model"] = model_json();
    manifest["tokenizer_hash"] = ctx.codebook_hash;
    manifest["best_valid_ndcg10"] = result.best_valid_ndcg10;
    manifest["best_epoch"] = result.best_epoch;
    manifest["epochs_run"] = result.history.size();
    manifest["halted_non_finite"] = result.halted_non_finite;
    write_text((ckpt / "manifest.json").string(), manifest.dump(2) + "\n");
    return result;
  }

  MetricsReport evaluate(SplitKind split = SplitKind::test) {
    Context ctx = load_context();
    auto [model, tm] = load_model(ctx);
    EvalContext ectx{&ctx.split, &ctx.tok.code_map, &ctx.tok.codebook, &ctx.popularity, &ctx.buckets, &tm};
    MetricsReport report = ddsr::evaluate(model_denoiser(*model), ectx, cfg_.infer, split);
    report.fingerprint = cfg_.fingerprint();
    write_text(path("metrics.json"), report.to_json().dump(2) + "\n");
    write_text(path("metrics.md"), markdown_report(report));
    return report;
  }

  /// Top items for a user given their whole known sequence.
  std::vector<std::pair<std::string, double>> recommend(const std::string& user_id, int top) {
    DDSR_REQUIRE(top >= 1, ConfigError, "--top must be >= 1");
    Context ctx = load_context();
    std::size_t u = 0;
    while (u < ctx.corpus.sequences.size() && ctx.corpus.sequences[u].user_id != user_id) ++u;
    if (u == ctx.corpus.sequences.size()) throw DataError("unknown user '" + user_id + "'");
    auto [model, tm] = load_model(ctx);
    const CodeSequence history = history_codes(ctx.corpus.sequences[u].items, ctx.tok.code_map);
    const auto res = denoise_sequence(history, model_denoiser(*model), tm, cfg_.infer, u);
    const auto ranked =
        rank_items(res.last_block[0], ctx.tok.code_map, ctx.tok.codebook, ctx.popularity, cfg_.infer.ranking);
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t i = 0; i < ranked.items.size() && static_cast<int>(i) < top; ++i)
      out.emplace_back(ctx.corpus.catalog.id(ranked.items[i]), ranked.scores[i]);
    return out;
  }

  /// Full run of one configuration: prepare, tokenize, train, evaluate on test.
  MetricsReport run_all() {
    prepare();
    tokenize();
    train();
    return evaluate(SplitKind::test);
  }

  /// Runs each variant in its own sub-directory and writes ablation.json / ablation.md.
  std::vector<AblationRow> ablate(const std::vector<AblationVariant>& variants = ablation_grid()) {
    prepare();
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
      json raw = cfg_.raw;
      raw["data"]["output_dir"] = (fs::path(cfg_.output_dir) / "ablation" / sanitize(v.name)).string();
      raw["tokenizer"]["method"] = to_string(v.tokenizer);
      if (v.diffusion == "none") {
        raw["diffusion"]["T"] = 0;
      } else {
        raw["diffusion"]["transition"] = v.diffusion;
      }
      Pipeline sub(parse_run_config(raw, nullptr));
      fs::create_directories(sub.config().output_dir);
      fs::copy_file(path("dataset.json"), sub.path("dataset.json"), fs::copy_options::overwrite_existing);
      if (fs::exists(path("embeddings.jsonl")))
        fs::copy_file(path("embeddings.jsonl"), sub.path("embeddings.jsonl"), fs::copy_options::overwrite_existing);
      logger().info("ablation variant {}", v.name);
      const auto t0 = std::chrono::steady_clock::now();
      sub.tokenize();
      sub.train();
      AblationRow row{v, sub.evaluate(SplitKind::test), 0.0};
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rows.push_back(std::move(row));
    }
    json j = json::array();
    std::vector<std::pair<std::string, MetricSet>> table;
    for (const auto& r : rows) {
      j.push_back({{"variant", r.variant.name},
                   {"tokenizer", to_string(r.variant.tokenizer)},
                   {"diffusion", r.variant.diffusion},
                   {"metrics", r.report.to_json()}});
      table.emplace_back(r.variant.name, r.report.overall);
    }
    write_text(path("ablation.json"), json{{"rows", j}, {"config_fingerprint", cfg_.fingerprint()}}.dump(2) + "\n");
    write_text(path("ablation.md"), markdown_table(table));
    return rows;
  }

 private:
  struct Context {
    Corpus corpus;
    SplitDataset split;
    TokenizerResult tok;
    std::vector<std::int64_t> popularity;
    PopularityBuckets buckets;
    std::string codebook_hash;
  };

  static void require_file(const std::string& p, const std::string& what) {
    if (p.empty() || !fs::exists(p)) throw DependencyError("missing " + what + ": " + (p.empty() ? "<unset>" : p));
  }

  static void write_text(const std::string& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p);
    out << text;
  }

  static std::string read_text(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static std::string sanitize(std::string s) {
    for (char& c : s)
      if (c == '/') c = '-';
    return s;
  }

  static std::string interactions_csv(const std::vector<Interaction>& rows) {
    std::string out = "user_id,item_id,timestamp\n";
    for (const auto& r : rows) out += r.user_id + "," + r.item_id + "," + std::to_string(r.timestamp) + "\n";
    return out;
  }

  json model_json() const {
    const auto& m = cfg_.model;
    return {{"d", m.d}, {"layers", m.layers}, {"heads", m.heads}, {"ff", m.ff}, {"dropout", m.dropout},
            {"max_items", m.max_items}, {"m", m.m}, {"K", m.K}};
  }

  Corpus load_corpus() const {
    const std::string p = path("dataset.json");
    if (!fs::exists(p)) throw DependencyError("missing prepared dataset " + p + "; run `ddsr prepare` first");
    try {
      return corpus_from_json(json::parse(read_text(p)));
    } catch (const json::exception& e) {
      throw DataError(p + ": " + e.what());
    }
  }

  Context load_context() const {
    Context ctx;
    ctx.corpus = load_corpus();
    ctx.split = make_split(ctx.corpus.sequences);
    const std::string cb_path = path("codebook.json");
    if (!fs::exists(cb_path)) throw DependencyError("missing codebook " + cb_path + "; run `ddsr tokenize` first");
    const std::string cb_text = read_text(cb_path);
    try {
      ctx.tok = codebook_from_json(json::parse(cb_text), ctx.corpus.catalog);
    } catch (const json::exception& e) {
      throw DataError(cb_path + ": " + e.what());
    }
    if (ctx.tok.code_map.m() != cfg_.tokenizer.m || ctx.tok.code_map.K() != cfg_.tokenizer.K)
      throw ConfigError("codebook.json has m=" + std::to_string(ctx.tok.code_map.m()) + ", K=" +
                        std::to_string(ctx.tok.code_map.K()) + " but the config says m=" +
                        std::to_string(cfg_.tokenizer.m) + ", K=" + std::to_string(cfg_.tokenizer.K) +
                        "; re-run `ddsr tokenize`");
    ctx.codebook_hash = hex64(fnv1a(cb_text));
    ctx.popularity = ctx.corpus.catalog.popularity();
    ctx.buckets = popularity_buckets(ctx.corpus.catalog, cfg_.bucket_threshold);
    return ctx;
  }

  std::pair<std::unique_ptr<Approximator<float>>, TransitionModel> load_model(const Context& ctx) const {
    const fs::path ckpt = path("checkpoint");
    const std::string manifest_path = (ckpt / "manifest.json").string();
    if (!fs::exists(manifest_path))
      throw DependencyError("missing checkpoint " + manifest_path + "; run `ddsr train` first");
    const json manifest = json::parse(read_text(manifest_path));
    if (manifest.at("tokenizer_hash").get<std::string>() != ctx.codebook_hash)
      throw DependencyError("checkpoint " + ckpt.string() + " was trained on a different codebook; re-run `ddsr train`");
    if (manifest.at("model") != model_json())
      throw ConfigError("checkpoint model settings " + manifest.at("model").dump() + " differ from the config " +
                        model_json().dump());
    auto model = std::make_unique<Approximator<float>>(cfg_.model);
    model->load((ckpt / "params.bin").string());
    TransitionModel tm = make_transition(cfg_.diffusion);
    if (cfg_.diffusion.T > 0 && cfg_.diffusion.transition == TransitionKind::importance)
      refresh_importance(*model, ctx.tok.codebook, tm, cfg_.train.distances, cfg_.diffusion.shared_matrix);
    return {std::move(model), std::move(tm)};
  }

  RunConfig cfg_;
};

}  // namespace ddsr
