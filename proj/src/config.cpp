#include "stainqc/config.hpp"

#include <fstream>
#include <set>

#include "stainqc/errors.hpp"
#include "stainqc/taxonomy.hpp"

namespace stainqc {

using nlohmann::json;

namespace {

/// Reads known keys from `j`, collecting every key it consumes so the caller
/// can reject leftovers.
class Fields {
public:
  explicit Fields(const json& j, std::string scope) : j_(j), scope_(std::move(scope)) {
    if (!j.is_object()) throw ConfigError(scope_ + ": expected an object");
  }

  ~Fields() = default;

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(scope_ + "." + key + ": " + e.what());
    }
  }

  const json* object(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(scope_ + ": unknown key \"" + it.key() + "\"");
  }

private:
  const json& j_;
  std::string scope_;
  std::set<std::string> seen_;
};

json recipe_to_json(const TrainRecipe& r) {
  return json{{"lr", r.optimizer.lr},
              {"weight_decay", r.optimizer.weight_decay},
              {"batch_size", r.batch_size},
              {"max_epochs", r.max_epochs},
              {"label_smoothing", r.label_smoothing},
              {"warmup_frac", r.warmup_frac},
              {"dropout", r.dropout},
              {"drop_path", r.drop_path},
              {"attn_drop", r.attn_drop},
              {"flip_augment", r.flip_augment},
              {"early_stop",
               {{"enabled", r.early_stop.enabled},
                {"patience", r.early_stop.patience},
                {"min_delta", r.early_stop.min_delta}}}};
}

void recipe_from_json(const json& j, const std::string& scope, TrainRecipe& r) {
  Fields f(j, scope);
  f.get("lr", r.optimizer.lr);
  f.get("weight_decay", r.optimizer.weight_decay);
  f.get("batch_size", r.batch_size);
  f.get("max_epochs", r.max_epochs);
  f.get("label_smoothing", r.label_smoothing);
  f.get("warmup_frac", r.warmup_frac);
  f.get("dropout", r.dropout);
  f.get("drop_path", r.drop_path);
  f.get("attn_drop", r.attn_drop);
  f.get("flip_augment", r.flip_augment);
  if (const json* es = f.object("early_stop")) {
    Fields e(*es, scope + ".early_stop");
    e.get("enabled", r.early_stop.enabled);
    e.get("patience", r.early_stop.patience);
    e.get("min_delta", r.early_stop.min_delta);
    e.finish();
  }
  f.finish();
}

} // namespace

json config_to_json(const RunConfig& cfg) {
  json j;
  j["paths"] = {{"data", cfg.paths.data.generic_string()},
                {"bags", cfg.paths.bags.generic_string()},
                {"checkpoints", cfg.paths.checkpoints.generic_string()},
                {"reports", cfg.paths.reports.generic_string()}};
  j["class_set"] = cfg.class_set;
  j["backbone"] = {{"token_patch_size", cfg.backbone.token_patch_size},
                   {"embed_dim", cfg.backbone.embed_dim},
                   {"depth", cfg.backbone.depth},
                   {"heads", cfg.backbone.heads},
                   {"mlp_ratio", cfg.backbone.mlp_ratio},
                   {"dropout", cfg.backbone.dropout},
                   {"drop_path", cfg.backbone.drop_path},
                   {"attn_drop", cfg.backbone.attn_drop}};
  j["patch"] = {{"size_px", cfg.patch.size_px}, {"mpp", cfg.patch.mpp}};
  j["thumbnail"] = {{"height", cfg.thumbnail.height},
                    {"width", cfg.thumbnail.width},
                    {"source_height", cfg.thumbnail.source_height},
                    {"source_width", cfg.thumbnail.source_width}};
  j["budgets"] = {{"k", cfg.budgets.k}, {"rounds", cfg.budgets.rounds}};
  j["seeds"] = {{"corpus", cfg.seeds.corpus},
                {"split", cfg.seeds.split},
                {"train", cfg.seeds.train},
                {"sampling", cfg.seeds.sampling}};
  j["recipes"] = {{"patch", recipe_to_json(cfg.patch_train)},
                  {"mil", recipe_to_json(cfg.mil_train)},
                  {"thumbnail", recipe_to_json(cfg.thumbnail_train)},
                  {"fixation", recipe_to_json(cfg.fixation_train)}};
  j["patches_per_slide"] = cfg.patches_per_slide;
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  Fields f(j, "config");
  if (const json* p = f.object("paths")) {
    Fields pf(*p, "config.paths");
    std::string s;
    s = cfg.paths.data.generic_string(), pf.get("data", s), cfg.paths.data = s;
    s = cfg.paths.bags.generic_string(), pf.get("bags", s), cfg.paths.bags = s;
    s = cfg.paths.checkpoints.generic_string(), pf.get("checkpoints", s),
    cfg.paths.checkpoints = s;
    s = cfg.paths.reports.generic_string(), pf.get("reports", s), cfg.paths.reports = s;
    pf.finish();
  }
  f.get("class_set", cfg.class_set);
  if (const json* b = f.object("backbone")) {
    Fields bf(*b, "config.backbone");
    bf.get("token_patch_size", cfg.backbone.token_patch_size);
    bf.get("embed_dim", cfg.backbone.embed_dim);
    bf.get("depth", cfg.backbone.depth);
    bf.get("heads", cfg.backbone.heads);
    bf.get("mlp_ratio", cfg.backbone.mlp_ratio);
    bf.get("dropout", cfg.backbone.dropout);
    bf.get("drop_path", cfg.backbone.drop_path);
    bf.get("attn_drop", cfg.backbone.attn_drop);
    bf.finish();
  }
  if (const json* p = f.object("patch")) {
    Fields pf(*p, "config.patch");
    pf.get("size_px", cfg.patch.size_px);
    pf.get("mpp", cfg.patch.mpp);
    pf.finish();
  }
  if (const json* t = f.object("thumbnail")) {
    Fields tf(*t, "config.thumbnail");
    tf.get("height", cfg.thumbnail.height);
    tf.get("width", cfg.thumbnail.width);
    tf.get("source_height", cfg.thumbnail.source_height);
    tf.get("source_width", cfg.thumbnail.source_width);
    tf.finish();
  }
  if (const json* b = f.object("budgets")) {
    Fields bf(*b, "config.budgets");
    bf.get("k", cfg.budgets.k);
    bf.get("rounds", cfg.budgets.rounds);
    bf.finish();
  }
  if (const json* s = f.object("seeds")) {
    Fields sf(*s, "config.seeds");
    sf.get("corpus", cfg.seeds.corpus);
    sf.get("split", cfg.seeds.split);
    sf.get("train", cfg.seeds.train);
    sf.get("sampling", cfg.seeds.sampling);
    sf.finish();
  }
  if (const json* r = f.object("recipes")) {
    Fields rf(*r, "config.recipes");
    if (const json* x = rf.object("patch")) recipe_from_json(*x, "config.recipes.patch", cfg.patch_train);
    if (const json* x = rf.object("mil")) recipe_from_json(*x, "config.recipes.mil", cfg.mil_train);
    if (const json* x = rf.object("thumbnail"))
      recipe_from_json(*x, "config.recipes.thumbnail", cfg.thumbnail_train);
    if (const json* x = rf.object("fixation"))
      recipe_from_json(*x, "config.recipes.fixation", cfg.fixation_train);
    rf.finish();
  }
  f.get("patches_per_slide", cfg.patches_per_slide);
  f.finish();
  return cfg;
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << config_to_json(cfg).dump(2) << '\n';
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig cfg = config_from_json(j);
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  for (auto* p : {&cfg.paths.data, &cfg.paths.bags, &cfg.paths.checkpoints, &cfg.paths.reports})
    if (p->is_relative()) *p = base / *p;
  return cfg;
}

void validate_config(const RunConfig& cfg) {
  ClassSet::by_name(cfg.class_set); // throws on unknown set
  if (cfg.patch.size_px <= 0 || cfg.patch.mpp <= 0)
    throw ConfigError("patch size and mpp must be positive");
  if (cfg.thumbnail.height <= 0 || cfg.thumbnail.width < cfg.thumbnail.height)
    throw ConfigError("thumbnail resolution must be landscape (w >= h > 0)");
  if (cfg.thumbnail.source_height < cfg.thumbnail.height ||
      cfg.thumbnail.source_width < cfg.thumbnail.width)
    throw ConfigError("thumbnail source cache must cover the model resolution");
  const int tps = cfg.backbone.token_patch_size;
  if (tps <= 0 || cfg.thumbnail.height % tps != 0 || cfg.thumbnail.width % tps != 0 ||
      cfg.patch.size_px % tps != 0)
    throw ConfigError("input sizes must be divisible by the token patch size");
  if (cfg.budgets.k == 0 || cfg.budgets.rounds <= 0)
    throw ConfigError("budgets: k must be nonzero (-1 for all) and rounds >= 1");
  if (cfg.patches_per_slide == 0)
    throw ConfigError("patches_per_slide must be nonzero (-1 for all)");
}

std::filesystem::path write_config_snapshot(const RunConfig& cfg, const std::string& command) {
  const auto path = cfg.paths.reports / "runs" / (command + ".config.json");
  save_config(path, cfg);
  return path;
}

} // namespace stainqc
