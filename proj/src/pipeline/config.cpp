#include "datml/pipeline/config.hpp"

#include <openssl/sha.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "datml/corpus/generator.hpp"
#include "datml/corpus/io.hpp"
#include "datml/error.hpp"
#include "json.hpp"

namespace datml::inline DATML_ABI {

namespace {

using nlohmann::json;

// Reads the members of one object, rejecting any key that nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument("config: '" + where() + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw InvalidArgument("");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw InvalidArgument("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw InvalidArgument("");
      } else {
        if (!it->is_string()) throw InvalidArgument("");
      }
      out = it->get<T>();
    } catch (const std::exception&) {
      throw InvalidArgument("config: '" + where(key) + "' has the wrong type");
    }
  }

  Section sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    static const json empty = json::object();
    return Section(it == j_.end() ? empty : *it, where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw InvalidArgument("config: unknown key '" + where(k) + "'");
    }
  }

 private:
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void positive(std::size_t v, const char* name) {
  if (v == 0) throw InvalidArgument(std::string("config: ") + name + " must be positive");
}

void positive(double v, const char* name) {
  if (!(v > 0.0)) throw InvalidArgument(std::string("config: ") + name + " must be positive");
}

}  // namespace

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("config: not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  {
    auto s = root.sub("model");
    auto& m = c.model;
    s.read("embed_dim", m.embed_dim);
    s.read("hidden_dim", m.hidden_dim);
    s.read("dropout", m.dropout);
    s.read("laed_y", m.laed_y);
    s.read("laed_k", m.laed_k);
    s.read("max_context_turns", m.max_context_turns);
    s.read("latents", m.latents);
    s.read("embeddings", m.embeddings);
    s.finish();
  }
  {
    auto s = root.sub("pretrain");
    s.read("epochs", c.pretrain.epochs);
    s.read("lr", c.pretrain.lr);
    s.read("batch", c.pretrain.batch);
    s.finish();
  }
  {
    auto s = root.sub("meta");
    std::string method = meta_method_name(c.meta.method);
    s.read("method", method);
    c.meta.method = parse_meta_method(method);
    s.read("episodes", c.meta.episodes);
    s.read("inner_lr", c.meta.inner_lr);
    s.read("outer_lr", c.meta.outer_lr);
    s.read("inner_k", c.meta.inner_k);
    s.read("batch", c.meta.batch);
    s.finish();
  }
  {
    auto s = root.sub("finetune");
    s.read("fraction", c.finetune.fraction);
    s.read("max_epochs", c.finetune.max_epochs);
    s.read("lr", c.finetune.lr);
    s.read("batch", c.finetune.batch);
    s.read("seed", c.finetune.seed);
    s.finish();
  }
  {
    auto s = root.sub("data");
    s.read("corpus", c.data.corpus);
    s.read("kb", c.data.kb);
    s.read("target_domain", c.data.target_domain);
    s.read("validation", c.data.validation);
    s.read("test", c.data.test);
    auto g = s.sub("generate");
    g.read("domains", c.data.generate.domains);
    g.read("dialogues_per_domain", c.data.generate.dialogues_per_domain);
    g.read("multi_domain_fraction", c.data.generate.multi_domain_fraction);
    g.read("seed", c.data.generate.seed);
    g.finish();
    s.finish();
  }
  {
    auto s = root.sub("eval");
    s.read("max_len", c.eval.max_len);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  auto c = from_json(read_file(path));
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.data.corpus);
  resolve(c.data.kb);
  resolve(c.model.embeddings);
  return c;
}

void RunConfig::validate() const {
  positive(model.embed_dim, "model.embed_dim");
  positive(model.hidden_dim, "model.hidden_dim");
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw InvalidArgument("config: model.dropout must lie in [0, 1)");
  positive(model.laed_y, "model.laed_y");
  if (model.laed_k < 2) throw InvalidArgument("config: model.laed_k must be at least 2");
  positive(pretrain.lr, "pretrain.lr");
  positive(pretrain.batch, "pretrain.batch");
  MetaConfig{meta.method, meta.inner_lr, meta.outer_lr, meta.inner_k, meta.episodes, OptimizerKind::kAdam, meta.batch,
             seed}
      .validate();
  if (!(finetune.fraction > 0.0 && finetune.fraction <= 1.0)) {
    throw InvalidArgument("config: finetune.fraction must lie in (0, 1]");
  }
  positive(finetune.max_epochs, "finetune.max_epochs");
  positive(finetune.lr, "finetune.lr");
  positive(finetune.batch, "finetune.batch");
  if (data.target_domain.empty()) throw InvalidArgument("config: data.target_domain is required");
  if (data.corpus.empty() != data.kb.empty()) {
    throw InvalidArgument("config: data.corpus and data.kb must be given together");
  }
  if (!(data.validation >= 0.0 && data.test > 0.0 && data.validation + data.test < 1.0)) {
    throw InvalidArgument("config: split fractions need validation >= 0, test > 0 and validation + test < 1");
  }
  if (data.corpus.empty()) {
    CorpusSpec spec = default_corpus_spec(data.generate.domains, data.generate.dialogues_per_domain);
    spec.multi_domain_fraction = data.generate.multi_domain_fraction;
    validate_spec(spec);
  }
  positive(eval.max_len, "eval.max_len");
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = {{"embed_dim", model.embed_dim},   {"hidden_dim", model.hidden_dim},
                {"dropout", model.dropout},       {"laed_y", model.laed_y},
                {"laed_k", model.laed_k},         {"max_context_turns", model.max_context_turns},
                {"latents", model.latents},       {"embeddings", model.embeddings}};
  j["pretrain"] = {{"epochs", pretrain.epochs}, {"lr", pretrain.lr}, {"batch", pretrain.batch}};
  j["meta"] = {{"method", meta_method_name(meta.method)},
               {"episodes", meta.episodes},
               {"inner_lr", meta.inner_lr},
               {"outer_lr", meta.outer_lr},
               {"inner_k", meta.inner_k},
               {"batch", meta.batch}};
  j["finetune"] = {{"fraction", finetune.fraction},
                   {"max_epochs", finetune.max_epochs},
                   {"lr", finetune.lr},
                   {"batch", finetune.batch},
                   {"seed", finetune.seed}};
  j["data"] = {{"corpus", data.corpus},
               {"kb", data.kb},
               {"target_domain", data.target_domain},
               {"validation", data.validation},
               {"test", data.test},
               {"generate",
                {{"domains", data.generate.domains},
                 {"dialogues_per_domain", data.generate.dialogues_per_domain},
                 {"multi_domain_fraction", data.generate.multi_domain_fraction},
                 {"seed", data.generate.seed}}}};
  j["eval"] = {{"max_len", eval.max_len}};
  return j.dump();
}

std::string RunConfig::fingerprint() const {
  const std::string text = to_json();
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), digest);
  char hex[17];
  for (int i = 0; i < 8; ++i) std::snprintf(hex + 2 * i, 3, "%02x", digest[i]);
  return std::string(hex, 16);
}

std::string fraction_label(double fraction) {
  char buf[32];
  const double pct = fraction * 100.0;
  std::snprintf(buf, sizeof buf, pct == std::round(pct) ? "%.2f" : "%g", fraction);
  return buf;
}

}  // namespace datml::inline DATML_ABI
