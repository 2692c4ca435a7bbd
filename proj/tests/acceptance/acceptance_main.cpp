// Runs the acceptance criteria and prints one PASS/FAIL line for each.
//   datml_acceptance [--only 1,2,...] [--skip 8]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "acceptance.hpp"
#include "datml/corpus/generator.hpp"
#include "datml/corpus/io.hpp"
#include "datml/eval/eval.hpp"
#include "datml/meta/meta.hpp"
#include "datml/pipeline/checkpoint.hpp"
#include "datml/pipeline/pipeline.hpp"

using namespace datml;
namespace fs = std::filesystem;

namespace acceptance {
namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("datml_accept_" + name + "_" + std::to_string(std::random_device{}()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Straightforward BLEU-4 over string-joined n-gram keys; agrees with
// tests/oracles/bleu_reference.py.
double oracle_bleu(const std::vector<Sentence>& cands, const std::vector<Sentence>& refs) {
  double matched[4] = {}, total[4] = {};
  double c_len = 0, r_len = 0;
  for (std::size_t s = 0; s < cands.size(); ++s) {
    c_len += double(cands[s].size());
    r_len += double(refs[s].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::string, int> cc, rc;
      auto count = [n](const Sentence& x, std::map<std::string, int>& into) {
        for (std::size_t i = 0; i + n <= x.size(); ++i) {
          std::string key;
          for (std::size_t j = i; j < i + n; ++j) key += x[j] + '\x1f';
          ++into[key];
        }
      };
      count(cands[s], cc);
      count(refs[s], rc);
      for (const auto& [k, v] : cc) {
        total[n - 1] += v;
        const auto it = rc.find(k);
        if (it != rc.end()) matched[n - 1] += std::min(v, it->second);
      }
    }
  }
  double log_p = 0;
  for (int n = 0; n < 4; ++n) log_p += std::log(matched[n] > 0 ? matched[n] / total[n] : 1.0 / (total[n] + 1.0));
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::exp(log_p / 4.0);
}

TrainHistory history_of(std::initializer_list<double> accuracies) {
  TrainHistory h;
  std::size_t e = 0;
  for (double a : accuracies) h.add({++e, 1.0, a});
  return h;
}

bool same_bits(const ParamSet& a, const ParamSet& b) {
  if (a.names() != b.names()) return false;
  for (const auto& [name, t] : a) {
    const auto x = t.data(), y = b[name].data();
    if (t.shape() != b[name].shape() || std::memcmp(x.data(), y.data(), x.size_bytes()) != 0) return false;
  }
  return true;
}

}  // namespace

Outcome leakage() {
  auto spec = default_corpus_spec(4, 150);
  spec.multi_domain_fraction = 0.3;
  const auto g = generate_corpus(spec);
  std::size_t violations = 0, held = 0, scanned = 0, missing = 0;
  for (const auto& target : corpus_domains(g.dialogues)) {
    const auto split = split_for_target(g.dialogues, target, {}, 271);
    for (const auto& d : split.source) {
      bool touches = d.has_domain(target);
      for (const auto& t : d.turns) {
        ++scanned;
        touches = touches || t.domain == target;
        for (const auto& e : t.entities)
          touches = touches || g.kb.values(target).count(e) != 0;
      }
      if (touches) ++violations;
    }
    std::set<std::string> pooled;
    for (const auto* part : {&split.target_train_pool, &split.target_validation, &split.target_test})
      for (const auto& d : *part) pooled.insert(d.id);
    for (const auto& d : g.dialogues) {
      bool touches = false;
      for (const auto& t : d.turns) touches = touches || t.domain == target;
      if (touches && !pooled.count(d.id)) ++missing;
    }
    held += pooled.size();
    if (split.source.size() + pooled.size() != g.dialogues.size()) ++violations;
  }
  return {violations == 0 && missing == 0,
          std::to_string(g.dialogues.size()) + " dialogues x 4 targets, " + std::to_string(scanned) +
              " source turns scanned, " + std::to_string(held) + " held out; " + std::to_string(violations) +
              " violations, " + std::to_string(missing) + " target dialogues not held out"};
}

Outcome metrics() {
  const std::vector<Sentence> same{tokenize("golden palace is free"), tokenize("a table at north .")};
  const double identical = bleu(same, same);
  const auto f1 = entity_f1({{{"n", "a"}, {"n", "b"}}}, {{{"n", "b"}, {"n", "c"}}}).f1;
  std::vector<Sentence> cands, refs;
  for (const char* s : {"the cat sat on the mat", "there is a cat here", "hello world"}) cands.push_back(tokenize(s));
  for (const char* s : {"the cat is on the mat", "there is a cat on the mat", "hello there world"})
    refs.push_back(tokenize(s));
  // Printed by tests/oracles/bleu_reference.py.
  constexpr double kScripted = 0.36261155971979986;
  const double ours = bleu(cands, refs);
  const double mirror = oracle_bleu(cands, refs);
  const bool pass = std::abs(identical - 1.0) < 1e-12 && std::abs(f1 - 0.5) < 1e-12 &&
                    std::abs(ours - kScripted) <= 1e-6 && std::abs(mirror - kScripted) <= 1e-6;
  return {pass, "bleu(identical) " + fmt("%.6f", identical) + ", entity F1 " + fmt("%.6f", f1) + ", toy bleu " +
                    fmt("%.9f", ours) + " vs oracle " + fmt("%.9f", kScripted)};
}

Outcome adaptation(const std::string& source_dir) {
  const auto config_path = fs::path(source_dir) / "configs" / "adaptation.json";
  const auto start = std::chrono::steady_clock::now();
  const auto root = scratch("adapt");
  int improved = 0;
  std::ostringstream detail;
  std::vector<std::pair<double, double>> reptile, multitask;
  double pipeline_seconds = 0.0;
  for (std::uint64_t seed : {271u, 272u, 273u}) {
    PipelineOptions o;
    o.config = RunConfig::load(config_path);
    o.config.seed = seed;
    o.out = root / std::to_string(seed);
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_all(o);
    pipeline_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& before = r.source.domains.at(0);
    const auto& after = r.finetuned.domains.at(0);
    const bool ok = after.entity_f1 - before.entity_f1 >= 5.0 && after.bleu > before.bleu;
    improved += ok;
    detail << "seed " << seed << " F1 " << fmt("%.1f", before.entity_f1) << "->" << fmt("%.1f", after.entity_f1)
           << " BLEU " << fmt("%.1f", before.bleu) << "->" << fmt("%.1f", after.bleu) << (ok ? " ok" : " no") << "; ";
    reptile.emplace_back(after.bleu, after.entity_f1);

    o.config.meta.method = MetaMethod::kMultitask;
    stage_train(o);
    stage_finetune(o);
    const auto m = stage_eval(o);
    multitask.emplace_back(m.finetuned.domains.at(0).bleu, m.finetuned.domains.at(0).entity_f1);
  }
  fs::remove_all(root);
  double rb = 0, rf = 0, mb = 0, mf = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    rb += reptile[i].first / 3;
    rf += reptile[i].second / 3;
    mb += multitask[i].first / 3;
    mf += multitask[i].second / 3;
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  detail << improved << "/3 seeds improved; reptile pipeline " << fmt("%.0f", pipeline_seconds)
         << " s; fine-tuned mean reptile BLEU " << fmt("%.1f", rb) << " F1 " << fmt("%.1f", rf)
         << " vs multitask BLEU " << fmt("%.1f", mb) << " F1 " << fmt("%.1f", mf) << " (reported, not gated; "
         << fmt("%.0f", total) << " s with comparison)";
  return {improved >= 2 && pipeline_seconds < 15 * 60, detail.str()};
}

Outcome determinism(const std::string& source_dir) {
  const auto config_path = fs::path(source_dir) / "configs" / "toy.json";
  const auto a = scratch("det_a"), b = scratch("det_b");
  PipelineOptions o;
  o.config = RunConfig::load(config_path);
  o.out = a;
  run_all(o);
  o.out = b;
  run_all(o);
  const std::string report = "eval-reptile-" + fraction_label(o.config.finetune.fraction);
  const bool reports = read_file(a / report / "report.json") == read_file(b / report / "report.json") &&
                       read_file(a / report / "report.txt") == read_file(b / report / "report.txt");

  std::size_t round_trips = 0;
  for (const char* name : {"pretrain/divae", "pretrain/divst", "pretrain/sys_pred", "train-reptile/hred"}) {
    const auto kind = fs::path(name).parent_path() == "train-reptile" ? std::string("hred-source")
                                                                       : fs::path(name).filename().string();
    const auto c = load_checkpoint(a / name, kind);
    save_checkpoint(b / "copy", c.params, c.kind, c.fingerprint, c.config);
    round_trips += same_bits(c.params, load_checkpoint(b / "copy", kind).params) &&
                   read_file(a / (std::string(name) + ".bin")) == read_file(b / "copy.bin");
  }
  fs::remove_all(a);
  fs::remove_all(b);

  const bool stop = early_stop_check(history_of({0.1, 0.5, 0.3, 0.2}), 4);
  const bool go = !early_stop_check(history_of({0.1, 0.2, 0.3, 0.4}), 4) &&
                  !early_stop_check(history_of({0.1, 0.2, 0.3, 0.4, 0.5, 0.6}), 6);
  return {reports && round_trips == 4 && stop && go,
          std::string("eval reports ") + (reports ? "byte-identical" : "DIFFER") + "; " +
              std::to_string(round_trips) + "/4 checkpoints bitwise; early stop best=2@4 " +
              (stop ? "stops" : "continues") + ", best=e " + (go ? "continues" : "stops")};
}

}  // namespace acceptance

int main(int argc, char** argv) {
  CLI::App app{"datml acceptance criteria"};
  std::vector<int> only, skip;
  std::string source_dir = DATML_SOURCE_DIR;
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--skip", skip, "Criteria to leave out")->delimiter(',');
  app.add_option("--source-dir", source_dir, "Repository root holding configs/");
  CLI11_PARSE(app, argc, argv);

  using acceptance::Outcome;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", acceptance::gradients},
      {"reptile algebra", acceptance::reptile_algebra},
      {"fomaml algebra", acceptance::fomaml_algebra},
      {"laed enumeration oracle", acceptance::laed_enumeration},
      {"annihilated latent degeneracy", acceptance::latent_degeneracy},
      {"target leakage", acceptance::leakage},
      {"metrics", acceptance::metrics},
      {"adaptation trend", [&] { return acceptance::adaptation(source_dir); }},
      {"determinism and persistence", [&] { return acceptance::determinism(source_dir); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    if (std::find(skip.begin(), skip.end(), id) != skip.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("threw: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %-30s %s  (%.1f s) %s\n", id, criteria[i].first, r.pass ? "PASS" : "FAIL", s,
                r.detail.c_str());
    std::fflush(stdout);
    failed += !r.pass;
  }
  return failed == 0 ? 0 : 1;
}
